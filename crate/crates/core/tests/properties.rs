use lorank::genzoo::{make_blocky, make_mlp, Generator, LatentCode, RegionMask};
use lorank::harness::{decode_pgm, l1_distance, Cmp, ExperimentReport, GrayImage, Heatmap, PgmFormat};
use lorank::numkernel::{dot, fro_norm, l1_norm, norm2, nuclear_norm, svd, Matrix};
use lorank::rng::{normal_matrix, normal_vec, seeded};
use lorank::rpca::{pcp, planted_instance, PcpConfig};
use lorank::subspace::{attribute_basis, max_principal_angle, null_project, region_gram, AttributeBasis, ProjectionSpec};
use proptest::prelude::*;

fn orthogonal(n: usize, seed: u64) -> Matrix {
    svd(&normal_matrix(n, n, &mut seeded(seed))).unwrap().u
}

fn basis(n: usize, rank: usize, seed: u64) -> AttributeBasis {
    AttributeBasis {
        v: orthogonal(n, seed),
        sigma: (0..n).map(|i| if i < rank { (n - i) as f64 } else { 0.0 }).collect(),
        rank,
        region: RegionMask::full(n).unwrap(),
    }
}

fn symmetric_gram(n: usize, rank: usize, seed: u64) -> Matrix {
    let a = normal_matrix(rank, n, &mut seeded(seed));
    let mut g = a.t_matmul(&a);
    // a few large symmetric spikes
    for k in 0..n / 4 {
        let (i, j) = (k * 3 % n, (k * 7 + 1) % n);
        let s = if k % 2 == 0 { 5.0 } else { -5.0 };
        g[(i, j)] += s;
        if i != j {
            g[(j, i)] += s;
        }
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn svd_reconstructs_with_orthonormal_factors(rows in 1usize..9, cols in 1usize..9, seed in any::<u64>()) {
        let m = normal_matrix(rows, cols, &mut seeded(seed));
        let s = svd(&m).unwrap();
        prop_assert!(fro_norm(&(&s.reconstruct() - &m)) <= 1e-10 * fro_norm(&m).max(1.0));
        let k = rows.min(cols);
        prop_assert!(s.u.t_matmul(&s.u).max_abs_diff(&Matrix::identity(k)) <= 1e-10);
        prop_assert!(s.v.t_matmul(&s.v).max_abs_diff(&Matrix::identity(k)) <= 1e-10);
        prop_assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn converged_pcp_is_feasible(n in 6usize..20, rank in 1usize..3, seed in any::<u64>()) {
        let (l0, s0) = planted_instance(n, rank, 0.05, 3.0, seed);
        let m = &l0 + &s0;
        let sol = pcp(&m, &PcpConfig::default()).unwrap();
        if sol.converged {
            let r = fro_norm(&(&(&sol.l + &sol.s) - &m)) / fro_norm(&m);
            prop_assert!(r <= 1e-7, "residual {r}");
        }
    }

    #[test]
    fn symmetric_input_gives_symmetric_low_rank_part(n in 4usize..16, rank in 1usize..3, seed in any::<u64>()) {
        let m = symmetric_gram(n, rank, seed);
        let sol = pcp(&m, &PcpConfig::default()).unwrap();
        let l = &sol.l;
        prop_assert!(fro_norm(&(l - &l.transpose())) <= 1e-8 * fro_norm(l).max(f64::MIN_POSITIVE));
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal(n in 2usize..12, seed in any::<u64>(), frac in 0.0f64..1.0, relax_frac in 0.0f64..1.0) {
        let rank = ((n - 1) as f64 * frac) as usize;
        let relax = (rank as f64 * relax_frac) as usize;
        let b = basis(n, rank, seed);
        let spec = ProjectionSpec::new(b.clone(), relax).unwrap();
        let v = normal_vec(n, &mut seeded(seed ^ 0x5eed));
        let r = spec.residual(&v).unwrap();
        for k in 0..spec.constrained() {
            prop_assert!(dot(&r, &b.v.col(k)).abs() <= 1e-10 * norm2(&v));
        }
        if let Ok(p) = null_project(&v, &spec) {
            let pp = null_project(&p, &spec).unwrap();
            prop_assert!(p.iter().zip(&pp).all(|(a, b)| (a - b).abs() <= 1e-10));
        }
    }

    #[test]
    fn relaxation_never_shrinks_the_retained_component(n in 2usize..12, seed in any::<u64>(), frac in 0.0f64..1.0) {
        let rank = ((n as f64) * frac) as usize;
        let b = basis(n, rank, seed);
        let v = normal_vec(n, &mut seeded(seed.wrapping_add(1)));
        let norms: Vec<f64> = (0..=rank)
            .map(|r| norm2(&ProjectionSpec::new(b.clone(), r).unwrap().residual(&v).unwrap()))
            .collect();
        prop_assert!(norms.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{norms:?}");
    }

    #[test]
    fn generator_text_round_trip(w in prop::collection::vec(1usize..7, 2..5), seed in any::<u64>()) {
        let g = make_mlp(&w, seed).unwrap();
        let text = g.save();
        let back = Generator::load(&text).unwrap();
        prop_assert_eq!(&back, &g);
        prop_assert_eq!(back.save(), text);
    }

    #[test]
    fn matrix_text_round_trip_is_bit_exact(vals in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..24), cols in 1usize..5) {
        let rows = vals.len() / cols;
        prop_assume!(rows > 0);
        let m = Matrix::from_vec(rows, cols, vals[..rows * cols].to_vec()).unwrap();
        let back = Matrix::from_text(&m.to_text()).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        prop_assert!(back.as_slice().iter().zip(m.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn report_json_round_trip(vals in prop::collection::vec(-1e300f64..1e300, 1..8), bound in -1.0f64..1.0) {
        let mut r = ExperimentReport::new("prop");
        for (i, v) in vals.iter().enumerate() {
            r.metric(format!("m{i}"), *v).unwrap();
            r.require(format!("m{i}"), if i % 2 == 0 { Cmp::AtMost } else { Cmp::AtLeast }, bound).unwrap();
        }
        let json = r.to_json();
        let back = ExperimentReport::from_json(&json).unwrap();
        prop_assert_eq!(back.pass(), r.pass());
        prop_assert_eq!(back.to_json(), json);
        prop_assert_eq!(back, r);
    }

    #[test]
    fn pgm_round_trip(w in 1usize..9, h in 1usize..9, seed in any::<u64>()) {
        let vals = normal_vec(w * h, &mut seeded(seed));
        let img = GrayImage::auto_range(&vals, w, &[]).unwrap();
        for fmt in [PgmFormat::Ascii, PgmFormat::Binary] {
            let (dw, dh, px) = decode_pgm(&img.encode(fmt)).unwrap();
            prop_assert_eq!((dw, dh), (w, h));
            prop_assert_eq!(&px, &img.pixels);
        }
    }

    #[test]
    fn heatmap_total_is_exact_l1(n in 1usize..6, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let (a, b) = (normal_vec(n * n, &mut rng), normal_vec(n * n, &mut rng));
        prop_assert_eq!(Heatmap::new(&a, &b, n).unwrap().total(), l1_distance(&a, &b).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// PCP is homogeneous: scaling the Gram by c² scales (L, S) by c², so the
    /// attribute subspace is unchanged with the same λ.
    #[test]
    fn attribute_subspace_is_scale_invariant(seed in 0u64..1000, z_seed in 0u64..1000) {
        let g = make_blocky(32, 16, 16, 0.0, seed).unwrap();
        let a = RegionMask::left_half(16).unwrap();
        let gram = region_gram(&g.jacobian(&LatentCode::sample(32, z_seed)).unwrap(), &a).unwrap();
        let cfg = PcpConfig::default();
        let base = attribute_basis(&gram, &a, &cfg, 1e-6).unwrap();
        for c in [0.5f64, 2.0] {
            let scaled = attribute_basis(&gram.scale(c * c), &a, &cfg, 1e-6).unwrap();
            prop_assert_eq!(scaled.rank, base.rank);
            let angle = max_principal_angle(&base.v.leading_cols(base.rank), &scaled.v.leading_cols(scaled.rank)).unwrap();
            prop_assert!(angle <= 1e-6, "angle {angle}");
        }
    }
}

#[test]
fn pcp_objective_beats_the_planted_split() {
    for seed in 0..3 {
        let (l0, s0) = planted_instance(60, 3, 0.05, 10.0, seed);
        let m = &l0 + &s0;
        let sol = pcp(&m, &PcpConfig::default()).unwrap();
        assert!(sol.converged);
        let obj = |l: &Matrix, s: &Matrix| nuclear_norm(l).unwrap() + sol.lambda * l1_norm(s);
        let scale = obj(&l0, &s0);
        assert!(obj(&sol.l, &sol.s) <= scale + 1e-6 * scale, "seed {seed}");
    }
}

/// Fixed-μ ADMM oscillates with period of roughly four iterations, so single
/// steps can rise; the envelope over the last ten iterations still decays.
#[test]
fn residual_tail_envelope_decays() {
    let peak = |s: &[f64]| s.iter().copied().fold(0.0, f64::max);
    for seed in 0..20 {
        let (l0, s0) = planted_instance(60, 3, 0.05, 10.0, seed);
        let sol = pcp(&(&l0 + &s0), &PcpConfig::default()).unwrap();
        assert!(sol.converged);
        let tail = &sol.history[sol.history.len() - 11..];
        assert!(peak(&tail[6..]) <= 0.5 * peak(&tail[..6]), "seed {seed}: {tail:?}");
    }
}
