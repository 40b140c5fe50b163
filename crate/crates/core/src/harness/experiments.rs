//! The experiment operations. Each returns metrics only; thresholds are
//! attached by the caller from its configuration.

use rand::Rng;

use super::{masked_mse, region_mse, ExperimentReport, Heatmap};
use crate::error::{Error, Result};
use crate::genzoo::{Generator, LatentCode, RegionMask};
use crate::numkernel::{dot, fmt_real, norm2, numerical_rank, svd, Matrix};
use crate::rng::{seeded_stream, Stream};
use crate::rpca::PcpConfig;
use crate::subspace::{
    attribute_basis, edit, null_project, region_gram, AttributeBasis, EditRequest, ProjectionSpec, DEFAULT_RANK_TOL,
    RELAX_SMALL_MASK,
};

/// Shared knobs for attribute discovery.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub pcp: PcpConfig,
    pub rank_tol: f64,
    /// Relaxation used for sub-masks smaller than half of region A, capped
    /// at `rank_b − 1` so the dominant direction of B stays constrained.
    pub small_mask_relax: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            pcp: PcpConfig::default(),
            rank_tol: DEFAULT_RANK_TOL,
            small_mask_relax: RELAX_SMALL_MASK,
        }
    }
}

/// Outputs before and after one edit.
#[derive(Clone, Debug, PartialEq)]
pub struct EditOutcome {
    pub direction: Vec<f64>,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

impl EditOutcome {
    fn run(g: &Generator, z: &LatentCode, direction: Vec<f64>, alpha: f64) -> Result<Self> {
        let before = g.forward(z)?;
        let after = edit(g, &EditRequest::new(z.clone(), direction.clone(), alpha)?)?;
        Ok(Self {
            direction,
            before,
            after,
        })
    }

    pub fn heatmap(&self, width: usize) -> Result<Heatmap> {
        Heatmap::new(&self.before, &self.after, width)
    }
}

fn basis_at(j: &Matrix, region: &RegionMask, pcp: &PcpConfig, rank_tol: f64) -> Result<AttributeBasis> {
    attribute_basis(&region_gram(j, region)?, region, pcp, rank_tol)
}

/// `num / den`, with `0/0 = zero_zero` and `x/0 = f64::MAX`.
fn ratio(num: f64, den: f64, zero_zero: f64) -> f64 {
    if den > 0.0 {
        (num / den).min(f64::MAX)
    } else if num > 0.0 {
        f64::MAX
    } else {
        zero_zero
    }
}

fn unit(v: Vec<f64>) -> Result<Vec<f64>> {
    let n = norm2(&v);
    if n == 0.0 {
        return Err(Error::NoLocalDirection { norm: 0.0 });
    }
    Ok(v.into_iter().map(|x| x / n).collect())
}

fn n_label(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("n{}", n as i64)
    } else {
        format!("n{}", fmt_real(n))
    }
}

/// Edits along the region-B null direction that moves region A the most to
/// first order, i.e. the top eigenvector of `Nᵀ·M_A·N` mapped back through
/// the null basis `N`.
pub fn nullspace_effect(
    g: &Generator,
    z: &LatentCode,
    mask_a: &RegionMask,
    mask_b: &RegionMask,
    alpha: f64,
    settings: &Settings,
) -> Result<(ExperimentReport, EditOutcome)> {
    let j = g.jacobian(z)?;
    let basis_b = basis_at(&j, mask_b, &settings.pcp, settings.rank_tol)?;
    if basis_b.null_dim() == 0 {
        return Err(Error::EmptyNullSpace { rank: basis_b.rank });
    }
    let null = basis_b.null_space();
    let gram_a = region_gram(&j, mask_a)?;
    let reduced = null.t_matmul(&gram_a.matmul(&null));
    let coeffs = svd(&reduced)?.v.col(0);
    let direction = unit(null.matvec(&coeffs))?;
    let predicted = alpha * alpha * dot(&direction, &gram_a.matvec(&direction)) / mask_a.len() as f64;

    let out = EditOutcome::run(g, z, direction, alpha)?;
    let change_a = region_mse(&out.before, &out.after, mask_a)?;
    let change_b = region_mse(&out.before, &out.after, mask_b)?;

    let mut r = ExperimentReport::new("nullspace_effect");
    r.param("alpha", fmt_real(alpha));
    r.metric("change_a", change_a)?;
    r.metric("change_b", change_b)?;
    r.metric("ratio_b_over_a", ratio(change_b, change_a, 0.0))?;
    r.metric("first_order_change_a", predicted)?;
    r.metric("rank_b", basis_b.rank as f64)?;
    r.metric("null_dim_b", basis_b.null_dim() as f64)?;
    Ok((r, out))
}

struct Projected {
    rank_a: usize,
    rank_b: usize,
    v: Vec<f64>,
    p: Vec<f64>,
}

fn project_top(basis_a: &AttributeBasis, basis_b: AttributeBasis, r_relax: usize) -> Result<Projected> {
    let v = basis_a.direction(0)?;
    let rank_b = basis_b.rank;
    let p = null_project(&v, &ProjectionSpec::new(basis_b, r_relax)?)?;
    Ok(Projected {
        rank_a: basis_a.rank,
        rank_b,
        v,
        p,
    })
}

fn comparison_metrics(
    r: &mut ExperimentReport,
    prefix: &str,
    g: &Generator,
    z: &LatentCode,
    mask_a: &RegionMask,
    proj: &Projected,
    alpha: f64,
) -> Result<()> {
    let without = EditOutcome::run(g, z, proj.v.clone(), alpha)?;
    let with = EditOutcome::run(g, z, proj.p.clone(), alpha)?;
    let mse_without = masked_mse(&without.before, &without.after, mask_a)?;
    let mse_with = masked_mse(&with.before, &with.after, mask_a)?;
    r.metric(format!("{prefix}mse_without"), mse_without)?;
    r.metric(format!("{prefix}mse_with"), mse_with)?;
    r.metric(format!("{prefix}ratio_with_over_without"), ratio(mse_with, mse_without, 1.0))?;
    r.metric(
        format!("{prefix}change_a_without"),
        region_mse(&without.before, &without.after, mask_a)?,
    )?;
    r.metric(format!("{prefix}change_a_with"), region_mse(&with.before, &with.after, mask_a)?)?;
    r.metric(format!("{prefix}abs_cos_v_p"), dot(&proj.v, &proj.p).abs())?;
    Ok(())
}

/// Masked MSE outside region A when editing along `v₁` of A, with and
/// without projecting it away from B's attribute span.
pub fn projection_comparison(
    g: &Generator,
    z: &LatentCode,
    mask_a: &RegionMask,
    mask_b: &RegionMask,
    alpha: f64,
    r_relax: usize,
    settings: &Settings,
) -> Result<ExperimentReport> {
    let j = g.jacobian(z)?;
    let basis_a = basis_at(&j, mask_a, &settings.pcp, settings.rank_tol)?;
    let basis_b = basis_at(&j, mask_b, &settings.pcp, settings.rank_tol)?;
    let proj = project_top(&basis_a, basis_b, r_relax)?;

    let mut r = ExperimentReport::new("projection_comparison");
    r.param("alpha", fmt_real(alpha)).param("r_relax", r_relax);
    r.metric("rank_a", proj.rank_a as f64)?;
    r.metric("rank_b", proj.rank_b as f64)?;
    comparison_metrics(&mut r, "", g, z, mask_a, &proj, alpha)?;
    Ok(r)
}

/// Applies the projected direction found at `z_ref` to every target.
/// A target counts as local when its region-A change is at least `factor`
/// times its change outside A.
#[allow(clippy::too_many_arguments)]
pub fn generalization(
    g: &Generator,
    z_ref: &LatentCode,
    targets: &[LatentCode],
    mask_a: &RegionMask,
    mask_b: &RegionMask,
    alpha: f64,
    r_relax: usize,
    factor: f64,
    settings: &Settings,
) -> Result<ExperimentReport> {
    if targets.is_empty() {
        return Err(Error::invalid("generalization needs at least one target"));
    }
    let j = g.jacobian(z_ref)?;
    let basis_a = basis_at(&j, mask_a, &settings.pcp, settings.rank_tol)?;
    let basis_b = basis_at(&j, mask_b, &settings.pcp, settings.rank_tol)?;
    let proj = project_top(&basis_a, basis_b, r_relax)?;

    let mut r = ExperimentReport::new("generalization");
    r.param("alpha", fmt_real(alpha))
        .param("r_relax", r_relax)
        .param("factor", fmt_real(factor));
    let mut local = 0usize;
    let mut min_ratio = f64::MAX;
    let mut spread = 0.0_f64;
    let mut first_delta: Option<Vec<f64>> = None;
    for (k, t) in targets.iter().enumerate() {
        let out = EditOutcome::run(g, t, proj.p.clone(), alpha)?;
        let change_a = region_mse(&out.before, &out.after, mask_a)?;
        let change_b = masked_mse(&out.before, &out.after, mask_a)?;
        if change_a >= factor * change_b {
            local += 1;
        }
        min_ratio = min_ratio.min(ratio(change_a, change_b, 0.0));
        let delta: Vec<f64> = out.after.iter().zip(&out.before).map(|(a, b)| a - b).collect();
        match &first_delta {
            None => first_delta = Some(delta),
            Some(d0) => {
                spread = d0.iter().zip(&delta).fold(spread, |m, (x, y)| m.max((x - y).abs()));
            }
        }
        r.metric(format!("target_{k:03}.change_a"), change_a)?;
        r.metric(format!("target_{k:03}.change_b"), change_b)?;
    }
    r.metric("targets", targets.len() as f64)?;
    r.metric("fraction_local", local as f64 / targets.len() as f64)?;
    r.metric("min_ratio_a_over_b", min_ratio)?;
    r.metric("delta_spread", spread)?;
    Ok(r)
}

/// Random axis-aligned boxes inside the rectangle `[x0, x1) × [y0, y1)`,
/// each covering at least `min_fraction` of it.
pub fn random_sub_boxes(
    grid: usize,
    rect: (usize, usize, usize, usize),
    count: usize,
    min_fraction: f64,
    seed: u64,
) -> Result<Vec<RegionMask>> {
    let (x0, y0, x1, y1) = rect;
    if x1 <= x0 || y1 <= y0 || x1 > grid || y1 > grid {
        return Err(Error::invalid(format!("bad rectangle {rect:?} on a {grid}×{grid} grid")));
    }
    if !(0.0..=1.0).contains(&min_fraction) {
        return Err(Error::invalid(format!("min_fraction must lie in [0, 1], got {min_fraction}")));
    }
    let (w_max, h_max) = (x1 - x0, y1 - y0);
    let need = (min_fraction * (w_max * h_max) as f64).ceil() as usize;
    let mut rng = seeded_stream(seed, Stream::Instance);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w = rng.random_range(1..=w_max);
        let h = rng.random_range(1..=h_max);
        if w * h < need.max(1) {
            continue;
        }
        let bx = x0 + rng.random_range(0..=w_max - w);
        let by = y0 + rng.random_range(0..=h_max - h);
        out.push(RegionMask::rect(grid, bx, by, bx + w, by + h)?);
    }
    Ok(out)
}

/// Projected top directions from several sub-masks of region A and their
/// pairwise agreement. Sub-masks under half of A use
/// `settings.small_mask_relax`, clamped to B's rank.
pub fn mask_robustness(
    g: &Generator,
    z: &LatentCode,
    submasks: &[RegionMask],
    mask_a: &RegionMask,
    mask_b: &RegionMask,
    alpha: f64,
    settings: &Settings,
) -> Result<ExperimentReport> {
    if submasks.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 sub-masks, got {}", submasks.len())));
    }
    let j = g.jacobian(z)?;
    let basis_b = basis_at(&j, mask_b, &settings.pcp, settings.rank_tol)?;
    let mut r = ExperimentReport::new("mask_robustness");
    r.param("alpha", fmt_real(alpha));
    let mut dirs = Vec::with_capacity(submasks.len());
    for (k, sub) in submasks.iter().enumerate() {
        let basis = basis_at(&j, sub, &settings.pcp, settings.rank_tol)?;
        let relax = if 2 * sub.len() < mask_a.len() {
            settings.small_mask_relax.min(basis_b.rank)
        } else {
            0
        };
        let proj = project_top(&basis, basis_b.clone(), relax)?;
        let out = EditOutcome::run(g, z, proj.p.clone(), alpha)?;
        r.metric(format!("sub_{k}.size"), sub.len() as f64)?;
        r.metric(format!("sub_{k}.r_relax"), relax as f64)?;
        r.metric(format!("sub_{k}.change_a"), region_mse(&out.before, &out.after, mask_a)?)?;
        dirs.push(proj.p);
    }
    let mut sum = 0.0;
    let mut min = f64::INFINITY;
    let mut pairs = 0usize;
    for a in 0..dirs.len() {
        for b in a + 1..dirs.len() {
            let c = dot(&dirs[a], &dirs[b]).abs();
            sum += c;
            min = min.min(c);
            pairs += 1;
        }
    }
    r.metric("submasks", submasks.len() as f64)?;
    r.metric("mean_abs_cos", sum / pairs as f64)?;
    r.metric("min_abs_cos", min)?;
    Ok(r)
}

/// Numerical ranks of the per-layer Jacobian Grams.
pub fn rank_monotonicity(g: &Generator, z: &LatentCode, rel_tol: f64) -> Result<ExperimentReport> {
    let ranks = g
        .layer_jacobians(z)?
        .iter()
        .map(|j| numerical_rank(&j.t_matmul(j), rel_tol))
        .collect::<Result<Vec<_>>>()?;
    let mut r = ExperimentReport::new("rank_monotonicity");
    r.param("rel_tol", fmt_real(rel_tol));
    for (k, &rank) in ranks.iter().enumerate() {
        r.metric(format!("rank_{k}"), rank as f64)?;
    }
    let mono = ranks.windows(2).all(|w| w[0] >= w[1]);
    r.metric("nonincreasing", if mono { 1.0 } else { 0.0 })?;
    if g.intrinsic_dim() < g.d_z() {
        r.metric("first_rank_below_dz", if ranks[0] < g.d_z() { 1.0 } else { 0.0 })?;
    }
    Ok(r)
}

/// Effective ranks, B's null dimension and projection metrics for
/// `λ = 1/n` over `n_values`.
pub fn lambda_sweep(
    g: &Generator,
    z: &LatentCode,
    mask_a: &RegionMask,
    mask_b: &RegionMask,
    n_values: &[f64],
    alpha: f64,
    settings: &Settings,
) -> Result<ExperimentReport> {
    let j = g.jacobian(z)?;
    let mut r = ExperimentReport::new("lambda_sweep");
    r.param("alpha", fmt_real(alpha));
    r.param(
        "n_values",
        n_values.iter().map(|&n| fmt_real(n)).collect::<Vec<_>>().join(" "),
    );
    let mut dims: Vec<(f64, usize)> = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let pcp = settings.pcp.clone().with_lambda_n(n);
        let key = n_label(n);
        let basis_a = basis_at(&j, mask_a, &pcp, settings.rank_tol)?;
        let basis_b = basis_at(&j, mask_b, &pcp, settings.rank_tol)?;
        r.metric(format!("{key}.rank_a"), basis_a.rank as f64)?;
        r.metric(format!("{key}.rank_b"), basis_b.rank as f64)?;
        r.metric(format!("{key}.null_dim_b"), basis_b.null_dim() as f64)?;
        dims.push((n, basis_b.null_dim()));
        if basis_a.rank > 0 {
            match project_top(&basis_a, basis_b, 0) {
                Ok(proj) => comparison_metrics(&mut r, &format!("{key}."), g, z, mask_a, &proj, alpha)?,
                Err(Error::NoLocalDirection { .. }) => {
                    r.metric(format!("{key}.vanishing"), 1.0)?;
                }
                Err(e) => return Err(e),
            }
        }
    }
    dims.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mono = dims.windows(2).all(|w| w[0].1 <= w[1].1);
    r.metric("null_dim_nondecreasing_in_n", if mono { 1.0 } else { 0.0 })?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genzoo::{make_blocky, make_linear, make_linear_chain, make_mlp};

    fn halves(g: &Generator) -> (RegionMask, RegionMask) {
        let grid = g.grid().unwrap();
        (RegionMask::left_half(grid).unwrap(), RegionMask::right_half(grid).unwrap())
    }

    #[test]
    fn nullspace_edit_leaves_b_untouched_at_zero_coupling() {
        let g = make_blocky(32, 16, 16, 0.0, 3).unwrap();
        let (a, b) = halves(&g);
        let z = LatentCode::sample(32, 1);
        let (r, out) = nullspace_effect(&g, &z, &a, &b, 1.0, &Settings::default()).unwrap();
        assert!(r.get("change_b").unwrap() <= 1e-8, "{r:?}");
        assert!(r.get("change_a").unwrap() >= 1e-2, "{r:?}");
        let h = out.heatmap(16).unwrap();
        assert_eq!(h.total(), crate::harness::l1_distance(&out.before, &out.after).unwrap());
    }

    #[test]
    fn swapping_regions_moves_the_other_half() {
        let g = make_blocky(32, 16, 16, 0.0, 4).unwrap();
        let (a, b) = halves(&g);
        let z = LatentCode::sample(32, 2);
        let (r, _) = nullspace_effect(&g, &z, &b, &a, 1.0, &Settings::default()).unwrap();
        // the right half owns a single weak local unit, so only the ratio is meaningful
        assert!(r.get("change_a").unwrap() > 0.0, "{r:?}");
        assert!(r.get("ratio_b_over_a").unwrap() <= 1e-12, "{r:?}");
    }

    #[test]
    fn full_rank_region_has_no_null_space() {
        let g = make_linear(4, 16, 0).unwrap();
        let a = RegionMask::new(vec![0, 1], 16).unwrap();
        let b = RegionMask::full(16).unwrap();
        let err = nullspace_effect(&g, &LatentCode::zeros(4), &a, &b, 1.0, &Settings::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyNullSpace { .. }), "{err}");
    }

    #[test]
    fn projection_comparison_examples() {
        let g = make_blocky(32, 16, 16, 0.0, 1).unwrap();
        let (a, b) = halves(&g);
        let z = LatentCode::sample(32, 5);
        let s = Settings::default();
        let r = projection_comparison(&g, &z, &a, &b, 1.0, 0, &s).unwrap();
        assert!(r.get("mse_with").unwrap() <= 0.01 * r.get("mse_without").unwrap(), "{r:?}");

        let rank_b = r.get("rank_b").unwrap() as usize;
        let noop = projection_comparison(&g, &z, &a, &b, 1.0, rank_b, &s).unwrap();
        assert!((noop.get("ratio_with_over_without").unwrap() - 1.0).abs() <= 1e-12, "{noop:?}");

        let still = projection_comparison(&g, &z, &a, &b, 0.0, 0, &s).unwrap();
        assert_eq!(still.get("mse_with"), Some(0.0));
        assert_eq!(still.get("mse_without"), Some(0.0));
    }

    #[test]
    fn linear_transfer_is_exact() {
        let g = make_linear_chain(&[8, 8, 64], 2).unwrap();
        let (a, b) = halves(&g);
        let targets: Vec<LatentCode> = (0..5).map(|k| LatentCode::sample(8, 10 + k)).collect();
        let r = generalization(&g, &LatentCode::sample(8, 0), &targets, &a, &b, 1.0, 0, 10.0, &Settings::default())
            .unwrap();
        assert!(r.get("delta_spread").unwrap() <= 1e-12, "{r:?}");
    }

    #[test]
    fn generalization_on_blocky() {
        let g = make_blocky(32, 16, 16, 0.0, 2).unwrap();
        let (a, b) = halves(&g);
        let targets: Vec<LatentCode> = (0..10).map(|k| LatentCode::sample(32, 100 + k)).collect();
        let r = generalization(&g, &LatentCode::sample(32, 0), &targets, &a, &b, 1.0, 0, 10.0, &Settings::default())
            .unwrap();
        assert_eq!(r.get("fraction_local"), Some(1.0), "{r:?}");
    }

    #[test]
    fn sub_boxes_respect_bounds_and_size() {
        let boxes = random_sub_boxes(16, (0, 0, 8, 16), 20, 0.25, 3).unwrap();
        let left = RegionMask::left_half(16).unwrap();
        for b in &boxes {
            assert!(b.len() >= 32);
            assert!(b.indices().iter().all(|&i| left.contains(i)));
        }
        assert_eq!(boxes, random_sub_boxes(16, (0, 0, 8, 16), 20, 0.25, 3).unwrap());
        assert!(random_sub_boxes(16, (4, 0, 4, 16), 1, 0.25, 0).is_err());
    }

    #[test]
    fn mask_robustness_examples() {
        let g = make_blocky(32, 16, 16, 0.0, 0).unwrap();
        let (a, b) = halves(&g);
        let z = LatentCode::sample(32, 0);
        let s = Settings::default();
        let same = vec![a.clone(), a.clone()];
        let r = mask_robustness(&g, &z, &same, &a, &b, 1.0, &s).unwrap();
        assert!((r.get("mean_abs_cos").unwrap() - 1.0).abs() <= 1e-12);
        assert!(mask_robustness(&g, &z, &same[..1], &a, &b, 1.0, &s).is_err());
        let boxes = random_sub_boxes(16, (0, 0, 8, 16), 5, 0.25, 9).unwrap();
        let strict = Settings {
            small_mask_relax: 0,
            ..Settings::default()
        };
        let r = mask_robustness(&g, &z, &boxes, &a, &b, 1.0, &strict).unwrap();
        assert!(r.get("mean_abs_cos").unwrap() >= 0.9, "{r:?}");
        assert!((0..5).all(|k| r.get(&format!("sub_{k}.r_relax")) == Some(0.0)));
    }

    #[test]
    fn rank_monotonicity_examples() {
        let g = make_mlp(&[32, 8, 256], 0).unwrap();
        let r = rank_monotonicity(&g, &LatentCode::sample(32, 0), 1e-8).unwrap();
        assert!(r.get("rank_0").unwrap() <= 8.0 && r.get("rank_1").unwrap() <= 8.0);
        assert_eq!(r.get("nonincreasing"), Some(1.0));
        assert_eq!(r.get("first_rank_below_dz"), Some(1.0));

        let g = make_linear(6, 6, 1).unwrap();
        let r = rank_monotonicity(&g, &LatentCode::zeros(6), 1e-8).unwrap();
        assert_eq!(r.get("rank_0"), Some(6.0));
        assert_eq!(r.get("first_rank_below_dz"), None);
    }

    #[test]
    fn lambda_sweep_limits() {
        let g = make_blocky(32, 16, 16, 0.0, 0).unwrap();
        let (a, b) = halves(&g);
        let z = LatentCode::sample(32, 0);
        let r = lambda_sweep(&g, &z, &a, &b, &[1.0, 1e6], 1.0, &Settings::default()).unwrap();
        // λ = 1 leaves the low-rank part intact; λ = 1e-6 pushes it all into S
        assert_eq!(r.get("n1.rank_b"), Some(2.0), "{r:?}");
        assert_eq!(r.get("n1000000.null_dim_b"), Some(32.0), "{r:?}");
        assert_eq!(r.get("null_dim_nondecreasing_in_n"), Some(1.0));
    }
}
