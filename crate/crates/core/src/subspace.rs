//! Attribute subspaces of region Grams and null-space projection.
//!
//! For a region of the output, the Gram `J_regionᵀ·J_region` measures how
//! strongly each latent direction moves that region. Its low-rank part
//! (from PCP) has a few dominant right singular vectors, the attribute
//! directions, and a null space of directions that leave the region fixed
//! to first order. Projecting an attribute of region A onto the null space
//! of region B gives an edit that stays inside A.

use crate::error::{Error, Result};
use crate::genzoo::{Generator, LatentCode, RegionMask};
use crate::numkernel::{dot, fmt_real, norm2, parse_reals, rank_of, svd, Matrix};
use crate::rpca::{pcp, PcpConfig, PcpSolution};

/// Relative singular value cutoff for the effective rank of `L*`.
pub const DEFAULT_RANK_TOL: f64 = 1e-6;
/// Presets for the number of relaxed directions.
pub const RELAX_FACES: [usize; 2] = [4, 12];
pub const RELAX_SMALL_MASK: usize = 20;

/// Projected directions shorter than this are rejected.
const VANISHING_NORM: f64 = 1e-10;
/// Top two eigenvalues closer than this (relative) make the principal
/// direction ambiguous.
const AMBIGUITY_GAP: f64 = 1e-10;

/// `J_regionᵀ·J_region` for the rows of `j` listed in `region`.
pub fn region_gram(j: &Matrix, region: &RegionMask) -> Result<Matrix> {
    if region.is_empty() {
        return Err(Error::invalid("region mask is empty"));
    }
    if let Some(&last) = region.indices().last() {
        if last >= j.rows() {
            return Err(Error::Shape(format!(
                "region index {last} outside a Jacobian with {} rows",
                j.rows()
            )));
        }
    }
    let jr = j.select_rows(region.indices());
    Ok(jr.t_matmul(&jr))
}

/// Unit eigenvector of the largest eigenvalue of a symmetric PSD Gram,
/// which maximizes `nᵀ·gram·n` over unit `n`.
pub fn principal_direction(gram: &Matrix) -> Result<Vec<f64>> {
    if !gram.is_square() {
        return Err(Error::Shape("gram must be square".into()));
    }
    let s = svd(gram)?;
    let top = s.sigma[0];
    let second = s.sigma.get(1).copied().unwrap_or(0.0);
    if top == 0.0 || (top - second) <= AMBIGUITY_GAP * top {
        return Err(Error::AmbiguousDirection { top, second });
    }
    Ok(s.v.col(0))
}

/// Right singular vectors of the low-rank part of a region Gram.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeBasis {
    /// `d_z × d_z`, columns ordered by nonincreasing singular value.
    pub v: Matrix,
    pub sigma: Vec<f64>,
    /// Number of leading columns that are attribute directions.
    pub rank: usize,
    pub region: RegionMask,
}

impl AttributeBasis {
    pub fn d_z(&self) -> usize {
        self.v.rows()
    }

    pub fn direction(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.rank {
            return Err(Error::invalid(format!(
                "attribute index {i} out of range 0..{}",
                self.rank
            )));
        }
        Ok(self.v.col(i))
    }

    /// Columns beyond the rank: directions that leave the region unchanged
    /// to first order.
    pub fn null_space(&self) -> Matrix {
        let d = self.d_z();
        Matrix::from_fn(d, d - self.rank, |i, j| self.v[(i, self.rank + j)])
    }

    pub fn null_dim(&self) -> usize {
        self.d_z() - self.rank
    }

    /// Matrix text for `v`, then a line of singular values, then
    /// `rank region_indices…`.
    pub fn to_text(&self) -> String {
        let sig: Vec<String> = self.sigma.iter().map(|&x| fmt_real(x)).collect();
        let mut tail: Vec<String> = vec![self.rank.to_string()];
        tail.extend(self.region.indices().iter().map(usize::to_string));
        format!("{}{}\n{}\n", self.v.to_text(), sig.join(" "), tail.join(" "))
    }

    pub fn from_text(text: &str, d_x: usize) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (v, next) = Matrix::parse_lines(&mut lines)?;
        if !v.is_square() {
            return Err(Error::parse(1, "basis matrix must be square"));
        }
        let (n, sig_line) = next.ok_or_else(|| Error::parse(v.rows() + 2, "missing singular value line"))?;
        let sigma = parse_reals(sig_line, n + 1)?;
        if sigma.len() != v.cols() {
            return Err(Error::parse(
                n + 1,
                format!("expected {} singular values, found {}", v.cols(), sigma.len()),
            ));
        }
        let (n, tail) = lines
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| Error::parse(n + 2, "missing `rank region_indices` line"))?;
        let nums: Vec<usize> = tail
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(n + 1, "bad rank/region line"))?;
        let (&rank, idx) = nums
            .split_first()
            .ok_or_else(|| Error::parse(n + 1, "empty rank/region line"))?;
        if rank > v.cols() {
            return Err(Error::parse(n + 1, format!("rank {rank} exceeds d_z {}", v.cols())));
        }
        let region = RegionMask::new(idx.to_vec(), d_x).map_err(|e| Error::parse(n + 1, e.to_string()))?;
        if let Some((k, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(k + 1, "trailing content after basis"));
        }
        Ok(Self { v, sigma, rank, region })
    }
}

/// PCP on the Gram, then SVD of the symmetrized low-rank part.
pub fn attribute_basis(gram: &Matrix, region: &RegionMask, config: &PcpConfig, rank_tol: f64) -> Result<AttributeBasis> {
    attribute_basis_with_solution(gram, region, config, rank_tol).map(|(b, _)| b)
}

/// As [`attribute_basis`], also returning the PCP solution for diagnostics.
pub fn attribute_basis_with_solution(
    gram: &Matrix,
    region: &RegionMask,
    config: &PcpConfig,
    rank_tol: f64,
) -> Result<(AttributeBasis, PcpSolution)> {
    if !gram.is_square() {
        return Err(Error::Shape("gram must be square".into()));
    }
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::invalid(format!("rank_tol must lie in (0, 1), got {rank_tol}")));
    }
    let sol = pcp(gram, config)?;
    let low_rank = sol.l.symmetrize();
    let s = svd(&low_rank)?;
    let rank = rank_of(&s.sigma, rank_tol);
    let basis = AttributeBasis {
        v: s.v,
        sigma: s.sigma,
        rank,
        region: region.clone(),
    };
    Ok((basis, sol))
}

/// Complement-region basis plus the number of its smallest attribute
/// directions released from the projection constraint.
#[derive(Clone, Debug)]
pub struct ProjectionSpec {
    basis_b: AttributeBasis,
    r_relax: usize,
}

impl ProjectionSpec {
    pub fn new(basis_b: AttributeBasis, r_relax: usize) -> Result<Self> {
        if r_relax > basis_b.rank {
            return Err(Error::invalid(format!(
                "r_relax {r_relax} exceeds the complement rank {}",
                basis_b.rank
            )));
        }
        Ok(Self { basis_b, r_relax })
    }

    pub fn basis(&self) -> &AttributeBasis {
        &self.basis_b
    }

    pub fn r_relax(&self) -> usize {
        self.r_relax
    }

    /// Number of constrained columns, `rank − r_relax`.
    pub fn constrained(&self) -> usize {
        self.basis_b.rank - self.r_relax
    }

    /// `(I − B₁B₁ᵀ)·v` before normalization, `B₁` being the first
    /// `rank − r_relax` columns of the complement basis.
    pub fn residual(&self, v: &[f64]) -> Result<Vec<f64>> {
        let b = &self.basis_b.v;
        if v.len() != b.rows() {
            return Err(Error::Shape(format!(
                "direction of length {} against a basis of dimension {}",
                v.len(),
                b.rows()
            )));
        }
        let mut p = v.to_vec();
        for k in 0..self.constrained() {
            let col = b.col(k);
            let c = dot(&col, v);
            for (x, y) in p.iter_mut().zip(&col) {
                *x -= c * y;
            }
        }
        Ok(p)
    }
}

/// Projects `v` off the complement region's attribute span and
/// renormalizes.
pub fn null_project(v: &[f64], spec: &ProjectionSpec) -> Result<Vec<f64>> {
    let p = spec.residual(v)?;
    let norm = norm2(&p);
    if norm <= VANISHING_NORM {
        return Err(Error::NoLocalDirection { norm });
    }
    Ok(p.into_iter().map(|x| x / norm).collect())
}

#[derive(Clone, Debug)]
pub struct EditRequest {
    pub z: LatentCode,
    direction: Vec<f64>,
    pub alpha: f64,
}

impl EditRequest {
    pub fn new(z: LatentCode, direction: Vec<f64>, alpha: f64) -> Result<Self> {
        let n = norm2(&direction);
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::invalid(format!("edit direction must be unit length, norm is {n}")));
        }
        if !alpha.is_finite() {
            return Err(Error::invalid("editing strength must be finite"));
        }
        Ok(Self { z, direction, alpha })
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }
}

/// `G(z + α·direction)`.
pub fn edit(g: &Generator, req: &EditRequest) -> Result<Vec<f64>> {
    g.forward(&req.z.shifted(&req.direction, req.alpha)?)
}

/// Largest principal angle (radians) between the column spans of two
/// matrices with orthonormal columns.
pub fn max_principal_angle(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.cols() == 0 && b.cols() == 0 {
        return Ok(0.0);
    }
    if a.cols() != b.cols() {
        return Ok(std::f64::consts::FRAC_PI_2);
    }
    let s = svd(&a.t_matmul(b))?;
    let smallest = s.sigma.last().copied().unwrap_or(1.0).min(1.0);
    // acos is ill-conditioned near 1; use the sine route.
    let sin = (1.0 - smallest * smallest).max(0.0).sqrt();
    Ok(sin.asin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genzoo::{make_blocky, make_linear, make_linear_chain};
    use crate::numkernel::test_util::random_matrix;

    fn basis_from_cols(cols: &[Vec<f64>], rank: usize) -> AttributeBasis {
        let d = cols[0].len();
        let mut v = Matrix::zeros(d, d);
        for (k, c) in cols.iter().enumerate() {
            v.set_col(k, c);
        }
        AttributeBasis {
            v,
            sigma: vec![1.0; d],
            rank,
            region: RegionMask::full(1).unwrap(),
        }
    }

    fn axes(d: usize) -> Vec<Vec<f64>> {
        (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect()
    }

    #[test]
    fn region_gram_examples() {
        let g = make_linear(4, 6, 1).unwrap();
        let z = LatentCode::zeros(4);
        let j = g.jacobian(&z).unwrap();
        let w = &g.layers()[0].weight;
        let full = region_gram(&j, &RegionMask::full(6).unwrap()).unwrap();
        assert!(full.max_abs_diff(&w.t_matmul(w)) <= 1e-15);

        let one = region_gram(&j, &RegionMask::new(vec![2], 6).unwrap()).unwrap();
        assert!(crate::numkernel::numerical_rank(&one, 1e-8).unwrap() <= 1);

        let a = RegionMask::new(vec![0, 2, 5], 6).unwrap();
        let b = a.complement(6).unwrap();
        let sum = &region_gram(&j, &a).unwrap() + &region_gram(&j, &b).unwrap();
        assert!(sum.max_abs_diff(&full) <= 1e-15);
        assert!(region_gram(&j, &RegionMask::new(vec![6], 7).unwrap()).is_err());
    }

    #[test]
    fn principal_direction_examples() {
        let d = principal_direction(&Matrix::from_diag(&[4.0, 1.0])).unwrap();
        assert_eq!(d, vec![1.0, 0.0]);
        assert!(matches!(
            principal_direction(&Matrix::identity(3).scale(2.0)),
            Err(Error::AmbiguousDirection { .. })
        ));
    }

    #[test]
    fn null_project_examples() {
        let b = basis_from_cols(&axes(3), 1);
        let spec = ProjectionSpec::new(b, 0).unwrap();
        assert!(matches!(
            null_project(&[1.0, 0.0, 0.0], &spec),
            Err(Error::NoLocalDirection { .. })
        ));
        let s = 1.0 / 2f64.sqrt();
        let p = null_project(&[s, s, 0.0], &spec).unwrap();
        assert!((p[0]).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn projection_spec_bounds_relaxation() {
        let b = basis_from_cols(&axes(4), 2);
        assert!(ProjectionSpec::new(b.clone(), 3).is_err());
        let spec = ProjectionSpec::new(b, 2).unwrap();
        assert_eq!(spec.constrained(), 0);
        assert_eq!(spec.residual(&[0.1, 0.2, 0.3, 0.4]).unwrap(), vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal() {
        let q = crate::numkernel::svd(&random_matrix(6, 6, 4)).unwrap().v;
        let cols: Vec<Vec<f64>> = (0..6).map(|k| q.col(k)).collect();
        let basis = basis_from_cols(&cols, 3);
        for r_relax in 0..=3 {
            let spec = ProjectionSpec::new(basis.clone(), r_relax).unwrap();
            let v = crate::rng::unit_vec(6, &mut crate::rng::seeded(r_relax as u64));
            let res = spec.residual(&v).unwrap();
            for k in 0..spec.constrained() {
                assert!(dot(&res, &q.col(k)).abs() <= 1e-10);
            }
            let p = null_project(&v, &spec).unwrap();
            let pp = null_project(&p, &spec).unwrap();
            assert!(p.iter().zip(&pp).all(|(a, b)| (a - b).abs() <= 1e-10));
        }
    }

    #[test]
    fn edit_examples() {
        let g = make_linear(5, 7, 3).unwrap();
        let z = LatentCode::sample(5, 1);
        let dir = crate::rng::unit_vec(5, &mut crate::rng::seeded(2));
        let base = g.forward(&z).unwrap();
        let same = edit(&g, &EditRequest::new(z.clone(), dir.clone(), 0.0).unwrap()).unwrap();
        assert_eq!(same, base);
        let out = edit(&g, &EditRequest::new(z.clone(), dir.clone(), 1.5).unwrap()).unwrap();
        let wd = g.layers()[0].weight.matvec(&dir);
        for i in 0..7 {
            assert!((out[i] - base[i] - 1.5 * wd[i]).abs() <= 1e-14);
        }
        assert!(EditRequest::new(z, vec![1.0, 1.0, 0.0, 0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn clean_rank_two_gram_is_recovered() {
        // small coherent grams (d_z = 8) have a sparse-plus-low-rank split
        // with lower objective than the clean gram; 32 is comfortably past that
        for seed in 0..3 {
            let g = make_linear_chain(&[32, 2, 40], seed).unwrap();
            let j = g.jacobian(&LatentCode::zeros(32)).unwrap();
            let region = RegionMask::full(40).unwrap();
            let gram = region_gram(&j, &region).unwrap();
            let (basis, sol) =
                attribute_basis_with_solution(&gram, &region, &PcpConfig::default(), DEFAULT_RANK_TOL).unwrap();
            assert_eq!(basis.rank, 2);
            let rel = crate::numkernel::fro_norm(&(&sol.l - &gram)) / crate::numkernel::fro_norm(&gram);
            assert!(rel <= 1e-4, "L* deviates from the clean gram by {rel}");
        }
    }

    #[test]
    fn zero_gram_gives_empty_attribute_set() {
        let region = RegionMask::full(3).unwrap();
        let b = attribute_basis(&Matrix::zeros(5, 5), &region, &PcpConfig::default(), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(b.rank, 0);
        assert_eq!(b.null_dim(), 5);
        assert!(b.direction(0).is_err());
    }

    #[test]
    fn basis_text_round_trip() {
        let g = make_blocky(8, 4, 4, 0.1, 1).unwrap();
        let j = g.jacobian(&LatentCode::sample(8, 3)).unwrap();
        let region = RegionMask::left_half(4).unwrap();
        let b = attribute_basis(&region_gram(&j, &region).unwrap(), &region, &PcpConfig::default(), DEFAULT_RANK_TOL)
            .unwrap();
        let text = b.to_text();
        let back = AttributeBasis::from_text(&text, 16).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_text(), text);
        let cut: String = text.lines().take(9).map(|l| format!("{l}\n")).collect();
        assert!(AttributeBasis::from_text(&cut, 16).unwrap_err().to_string().contains("singular value"));
    }
}
