//! One-sided (Hestenes) Jacobi SVD.
//!
//! Columns of a working copy of the input are rotated pairwise until they
//! are mutually orthogonal; the rotations accumulate into `V`, the column
//! norms are the singular values and the normalized columns are `U`.
//! Pairs are visited in fixed row-cyclic order, so the result is a pure
//! function of the input bits.

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// A pair is considered orthogonal once `|a_p·a_q| ≤ TOL·‖a_p‖‖a_q‖`.
pub const JACOBI_TOL: f64 = 1e-12;
pub const MAX_SWEEPS: usize = 60;

/// Columns whose norm falls below this fraction of `‖A‖_F` are treated as
/// exact zeros: they are never rotated and their left vectors are completed
/// from the standard basis. Dropping them perturbs `A` by at most
/// `√n · ZERO_COL_REL · ‖A‖_F`, while rotating round-off columns against
/// each other can take dozens of sweeps without changing any singular value
/// that is resolvable in double precision.
const ZERO_COL_REL: f64 = 1e-13;

/// Thin singular value decomposition `m = u · diag(sigma) · vᵀ`.
///
/// For an `r × c` input with `k = min(r, c)`, `u` is `r × k`, `v` is
/// `c × k` and `sigma` has `k` nonincreasing entries. Square inputs
/// therefore get full orthogonal factors. The largest-magnitude entry of
/// every column of `v` is positive.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for j in 0..us.cols() {
            for i in 0..us.rows() {
                us[(i, j)] *= self.sigma[j];
            }
        }
        us.matmul(&self.v.transpose())
    }
}

pub fn svd(m: &Matrix) -> Result<Svd> {
    svd_impl(m, None)
}

/// SVD seeded with an orthogonal guess for the right factor.
///
/// The sweeps start from `m · v0` with `V` initialized to `v0`, which cuts
/// the number of sweeps when `v0` comes from a nearby matrix. The output
/// satisfies the same contract as [`svd`]; it is deterministic in
/// `(m, v0)`. Only square inputs use the guess; others fall back to [`svd`].
pub fn svd_warm(m: &Matrix, v0: &Matrix) -> Result<Svd> {
    if m.is_square() && v0.shape() == m.shape() {
        svd_impl(m, Some(v0))
    } else {
        svd(m)
    }
}

fn svd_impl(m: &Matrix, v0: Option<&Matrix>) -> Result<Svd> {
    if !m.all_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    let (rows, cols) = m.shape();
    let (mut u, sigma, mut v) = if rows >= cols {
        jacobi_tall(m, v0)?
    } else {
        let (u_t, s, v_t) = jacobi_tall(&m.transpose(), None)?;
        (v_t, s, u_t)
    };
    fix_signs(&mut u, &mut v);
    Ok(Svd { u, sigma, v })
}

/// Flip each singular pair so the largest-magnitude entry of `v_j` is
/// positive (first index wins ties).
fn fix_signs(u: &mut Matrix, v: &mut Matrix) {
    for j in 0..v.cols() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for i in 0..v.rows() {
            let a = v[(i, j)].abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if v[(best, j)] < 0.0 {
            for i in 0..v.rows() {
                v[(i, j)] = -v[(i, j)];
            }
            for i in 0..u.rows() {
                u[(i, j)] = -u[(i, j)];
            }
        }
    }
}

/// Core sweep for `rows ≥ cols`. Returns `(u, sigma, v)` sorted by
/// nonincreasing sigma, ties kept in column order.
fn jacobi_tall(m: &Matrix, v0: Option<&Matrix>) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let (rows, n) = m.shape();
    debug_assert!(rows >= n);

    let start = match v0 {
        Some(v0) => m.matmul(v0),
        None => m.clone(),
    };
    // Column-major working copies: column j lives at [j*len, (j+1)*len).
    let mut a = col_major(&start);
    let mut v = match v0 {
        Some(v0) => col_major(v0),
        None => col_major(&Matrix::identity(n)),
    };

    let fro = m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let zero_norm = ZERO_COL_REL * fro;
    let zero_sq = zero_norm * zero_norm;

    let mut norms = vec![0.0; n];
    let mut converged = n < 2 || fro == 0.0;
    let mut last_off = 0.0_f64;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::SvdNoConvergence {
                sweeps,
                residual: last_off,
            });
        }
        sweeps += 1;
        for (j, nrm) in norms.iter_mut().enumerate() {
            let c = &a[j * rows..(j + 1) * rows];
            *nrm = dot(c, c);
        }
        let mut rotated = false;
        last_off = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= zero_sq || beta <= zero_sq {
                    continue;
                }
                let (cp, cq) = two_cols(&mut a, rows, p, q);
                let gamma = dot(cp, cq);
                let off = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                last_off = last_off.max(off);
                if off <= JACOBI_TOL {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(cp, cq, c, s);
                let (vp, vq) = two_cols(&mut v, n, p, q);
                rotate(vp, vq, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        converged = !rotated;
    }

    let sigma_raw: Vec<f64> = (0..n)
        .map(|j| dot(&a[j * rows..(j + 1) * rows], &a[j * rows..(j + 1) * rows]).sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps original column order among equal values.
    order.sort_by(|&x, &y| sigma_raw[y].total_cmp(&sigma_raw[x]));

    let mut u = Matrix::zeros(rows, n);
    let mut vm = Matrix::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        let s = sigma_raw[j];
        let vcol = &v[j * n..(j + 1) * n];
        vm.set_col(k, vcol);
        if s > zero_norm && s > 0.0 {
            let col: Vec<f64> = a[j * rows..(j + 1) * rows].iter().map(|x| x / s).collect();
            u.set_col(k, &col);
            sigma.push(s);
        } else {
            sigma.push(0.0);
            missing.push(k);
        }
    }
    complete_orthonormal(&mut u, &missing);
    Ok((u, sigma, vm))
}

/// Fill the listed columns of `u` with unit vectors orthogonal to every
/// other column, choosing at each step the standard basis vector with the
/// largest residual (lowest index on ties).
fn complete_orthonormal(u: &mut Matrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let rows = u.rows();
    let mut basis: Vec<Vec<f64>> = (0..u.cols())
        .filter(|k| !missing.contains(k))
        .map(|k| u.col(k))
        .collect();
    // A candidate whose residual falls below `accept` stays below it as the
    // basis grows, so each standard vector is tried at most once. The
    // residual masses of all candidates sum to the complement dimension, so
    // the rejected ones hold at most 1/2 of it and an acceptable one remains.
    let accept = 1.0 / (2.0 * rows as f64).sqrt();
    let mut next = 0;
    for &k in missing {
        loop {
            assert!(next < rows, "complement exhausted");
            let mut e = vec![0.0; rows];
            e[next] = 1.0;
            next += 1;
            // Two passes of Gram-Schmidt.
            for _ in 0..2 {
                for b in &basis {
                    let d = dot(&e, b);
                    for (x, y) in e.iter_mut().zip(b) {
                        *x -= d * y;
                    }
                }
            }
            let nrm = dot(&e, &e).sqrt();
            if nrm >= accept {
                e.iter_mut().for_each(|x| *x /= nrm);
                u.set_col(k, &e);
                basis.push(e);
                break;
            }
        }
    }
}

fn col_major(m: &Matrix) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for (j, &x) in m.row(i).iter().enumerate() {
            out[j * r + i] = x;
        }
    }
    out
}

fn two_cols(buf: &mut [f64], len: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (lo, hi) = buf.split_at_mut(q * len);
    (&mut lo[p * len..(p + 1) * len], &mut hi[..len])
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::test_util::{random_matrix, sym_eigenvalues};

    fn orthonormality_error(q: &Matrix) -> f64 {
        q.t_matmul(q).max_abs_diff(&Matrix::identity(q.cols()))
    }

    fn rel_reconstruction(m: &Matrix, s: &Svd) -> f64 {
        let diff = &s.reconstruct() - m;
        let fro = |x: &Matrix| x.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        fro(&diff) / fro(m)
    }

    fn check_contract(m: &Matrix) -> Svd {
        let s = svd(m).unwrap();
        let k = m.rows().min(m.cols());
        assert_eq!(s.sigma.len(), k);
        assert_eq!(s.u.shape(), (m.rows(), k));
        assert_eq!(s.v.shape(), (m.cols(), k));
        assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.sigma.iter().all(|&x| x >= 0.0));
        assert!(orthonormality_error(&s.u) <= 1e-10);
        assert!(orthonormality_error(&s.v) <= 1e-10);
        if !m.is_zero() {
            assert!(rel_reconstruction(m, &s) <= 1e-10);
        }
        s
    }

    #[test]
    fn identity_gives_unit_values_and_identity_factors() {
        let s = check_contract(&Matrix::identity(3));
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);
        assert_eq!(s.u, Matrix::identity(3));
        assert_eq!(s.v, Matrix::identity(3));
    }

    #[test]
    fn diagonal_values_are_sorted() {
        let s = check_contract(&Matrix::from_diag(&[1.0, 3.0]));
        assert_eq!(s.sigma, vec![3.0, 1.0]);
        let s = check_contract(&Matrix::from_diag(&[3.0, 1.0]));
        assert_eq!(s.sigma, vec![3.0, 1.0]);
    }

    #[test]
    fn random_tall_reconstructs() {
        let m = random_matrix(4, 3, 11);
        check_contract(&m);
    }

    #[test]
    fn wide_and_rank_deficient_inputs() {
        check_contract(&random_matrix(3, 7, 2));
        let a = random_matrix(16, 4, 3);
        let b = random_matrix(4, 8, 4);
        let s = check_contract(&a.matmul(&b));
        assert!(s.sigma[4] <= 1e-12 * s.sigma[0]);
        let z = check_contract(&Matrix::zeros(5, 3));
        assert!(z.sigma.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sign_convention_holds() {
        let s = check_contract(&random_matrix(6, 6, 9));
        for j in 0..6 {
            let col = s.v.col(j);
            let big = col.iter().cloned().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn deterministic_bits() {
        let m = random_matrix(9, 5, 5);
        let a = svd(&m).unwrap();
        let b = svd(&m).unwrap();
        assert_eq!(a.u, b.u);
        assert_eq!(a.v, b.v);
        assert_eq!(a.sigma, b.sigma);
    }

    #[test]
    fn warm_start_matches_cold() {
        let m = random_matrix(12, 12, 21);
        let cold = svd(&m).unwrap();
        let nearby = m.axpy(1e-3, &random_matrix(12, 12, 22));
        let guess = svd(&nearby).unwrap().v;
        let warm = svd_warm(&m, &guess).unwrap();
        for (a, b) in cold.sigma.iter().zip(&warm.sigma) {
            assert!((a - b).abs() <= 1e-12 * cold.sigma[0]);
        }
        assert!(warm.reconstruct().max_abs_diff(&m) <= 1e-12);
        assert!(cold.v.max_abs_diff(&warm.v) <= 1e-8);
    }

    #[test]
    fn singular_values_match_symmetric_eigen_oracle() {
        for (seed, (r, c)) in [(3usize, 3usize), (5, 2), (8, 8), (4, 7), (6, 5)]
            .into_iter()
            .enumerate()
        {
            let m = random_matrix(r, c, 100 + seed as u64);
            let s = svd(&m).unwrap();
            let mut eig = sym_eigenvalues(&m.t_matmul(&m));
            eig.sort_by(|a, b| b.total_cmp(a));
            for (k, sv) in s.sigma.iter().enumerate() {
                assert!((sv - eig[k].max(0.0).sqrt()).abs() <= 1e-8, "{sv} vs {}", eig[k]);
            }
        }
    }
}
