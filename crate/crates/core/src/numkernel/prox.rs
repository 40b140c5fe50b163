use super::matrix::Matrix;
use super::svd::{svd, svd_warm, Svd};
use crate::error::{Error, Result};

/// Entrywise soft shrinkage `sgn(x)·max(|x| − tau, 0)`, the prox of `tau‖·‖₁`.
pub fn soft_threshold(m: &Matrix, tau: f64) -> Result<Matrix> {
    check_tau(tau)?;
    Ok(m.map(|x| shrink(x, tau)))
}

#[inline]
pub fn shrink(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Singular value thresholding `U · S_tau(Σ) · Vᵀ`, the prox of `tau‖·‖_*`.
pub fn svt(m: &Matrix, tau: f64) -> Result<Matrix> {
    check_tau(tau)?;
    Ok(shrink_singular_values(&svd(m)?, tau))
}

/// Thresholding step used inside the PCP loop: same operator as [`svt`],
/// seeded with the previous right factor. Returns the thresholded matrix,
/// the number of surviving singular values and the new right factor.
pub(crate) fn svt_warm(m: &Matrix, tau: f64, v0: Option<&Matrix>) -> Result<(Matrix, usize, Matrix)> {
    check_tau(tau)?;
    let s = match v0 {
        Some(v0) => svd_warm(m, v0)?,
        None => svd(m)?,
    };
    let kept = s.sigma.iter().filter(|&&x| x > tau).count();
    Ok((shrink_singular_values(&s, tau), kept, s.v))
}

fn shrink_singular_values(s: &Svd, tau: f64) -> Matrix {
    let (rows, cols) = (s.u.rows(), s.v.rows());
    let mut out = Matrix::zeros(rows, cols);
    for (k, &sv) in s.sigma.iter().enumerate() {
        let w = shrink(sv, tau);
        if w == 0.0 {
            continue;
        }
        for i in 0..rows {
            let ui = w * s.u[(i, k)];
            if ui == 0.0 {
                continue;
            }
            for j in 0..cols {
                out[(i, j)] += ui * s.v[(j, k)];
            }
        }
    }
    out
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold must be finite and >= 0, got {tau}")))
    }
}

/// Sum of singular values.
pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    Ok(svd(m)?.sigma.iter().sum())
}

pub fn l1_norm(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|x| x.abs()).sum()
}

pub fn fro_norm(m: &Matrix) -> f64 {
    m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Number of singular values strictly above `rel_tol · σ₁`; 0 for the zero
/// matrix.
pub fn numerical_rank(m: &Matrix, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(Error::invalid(format!("rel_tol must lie in (0, 1), got {rel_tol}")));
    }
    Ok(rank_of(&svd(m)?.sigma, rel_tol))
}

/// Rank read off an already sorted singular value list.
pub fn rank_of(sigma: &[f64], rel_tol: f64) -> usize {
    match sigma.first() {
        Some(&top) if top > 0.0 => sigma.iter().filter(|&&s| s > rel_tol * top).count(),
        _ => 0,
    }
}
