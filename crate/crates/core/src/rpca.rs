//! Principal component pursuit: split `M = L + S` with `L` low rank and `S`
//! sparse by minimizing `‖L‖_* + λ‖S‖₁` with ADMM on the augmented
//! Lagrangian.

use std::fmt;

use crate::error::{Error, Result};
use crate::numkernel::{fmt_real, fro_norm, l1_norm, shrink, svt_warm, Matrix};

pub const DEFAULT_REL_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 1000;
/// Consecutive residual increases tolerated before the solve is declared
/// divergent.
pub const DIVERGENCE_STREAK: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Penalty {
    /// `rows·cols / (4‖M‖₁)`, see [`auto_mu`].
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sparsity {
    /// `1/√max(rows, cols)`, see [`default_lambda`].
    Default,
    /// `λ = 1/n`.
    InverseN(f64),
    Fixed(f64),
}

impl Sparsity {
    pub fn resolve(self, m: &Matrix) -> f64 {
        match self {
            Sparsity::Default => default_lambda(m),
            Sparsity::InverseN(n) => 1.0 / n,
            Sparsity::Fixed(l) => l,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PcpConfig {
    pub lambda: Sparsity,
    pub mu: Penalty,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for PcpConfig {
    fn default() -> Self {
        Self {
            lambda: Sparsity::Default,
            mu: Penalty::Auto,
            rel_tol: DEFAULT_REL_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl PcpConfig {
    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Sparsity::Fixed(lambda);
        self
    }

    pub fn with_lambda_n(mut self, n: f64) -> Self {
        self.lambda = Sparsity::InverseN(n);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let lambda_ok = match self.lambda {
            Sparsity::Default => true,
            Sparsity::InverseN(n) => n.is_finite() && n > 0.0,
            Sparsity::Fixed(l) => l.is_finite() && l > 0.0,
        };
        if !lambda_ok {
            return Err(Error::invalid(format!("lambda must be positive: {:?}", self.lambda)));
        }
        if let Penalty::Fixed(mu) = self.mu {
            if !(mu.is_finite() && mu > 0.0) {
                return Err(Error::invalid(format!("mu must be positive, got {mu}")));
            }
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::invalid(format!("rel_tol must lie in (0, 1), got {}", self.rel_tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PcpSolution {
    pub l: Matrix,
    pub s: Matrix,
    pub iterations: usize,
    /// `‖M − L − S‖_F / ‖M‖_F` after the last iteration.
    pub final_residual: f64,
    pub converged: bool,
    /// Relative residual after every iteration.
    pub history: Vec<f64>,
    pub lambda: f64,
    pub mu: f64,
}

impl PcpSolution {
    /// `iterations residual converged` followed by `L` and `S` in matrix
    /// text format.
    pub fn to_text(&self) -> String {
        format!(
            "{} {} {}\n{}{}",
            self.iterations,
            fmt_real(self.final_residual),
            self.converged as u8,
            self.l.to_text(),
            self.s.to_text()
        )
    }
}

impl fmt::Display for PcpSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pcp: {} iterations, residual {:e}, {}",
            self.iterations,
            self.final_residual,
            if self.converged { "converged" } else { "not converged" }
        )
    }
}

/// Penalty `rows·cols / (4‖M‖₁)`.
pub fn auto_mu(m: &Matrix) -> Result<f64> {
    let l1 = l1_norm(m);
    if l1 == 0.0 {
        return Err(Error::invalid("auto_mu of a zero matrix"));
    }
    Ok((m.rows() * m.cols()) as f64 / (4.0 * l1))
}

/// `1/√max(rows, cols)`.
pub fn default_lambda(m: &Matrix) -> f64 {
    1.0 / (m.rows().max(m.cols()) as f64).sqrt()
}

/// Solves `min ‖L‖_* + λ‖S‖₁  s.t.  L + S = M` with a fixed penalty:
///
/// ```text
/// L ← D_{1/μ}(M − S − Λ/μ)
/// S ← S_{λ/μ}(M − L − Λ/μ)
/// Λ ← Λ + μ(L + S − M)
/// ```
///
/// starting from `S = Λ = 0`. The solve stops once both the relative
/// feasibility residual `‖M − L − S‖_F/‖M‖_F` and the relative sparse-part
/// step `‖S_{k+1} − S_k‖_F/‖M‖_F` (the ADMM dual residual up to `μ`) are at
/// most `rel_tol`, or after `max_iter` iterations. A zero input
/// returns `L = S = 0` without iterating.
pub fn pcp(m: &Matrix, config: &PcpConfig) -> Result<PcpSolution> {
    config.validate()?;
    if !m.all_finite() {
        return Err(Error::NonFinite("pcp input".into()));
    }
    let lambda = config.lambda.resolve(m);
    if m.is_zero() {
        return Ok(PcpSolution {
            l: m.clone(),
            s: m.clone(),
            iterations: 0,
            final_residual: 0.0,
            converged: true,
            history: Vec::new(),
            lambda,
            mu: 0.0,
        });
    }
    let mu = match config.mu {
        Penalty::Auto => auto_mu(m)?,
        Penalty::Fixed(mu) => mu,
    };
    let inv_mu = 1.0 / mu;
    let m_norm = fro_norm(m);

    let mut s = Matrix::zeros(m.rows(), m.cols());
    let mut dual = Matrix::zeros(m.rows(), m.cols());
    let mut l = s.clone();
    let mut right: Option<Matrix> = None;
    let mut history = Vec::new();
    let mut streak = 0;
    let mut converged = false;

    for iter in 1..=config.max_iter {
        // M − Λ/μ is shared by both subproblems.
        let shifted = m.axpy(-inv_mu, &dual);
        let (l_next, _, v) = svt_warm(&(&shifted - &s), inv_mu, right.as_ref())?;
        right = Some(v);
        l = l_next;
        let s_next = (&shifted - &l).map(|x| shrink(x, lambda * inv_mu));
        let step = fro_norm(&(&s_next - &s)) / m_norm;
        s = s_next;
        let r = &(&l + &s) - m;
        dual = dual.axpy(mu, &r);

        let residual = fro_norm(&r) / m_norm;
        if !residual.is_finite() || !dual.all_finite() {
            return Err(Error::PcpNonFinite { iteration: iter });
        }
        if history.last().is_some_and(|&prev| residual > prev) {
            streak += 1;
            if streak >= DIVERGENCE_STREAK {
                return Err(Error::PcpDivergence {
                    iteration: iter,
                    streak,
                    residual,
                });
            }
        } else {
            streak = 0;
        }
        history.push(residual);
        if residual <= config.rel_tol && step <= config.rel_tol {
            converged = true;
            break;
        }
    }

    Ok(PcpSolution {
        l,
        s,
        iterations: history.len(),
        final_residual: history.last().copied().unwrap_or(0.0),
        converged,
        history,
        lambda,
        mu,
    })
}

/// Planted low-rank plus sparse instance: `L₀ = A·Bᵀ` with standard normal
/// `A, B` (`n × rank`) and `S₀` holding `±magnitude` on a random `fraction`
/// of the entries.
pub fn planted_instance(n: usize, rank: usize, fraction: f64, magnitude: f64, seed: u64) -> (Matrix, Matrix) {
    use rand::seq::index::sample;
    use rand::Rng;

    let mut rng = crate::rng::seeded_stream(seed, crate::rng::Stream::Instance);
    let a = crate::rng::normal_matrix(n, rank, &mut rng);
    let b = crate::rng::normal_matrix(n, rank, &mut rng);
    let l0 = a.matmul(&b.transpose());
    let count = (fraction * (n * n) as f64).round() as usize;
    let mut s0 = Matrix::zeros(n, n);
    for idx in sample(&mut rng, n * n, count).into_vec() {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        s0[(idx / n, idx % n)] = sign * magnitude;
    }
    (l0, s0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::nuclear_norm;

    #[test]
    fn zero_input_short_circuits() {
        let sol = pcp(&Matrix::zeros(10, 10), &PcpConfig::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.l.is_zero() && sol.s.is_zero());
        assert!(sol.converged);
    }

    #[test]
    fn single_spike_goes_to_sparse_part() {
        let mut m = Matrix::zeros(10, 10);
        m[(0, 0)] = 5.0;
        let sol = pcp(&m, &PcpConfig::default().with_lambda(0.5)).unwrap();
        assert!(sol.converged);
        assert!(sol.l.max_abs() <= 1e-6, "{}", sol.l.max_abs());
        assert!(sol.s.max_abs_diff(&m) <= 1e-6);
    }

    #[test]
    fn auto_mu_examples() {
        let ones = Matrix::from_fn(4, 4, |_, _| 1.0);
        assert_eq!(auto_mu(&ones).unwrap(), 0.25);
        assert_eq!(auto_mu(&ones.scale(2.0)).unwrap(), 0.125);
        assert_eq!(auto_mu(&Matrix::identity(10)).unwrap(), 2.5);
        assert!(auto_mu(&Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn default_lambda_examples() {
        assert!((default_lambda(&Matrix::zeros(512, 512)) - 0.044194173824159216).abs() < 1e-15);
        assert_eq!(default_lambda(&Matrix::zeros(100, 400)), 0.05);
        assert!((Sparsity::InverseN(60.0).resolve(&Matrix::zeros(1, 1)) - 0.016666666666666666).abs() < 1e-18);
    }

    #[test]
    fn config_validation() {
        let bad = [
            PcpConfig::default().with_lambda(0.0),
            PcpConfig::default().with_lambda_n(-1.0),
            PcpConfig { mu: Penalty::Fixed(0.0), ..Default::default() },
            PcpConfig { rel_tol: 1.0, ..Default::default() },
            PcpConfig { max_iter: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn recovers_small_planted_instance() {
        let (l0, s0) = planted_instance(60, 3, 0.05, 10.0, 1);
        let m = &l0 + &s0;
        let sol = pcp(&m, &PcpConfig::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.final_residual <= 1e-7);
        let err = fro_norm(&(&sol.l - &l0)) / fro_norm(&l0);
        assert!(err <= 1e-5, "recovery error {err}");
        let obj = |l: &Matrix, s: &Matrix| nuclear_norm(l).unwrap() + sol.lambda * l1_norm(s);
        let planted = obj(&l0, &s0);
        assert!(obj(&sol.l, &sol.s) <= planted + 1e-6 * planted);
    }

    #[test]
    fn symmetric_input_keeps_symmetric_low_rank_part() {
        let (l0, s0) = planted_instance(40, 3, 0.05, 10.0, 3);
        let m = (&l0 + &s0).symmetrize();
        let sol = pcp(&m, &PcpConfig::default()).unwrap();
        let asym = fro_norm(&(&sol.l - &sol.l.transpose()));
        assert!(asym <= 1e-8 * fro_norm(&sol.l));
    }

    #[test]
    fn solution_text_has_diagnostics_header() {
        let mut m = Matrix::zeros(3, 3);
        m[(1, 2)] = 1.0;
        let sol = pcp(&m, &PcpConfig::default()).unwrap();
        let text = sol.to_text();
        let header: Vec<&str> = text.lines().next().unwrap().split(' ').collect();
        assert_eq!(header.len(), 3);
        assert_eq!(header[0].parse::<usize>().unwrap(), sol.iterations);
        assert_eq!(header[2], "1");
    }
}
