use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::psi;
use crate::error::{Error, Result};
use crate::experiments::{
    intrinsic_metric_sq, kl_divergence, log_likelihood_ratio, sample_data_with, toeplitz_cov,
    ExperimentKind, ExperimentSpec, TiltDensity,
};
use crate::numeric::{median, trapezoid};
use crate::params::ParameterPoint;
use crate::rng::{substream, Purpose};

/// Overrides for the envelope constants. `None` selects the kind's default,
/// and a missing default `kappa_g` means the fitted value is used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernsteinOptions {
    pub c1: Option<f64>,
    pub kappa_g: Option<f64>,
    pub kappa_gamma: Option<f64>,
    pub blocks: usize,
}

impl Default for BernsteinOptions {
    fn default() -> Self {
        BernsteinOptions {
            c1: None,
            kappa_g: None,
            kappa_gamma: None,
            blocks: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernsteinReport {
    pub kind: ExperimentKind,
    pub n: usize,
    pub reps: usize,
    /// `n d_n^2(f0, f1)`.
    pub n_d_sq: f64,
    /// Exact `K(P_{f0}^n, P_{f1}^n)`, used to center the ratio.
    pub kl: f64,
    pub lambda_grid: Vec<f64>,
    /// Log of the median-of-means estimate of `E exp(lambda (LLR - E LLR))`.
    pub empirical_log_mgf: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Log of the plain mean, for diagnostics.
    pub plain_log_mgf: Vec<f64>,
    pub envelope: Vec<f64>,
    pub c1: f64,
    /// Constant used in the envelope.
    pub kappa_g: f64,
    /// Smallest `kappa_g` for which the envelope holds within two standard errors.
    pub fitted_kappa_g: f64,
    pub kappa_gamma: f64,
    /// Grid positions whose estimate overflowed.
    pub non_finite: Vec<usize>,
    pub margin: f64,
    pub pass: bool,
}

/// Default `(c1, kappa_g, kappa_gamma)` for the pair.
///
/// Gaussian regression is exactly sub-Gaussian. Binary regression uses
/// Hoeffding with `|logit a - logit b| <= |a - b| / (eta (1 - eta))`.
/// Poisson regression bounds `a (e^t - 1 - t)` with signals in `[1/M, M]`.
/// For the Gaussian vector kinds the centered ratio is a weighted sum of
/// centered chi-squares with weights `mu_j = 1 - eig(S1^{-1} S0)`, which gives
/// `v = sum mu_j^2 / 2` and `c = max |mu_j|` exactly. For densities the
/// centered ratio is bounded by `4 g_bound`, so Bernstein's inequality holds
/// with the variance of `g0 - g1` under `f0`. Autoregression has no closed
/// form default and is fitted.
pub fn default_constants(
    exp: &ExperimentSpec,
    f0: &ParameterPoint,
    f1: &ParameterPoint,
    n: usize,
) -> Result<(f64, Option<f64>, f64)> {
    let c = &exp.constraints;
    let n_d_sq = n as f64 * intrinsic_metric_sq(exp, f0, f1, n)?;
    Ok(match exp.kind {
        ExperimentKind::GaussianReg => (1.0, Some(1.0), 0.0),
        ExperimentKind::BinaryReg => {
            let s = c.eta * (1.0 - c.eta);
            (1.0, Some(1.0 / (4.0 * s * s)), 0.0)
        }
        ExperimentKind::PoissonReg => (1.0, Some(c.m_bound.powi(3)), 2.0 * c.m_bound.ln() / 3.0),
        ExperimentKind::DensityEst => {
            let (g0, g1) = (grid(f0)?, grid(f1)?);
            let d0 = TiltDensity::new(g0)?;
            let k = 4001;
            let h = 1.0 / (k - 1) as f64;
            let xs: Vec<f64> = (0..k).map(|i| i as f64 * h).collect();
            let diff = |x: f64| g0.at(x) - g1.at(x);
            let m1 = trapezoid(&xs.iter().map(|&x| diff(x) * d0.density(x)).collect::<Vec<_>>(), h);
            let m2 = trapezoid(
                &xs.iter().map(|&x| diff(x).powi(2) * d0.density(x)).collect::<Vec<_>>(),
                h,
            );
            let v = n as f64 * (m2 - m1 * m1).max(0.0);
            (1.0, Some(v / n_d_sq), 4.0 * c.g_bound / 3.0)
        }
        ExperimentKind::GaussAutoReg => (1.0, None, 0.0),
        ExperimentKind::GaussTimeSeries => {
            let (s0, s1) = (toeplitz_cov(grid(f0)?, n)?, toeplitz_cov(grid(f1)?, n)?);
            let (v, cc) = chi_square_weights(&s0, &s1)?;
            (1.0, Some(v / n_d_sq), cc)
        }
        ExperimentKind::CovarianceEst => {
            let (s0, s1) = (cov(f0)?, cov(f1)?);
            let (v, cc) = chi_square_weights(&s0, &s1)?;
            (1.0, Some(n as f64 * v / n_d_sq), cc)
        }
    })
}

/// `(sum mu_j^2 / 2, max |mu_j|)` with `mu_j = 1 - eig(S1^{-1} S0)`.
fn chi_square_weights(s0: &DMatrix<f64>, s1: &DMatrix<f64>) -> Result<(f64, f64)> {
    let chol = nalgebra::Cholesky::new(s1.clone())
        .ok_or_else(|| Error::FactorizationFailure("covariance is not positive definite".into()))?;
    let l = chol.l();
    let a = l
        .solve_lower_triangular(s0)
        .ok_or_else(|| Error::FactorizationFailure("triangular solve failed".into()))?;
    let b = l
        .solve_lower_triangular(&a.transpose())
        .ok_or_else(|| Error::FactorizationFailure("triangular solve failed".into()))?;
    let b = (&b + b.transpose()) * 0.5;
    let mu: Vec<f64> = b.symmetric_eigenvalues().iter().map(|e| 1.0 - e).collect();
    Ok((
        0.5 * mu.iter().map(|m| m * m).sum::<f64>(),
        mu.iter().fold(0.0, |acc: f64, m| acc.max(m.abs())),
    ))
}

fn grid(f: &ParameterPoint) -> Result<&crate::params::GridFunction> {
    match f {
        ParameterPoint::GridFunction(g) => Ok(g),
        other => Err(Error::KindMismatch {
            expected: "grid_function".into(),
            found: other.variant_name().into(),
        }),
    }
}

fn cov(f: &ParameterPoint) -> Result<DMatrix<f64>> {
    f.covariance_matrix().ok_or_else(|| Error::KindMismatch {
        expected: "covariance".into(),
        found: f.variant_name().into(),
    })
}

/// Log-likelihood ratios `log p_{f0} / p_{f1}` of `reps` samples drawn under
/// `f0`, split into `blocks` blocks with one substream each.
pub(crate) fn llr_blocks(
    exp: &ExperimentSpec,
    f0: &ParameterPoint,
    f1: &ParameterPoint,
    truth: &ParameterPoint,
    n: usize,
    reps: usize,
    blocks: usize,
    seed: u64,
    run: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let size = reps / blocks + usize::from(b < reps % blocks);
            let mut rng = substream(seed, run, b as u64, Purpose::MonteCarlo);
            (0..size)
                .map(|_| {
                    let data = sample_data_with(exp, truth, n, seed, &mut rng)?;
                    log_likelihood_ratio(exp, f0, f1, &data)
                })
                .collect()
        })
        .collect()
}

/// Monte Carlo estimate of the centered log-likelihood-ratio MGF on a grid,
/// compared against the envelope `psi_{kappa_g n d^2, kappa_gamma} + log c1`.
pub fn estimate_llr_mgf(
    exp: &ExperimentSpec,
    f0: &ParameterPoint,
    f1: &ParameterPoint,
    n: usize,
    lambda_grid: &[f64],
    reps: usize,
    seed: u64,
    opts: &BernsteinOptions,
) -> Result<BernsteinReport> {
    if reps < 10_000 {
        return Err(Error::InvalidConfig(format!(
            "the MGF estimate needs at least 10000 replications, got {reps}"
        )));
    }
    if opts.blocks == 0 || opts.blocks > reps {
        return Err(Error::InvalidConfig("block count must be in 1..=reps".into()));
    }
    exp.validate(f0)?;
    exp.validate(f1)?;
    let d_sq = intrinsic_metric_sq(exp, f0, f1, n)?;
    if !(d_sq > 0.0) {
        return Err(Error::DegenerateHypotheses);
    }
    let n_d_sq = n as f64 * d_sq;
    let (c1_def, kg_def, kgam_def) = default_constants(exp, f0, f1, n)?;
    let c1 = opts.c1.unwrap_or(c1_def);
    let kappa_gamma = opts.kappa_gamma.unwrap_or(kgam_def);
    if !(c1 > 0.0) || !(kappa_gamma >= 0.0) {
        return Err(Error::InvalidConfig("c1 must be positive and kappa_gamma nonnegative".into()));
    }
    if let Some(bad) = lambda_grid
        .iter()
        .find(|l| !l.is_finite() || kappa_gamma * l.abs() >= 1.0)
    {
        return Err(Error::DomainError(format!(
            "lambda = {bad} violates |lambda| < 1/kappa_gamma = {}",
            1.0 / kappa_gamma
        )));
    }

    let kl = kl_divergence(exp, f0, f1, n)?;
    let llr = llr_blocks(exp, f0, f1, f0, n, reps, opts.blocks, seed, 0)?;
    let total = reps as f64;

    let mut empirical = Vec::with_capacity(lambda_grid.len());
    let mut stderr = Vec::with_capacity(lambda_grid.len());
    let mut plain = Vec::with_capacity(lambda_grid.len());
    let mut non_finite = Vec::new();
    for (j, &lambda) in lambda_grid.iter().enumerate() {
        let mut block_means = Vec::with_capacity(llr.len());
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for block in &llr {
            let mut bsum = 0.0;
            for &l in block {
                let w = (lambda * (l - kl)).exp();
                bsum += w;
                sum += w;
                sum_sq += w * w;
            }
            block_means.push(bsum / block.len() as f64);
        }
        let mean = sum / total;
        let sd = ((sum_sq / total - mean * mean).max(0.0) * total / (total - 1.0)).sqrt();
        let est = median(&block_means);
        let log_est = est.ln();
        let se = (std::f64::consts::PI / 2.0).sqrt() * sd / total.sqrt() / est;
        if !log_est.is_finite() || !se.is_finite() {
            non_finite.push(j);
        }
        empirical.push(log_est);
        stderr.push(se);
        plain.push(mean.ln());
    }

    let log_c1 = c1.ln();
    let mut fitted: f64 = 0.0;
    for ((&lambda, &e), &se) in lambda_grid.iter().zip(&empirical).zip(&stderr) {
        if lambda != 0.0 && e.is_finite() && se.is_finite() {
            let need = (e - 2.0 * se - log_c1) * 2.0 * (1.0 - kappa_gamma * lambda.abs())
                / (n_d_sq * lambda * lambda);
            fitted = fitted.max(need);
        }
    }
    let kappa_g = opts.kappa_g.or(kg_def).unwrap_or(fitted);
    let envelope = lambda_grid
        .iter()
        .map(|&l| Ok(psi(kappa_g * n_d_sq, kappa_gamma, l)? + log_c1))
        .collect::<Result<Vec<f64>>>()?;

    let mut margin = f64::INFINITY;
    let mut pass = non_finite.is_empty();
    for j in 0..lambda_grid.len() {
        margin = margin.min(envelope[j] - empirical[j]);
        if !(empirical[j] <= envelope[j] + 2.0 * stderr[j]) {
            pass = false;
        }
    }

    Ok(BernsteinReport {
        kind: exp.kind,
        n,
        reps,
        n_d_sq,
        kl,
        lambda_grid: lambda_grid.to_vec(),
        empirical_log_mgf: empirical,
        stderr,
        plain_log_mgf: plain,
        envelope,
        c1,
        kappa_g,
        fitted_kappa_g: fitted,
        kappa_gamma,
        non_finite,
        margin,
        pass,
    })
}
