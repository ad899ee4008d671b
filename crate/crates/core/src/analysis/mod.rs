//! Risks, contraction summaries, model-index concentration and rate fits.

mod sweep;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{intrinsic_metric_sq, Design, ExperimentSpec};
use crate::numeric::ols_line;
use crate::params::{ModelIndex, ParameterPoint};
use crate::priors::{best_approx_rank, delta_sq, fit_max_affine, App, IsoApproximator, RateSpec};
use crate::rng::{stream, Purpose};
use crate::samplers::Chain;

pub use sweep::{
    run_sweep, CellRecord, ContractionReport, NSummary, SweepConfig, TruthSpec, WORKERS_ENV,
};

/// Intrinsic distance between fitted values and the truth on the design.
pub fn risk(fitted: &[f64], f0: &[f64], exp: &ExperimentSpec) -> Result<f64> {
    if fitted.len() != f0.len() {
        return Err(Error::LengthMismatch {
            left: fitted.len(),
            right: f0.len(),
        });
    }
    let n = f0.len();
    intrinsic_metric_sq(
        exp,
        &ParameterPoint::signal(fitted.to_vec()),
        &ParameterPoint::signal(f0.to_vec()),
        n,
    )
}

/// Posterior mass outside the models `m <= ceil(c3 * m_star)`.
pub fn model_concentration(chain: &Chain, m_star: &ModelIndex, c3: f64) -> Result<f64> {
    if chain.draws.is_empty() {
        return Err(Error::EmptyChain);
    }
    if !(c3 >= 1.0) {
        return Err(Error::DomainError(format!("C3 = {c3} must be at least 1")));
    }
    let bound: Vec<f64> = m_star.0.iter().map(|&m| (c3 * m as f64).ceil()).collect();
    let outside = chain
        .draws
        .iter()
        .filter(|d| {
            d.index.dim() != bound.len() || d.index.0.iter().zip(&bound).any(|(&m, &b)| m as f64 > b)
        })
        .count();
    Ok(outside as f64 / chain.draws.len() as f64)
}

/// Least-squares slope of `log risk` on `log n`, with its standard error.
pub fn rate_slope(n_grid: &[usize], risks: &[f64]) -> Result<(f64, f64)> {
    if n_grid.len() != risks.len() {
        return Err(Error::LengthMismatch {
            left: n_grid.len(),
            right: risks.len(),
        });
    }
    if n_grid.len() < 4 {
        return Err(Error::InsufficientGrid {
            needed: 4,
            got: n_grid.len(),
        });
    }
    if let Some(i) = risks.iter().position(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::NonPositiveRisk(i));
    }
    let x: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = risks.iter().map(|r| r.ln()).collect();
    let (_, slope, stderr) = ols_line(&x, &y);
    Ok((slope, stderr))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBenchmark {
    pub m_star: ModelIndex,
    /// `inf_m (approximation error + delta^2)` over the truncated lattice.
    pub value: f64,
    /// Approximation error at `m_star`.
    pub approx_error: f64,
    /// Whether the approximation errors are exact minima or upper bounds.
    pub exact: bool,
}

/// Bias-variance balancing index and oracle rate for a regression truth.
///
/// Step functions use the exact dynamic program, matrices the truncated SVD
/// of the truth (an upper bound under a non-isometric design), max-affine
/// models the best of several alternating fits, and partially linear truths
/// the largest coefficients followed by a step fit of the remainder.
pub fn oracle_benchmark(
    exp: &ExperimentSpec,
    f0: &ParameterPoint,
    rate: &RateSpec,
    m_max: &[usize],
    seed: u64,
) -> Result<OracleBenchmark> {
    rate.validate()?;
    let n = exp.design.len().ok_or_else(|| Error::KindMismatch {
        expected: "regression design".into(),
        found: "no design".into(),
    })?;
    if n == 0 {
        return Err(Error::LengthMismatch { left: 0, right: 1 });
    }
    let values = exp.signal(f0)?;
    let cap0 = m_max.first().copied().unwrap_or(1).max(1);
    let mean_sq = |a: &[f64]| a.iter().zip(&values).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64;
    let mut candidates: Vec<(ModelIndex, f64)> = Vec::new();
    let exact;
    match rate.app {
        App::Iso => {
            let mut approx = IsoApproximator::new(&values);
            exact = approx.is_exact();
            for m in 1..=cap0.min(n) {
                candidates.push((ModelIndex::one(m), approx.error(m)?));
            }
        }
        App::Trace => {
            let ParameterPoint::FactorMatrix(fm) = f0 else {
                return Err(Error::KindMismatch {
                    expected: "factor_matrix truth".into(),
                    found: f0.variant_name().into(),
                });
            };
            exact = false;
            let a0 = fm.matrix();
            for r in 1..=cap0.min(fm.rows.min(fm.cols)) {
                let (approx, _) = best_approx_rank(&a0, r)?;
                let fitted = exp.design.apply_matrix(&approx.matrix())?;
                candidates.push((ModelIndex::one(r), mean_sq(&fitted)));
            }
        }
        App::Convex => {
            let Design::Points { points } = &exp.design else {
                return Err(Error::KindMismatch {
                    expected: "point design".into(),
                    found: "other design".into(),
                });
            };
            exact = false;
            let mut rng = stream(seed, Purpose::Restart);
            let mut best = f64::INFINITY;
            for m in 1..=cap0.min(n) {
                let (_, e) = fit_max_affine(points, &values, m, 5, &mut rng)?;
                best = best.min(e);
                candidates.push((ModelIndex::one(m), best));
            }
        }
        App::PartialLinear => {
            let (ParameterPoint::SparsePlusStep(sp), Design::PartialLinear { x, .. }) = (f0, &exp.design)
            else {
                return Err(Error::KindMismatch {
                    expected: "sparse_plus_step truth on a partially linear design".into(),
                    found: f0.variant_name().into(),
                });
            };
            exact = false;
            let cap1 = m_max.get(1).copied().unwrap_or(n).max(1).min(n);
            let mut order: Vec<usize> = (0..sp.support.len()).collect();
            order.sort_by(|&a, &b| sp.beta[b].abs().total_cmp(&sp.beta[a].abs()));
            for s in 1..=cap0.min(rate.p) {
                let kept: Vec<usize> = order.iter().copied().take(s).collect();
                let remainder: Vec<f64> = (0..n)
                    .map(|i| {
                        values[i]
                            - kept
                                .iter()
                                .map(|&k| x[i][sp.support[k]] * sp.beta[k])
                                .sum::<f64>()
                    })
                    .collect();
                let mut approx = IsoApproximator::new(&remainder);
                for k in 1..=cap1 {
                    candidates.push((ModelIndex::pair(s, k), approx.error(k)?));
                }
            }
        }
        App::CovFactor => {
            return Err(Error::InvalidConfig(
                "no oracle benchmark for covariance factor models".into(),
            ))
        }
    }
    let mut best: Option<(ModelIndex, f64, f64)> = None;
    for (m, err) in candidates {
        let v = err + delta_sq(rate, n, &m)?;
        if best.as_ref().is_none_or(|b| v < b.1) {
            best = Some((m, v, err));
        }
    }
    let (m_star, value, approx_error) = best.ok_or_else(|| Error::IndexOutOfRange("empty lattice".into()))?;
    Ok(OracleBenchmark {
        m_star,
        value,
        approx_error,
        exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ExperimentKind;
    use crate::params::StepFunction;
    use crate::samplers::{MoveStats, PosteriorDraw, Scales};
    use approx::assert_relative_eq;
    use std::collections::BTreeMap;

    fn chain_of(ms: &[usize]) -> Chain {
        Chain {
            chain_id: 0,
            draws: ms
                .iter()
                .enumerate()
                .map(|(i, &m)| PosteriorDraw {
                    iteration: i,
                    index: ModelIndex::one(m),
                    point: ParameterPoint::StepFunction(StepFunction {
                        change_indices: (0..m).collect(),
                        levels: vec![0.0; m],
                    }),
                    log_post: 0.0,
                })
                .collect(),
            moves: BTreeMap::<_, MoveStats>::new(),
            log_post_trace: Vec::new(),
            top_mass: 0.0,
            truncation_warning: false,
            final_scales: Scales::default(),
        }
    }

    #[test]
    fn risk_of_constant_offset() {
        let exp = ExperimentSpec::regression(ExperimentKind::GaussianReg, 4);
        let f0 = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(risk(&f0, &f0, &exp).unwrap(), 0.0);
        let shifted: Vec<f64> = f0.iter().map(|v| v + 0.3).collect();
        assert_relative_eq!(risk(&shifted, &f0, &exp).unwrap(), 0.09, epsilon = 1e-15);
        assert!(matches!(
            risk(&f0[..3], &f0, &exp),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn concentration_counts() {
        let all_one = chain_of(&[1; 10]);
        assert_eq!(model_concentration(&all_one, &ModelIndex::one(1), 1.0).unwrap(), 0.0);
        let half = chain_of(&[1, 5, 1, 5]);
        assert_eq!(model_concentration(&half, &ModelIndex::one(1), 2.0).unwrap(), 0.5);
        assert_eq!(model_concentration(&half, &ModelIndex::one(1), 1e9).unwrap(), 0.0);
        assert_eq!(
            model_concentration(&chain_of(&[]), &ModelIndex::one(1), 2.0),
            Err(Error::EmptyChain)
        );
    }

    #[test]
    fn exact_power_laws() {
        let n = [100, 200, 400, 800];
        let r: Vec<f64> = n.iter().map(|&k| 3.0 / k as f64).collect();
        let (s, se) = rate_slope(&n, &r).unwrap();
        assert_relative_eq!(s, -1.0, epsilon = 1e-12);
        assert!(se.abs() < 1e-12);
        let r: Vec<f64> = n.iter().map(|&k| 2.0 * (k as f64).powf(-2.0 / 3.0)).collect();
        assert_relative_eq!(rate_slope(&n, &r).unwrap().0, -2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(rate_slope(&n, &[1.0, 0.0, 1.0, 1.0]), Err(Error::NonPositiveRisk(1)));
        assert!(matches!(
            rate_slope(&n[..3], &r[..3]),
            Err(Error::InsufficientGrid { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn oracle_for_a_two_piece_truth() {
        let n = 50;
        let exp = ExperimentSpec::regression(ExperimentKind::GaussianReg, n);
        let f0 = ParameterPoint::StepFunction(StepFunction {
            change_indices: vec![0, 20],
            levels: vec![0.0, 2.0],
        });
        let rate = RateSpec::iso(0.01);
        let o = oracle_benchmark(&exp, &f0, &rate, &[10], 0).unwrap();
        assert_eq!(o.m_star, ModelIndex::one(2));
        assert_relative_eq!(o.value, delta_sq(&rate, n, &ModelIndex::one(2)).unwrap(), epsilon = 1e-12);
        let o1 = oracle_benchmark(&exp, &f0, &rate, &[1], 0).unwrap();
        assert_eq!(o1.m_star, ModelIndex::one(1));
    }
}
