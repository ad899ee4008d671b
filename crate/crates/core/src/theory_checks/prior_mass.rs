use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{intrinsic_metric_sq, ExperimentSpec};
use crate::numeric::log_sum_exp;
use crate::params::{ModelIndex, ParameterPoint};
use crate::priors::{delta_sq, sample_within_model_with, TwoStepPrior, WeightTable};
use crate::rng::{substream, Purpose};

/// Per-index outcome of the model-weight condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct P1Report {
    pub h: usize,
    /// `lambda_m >= exp(-2 n delta_m^2) / 2`.
    pub lower_bound: Vec<bool>,
    /// `sum_{k > h m} lambda_k <= 2 exp(-n delta_m^2)`.
    pub tail_bound: Vec<bool>,
    pub first_failure: Option<ModelIndex>,
    pub pass: bool,
}

/// Model-weight condition on a weight table, see [`check_p1_report`].
pub fn check_p1(table: &WeightTable, h: usize) -> Result<bool> {
    Ok(check_p1_report(&table.indices, &table.log_weights, &table.n_delta_sq, h)?.pass)
}

/// Check, for every index `m` of the truncated lattice, that
/// `lambda_m >= exp(-2 n delta_m^2) / 2` and that the weight of the indices
/// strictly above `h m` in every coordinate is at most `2 exp(-n delta_m^2)`.
///
/// Comparisons are made in the log domain so that tiny weights do not
/// underflow.
pub fn check_p1_report(
    indices: &[ModelIndex],
    log_weights: &[f64],
    n_delta_sq: &[f64],
    h: usize,
) -> Result<P1Report> {
    if indices.len() != log_weights.len() || indices.len() != n_delta_sq.len() {
        return Err(Error::LengthMismatch {
            left: indices.len(),
            right: log_weights.len().min(n_delta_sq.len()),
        });
    }
    if h == 0 {
        return Err(Error::InvalidConfig("h must be at least 1".into()));
    }
    if indices.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let total: f64 = log_weights.iter().map(|w| w.exp()).sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::UnnormalizedWeights(total));
    }
    let dim = indices[0].dim();
    if indices.iter().any(|m| m.dim() != dim || m.0.contains(&0)) {
        return Err(Error::IndexOutOfRange("indices must share a dimension and be positive".into()));
    }

    let tail = TailSums::new(indices, log_weights, dim);
    let mut report = P1Report {
        h,
        lower_bound: Vec::with_capacity(indices.len()),
        tail_bound: Vec::with_capacity(indices.len()),
        first_failure: None,
        pass: true,
    };
    for (i, m) in indices.iter().enumerate() {
        let nd = n_delta_sq[i];
        let lower = log_weights[i] >= 0.5f64.ln() - 2.0 * nd;
        let above = ModelIndex(m.0.iter().map(|c| c * h).collect());
        let upper = tail.above(&above) <= 2f64.ln() - nd;
        report.lower_bound.push(lower);
        report.tail_bound.push(upper);
        if !(lower && upper) && report.first_failure.is_none() {
            report.first_failure = Some(m.clone());
            report.pass = false;
        }
    }
    Ok(report)
}

/// Log weight of `{k : k > m in every coordinate}`.
enum TailSums<'a> {
    /// Suffix sums on a dense table, for one- and two-dimensional lattices.
    Dense { dims: [usize; 2], table: Vec<f64> },
    Scan { indices: &'a [ModelIndex], log_weights: &'a [f64] },
}

impl<'a> TailSums<'a> {
    fn new(indices: &'a [ModelIndex], log_weights: &'a [f64], dim: usize) -> Self {
        if dim > 2 {
            return TailSums::Scan { indices, log_weights };
        }
        let coord = |m: &ModelIndex, c: usize| if c < dim { m.0[c] } else { 1 };
        let dims = [0, 1].map(|c| indices.iter().map(|m| coord(m, c)).max().unwrap_or(0) + 2);
        let at = |a: usize, b: usize| a * dims[1] + b;
        let mut table = vec![f64::NEG_INFINITY; dims[0] * dims[1]];
        for (m, &w) in indices.iter().zip(log_weights) {
            let k = at(coord(m, 0), coord(m, 1));
            table[k] = log_sum_exp(&[table[k], w]);
        }
        for a in 0..dims[0] {
            for b in (0..dims[1] - 1).rev() {
                table[at(a, b)] = log_sum_exp(&[table[at(a, b)], table[at(a, b + 1)]]);
            }
        }
        for a in (0..dims[0] - 1).rev() {
            for b in 0..dims[1] {
                table[at(a, b)] = log_sum_exp(&[table[at(a, b)], table[at(a + 1, b)]]);
            }
        }
        if dim == 1 {
            // The phantom second coordinate is 1 for every index.
            return TailSums::Dense { dims: [dims[0], 1], table: (0..dims[0]).map(|a| table[at(a, 1)]).collect() };
        }
        TailSums::Dense { dims, table }
    }

    fn above(&self, m: &ModelIndex) -> f64 {
        match self {
            TailSums::Dense { dims, table } => {
                let a = m.0[0] + 1;
                let b = if dims[1] == 1 { 0 } else { m.0[1] + 1 };
                if a >= dims[0] || b >= dims[1] {
                    f64::NEG_INFINITY
                } else {
                    table[a * dims[1] + b]
                }
            }
            TailSums::Scan { indices, log_weights } => {
                let ws: Vec<f64> = indices
                    .iter()
                    .zip(log_weights.iter())
                    .filter(|(k, _)| k.gt_all(m))
                    .map(|(_, &w)| w)
                    .collect();
                log_sum_exp(&ws)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct P2Report {
    pub estimate: f64,
    pub stderr: f64,
    /// `exp(-2 n delta^2_{n,m})`.
    pub threshold: f64,
    pub n_delta_sq: f64,
    pub reps: usize,
    /// No draw landed in the ball, so the estimate cannot certify anything.
    pub inconclusive: bool,
    pub pass: bool,
}

/// Monte Carlo estimate of `Pi_{n,m}(d_n^2(f, center) <= radius_sq)` under the
/// within-model prior of `m`.
///
/// Passing is one-sided: `estimate + 2 stderr >= exp(-2 n delta^2_{n,m})`.
pub fn estimate_p2_mass(
    prior: &TwoStepPrior,
    m: &ModelIndex,
    exp: &ExperimentSpec,
    center: &ParameterPoint,
    radius_sq: f64,
    reps: usize,
    seed: u64,
) -> Result<P2Report> {
    if reps < 100_000 {
        return Err(Error::InvalidConfig(format!(
            "the prior-mass estimate needs at least 100000 draws, got {reps}"
        )));
    }
    if !(radius_sq >= 0.0) {
        return Err(Error::DomainError(format!("radius must be nonnegative, got {radius_sq}")));
    }
    let n = exp.design.len().ok_or_else(|| Error::KindMismatch {
        expected: "regression design".into(),
        found: "no design".into(),
    })?;
    let blocks = 16usize;
    let hits: usize = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let size = reps / blocks + usize::from(b < reps % blocks);
            let mut rng = substream(seed, 0, b as u64, Purpose::Prior);
            let mut hits = 0usize;
            for _ in 0..size {
                let f = sample_within_model_with(prior, m, n, &mut rng)?;
                if intrinsic_metric_sq(exp, &f, center, n)? <= radius_sq {
                    hits += 1;
                }
            }
            Ok(hits)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    let p = hits as f64 / reps as f64;
    let stderr = (p * (1.0 - p) / reps as f64).sqrt();
    let nd = n as f64 * delta_sq(&prior.rate, n, m)?;
    let threshold = (-2.0 * nd).exp();
    Ok(P2Report {
        estimate: p,
        stderr,
        threshold,
        n_delta_sq: nd,
        reps,
        inconclusive: hits == 0,
        pass: p + 2.0 * stderr >= threshold && hits > 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ExperimentKind;
    use crate::params::StepFunction;
    use crate::priors::{model_weights, LevelGrid, RateSpec};

    fn p1(log_w: &[f64], nds: &[f64], h: usize) -> Result<P1Report> {
        let idx: Vec<ModelIndex> = (1..=log_w.len()).map(ModelIndex::one).collect();
        check_p1_report(&idx, log_w, nds, h)
    }

    #[test]
    fn generic_weights_pass() {
        let nds: Vec<f64> = (1..=100).map(|m| m as f64).collect();
        let raw: Vec<f64> = nds.iter().map(|x| -2.0 * x).collect();
        let z = log_sum_exp(&raw);
        let lw: Vec<f64> = raw.iter().map(|x| x - z).collect();
        assert!(p1(&lw, &nds, 2).unwrap().pass);
    }

    #[test]
    fn uniform_weights_fail_the_lower_bound() {
        let nds: Vec<f64> = (1..=100).map(|m| m as f64).collect();
        let lw = vec![-(100f64).ln(); 100];
        let r = p1(&lw, &nds, 2).unwrap();
        // 1/100 < exp(-2m)/2 for m <= 1, and the tail above 2m keeps mass
        // (100 - 2m)/100 far above 2 exp(-m) until m reaches 50.
        assert!(!r.pass);
        assert!(!r.lower_bound[0] && r.lower_bound[10]);
        assert!(r.tail_bound[..40].iter().all(|&ok| !ok));
        assert_eq!(r.first_failure, Some(ModelIndex::one(1)));
    }

    #[test]
    fn single_model_passes() {
        assert!(p1(&[0.0], &[5.0], 1).unwrap().pass);
    }

    #[test]
    fn unnormalized_weights_are_rejected() {
        assert!(matches!(
            p1(&[0.5f64.ln(), 0.4f64.ln()], &[1.0, 2.0], 2),
            Err(Error::UnnormalizedWeights(_))
        ));
    }

    #[test]
    fn dense_tail_matches_scan() {
        let prior = TwoStepPrior::new(RateSpec::partial_linear(0.05, 4), vec![4, 6]);
        let t = model_weights(&prior, 30).unwrap();
        let dense = TailSums::new(&t.indices, &t.log_weights, 2);
        let scan = TailSums::Scan { indices: &t.indices, log_weights: &t.log_weights };
        for m in &t.indices {
            let (a, b) = (dense.above(m), scan.above(m));
            assert!(a == b || (a - b).abs() < 1e-12, "{m}: {a} vs {b}");
        }
        let t1 = model_weights(&TwoStepPrior::new(RateSpec::iso(0.1), vec![9]), 30).unwrap();
        let dense = TailSums::new(&t1.indices, &t1.log_weights, 1);
        let scan = TailSums::Scan { indices: &t1.indices, log_weights: &t1.log_weights };
        for m in &t1.indices {
            let (a, b) = (dense.above(m), scan.above(m));
            assert!(a == b || (a - b).abs() < 1e-12, "{m}: {a} vs {b}");
        }
    }

    #[test]
    fn point_mass_prior_has_full_mass() {
        let prior = TwoStepPrior::new(RateSpec::iso(1.0), vec![5]).with_grid(LevelGrid {
            values: vec![0.0],
            weights: None,
        });
        let exp = ExperimentSpec::regression(ExperimentKind::GaussianReg, 5);
        let center = ParameterPoint::StepFunction(StepFunction::constant(0.0));
        let r = estimate_p2_mass(&prior, &ModelIndex::one(1), &exp, &center, 0.0, 100_000, 1).unwrap();
        assert_eq!(r.estimate, 1.0);
        assert!(r.pass);
    }

    #[test]
    fn zero_radius_is_inconclusive() {
        let prior = TwoStepPrior::new(RateSpec::iso(1.0), vec![5]);
        let exp = ExperimentSpec::regression(ExperimentKind::GaussianReg, 5);
        let center = ParameterPoint::StepFunction(StepFunction::constant(0.0));
        let r = estimate_p2_mass(&prior, &ModelIndex::one(1), &exp, &center, 0.0, 100_000, 1).unwrap();
        assert_eq!(r.estimate, 0.0);
        assert!(r.inconclusive && !r.pass);
    }
}
