use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{
    intrinsic_metric_sq, kl_divergence, Design, ExperimentKind, ExperimentSpec,
};
use crate::params::{GridFunction, ParameterPoint};
use crate::rng::{stream, Purpose, Rng};

/// `(K(P^n_{f0}, P^n_{f1}) / n) / d_n^2(f0, f1)`.
pub fn kl_metric_ratio(
    exp: &ExperimentSpec,
    f0: &ParameterPoint,
    f1: &ParameterPoint,
    n: usize,
) -> Result<f64> {
    let d_sq = intrinsic_metric_sq(exp, f0, f1, n)?;
    if !(d_sq > 0.0) {
        return Err(Error::DegenerateHypotheses);
    }
    Ok(kl_divergence(exp, f0, f1, n)? / n as f64 / d_sq)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SandwichReport {
    pub kind: ExperimentKind,
    pub n: usize,
    pub ratios: Vec<f64>,
    pub min: f64,
    pub max: f64,
    /// Every ratio is finite and the smallest is strictly positive.
    pub pass: bool,
}

/// Ratios of KL per observation to the squared intrinsic metric over random
/// constrained pairs of one experiment kind.
pub fn metric_kl_sandwich(
    kind: ExperimentKind,
    pairs: usize,
    n: usize,
    seed: u64,
) -> Result<SandwichReport> {
    let mut rng = stream(seed, Purpose::Probe);
    let mut ratios = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let (exp, f0, f1) = random_pair(kind, n, &mut rng)?;
        ratios.push(kl_metric_ratio(&exp, &f0, &f1, n)?);
    }
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SandwichReport {
        kind,
        n,
        pass: !ratios.is_empty() && ratios.iter().all(|r| r.is_finite()) && min > 0.0,
        ratios,
        min,
        max,
    })
}

/// Two independent random parameters satisfying the default constraints of
/// `kind`, with the experiment they belong to.
pub fn random_pair(
    kind: ExperimentKind,
    n: usize,
    rng: &mut Rng,
) -> Result<(ExperimentSpec, ParameterPoint, ParameterPoint)> {
    let exp = if kind.is_regression() {
        ExperimentSpec::regression(kind, n)
    } else {
        ExperimentSpec::new(kind, Design::None)
    };
    let f0 = random_point(&exp, n, rng)?;
    let f1 = random_point(&exp, n, rng)?;
    exp.validate(&f0)?;
    exp.validate(&f1)?;
    Ok((exp, f0, f1))
}

fn random_point(exp: &ExperimentSpec, n: usize, rng: &mut Rng) -> Result<ParameterPoint> {
    let c = exp.constraints;
    Ok(match exp.kind {
        ExperimentKind::GaussianReg => {
            ParameterPoint::signal((0..n).map(|_| rng.sample(StandardNormal)).collect())
        }
        ExperimentKind::BinaryReg => ParameterPoint::signal(
            (0..n).map(|_| rng.random_range(c.eta..=1.0 - c.eta)).collect(),
        ),
        ExperimentKind::PoissonReg => {
            let l = c.m_bound.ln();
            ParameterPoint::signal((0..n).map(|_| rng.random_range(-l..=l).exp()).collect())
        }
        ExperimentKind::DensityEst => {
            ParameterPoint::GridFunction(smooth(0.0, 1.0, 129, c.g_bound, rng))
        }
        ExperimentKind::GaussAutoReg => {
            ParameterPoint::GridFunction(smooth(-4.0, 4.0, 81, c.m_bound.min(3.0), rng))
        }
        ExperimentKind::GaussTimeSeries => {
            let nodes = (n / 2 + 1).max(17);
            ParameterPoint::GridFunction(smooth(0.0, std::f64::consts::PI, nodes, c.g_bound.min(1.5), rng))
        }
        ExperimentKind::CovarianceEst => {
            let p = 3;
            let g = DMatrix::<f64>::from_fn(p, p, |_, _| rng.sample(StandardNormal));
            let q = g.qr().q();
            let d = nalgebra::DVector::from_fn(p, |_, _| {
                rng.random_range((1.0 / c.l_bound).ln()..=c.l_bound.ln()).exp()
            });
            let s = &q * DMatrix::from_diagonal(&d) * q.transpose();
            ParameterPoint::covariance(&((&s + s.transpose()) * 0.5))
        }
    })
}

/// Random low-frequency function on `[lo, hi]` with sup norm at most `bound`.
fn smooth(lo: f64, hi: f64, nodes: usize, bound: f64, rng: &mut Rng) -> GridFunction {
    let coef: Vec<(f64, f64)> = (0..4)
        .map(|k| {
            let s = 1.0 / (1.0 + k as f64);
            (s * rng.sample::<f64, _>(StandardNormal), s * rng.sample::<f64, _>(StandardNormal))
        })
        .collect();
    let mut g = GridFunction::from_fn(lo, hi, nodes, |x| {
        let t = std::f64::consts::PI * (x - lo) / (hi - lo);
        coef.iter()
            .enumerate()
            .map(|(k, (a, b))| a * (k as f64 * t).cos() + b * ((k + 1) as f64 * t).sin())
            .sum()
    });
    let target = bound * rng.random_range(0.1..=1.0);
    let sup = g.sup_norm().max(1e-12);
    for v in &mut g.values {
        *v *= target / sup;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_ratio_is_one_half() {
        let r = metric_kl_sandwich(ExperimentKind::GaussianReg, 20, 7, 1).unwrap();
        assert!(r.ratios.iter().all(|x| (x - 0.5).abs() < 1e-12));
    }

    #[test]
    fn every_kind_is_sandwiched() {
        for kind in ExperimentKind::ALL {
            let r = metric_kl_sandwich(kind, 5, 16, 2).unwrap();
            assert!(r.pass, "{kind}: {r:?}");
        }
    }
}
