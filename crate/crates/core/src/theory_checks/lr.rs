use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::bernstein::llr_blocks;
use crate::error::{Error, Result};
use crate::experiments::{
    intrinsic_metric_sq, log_likelihood_ratio, Dataset, ExperimentKind, ExperimentSpec,
};
use crate::numeric::ols_line;
use crate::params::{GridFunction, ParameterPoint};
use crate::rng::{substream, Purpose};

/// Settings of the error-decay experiment.
///
/// `c5` is the radius factor of the alternative ball, `c3` the constant of
/// the metric-KL comparison, and the test threshold defaults to
/// `c = 2 c3 c5`. With `c3 = 1/2` and `c5 = 1/16` the worst alternative in
/// the ball still has an exponentially small acceptance probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayOptions {
    pub c5: f64,
    pub c3: f64,
    pub probes: usize,
    pub c: Option<f64>,
    pub blocks: usize,
}

impl Default for DecayOptions {
    fn default() -> Self {
        DecayOptions {
            c5: 1.0 / 16.0,
            c3: 0.5,
            probes: 32,
            c: None,
            blocks: 8,
        }
    }
}

impl DecayOptions {
    pub fn threshold_c(&self) -> f64 {
        self.c.unwrap_or(2.0 * self.c3 * self.c5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestErrorReport {
    pub n_grid: Vec<usize>,
    pub n_d_sq: Vec<f64>,
    pub type1: Vec<f64>,
    /// Largest acceptance rate over the probe set.
    pub type2: Vec<f64>,
    /// Probe attaining the type II rate.
    pub worst_probe: Vec<usize>,
    /// Grid points entering the slope fit (nonzero error at this resolution).
    pub included: Vec<bool>,
    pub reps: usize,
    pub c: f64,
    pub c5: f64,
    pub decay_slope: f64,
    pub slope_stderr: f64,
    pub pass: bool,
}

/// Threshold `-c n d_n^2` of the likelihood-ratio test.
pub fn test_threshold(c: f64, n: usize, d_sq: f64) -> f64 {
    -c * n as f64 * d_sq
}

/// Likelihood-ratio test of `f0` against `f1`. Returns `true` when `f0` is
/// rejected, that is when `log p_{f0}/p_{f1} <= -c n d_n^2(f0, f1)`. A ratio
/// exactly at the threshold rejects.
pub fn lr_test(
    exp: &ExperimentSpec,
    f0: &ParameterPoint,
    f1: &ParameterPoint,
    data: &Dataset,
    c: f64,
) -> Result<bool> {
    if !(c > 0.0) {
        return Err(Error::InvalidConfig(format!("test constant must be positive, got {c}")));
    }
    let n = data.n();
    let d_sq = intrinsic_metric_sq(exp, f0, f1, n)?;
    if !(d_sq > 0.0) {
        return Err(Error::DegenerateHypotheses);
    }
    Ok(log_likelihood_ratio(exp, f0, f1, data)? <= test_threshold(c, n, d_sq))
}

/// Alternatives `f` with `d_n^2(f, f1) <= c5 d_n^2(f0, f1)`.
///
/// Probe 0 sits on the segment from `f1` towards `f0`, which is where the
/// mean of the test statistic is closest to the threshold. The remaining
/// probes are random directions pushed out to the boundary of the ball and
/// projected back onto the constraint set when needed.
pub fn probe_set(
    exp: &ExperimentSpec,
    f0: &ParameterPoint,
    f1: &ParameterPoint,
    n: usize,
    c5: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<ParameterPoint>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let d_sq = intrinsic_metric_sq(exp, f0, f1, n)?;
    if !(d_sq > 0.0) {
        return Err(Error::DegenerateHypotheses);
    }
    let target = c5 * d_sq;
    let mut rng = substream(seed, n as u64, 0, Purpose::Probe);
    let mut out = Vec::with_capacity(count);
    let c = &exp.constraints;

    if exp.kind.is_regression() {
        let (t0, t1) = (exp.signal(f0)?, exp.signal(f1)?);
        let (lo, hi) = match exp.kind {
            ExperimentKind::BinaryReg => (c.eta, 1.0 - c.eta),
            ExperimentKind::PoissonReg => (1.0 / c.m_bound, c.m_bound),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        };
        let s = c5.sqrt();
        out.push(ParameterPoint::signal(
            t0.iter().zip(&t1).map(|(a, b)| b + s * (a - b)).collect(),
        ));
        while out.len() < count {
            let u: Vec<f64> = (0..t1.len()).map(|_| rng.sample(StandardNormal)).collect();
            let norm_sq: f64 = u.iter().map(|x| x * x).sum();
            let scale = (target * n as f64 / norm_sq).sqrt();
            // Clipping onto the box cannot move the point away from t1.
            out.push(ParameterPoint::signal(
                t1.iter()
                    .zip(&u)
                    .map(|(b, d)| (b + scale * d).clamp(lo, hi))
                    .collect(),
            ));
        }
        return Ok(out);
    }

    if exp.kind == ExperimentKind::CovarianceEst {
        let (s0, s1) = (cov(f0)?, cov(f1)?);
        let s = c5.sqrt();
        out.push(ParameterPoint::covariance(&(&s1 + (&s0 - &s1) * s)));
        let p = s1.nrows();
        while out.len() < count {
            let g = DMatrix::<f64>::from_fn(p, p, |_, _| rng.sample(StandardNormal));
            let u = (&g + g.transpose()) * 0.5;
            let scale = (target / u.norm_squared()).sqrt();
            let cand = project_spectrum(&(&s1 + u * scale), 1.0 / c.l_bound, c.l_bound);
            out.push(ParameterPoint::covariance(&cand));
        }
        return Ok(out);
    }

    // Grid-valued parameters: bisect along the direction for the ball boundary.
    let (g0, g1) = (grid(f0)?, grid(f1)?);
    let bound = match exp.kind {
        ExperimentKind::GaussAutoReg => c.m_bound,
        _ => c.g_bound,
    };
    let dir0: Vec<f64> = g0.values.iter().zip(&g1.values).map(|(a, b)| a - b).collect();
    out.push(boundary_point(exp, f1, g1, &dir0, bound, n, target)?);
    let k = g1.values.len();
    while out.len() < count {
        let coef: Vec<f64> = (0..4)
            .map(|j| rng.sample::<f64, _>(StandardNormal) / (1.0 + j as f64))
            .collect();
        let dir: Vec<f64> = (0..k)
            .map(|i| {
                let x = i as f64 / (k - 1) as f64;
                coef.iter()
                    .enumerate()
                    .map(|(j, a)| a * (j as f64 * std::f64::consts::PI * x).cos())
                    .sum()
            })
            .collect();
        out.push(boundary_point(exp, f1, g1, &dir, bound, n, target)?);
    }
    Ok(out)
}

fn grid(f: &ParameterPoint) -> Result<&GridFunction> {
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

/// Frobenius projection of a symmetric matrix onto spectra in `[lo, hi]`.
fn project_spectrum(s: &DMatrix<f64>, lo: f64, hi: f64) -> DMatrix<f64> {
    let eig = s.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|e| e.clamp(lo, hi));
    let q = &eig.eigenvectors;
    let m = q * DMatrix::from_diagonal(&d) * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Largest `t` found by bisection with `d^2(g1 + t dir, g1) <= target`, the
/// values clipped to `[-bound, bound]`.
fn boundary_point(
    exp: &ExperimentSpec,
    f1: &ParameterPoint,
    g1: &GridFunction,
    dir: &[f64],
    bound: f64,
    n: usize,
    target: f64,
) -> Result<ParameterPoint> {
    let at = |t: f64| {
        ParameterPoint::GridFunction(GridFunction {
            lo: g1.lo,
            hi: g1.hi,
            values: g1
                .values
                .iter()
                .zip(dir)
                .map(|(b, d)| (b + t * d).clamp(-bound, bound))
                .collect(),
        })
    };
    let inside = |t: f64| -> bool {
        let p = at(t);
        exp.validate(&p).is_ok()
            && intrinsic_metric_sq(exp, &p, f1, n).is_ok_and(|d| d <= target)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while inside(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Ok(at(lo));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(lo))
}

/// Monte Carlo type I and worst-case type II errors of the likelihood-ratio
/// test over a grid of sample sizes, with a fit of the log error against
/// `n d_n^2`.
///
/// `pair` supplies the experiment and the two hypotheses at each `n`. Errors
/// below the resolution `1/reps` are reported as zero and left out of the fit.
pub fn test_error_decay<F>(
    pair: F,
    n_grid: &[usize],
    reps: usize,
    seed: u64,
    opts: &DecayOptions,
) -> Result<TestErrorReport>
where
    F: Fn(usize) -> Result<(ExperimentSpec, ParameterPoint, ParameterPoint)>,
{
    if n_grid.len() < 3 {
        return Err(Error::InsufficientGrid {
            needed: 3,
            got: n_grid.len(),
        });
    }
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("n grid must be strictly increasing".into()));
    }
    if reps == 0 || opts.blocks == 0 {
        return Err(Error::InvalidConfig("replications and blocks must be positive".into()));
    }
    let c = opts.threshold_c();
    if !(c > 0.0) || !(opts.c5 > 0.0) {
        return Err(Error::InvalidConfig("test constants must be positive".into()));
    }

    let mut report = TestErrorReport {
        n_grid: n_grid.to_vec(),
        n_d_sq: Vec::new(),
        type1: Vec::new(),
        type2: Vec::new(),
        worst_probe: Vec::new(),
        included: Vec::new(),
        reps,
        c,
        c5: opts.c5,
        decay_slope: f64::NAN,
        slope_stderr: f64::NAN,
        pass: false,
    };
    for (pos, &n) in n_grid.iter().enumerate() {
        let (exp, f0, f1) = pair(n)?;
        exp.validate(&f0)?;
        exp.validate(&f1)?;
        let d_sq = intrinsic_metric_sq(&exp, &f0, &f1, n)?;
        if !(d_sq > 0.0) {
            return Err(Error::DegenerateHypotheses);
        }
        let thr = test_threshold(c, n, d_sq);
        let probes = probe_set(&exp, &f0, &f1, n, opts.c5, opts.probes, seed)?;
        let truths: Vec<&ParameterPoint> = std::iter::once(&f0).chain(probes.iter()).collect();
        let rates = truths
            .par_iter()
            .enumerate()
            .map(|(j, truth)| {
                let run = ((pos as u64) << 32) | j as u64;
                let llr = llr_blocks(&exp, &f0, &f1, truth, n, reps, opts.blocks, seed, run)?;
                let rejected = llr.iter().flatten().filter(|&&l| l <= thr).count();
                Ok(if j == 0 {
                    rejected as f64 / reps as f64
                } else {
                    (reps - rejected) as f64 / reps as f64
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let (worst, t2) = rates[1..]
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &r)| if r > acc.1 { (i, r) } else { acc });
        report.n_d_sq.push(n as f64 * d_sq);
        report.type1.push(rates[0]);
        report.type2.push(t2);
        report.worst_probe.push(worst);
        report.included.push(rates[0].max(t2) > 0.0);
    }

    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..n_grid.len())
        .filter(|&i| report.included[i])
        .map(|i| (report.n_d_sq[i], report.type1[i].max(report.type2[i]).ln()))
        .unzip();
    if xs.len() >= 2 {
        let (_, slope, se) = ols_line(&xs, &ys);
        report.decay_slope = slope;
        report.slope_stderr = se;
        report.pass = slope <= -0.01;
    }
    Ok(report)
}
