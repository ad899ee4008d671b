//! Rate sweeps: independent (n, replication) cells, each simulating data,
//! running a chain and scoring it against the truth.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{model_concentration, oracle_benchmark, rate_slope, risk};
use crate::error::{Error, Result};
use crate::experiments::{sample_data, Constraints, Design, ExperimentKind, ExperimentSpec};
use crate::params::{FactorMatrix, MaxAffine, ParameterPoint, Plane, SparsePlusStep, StepFunction};
use crate::plot::{render, Series};
use crate::priors::{App, PriorConfig};
use crate::rng::{cell_seed, hash_words, stream, substream, Purpose, Rng};
use crate::samplers::{posterior_mean, run_rjmcmc, SamplerConfig};

/// Environment variable capping the number of sweep workers.
pub const WORKERS_ENV: &str = "TSB_WORKERS";

/// Attempts per cell beyond the first, each on fresh substreams.
const RETRIES: u64 = 2;

/// Regression truth, defined on the unit interval or on the design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSpec {
    /// `levels[k]` on `[breaks[k-1], breaks[k])`, evaluated at `x_i = i/(n+1)`.
    Step { breaks: Vec<f64>, levels: Vec<f64> },
    /// `intercept + slope * x` at `x_i = i/(n+1)`.
    Linear { intercept: f64, slope: f64 },
    /// `sum_k s_k a_k b_k^T` with orthonormal factors drawn once from the
    /// sweep seed.
    LowRank { singular_values: Vec<f64> },
    MaxAffine { planes: Vec<Plane> },
    /// Dense coefficients plus a step function in `z_i = i/(n+1)`.
    PartialLinear {
        beta: Vec<f64>,
        breaks: Vec<f64>,
        levels: Vec<f64>,
    },
}

fn step_on_index(breaks: &[f64], levels: &[f64], n: usize) -> Result<StepFunction> {
    if levels.len() != breaks.len() + 1 {
        return Err(Error::InvalidConfig("a step truth needs one more level than breaks".into()));
    }
    let mut change_indices = vec![0usize];
    let mut out_levels = vec![levels[0]];
    for (b, &l) in breaks.iter().zip(&levels[1..]) {
        let start = (1..=n)
            .position(|i| i as f64 / (n + 1) as f64 >= *b)
            .unwrap_or(n);
        if start >= n {
            break;
        }
        if start == *change_indices.last().expect("nonempty") {
            *out_levels.last_mut().expect("nonempty") = l;
        } else {
            change_indices.push(start);
            out_levels.push(l);
        }
    }
    Ok(StepFunction {
        change_indices,
        levels: out_levels,
    })
}

fn orthonormal(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q().columns(0, cols).into_owned()
}

fn default_r() -> Vec<f64> {
    vec![4.0]
}

fn default_c3() -> f64 {
    4.0
}

fn gaussian() -> ExperimentKind {
    ExperimentKind::GaussianReg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "gaussian")]
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub constraints: Constraints,
    pub truth: TruthSpec,
    pub prior: PriorConfig,
    pub sampler: SamplerConfig,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    /// Multipliers `R` of the oracle rate in the contraction probabilities.
    #[serde(default = "default_r")]
    pub radius_multipliers: Vec<f64>,
    #[serde(default = "default_c3")]
    pub c3: f64,
    pub seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.experiment.is_regression() {
            return Err(Error::InvalidConfig("sweeps need a regression experiment".into()));
        }
        if self.n_grid.len() < 4 {
            return Err(Error::InsufficientGrid {
                needed: 4,
                got: self.n_grid.len(),
            });
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) || self.n_grid[0] == 0 {
            return Err(Error::InvalidConfig("n_grid must be positive and strictly increasing".into()));
        }
        if self.replications < 20 {
            return Err(Error::InvalidConfig("at least 20 replications per n are required".into()));
        }
        if self.radius_multipliers.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::InvalidConfig("radius multipliers must be positive".into()));
        }
        if !(self.c3 >= 1.0) {
            return Err(Error::InvalidConfig("c3 must be at least 1".into()));
        }
        self.sampler.validate()?;
        let ok = matches!(
            (self.prior.app, &self.truth),
            (App::Iso, TruthSpec::Step { .. } | TruthSpec::Linear { .. })
                | (App::Trace, TruthSpec::LowRank { .. })
                | (App::Convex, TruthSpec::MaxAffine { .. })
                | (App::PartialLinear, TruthSpec::PartialLinear { .. })
        );
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "truth does not match the {:?} application",
                self.prior.app
            )));
        }
        Ok(())
    }

    /// Design, experiment and truth at sample size `n`. Random designs are
    /// drawn from `cell`.
    pub fn instance(&self, n: usize, cell: u64) -> Result<(ExperimentSpec, ParameterPoint)> {
        let mut rng = substream(cell, 1, 0, Purpose::Data);
        let p = &self.prior;
        let normal = |rng: &mut Rng| rng.sample::<f64, _>(StandardNormal);
        let (design, truth) = match &self.truth {
            TruthSpec::Step { breaks, levels } => (
                Design::Index { n },
                ParameterPoint::StepFunction(step_on_index(breaks, levels, n)?),
            ),
            TruthSpec::Linear { intercept, slope } => (
                Design::Index { n },
                ParameterPoint::signal(
                    (1..=n)
                        .map(|i| intercept + slope * i as f64 / (n + 1) as f64)
                        .collect(),
                ),
            ),
            TruthSpec::LowRank { singular_values } => {
                let r = singular_values.len();
                if r == 0 || r > p.m1.min(p.m2) {
                    return Err(Error::InvalidConfig("truth rank must be in 1..=min(m1, m2)".into()));
                }
                let mut fixed = stream(self.seed, Purpose::Prior);
                let a = orthonormal(p.m1, r, &mut fixed);
                let b = orthonormal(p.m2, r, &mut fixed);
                let truth = FactorMatrix {
                    rows: p.m1,
                    cols: p.m2,
                    u: (0..r)
                        .map(|k| (0..p.m1).map(|i| singular_values[k] * a[(i, k)]).collect())
                        .collect(),
                    v: (0..r).map(|k| (0..p.m2).map(|j| b[(j, k)]).collect()).collect(),
                };
                let xs = (0..n)
                    .map(|_| (0..p.m1 * p.m2).map(|_| normal(&mut rng)).collect())
                    .collect();
                (
                    Design::Matrices {
                        rows: p.m1,
                        cols: p.m2,
                        xs,
                    },
                    ParameterPoint::FactorMatrix(truth),
                )
            }
            TruthSpec::MaxAffine { planes } => {
                if planes.is_empty() || planes.iter().any(|pl| pl.slope.len() != p.d) {
                    return Err(Error::InvalidConfig("planes must have d slopes".into()));
                }
                let points = (0..n)
                    .map(|_| (0..p.d).map(|_| rng.random::<f64>()).collect())
                    .collect();
                (
                    Design::Points { points },
                    ParameterPoint::MaxAffine(MaxAffine {
                        planes: planes.clone(),
                    }),
                )
            }
            TruthSpec::PartialLinear {
                beta,
                breaks,
                levels,
            } => {
                if beta.len() != p.p {
                    return Err(Error::LengthMismatch {
                        left: beta.len(),
                        right: p.p,
                    });
                }
                let support: Vec<usize> = (0..p.p).filter(|&j| beta[j] != 0.0).collect();
                if support.is_empty() {
                    return Err(Error::InvalidConfig("beta needs a nonzero coefficient".into()));
                }
                let x = (0..n)
                    .map(|_| (0..p.p).map(|_| normal(&mut rng)).collect())
                    .collect();
                (
                    Design::PartialLinear { p: p.p, x },
                    ParameterPoint::SparsePlusStep(SparsePlusStep {
                        p: p.p,
                        beta: support.iter().map(|&j| beta[j]).collect(),
                        support,
                        step: step_on_index(breaks, levels, n)?,
                    }),
                )
            }
        };
        let exp = ExperimentSpec::new(self.experiment, design).with_constraints(self.constraints);
        exp.validate(&truth)?;
        Ok((exp, truth))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    /// Attempts used, 1 when the first run succeeded.
    pub attempts: u64,
    /// Risk of the posterior mean.
    pub risk: f64,
    /// Average risk of the individual draws.
    pub mean_draw_risk: f64,
    pub oracle_value: f64,
    pub m_star: Vec<usize>,
    /// `Pi(d^2 > R * oracle | X)` for each configured `R`.
    pub contraction: Vec<f64>,
    pub concentration: f64,
    pub histogram: BTreeMap<String, f64>,
    pub truncation_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NSummary {
    pub n: usize,
    pub mean_risk: f64,
    pub risk_stderr: f64,
    pub mean_draw_risk: f64,
    pub oracle_value: f64,
    pub contraction: Vec<f64>,
    pub concentration: f64,
    /// Model-index frequencies averaged over replications.
    pub histogram: BTreeMap<String, f64>,
    pub truncation_warnings: usize,
    pub retried_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub experiment: ExperimentKind,
    pub app: App,
    pub n_grid: Vec<usize>,
    pub replications: usize,
    pub radius_multipliers: Vec<f64>,
    pub c3: f64,
    pub per_n: Vec<NSummary>,
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    /// Slope of the oracle rate itself, for reference.
    pub oracle_slope: Option<f64>,
    #[serde(skip)]
    pub cells: Vec<CellRecord>,
}

impl ContractionReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    /// Long table with one row per (n, replication) cell.
    pub fn write_risk_csv(&self, path: &Path) -> Result<()> {
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        w.write_record(["n", "replication", "seed", "risk", "mean_draw_risk", "oracle", "concentration"])
            .map_err(io)?;
        for c in &self.cells {
            w.write_record([
                c.n.to_string(),
                c.replication.to_string(),
                c.seed.to_string(),
                format!("{:.16e}", c.risk),
                format!("{:.16e}", c.mean_draw_risk),
                format!("{:.16e}", c.oracle_value),
                format!("{:.16e}", c.concentration),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Log-log plot of the mean risk, its fitted line and the oracle rate.
    pub fn to_svg(&self) -> String {
        let ln = |v: f64| v.ln();
        let x: Vec<f64> = self.per_n.iter().map(|s| ln(s.n as f64)).collect();
        let risk: Vec<f64> = self.per_n.iter().map(|s| ln(s.mean_risk)).collect();
        let oracle: Vec<f64> = self.per_n.iter().map(|s| ln(s.oracle_value)).collect();
        let mut series = vec![
            Series::points("mean risk", x.clone(), risk.clone()),
            Series::line("oracle rate", x.clone(), oracle),
        ];
        if let Some(slope) = self.slope {
            let mx = x.iter().sum::<f64>() / x.len() as f64;
            let my = risk.iter().sum::<f64>() / risk.len() as f64;
            let fit = x.iter().map(|v| my + slope * (v - mx)).collect();
            series.push(Series::line(&format!("fit, slope {slope:.3}"), x, fit));
        }
        render("Posterior-mean risk", "log n", "log risk", &series)
    }
}

fn run_cell(cfg: &SweepConfig, n: usize, rep: usize) -> Result<CellRecord> {
    let base = cell_seed(cfg.seed, n as u64, rep as u64);
    let mut last = None;
    for attempt in 0..=RETRIES {
        let seed = if attempt == 0 {
            base
        } else {
            hash_words(&[base, attempt])
        };
        match run_cell_once(cfg, n, rep, seed) {
            Ok(mut rec) => {
                rec.attempts = attempt + 1;
                return Ok(rec);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt ran"))
}

fn run_cell_once(cfg: &SweepConfig, n: usize, rep: usize, seed: u64) -> Result<CellRecord> {
    let (exp, truth) = cfg.instance(n, seed)?;
    let f0 = exp.signal(&truth)?;
    let data = sample_data(&exp, &truth, n, seed)?;
    let prior = cfg.prior.build(n)?;
    let sampler = SamplerConfig {
        seed,
        chains: 1,
        ..cfg.sampler.clone()
    };
    let chain = run_rjmcmc(prior.rate.app, &exp, &data, &prior, &sampler)?;
    let fit = posterior_mean(&chain, &exp)?;
    let r = risk(&fit, &f0, &exp)?;
    let draw_risks = chain
        .draws
        .iter()
        .map(|d| risk(&exp.signal(&d.point)?, &f0, &exp))
        .collect::<Result<Vec<f64>>>()?;
    let mean_draw_risk = draw_risks.iter().sum::<f64>() / draw_risks.len() as f64;
    if r > mean_draw_risk * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::NonFiniteEstimate(format!(
            "posterior-mean risk {r} exceeds mean draw risk {mean_draw_risk}"
        )));
    }
    let oracle = oracle_benchmark(&exp, &truth, &prior.rate, &prior.m_max, seed)?;
    let contraction = cfg
        .radius_multipliers
        .iter()
        .map(|&mult| {
            draw_risks.iter().filter(|&&d| d > mult * oracle.value).count() as f64 / draw_risks.len() as f64
        })
        .collect();
    let concentration = model_concentration(&chain, &oracle.m_star, cfg.c3)?;
    let total = chain.draws.len() as f64;
    let histogram = chain
        .index_histogram()
        .into_iter()
        .map(|(m, c)| (m.to_string(), c as f64 / total))
        .collect();
    Ok(CellRecord {
        n,
        replication: rep,
        seed,
        attempts: 1,
        risk: r,
        mean_draw_risk,
        oracle_value: oracle.value,
        m_star: oracle.m_star.0,
        contraction,
        concentration,
        histogram,
        truncation_warning: chain.truncation_warning,
    })
}

fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let k: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("{WORKERS_ENV} must be a positive integer")))?;
        if k == 0 {
            return Err(Error::InvalidConfig(format!("{WORKERS_ENV} must be positive")));
        }
        b = b.num_threads(k);
    }
    b.build().map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Run every cell of the sweep on a bounded worker pool and aggregate.
/// `on_cell` is called once per finished cell, from the worker threads.
pub fn run_sweep(cfg: &SweepConfig, on_cell: &(dyn Fn(&CellRecord) + Sync)) -> Result<ContractionReport> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.replications).map(move |r| (n, r)))
        .collect();
    let pool = worker_pool()?;
    let records: Vec<CellRecord> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(n, rep)| {
                let rec = run_cell(cfg, n, rep).map_err(|e| Error::CellFailed {
                    n,
                    replication: rep,
                    msg: e.to_string(),
                })?;
                on_cell(&rec);
                Ok(rec)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let per_n: Vec<NSummary> = cfg
        .n_grid
        .iter()
        .map(|&n| summarize(n, records.iter().filter(|c| c.n == n).collect(), cfg))
        .collect();
    let risks: Vec<f64> = per_n.iter().map(|s| s.mean_risk).collect();
    let oracles: Vec<f64> = per_n.iter().map(|s| s.oracle_value).collect();
    let fit = rate_slope(&cfg.n_grid, &risks).ok();
    Ok(ContractionReport {
        experiment: cfg.experiment,
        app: cfg.prior.app,
        n_grid: cfg.n_grid.clone(),
        replications: cfg.replications,
        radius_multipliers: cfg.radius_multipliers.clone(),
        c3: cfg.c3,
        per_n,
        slope: fit.map(|f| f.0),
        slope_stderr: fit.map(|f| f.1),
        oracle_slope: rate_slope(&cfg.n_grid, &oracles).ok().map(|f| f.0),
        cells: records,
    })
}

fn summarize(n: usize, cells: Vec<&CellRecord>, cfg: &SweepConfig) -> NSummary {
    let k = cells.len() as f64;
    let avg = |f: &dyn Fn(&CellRecord) -> f64| cells.iter().map(|c| f(c)).sum::<f64>() / k;
    let mean_risk = avg(&|c| c.risk);
    let var = cells.iter().map(|c| (c.risk - mean_risk).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    let mut histogram: BTreeMap<String, f64> = BTreeMap::new();
    for c in &cells {
        for (m, f) in &c.histogram {
            *histogram.entry(m.clone()).or_insert(0.0) += f / k;
        }
    }
    NSummary {
        n,
        mean_risk,
        risk_stderr: (var / k).sqrt(),
        mean_draw_risk: avg(&|c| c.mean_draw_risk),
        oracle_value: avg(&|c| c.oracle_value),
        contraction: (0..cfg.radius_multipliers.len())
            .map(|i| avg(&|c| c.contraction[i]))
            .collect(),
        concentration: avg(&|c| c.concentration),
        histogram,
        truncation_warnings: cells.iter().filter(|c| c.truncation_warning).count(),
        retried_cells: cells.iter().filter(|c| c.attempts > 1).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_truth_on_the_index_design() {
        let s = step_on_index(&[0.5], &[-1.0, 1.0], 9).unwrap();
        // x_i = (i + 1) / 10 reaches 0.5 at i = 4.
        assert_eq!(s.change_indices, vec![0, 4]);
        assert_eq!(s.levels, vec![-1.0, 1.0]);
        assert!(step_on_index(&[0.5], &[1.0], 9).is_err());
    }

    #[test]
    fn config_checks() {
        let text = r#"{
            "truth": {"kind": "step", "breaks": [0.5], "levels": [0, 1]},
            "prior": {"app": "Iso"},
            "sampler": {"n_iter": 100, "burn_in": 10},
            "n_grid": [10, 20, 40],
            "replications": 20,
            "seed": 1
        }"#;
        let cfg: SweepConfig = serde_json::from_str(text).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::InsufficientGrid { .. })));
        let bad = text.replace("\"seed\": 1", "\"seed\": 1, \"extra\": 0");
        assert!(serde_json::from_str::<SweepConfig>(&bad).is_err());
    }
}
