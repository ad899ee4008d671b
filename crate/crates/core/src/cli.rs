//! Command-line front end. Every subcommand reads one strict JSON document,
//! writes its primary outputs to an output directory and quarantines
//! wall-clock information in `metadata.json`.
//!
//! Exit codes: 0 when the check or run passes, 1 on an analytic failure and
//! 2 on a usage, configuration or input error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    oracle_benchmark, risk, run_sweep, CellRecord, SweepConfig, TruthSpec, WORKERS_ENV,
};
use crate::error::{Error, Result};
use crate::experiments::{
    sample_data, Constraints, Dataset, Design, ExperimentKind, ExperimentSpec, Observations,
};
use crate::params::ParameterPoint;
use crate::priors::{heavy_tail_check, model_weights, App, BaseDensity, PriorConfig, TAIL_PROBES};
use crate::rng::{stream, Purpose};
use crate::samplers::{posterior_mean, run_rjmcmc, SamplerConfig};
use crate::theory_checks::{
    check_p1_report, estimate_llr_mgf, random_pair, test_error_decay, BernsteinOptions,
    DecayOptions,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "tsb", version, about = "Two-step-prior model selection: checks, fits and rate sweeps")]
struct Cli {
    #[command(subcommand)]
    command: CommandName,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for outputs; overrides `output_dir` in the configuration.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Master seed; overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write into a nonempty output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    /// Monte Carlo check of the log-likelihood-ratio Bernstein envelope.
    BernsteinCheck,
    /// Error decay of the likelihood-ratio test over a grid of sample sizes.
    TestDecay,
    /// Model-weight condition and tail check of a prior.
    PriorCheck,
    /// Run the sampler on one dataset.
    Fit,
    /// Posterior-mean risk against the oracle benchmark on a grid of sizes.
    OracleCompare,
    /// Replicated contraction study over a grid of sample sizes.
    RateSweep,
}

impl CommandName {
    fn name(self) -> &'static str {
        match self {
            CommandName::BernsteinCheck => "bernstein-check",
            CommandName::TestDecay => "test-decay",
            CommandName::PriorCheck => "prior-check",
            CommandName::Fit => "fit",
            CommandName::OracleCompare => "oracle-compare",
            CommandName::RateSweep => "rate-sweep",
        }
    }
}

/// Explicit hypotheses for the Bernstein check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub f0: ParameterPoint,
    pub f1: ParameterPoint,
}

/// Run configuration shared by all subcommands. Fields a command does not
/// use are ignored by it; fields no command knows are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub command: Option<CommandName>,
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    #[serde(default)]
    pub app: Option<App>,
    #[serde(default)]
    pub prior: Option<PriorConfig>,
    #[serde(default)]
    pub sampler: Option<SamplerConfig>,
    #[serde(default)]
    pub n_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub replications: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Single sample size for checks and generated fits.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub constraints: Option<Constraints>,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub kappa_gamma: Option<f64>,
    #[serde(default)]
    pub kappa_g: Option<f64>,
    #[serde(default)]
    pub pair: Option<PairConfig>,
    /// Gap between the constant Gaussian hypotheses of the decay check.
    #[serde(default)]
    pub offset: Option<f64>,
    #[serde(default)]
    pub truth: Option<TruthSpec>,
    /// CSV of responses on the index design, resolved against the
    /// directory of the configuration file.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub h: Option<usize>,
    #[serde(default)]
    pub radius_multipliers: Option<Vec<f64>>,
    #[serde(default)]
    pub c3: Option<f64>,
}

/// Parse a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })
}

/// Exit code for an error: 2 for anything the user can fix in the inputs,
/// 1 for failures of the computation itself.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLogPosterior(_)
        | Error::CellFailed { .. }
        | Error::NonFiniteEstimate(_)
        | Error::QuadratureFailure(_)
        | Error::FactorizationFailure(_)
        | Error::SvdFailure
        | Error::EmptyChain
        | Error::NonPositiveRisk(_)
        | Error::UnnormalizedWeights(_) => EXIT_FAIL,
        _ => EXIT_USAGE,
    }
}

/// Entry point used by the binary. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(pass) => {
            if pass {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Context {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    base_dir: PathBuf,
}

fn execute(cli: &Cli) -> Result<bool> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--config is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let cfg = parse_config(&text)?;
    if let Some(c) = cfg.command {
        if c != cli.command {
            return Err(Error::InvalidConfig(format!(
                "configuration is for `{}`, not `{}`",
                c.name(),
                cli.command.name()
            )));
        }
    }
    let seed = cli.seed.unwrap_or(cfg.seed);
    let out = cli
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("tsb-out").join(cli.command.name()));
    prepare_output_dir(&out, cli.force)?;
    let ctx = Context {
        cfg,
        seed,
        out,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let started = SystemTime::now();
    let clock = Instant::now();
    let pass = match cli.command {
        CommandName::BernsteinCheck => cmd_bernstein_check(&ctx)?,
        CommandName::TestDecay => cmd_test_decay(&ctx)?,
        CommandName::PriorCheck => cmd_prior_check(&ctx)?,
        CommandName::Fit => cmd_fit(&ctx)?,
        CommandName::OracleCompare => cmd_oracle_compare(&ctx)?,
        CommandName::RateSweep => cmd_rate_sweep(&ctx)?,
    };
    let meta = serde_json::json!({
        "command": cli.command.name(),
        "config": path.display().to_string(),
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
        "elapsed_seconds": clock.elapsed().as_secs_f64(),
        "workers": std::env::var(WORKERS_ENV).ok(),
        "pass": pass,
    });
    write_json(&ctx.out.join("metadata.json"), &meta)?;
    Ok(pass)
}

fn prepare_output_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        if !out.is_dir() {
            return Err(Error::InvalidConfig(format!("{} is not a directory", out.display())));
        }
        let occupied = std::fs::read_dir(out)?.next().is_some();
        if occupied && !force {
            return Err(Error::InvalidConfig(format!(
                "output directory {} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
    }
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

impl Context {
    fn experiment(&self) -> ExperimentKind {
        self.cfg.experiment.unwrap_or(ExperimentKind::GaussianReg)
    }

    fn constraints(&self) -> Constraints {
        self.cfg.constraints.unwrap_or_default()
    }

    fn prior(&self) -> Result<PriorConfig> {
        match (&self.cfg.prior, self.cfg.app) {
            (Some(p), Some(a)) if p.app != a => Err(Error::InvalidConfig(format!(
                "app {a:?} disagrees with prior app {:?}",
                p.app
            ))),
            (Some(p), _) => Ok(p.clone()),
            (None, Some(app)) => Ok(PriorConfig {
                app,
                k: 1.0,
                temperature: 2.0,
                m_max: None,
                g: BaseDensity::default(),
                d: 0,
                m1: 0,
                m2: 0,
                p: 0,
                level_grid: None,
            }),
            (None, None) => Err(Error::InvalidConfig("an app or prior is required".into())),
        }
    }

    fn sampler(&self) -> SamplerConfig {
        let mut s = self
            .cfg
            .sampler
            .clone()
            .unwrap_or_else(|| SamplerConfig::new(20_000, 5_000, self.seed));
        s.seed = self.seed;
        s
    }

    fn truth(&self) -> Result<TruthSpec> {
        self.cfg
            .truth
            .clone()
            .ok_or_else(|| Error::InvalidConfig("a truth specification is required".into()))
    }

    fn sweep_config(&self, n_grid: Vec<usize>, replications: usize) -> Result<SweepConfig> {
        Ok(SweepConfig {
            experiment: self.experiment(),
            constraints: self.constraints(),
            truth: self.truth()?,
            prior: self.prior()?,
            sampler: self.sampler(),
            n_grid,
            replications,
            radius_multipliers: self.cfg.radius_multipliers.clone().unwrap_or_else(|| vec![4.0]),
            c3: self.cfg.c3.unwrap_or(4.0),
            seed: self.seed,
        })
    }
}

fn cmd_bernstein_check(ctx: &Context) -> Result<bool> {
    let kind = ctx.experiment();
    let n = ctx.cfg.n.unwrap_or(100);
    let reps = ctx.cfg.replications.unwrap_or(100_000);
    let grid = ctx
        .cfg
        .lambda_grid
        .clone()
        .unwrap_or_else(|| vec![-1.0, -0.5, -0.25, 0.25, 0.5, 1.0]);
    let (exp, f0, f1) = match &ctx.cfg.pair {
        Some(p) => {
            let design = if kind.is_regression() {
                Design::Index { n }
            } else {
                Design::None
            };
            (
                ExperimentSpec::new(kind, design).with_constraints(ctx.constraints()),
                p.f0.clone(),
                p.f1.clone(),
            )
        }
        None if kind == ExperimentKind::GaussianReg => {
            // Constant signals one over root n apart, so that n d^2 = 1.
            let exp = ExperimentSpec::regression(kind, n).with_constraints(ctx.constraints());
            let gap = 1.0 / (n as f64).sqrt();
            (exp, ParameterPoint::signal(vec![0.0; n]), ParameterPoint::signal(vec![gap; n]))
        }
        None => random_pair(kind, n, &mut stream(ctx.seed, Purpose::Probe))?,
    };
    let opts = BernsteinOptions {
        kappa_gamma: ctx.cfg.kappa_gamma,
        kappa_g: ctx.cfg.kappa_g,
        ..BernsteinOptions::default()
    };
    let report = estimate_llr_mgf(&exp, &f0, &f1, n, &grid, reps, ctx.seed, &opts)?;
    write_json(&ctx.out.join("bernstein.json"), &report)?;
    std::fs::write(ctx.out.join("bernstein.svg"), report.to_svg())?;
    println!(
        "bernstein-check {}: n d^2 = {:.4}, margin {:.3e}, {}",
        report.kind,
        report.n_d_sq,
        report.margin,
        verdict(report.pass)
    );
    Ok(report.pass)
}

fn cmd_test_decay(ctx: &Context) -> Result<bool> {
    let kind = ctx.experiment();
    let n_grid = ctx.cfg.n_grid.clone().unwrap_or_else(|| vec![8, 16, 32, 64]);
    let reps = ctx.cfg.replications.unwrap_or(10_000);
    let offset = ctx.cfg.offset.unwrap_or(0.5);
    let constraints = ctx.constraints();
    let seed = ctx.seed;
    let pair = |n: usize| {
        if kind == ExperimentKind::GaussianReg {
            Ok((
                ExperimentSpec::regression(kind, n).with_constraints(constraints),
                ParameterPoint::signal(vec![0.0; n]),
                ParameterPoint::signal(vec![offset; n]),
            ))
        } else {
            random_pair(kind, n, &mut stream(seed, Purpose::Probe))
        }
    };
    let report = test_error_decay(pair, &n_grid, reps, seed, &DecayOptions::default())?;
    write_json(&ctx.out.join("decay.json"), &report)?;
    std::fs::write(ctx.out.join("decay.svg"), report.to_svg())?;
    println!(
        "test-decay {kind}: slope {:.4} (se {:.4}), {}",
        report.decay_slope,
        report.slope_stderr,
        verdict(report.pass)
    );
    Ok(report.pass)
}

fn cmd_prior_check(ctx: &Context) -> Result<bool> {
    let n = ctx.cfg.n.unwrap_or(100);
    let h = ctx.cfg.h.unwrap_or(2);
    let prior = ctx.prior()?.build(n)?;
    let table = model_weights(&prior, n)?;
    let p1 = check_p1_report(&table.indices, &table.log_weights, &table.n_delta_sq, h)?;
    let tail = heavy_tail_check(&prior.g, 2.0, &TAIL_PROBES);
    let weights: BTreeMap<String, f64> = table
        .indices
        .iter()
        .zip(&table.weights)
        .map(|(m, w)| (m.to_string(), *w))
        .collect();
    let report = serde_json::json!({
        "app": prior.rate.app,
        "n": n,
        "m_max": prior.m_max,
        "p1": p1,
        "heavy_tail": tail,
        "weights": weights,
        "pass": p1.pass && tail.pass,
    });
    write_json(&ctx.out.join("prior_check.json"), &report)?;
    println!(
        "prior-check {:?}: P1 {}, tail {}",
        prior.rate.app,
        verdict(p1.pass),
        verdict(tail.pass)
    );
    Ok(p1.pass && tail.pass)
}

/// Read responses from a CSV with a header row. The column named `value`
/// or `y` is used, or the only column when there is just one.
pub fn read_responses(path: &Path) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    let headers = r.headers().map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    let col = match headers.iter().position(|h| h.trim() == "value" || h.trim() == "y") {
        Some(c) => c,
        None if headers.len() == 1 => 0,
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "expected a `value` or `y` column".into(),
            })
        }
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = rec.get(col).ok_or_else(|| Error::Parse {
            line,
            msg: "missing value column".into(),
        })?;
        let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("{field:?} is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("{field:?} is not finite"),
            });
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "dataset has no rows".into(),
        });
    }
    Ok(out)
}

fn cmd_fit(ctx: &Context) -> Result<bool> {
    let prior_cfg = ctx.prior()?;
    let kind = ctx.experiment();
    let (exp, data, truth) = match (&ctx.cfg.dataset, &ctx.cfg.truth) {
        (Some(rel), _) => {
            if prior_cfg.app != App::Iso {
                return Err(Error::InvalidConfig(
                    "datasets are read on the index design, which only the iso app uses".into(),
                ));
            }
            let y = read_responses(&ctx.base_dir.join(rel))?;
            let exp = ExperimentSpec::regression(kind, y.len()).with_constraints(ctx.constraints());
            (exp, Dataset::new(kind, ctx.seed, Observations::Scalar(y)), None)
        }
        (None, Some(_)) => {
            let n = ctx
                .cfg
                .n
                .ok_or_else(|| Error::InvalidConfig("a generated fit needs n".into()))?;
            let sweep = ctx.sweep_config(vec![n], 1)?;
            let (exp, truth) = sweep.instance(n, ctx.seed)?;
            let data = sample_data(&exp, &truth, n, ctx.seed)?;
            (exp, data, Some(truth))
        }
        (None, None) => {
            return Err(Error::InvalidConfig("fit needs a dataset or a truth".into()))
        }
    };
    let n = data.n();
    let prior = prior_cfg.build(n)?;
    let sampler = ctx.sampler();
    let chain = run_rjmcmc(prior.rate.app, &exp, &data, &prior, &sampler)?;
    let fit = posterior_mean(&chain, &exp)?;

    chain.write_csv(&ctx.out.join("chain.csv"))?;
    chain.write_jsonl(&ctx.out.join("chain.jsonl"))?;
    let mut w = csv::Writer::from_path(ctx.out.join("fit.csv")).map_err(csv_err)?;
    w.write_record(["i", "y", "fit"]).map_err(csv_err)?;
    let y = data.scalars()?;
    for (i, f) in fit.iter().enumerate() {
        w.write_record([i.to_string(), format!("{:.16e}", y[i]), format!("{f:.16e}")])
            .map_err(csv_err)?;
    }
    w.flush()?;
    let hist = chain.index_histogram();
    let total = chain.draws.len() as f64;
    let mut w = csv::Writer::from_path(ctx.out.join("histogram.csv")).map_err(csv_err)?;
    w.write_record(["model", "count", "frequency"]).map_err(csv_err)?;
    for (m, c) in &hist {
        w.write_record([m.to_string(), c.to_string(), format!("{:.16e}", *c as f64 / total)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    let f0 = truth.as_ref().map(|t| exp.signal(t)).transpose()?;
    let summary = serde_json::json!({
        "app": prior.rate.app,
        "experiment": kind,
        "n": n,
        "draws": chain.draws.len(),
        "acceptance": chain.acceptance_rates().into_iter().map(|(k, v)| (format!("{k:?}"), v)).collect::<BTreeMap<_, _>>(),
        "final_scales": chain.final_scales,
        "truncation_warning": chain.truncation_warning,
        "risk": f0.as_ref().map(|f0| risk(&fit, f0, &exp)).transpose()?,
    });
    write_json(&ctx.out.join("summary.json"), &summary)?;
    if chain.truncation_warning {
        eprintln!("warning: posterior mass piles up at the truncation bound; raise m_max");
    }
    let (mode, _) = hist
        .iter()
        .max_by_key(|(_, c)| **c)
        .ok_or(Error::EmptyChain)?;
    println!("fit {:?}: n = {n}, {} draws, modal model {mode}", prior.rate.app, chain.draws.len());
    Ok(true)
}

#[derive(Debug, Clone, Serialize)]
struct OracleRow {
    n: usize,
    m_star: String,
    oracle_value: f64,
    approx_error: f64,
    exact: bool,
    risk: f64,
    ratio: f64,
}

fn cmd_oracle_compare(ctx: &Context) -> Result<bool> {
    let n_grid = ctx
        .cfg
        .n_grid
        .clone()
        .ok_or_else(|| Error::InvalidConfig("oracle-compare needs n_grid".into()))?;
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(Error::InvalidConfig("n_grid must hold positive sizes".into()));
    }
    let sweep = ctx.sweep_config(n_grid.clone(), 1)?;
    let mut rows = Vec::new();
    for &n in &n_grid {
        let cell = crate::rng::cell_seed(ctx.seed, n as u64, 0);
        let (exp, truth) = sweep.instance(n, cell)?;
        let data = sample_data(&exp, &truth, n, cell)?;
        let prior = sweep.prior.build(n)?;
        let sampler = SamplerConfig {
            seed: cell,
            ..sweep.sampler.clone()
        };
        let chain = run_rjmcmc(prior.rate.app, &exp, &data, &prior, &sampler)?;
        let fit = posterior_mean(&chain, &exp)?;
        let r = risk(&fit, &exp.signal(&truth)?, &exp)?;
        let o = oracle_benchmark(&exp, &truth, &prior.rate, &prior.m_max, cell)?;
        println!("oracle-compare n = {n}: risk {r:.4e}, oracle {:.4e}", o.value);
        rows.push(OracleRow {
            n,
            m_star: o.m_star.to_string(),
            oracle_value: o.value,
            approx_error: o.approx_error,
            exact: o.exact,
            risk: r,
            ratio: r / o.value,
        });
    }
    let mut w = csv::Writer::from_path(ctx.out.join("oracle.csv")).map_err(csv_err)?;
    for row in &rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    write_json(&ctx.out.join("oracle.json"), &rows)?;
    Ok(rows.iter().all(|r| r.ratio.is_finite()))
}

fn cmd_rate_sweep(ctx: &Context) -> Result<bool> {
    let n_grid = ctx
        .cfg
        .n_grid
        .clone()
        .ok_or_else(|| Error::InvalidConfig("rate-sweep needs n_grid".into()))?;
    let cfg = ctx.sweep_config(n_grid, ctx.cfg.replications.unwrap_or(20))?;
    cfg.validate()?;
    let log = |c: &CellRecord| {
        eprintln!(
            "cell n = {} rep = {} risk = {:.4e} attempts = {}",
            c.n, c.replication, c.risk, c.attempts
        );
    };
    let report = run_sweep(&cfg, &log)?;
    report.write_json(&ctx.out.join("report.json"))?;
    report.write_risk_csv(&ctx.out.join("risk.csv"))?;
    std::fs::write(ctx.out.join("rate.svg"), report.to_svg())?;
    let mut w = BufWriter::new(File::create(ctx.out.join("cells.jsonl"))?);
    for c in &report.cells {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    let pass = report.slope.is_some_and(|s| s < 0.0);
    println!(
        "rate-sweep {:?}: slope {}, oracle slope {}, {}",
        report.app,
        fmt_opt(report.slope),
        fmt_opt(report.oracle_slope),
        verdict(pass)
    );
    Ok(pass)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |s| format!("{s:.4}"))
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}
