//! Posterior computation: exact enumeration for tiny gridded problems and
//! reversible-jump Metropolis-Hastings for the four regression applications.

mod audit;
mod enumerate;
mod moves;
mod target;

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{Dataset, ExperimentSpec};
use crate::params::{ModelIndex, ParameterPoint};
use crate::priors::{App, TwoStepPrior};
use crate::rng::{substream, Purpose};

pub use audit::{reversibility_audit, AuditReport};
pub use enumerate::{enumerate_posterior, PosteriorTable, TableEntry, ENUMERATION_LIMIT};
pub use moves::{MoveKind, MoveProbs, Scales};

use moves::{Block, Mover};
use target::Target;

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub move_probs: MoveProbs,
    /// Initial random-walk scales.
    #[serde(default)]
    pub scales: Scales,
    /// Mix a data-driven component into birth and refresh proposals.
    #[serde(default = "yes")]
    pub informed: bool,
    /// Drop the likelihood and sample the prior.
    #[serde(default)]
    pub prior_only: bool,
    /// Tune the scales during burn-in.
    #[serde(default = "yes")]
    pub adapt: bool,
}

impl SamplerConfig {
    pub fn new(n_iter: usize, burn_in: usize, seed: u64) -> Self {
        SamplerConfig {
            n_iter,
            burn_in,
            thin: 1,
            chains: 1,
            seed,
            move_probs: MoveProbs::default(),
            scales: Scales::default(),
            informed: true,
            prior_only: false,
            adapt: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.burn_in >= self.n_iter {
            return bad("burn_in must be smaller than n_iter");
        }
        if self.thin == 0 || self.chains == 0 {
            return bad("thin and chains must be positive");
        }
        let p = &self.move_probs;
        let probs = [p.birth, p.death, p.relocate, p.refresh];
        if probs.iter().any(|&x| !(x >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return bad("move probabilities must be nonnegative and sum to one");
        }
        if p.refresh <= 0.0 {
            return bad("refresh probability must be positive");
        }
        if !(self.scales.level > 0.0 && self.scales.coef > 0.0)
            || !self.scales.level.is_finite()
            || !self.scales.coef.is_finite()
        {
            return bad("proposal scales must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraw {
    pub iteration: usize,
    pub index: ModelIndex,
    pub point: ParameterPoint,
    pub log_post: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: u64,
    pub accepted: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub chain_id: usize,
    pub draws: Vec<PosteriorDraw>,
    pub moves: BTreeMap<MoveKind, MoveStats>,
    /// Log posterior after every iteration, burn-in included.
    pub log_post_trace: Vec<f64>,
    /// Fraction of recorded draws on the two largest values of some
    /// lattice coordinate.
    pub top_mass: f64,
    pub truncation_warning: bool,
    pub final_scales: Scales,
}

impl Chain {
    pub fn acceptance_rates(&self) -> BTreeMap<MoveKind, f64> {
        self.moves
            .iter()
            .map(|(k, s)| {
                let r = if s.proposed == 0 {
                    0.0
                } else {
                    s.accepted as f64 / s.proposed as f64
                };
                (*k, r)
            })
            .collect()
    }

    /// Frequency of each model index among the draws.
    pub fn index_histogram(&self) -> BTreeMap<ModelIndex, usize> {
        let mut h = BTreeMap::new();
        for d in &self.draws {
            *h.entry(d.index.clone()).or_insert(0) += 1;
        }
        h
    }

    /// `iteration, m.., log_post` with floats at 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
        let dim = self.draws.first().map_or(1, |d| d.index.dim());
        let mut header = vec!["iteration".to_string()];
        header.extend((1..=dim).map(|k| format!("m{k}")));
        header.push("log_post".into());
        w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for d in &self.draws {
            let mut rec = vec![d.iteration.to_string()];
            rec.extend(d.index.0.iter().map(|m| m.to_string()));
            rec.push(format!("{:.16e}", d.log_post));
            w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// One JSON object per draw.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for d in &self.draws {
            serde_json::to_writer(&mut f, d)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<PosteriorDraw>> {
        let text = std::fs::read_to_string(path)?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })
            })
            .collect()
    }
}

/// Key identifying a parameter exactly, for comparing chains with tables.
pub fn state_key(p: &ParameterPoint) -> String {
    serde_json::to_string(p).expect("parameter points serialize")
}

/// Run one chain with the sampler substream of `cfg.seed`.
pub fn run_rjmcmc(
    app: App,
    exp: &ExperimentSpec,
    data: &Dataset,
    prior: &TwoStepPrior,
    cfg: &SamplerConfig,
) -> Result<Chain> {
    run_chain(app, exp, data, prior, cfg, 0)
}

/// Run `cfg.chains` independent chains in parallel.
pub fn run_chains(
    app: App,
    exp: &ExperimentSpec,
    data: &Dataset,
    prior: &TwoStepPrior,
    cfg: &SamplerConfig,
) -> Result<Vec<Chain>> {
    (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(app, exp, data, prior, cfg, c))
        .collect()
}

fn run_chain(
    app: App,
    exp: &ExperimentSpec,
    data: &Dataset,
    prior: &TwoStepPrior,
    cfg: &SamplerConfig,
    chain_id: usize,
) -> Result<Chain> {
    cfg.validate()?;
    if prior.rate.app != app {
        return Err(Error::KindMismatch {
            expected: format!("{app:?} prior"),
            found: format!("{:?} prior", prior.rate.app),
        });
    }
    let target = Target::new(exp, data, prior, cfg.prior_only)?;
    let mover = Mover::new(&target, cfg.move_probs, cfg.informed);
    let mut rng = substream(cfg.seed, 0, chain_id as u64, Purpose::Sampler);

    let mut x = mover.initial_point();
    let mut lp = target.log_post(&x);
    if !lp.is_finite() {
        return Err(Error::NonFiniteLogPosterior(state_key(&x)));
    }

    let mut scales = cfg.scales;
    let mut window: HashMap<bool, (u32, u32)> = HashMap::new();
    let mut moves: BTreeMap<MoveKind, MoveStats> = BTreeMap::new();
    let mut draws = Vec::with_capacity((cfg.n_iter - cfg.burn_in) / cfg.thin + 1);
    let mut trace = Vec::with_capacity(cfg.n_iter);

    for it in 0..cfg.n_iter {
        let kind = mover.choose_kind(&mut rng);
        let stats = moves.entry(kind).or_default();
        stats.proposed += 1;
        if let Some(prop) = mover.propose(kind, &x, &scales, &mut rng) {
            let lp_new = target.log_post(&prop.point);
            let mut accepted = false;
            if lp_new.is_finite() {
                let log_a = lp_new - lp + prop.log_q_rev - prop.log_q_fwd;
                let u: f64 = rng.random();
                if u.ln() < log_a {
                    x = prop.point;
                    lp = lp_new;
                    accepted = true;
                    stats.accepted += 1;
                }
            }
            if matches!(kind, MoveKind::Refresh | MoveKind::Move) {
                let w = window.entry(prop.block == Block::Level).or_default();
                w.0 += 1;
                w.1 += u32::from(accepted);
            }
        }
        if cfg.adapt && it < cfg.burn_in && (it + 1) % 100 == 0 {
            for (level, (tried, ok)) in window.drain() {
                if tried < 10 {
                    continue;
                }
                let rate = ok as f64 / tried as f64;
                let factor = if rate < 0.25 {
                    0.8
                } else if rate > 0.4 {
                    1.25
                } else {
                    1.0
                };
                if level {
                    scales.level *= factor;
                } else {
                    scales.coef *= factor;
                }
            }
        }
        trace.push(lp);
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0 {
            draws.push(PosteriorDraw {
                iteration: it,
                index: x.model_index().expect("sampler states have an index"),
                point: x.clone(),
                log_post: lp,
            });
        }
    }

    let top = draws
        .iter()
        .filter(|d| {
            d.index
                .0
                .iter()
                .zip(&target.caps)
                .any(|(&m, &cap)| cap >= 3 && m + 1 >= cap)
        })
        .count();
    let top_mass = top as f64 / draws.len().max(1) as f64;
    Ok(Chain {
        chain_id,
        draws,
        moves,
        log_post_trace: trace,
        top_mass,
        truncation_warning: top_mass > 0.01,
        final_scales: scales,
    })
}

/// Pointwise average of the fitted values over the draws.
pub fn posterior_mean(chain: &Chain, exp: &ExperimentSpec) -> Result<Vec<f64>> {
    posterior_mean_of(chain.draws.iter().map(|d| &d.point), exp)
}

pub(crate) fn posterior_mean_of<'p>(
    points: impl Iterator<Item = &'p ParameterPoint>,
    exp: &ExperimentSpec,
) -> Result<Vec<f64>> {
    let mut sum: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for p in points {
        let v = exp.signal(p)?;
        if sum.is_empty() {
            sum = vec![0.0; v.len()];
        }
        for (s, x) in sum.iter_mut().zip(&v) {
            *s += x;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyChain);
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

/// Total-variation distance between the empirical state distribution of
/// the draws and an exact posterior table.
pub fn tv_distance(draws: &[PosteriorDraw], table: &PosteriorTable) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::EmptyChain);
    }
    let mut emp: HashMap<String, f64> = HashMap::new();
    let w = 1.0 / draws.len() as f64;
    for d in draws {
        *emp.entry(state_key(&d.point)).or_insert(0.0) += w;
    }
    let mut tv = 0.0;
    for e in &table.entries {
        let q = emp.remove(&state_key(&e.point)).unwrap_or(0.0);
        tv += (e.prob - q).abs();
    }
    tv += emp.values().sum::<f64>();
    Ok(0.5 * tv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{sample_data, ExperimentKind};
    use crate::params::StepFunction;
    use crate::priors::{LevelGrid, RateSpec};

    fn iso_setup(n: usize, seed: u64) -> (ExperimentSpec, Dataset) {
        let exp = ExperimentSpec::regression(ExperimentKind::GaussianReg, n);
        let truth = ParameterPoint::StepFunction(StepFunction {
            change_indices: vec![0, n / 2],
            levels: vec![-1.0, 1.0],
        });
        let data = sample_data(&exp, &truth, n, seed).unwrap();
        (exp, data)
    }

    #[test]
    fn config_rejects_bad_probabilities() {
        let mut c = SamplerConfig::new(100, 10, 1);
        c.move_probs.birth = 0.5;
        assert!(c.validate().is_err());
        let c = SamplerConfig::new(10, 10, 1);
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let r: std::result::Result<SamplerConfig, _> =
            serde_json::from_str(r#"{"n_iter": 10, "burn_in": 1, "bogus": 2}"#);
        assert!(r.is_err());
    }

    #[test]
    fn same_seed_same_chain() {
        let (exp, data) = iso_setup(40, 3);
        let prior = TwoStepPrior::new(RateSpec::iso(1.0), vec![10]);
        let cfg = SamplerConfig::new(2000, 500, 9);
        let a = run_rjmcmc(App::Iso, &exp, &data, &prior, &cfg).unwrap();
        let b = run_rjmcmc(App::Iso, &exp, &data, &prior, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.draws.iter().all(|d| d.log_post.is_finite()));
    }

    #[test]
    fn iso_fit_is_monotone_and_close() {
        let (exp, data) = iso_setup(60, 4);
        let prior = TwoStepPrior::new(RateSpec::iso(1.0), vec![20]);
        let cfg = SamplerConfig::new(6000, 2000, 1);
        let chain = run_rjmcmc(App::Iso, &exp, &data, &prior, &cfg).unwrap();
        let fit = posterior_mean(&chain, &exp).unwrap();
        assert!(fit.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        assert!((fit[0] + 1.0).abs() < 0.5 && (fit[59] - 1.0).abs() < 0.5, "{fit:?}");
    }

    #[test]
    fn empty_chain_mean_is_an_error() {
        let (exp, _) = iso_setup(10, 1);
        assert_eq!(
            posterior_mean_of(std::iter::empty(), &exp),
            Err(Error::EmptyChain)
        );
    }

    #[test]
    fn grid_chain_stays_on_grid() {
        let (exp, data) = iso_setup(6, 2);
        let grid = LevelGrid {
            values: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            weights: None,
        };
        let prior = TwoStepPrior::new(RateSpec::iso(1.0), vec![3]).with_grid(grid.clone());
        let cfg = SamplerConfig::new(3000, 100, 5);
        let chain = run_rjmcmc(App::Iso, &exp, &data, &prior, &cfg).unwrap();
        for d in &chain.draws {
            let ParameterPoint::StepFunction(s) = &d.point else { panic!() };
            assert!(s.is_sorted());
            assert!(s.levels.iter().all(|v| grid.position(*v).is_some()));
        }
    }
}
