//! Two-step priors: a model-index prior driven by a rate function, followed
//! by a within-model prior built from a symmetric base density.

mod approx;
mod base;
mod rip;
mod within;

pub use approx::{best_approx_iso, best_approx_rank, fit_max_affine, IsoApproximator};
pub use base::{heavy_tail_check, BaseDensity, Family, HeavyTailReport, LevelGrid, TAIL_PROBES};
pub use rip::rip_estimate;
pub(crate) use within::within_model_log_density_law;
pub use within::{
    level_log_density, LevelLaw, sample_within_model, sample_within_model_with, sorted_levels_log_density,
    within_model_log_density,
};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;
use crate::params::ModelIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum App {
    Trace,
    Iso,
    Convex,
    PartialLinear,
    CovFactor,
}

impl App {
    /// Dimension of the model lattice.
    pub fn lattice_dim(self) -> usize {
        match self {
            App::PartialLinear | App::CovFactor => 2,
            _ => 1,
        }
    }
}

/// Rate function `delta^2_{n,m} = K * complexity(m) / n`.
///
/// Only the dimensions relevant to `app` are read: `d` for convex
/// regression, `m1` and `m2` for trace regression, `p` for the partially
/// linear and covariance applications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    pub app: App,
    #[serde(rename = "K", default = "one")]
    pub k: f64,
    #[serde(default)]
    pub d: usize,
    #[serde(default)]
    pub m1: usize,
    #[serde(default)]
    pub m2: usize,
    #[serde(default)]
    pub p: usize,
}

fn one() -> f64 {
    1.0
}

impl RateSpec {
    pub fn iso(k: f64) -> Self {
        Self::base(App::Iso, k)
    }

    pub fn convex(k: f64, d: usize) -> Self {
        RateSpec { d, ..Self::base(App::Convex, k) }
    }

    pub fn trace(k: f64, m1: usize, m2: usize) -> Self {
        RateSpec {
            m1,
            m2,
            ..Self::base(App::Trace, k)
        }
    }

    pub fn partial_linear(k: f64, p: usize) -> Self {
        RateSpec {
            p,
            ..Self::base(App::PartialLinear, k)
        }
    }

    pub fn cov_factor(k: f64, p: usize) -> Self {
        RateSpec {
            p,
            ..Self::base(App::CovFactor, k)
        }
    }

    fn base(app: App, k: f64) -> Self {
        RateSpec {
            app,
            k,
            d: 0,
            m1: 0,
            m2: 0,
            p: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.k.is_finite() && self.k > 0.0) {
            return bad("rate multiplier K must be positive");
        }
        match self.app {
            App::Convex if self.d == 0 => bad("convex rate needs d >= 1"),
            App::Trace if self.m1.max(self.m2) < 2 || self.m1.min(self.m2) == 0 => {
                bad("trace rate needs m1, m2 >= 1 with max(m1, m2) >= 2")
            }
            App::PartialLinear | App::CovFactor if self.p == 0 => bad("rate needs p >= 1"),
            _ => Ok(()),
        }
    }

    /// `complexity(m)`, so that `n delta^2 = K complexity(m)`.
    pub fn complexity(&self, n: f64, m: &ModelIndex) -> Result<f64> {
        let want = self.app.lattice_dim();
        if m.dim() != want || m.0.iter().any(|&c| c == 0) {
            return Err(Error::IndexOutOfRange(format!(
                "{m} is not a positive index of dimension {want}"
            )));
        }
        let c = |i: usize| m.0[i] as f64;
        let e = std::f64::consts::E;
        Ok(match self.app {
            App::Iso => c(0) * (e * n).ln(),
            App::Convex => self.d as f64 * n.ln() * c(0) * (3.0 * c(0)).ln(),
            App::Trace => {
                (self.m1 + self.m2) as f64 * c(0) * (self.m1.max(self.m2) as f64).ln()
            }
            App::PartialLinear => c(0) * (e * self.p as f64).ln() + c(1) * (e * n).ln(),
            App::CovFactor => c(0) * c(1) * (e * self.p as f64).ln(),
        })
    }
}

/// `delta^2_{n,m}` for an integer sample size.
pub fn delta_sq(rate: &RateSpec, n: usize, m: &ModelIndex) -> Result<f64> {
    delta_sq_at(rate, n as f64, m)
}

/// `delta^2_{n,m}` for a real-valued `n`.
pub fn delta_sq_at(rate: &RateSpec, n: f64, m: &ModelIndex) -> Result<f64> {
    Ok(rate.k * rate.complexity(n, m)? / n)
}

/// Model-index prior and within-model prior together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoStepPrior {
    pub rate: RateSpec,
    /// Truncation of each lattice coordinate.
    pub m_max: Vec<usize>,
    #[serde(default)]
    pub g: BaseDensity,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// When set, levels and coordinates take values on this grid instead of
    /// following `g` continuously.
    #[serde(default)]
    pub level_grid: Option<LevelGrid>,
}

fn default_temperature() -> f64 {
    2.0
}

/// Flat JSON form of a prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub app: App,
    #[serde(rename = "K", default = "one")]
    pub k: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub m_max: Option<Vec<usize>>,
    #[serde(default)]
    pub g: BaseDensity,
    #[serde(default)]
    pub d: usize,
    #[serde(default)]
    pub m1: usize,
    #[serde(default)]
    pub m2: usize,
    #[serde(default)]
    pub p: usize,
    #[serde(default)]
    pub level_grid: Option<LevelGrid>,
}

impl PriorConfig {
    /// Build the prior for design size `n`, filling in default truncations.
    pub fn build(&self, n: usize) -> Result<TwoStepPrior> {
        let rate = RateSpec {
            app: self.app,
            k: self.k,
            d: self.d,
            m1: self.m1,
            m2: self.m2,
            p: self.p,
        };
        let m_max = self
            .m_max
            .clone()
            .unwrap_or_else(|| default_m_max(&rate, n));
        let prior = TwoStepPrior {
            rate,
            m_max,
            g: self.g,
            temperature: self.temperature,
            level_grid: self.level_grid.clone(),
        };
        prior.validate()?;
        Ok(prior)
    }
}

/// Default truncation: `n` pieces, `min(m1, m2)` ranks, `(p, n)` for the
/// partially linear lattice and `(p, p)` for covariance factors.
pub fn default_m_max(rate: &RateSpec, n: usize) -> Vec<usize> {
    match rate.app {
        App::Iso | App::Convex => vec![n.max(1)],
        App::Trace => vec![rate.m1.min(rate.m2).max(1)],
        App::PartialLinear => vec![rate.p.max(1), n.max(1)],
        App::CovFactor => vec![rate.p.max(1), rate.p.max(1)],
    }
}

impl TwoStepPrior {
    pub fn new(rate: RateSpec, m_max: Vec<usize>) -> Self {
        TwoStepPrior {
            rate,
            m_max,
            g: BaseDensity::default(),
            temperature: default_temperature(),
            level_grid: None,
        }
    }

    pub fn with_g(mut self, g: BaseDensity) -> Self {
        self.g = g;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_grid(mut self, grid: LevelGrid) -> Self {
        self.level_grid = Some(grid);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.rate.validate()?;
        self.g.validate()?;
        if self.m_max.len() != self.rate.app.lattice_dim() || self.m_max.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig(format!(
                "m_max {:?} must have {} positive entries",
                self.m_max,
                self.rate.app.lattice_dim()
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        if let Some(grid) = &self.level_grid {
            grid.log_probs(&self.g)?;
        }
        Ok(())
    }

    /// Every index of the truncated lattice, in lexicographic order.
    pub fn indices(&self) -> Vec<ModelIndex> {
        let mut out = vec![Vec::new()];
        for &hi in &self.m_max {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    (1..=hi).map(move |c| {
                        let mut v = prefix.clone();
                        v.push(c);
                        v
                    })
                })
                .collect();
        }
        out.into_iter().map(ModelIndex).collect()
    }

    pub fn contains(&self, m: &ModelIndex) -> bool {
        m.dim() == self.m_max.len()
            && m.0.iter().zip(&self.m_max).all(|(&c, &hi)| c >= 1 && c <= hi)
    }
}

/// Normalized model weights over the truncated lattice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightTable {
    pub n: usize,
    pub indices: Vec<ModelIndex>,
    /// `n delta^2_{n,m}` per index.
    pub n_delta_sq: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightTable {
    pub fn log_weight(&self, m: &ModelIndex) -> f64 {
        self.position(m)
            .map_or(f64::NEG_INFINITY, |i| self.log_weights[i])
    }

    pub fn position(&self, m: &ModelIndex) -> Option<usize> {
        self.indices.iter().position(|x| x == m)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let dim = self.indices.first().map_or(1, |m| m.dim());
        let cols: Vec<String> = (1..=dim).map(|c| format!("m{c}")).collect();
        writeln!(f, "{},n_delta_sq,log_weight,weight", cols.join(","))?;
        for i in 0..self.indices.len() {
            let idx: Vec<String> = self.indices[i].0.iter().map(|c| c.to_string()).collect();
            writeln!(
                f,
                "{},{:.17e},{:.17e},{:.17e}",
                idx.join(","),
                self.n_delta_sq[i],
                self.log_weights[i],
                self.weights[i]
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Weights `lambda_{n,m} ∝ exp(-temperature n delta^2_{n,m})`, normalized in the log domain.
pub fn model_weights(prior: &TwoStepPrior, n: usize) -> Result<WeightTable> {
    prior.validate()?;
    let indices = prior.indices();
    let n_delta_sq = indices
        .iter()
        .map(|m| Ok(n as f64 * delta_sq(&prior.rate, n, m)?))
        .collect::<Result<Vec<f64>>>()?;
    let raw: Vec<f64> = n_delta_sq.iter().map(|x| -prior.temperature * x).collect();
    let z = log_sum_exp(&raw);
    let log_weights: Vec<f64> = raw.iter().map(|x| x - z).collect();
    let weights = log_weights.iter().map(|x| x.exp()).collect();
    Ok(WeightTable {
        n,
        indices,
        n_delta_sq,
        log_weights,
        weights,
    })
}

/// Weights from explicit `n delta^2` values, for tables not tied to a rate function.
pub fn weights_from_n_delta_sq(n_delta_sq: &[f64], temperature: f64) -> Vec<f64> {
    let raw: Vec<f64> = n_delta_sq.iter().map(|x| -temperature * x).collect();
    crate::numeric::softmax(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ::approx::assert_relative_eq;

    #[test]
    fn iso_rate_value() {
        let v = delta_sq(&RateSpec::iso(1.0), 100, &ModelIndex::one(2)).unwrap();
        assert_relative_eq!(v, 2.0 * (100.0 * std::f64::consts::E).ln() / 100.0, epsilon = 1e-15);
        assert_relative_eq!(v, 0.112_103_403_719_761_8, epsilon = 1e-12);
    }

    #[test]
    fn convex_rate_value() {
        let e = std::f64::consts::E;
        let v = delta_sq_at(&RateSpec::convex(1.0, 2), e, &ModelIndex::one(1)).unwrap();
        assert_relative_eq!(v, 2.0 * 3f64.ln() / e, epsilon = 1e-15);
    }

    #[test]
    fn rates_are_strictly_increasing() {
        let specs = [
            RateSpec::iso(1.0),
            RateSpec::convex(0.5, 3),
            RateSpec::trace(1.0, 4, 6),
            RateSpec::partial_linear(1.0, 10),
            RateSpec::cov_factor(1.0, 8),
        ];
        for r in specs {
            for m in 1..20 {
                let idx = |a: usize| {
                    if r.app.lattice_dim() == 1 {
                        vec![ModelIndex::one(a)]
                    } else {
                        vec![ModelIndex::pair(a, 3), ModelIndex::pair(3, a)]
                    }
                };
                for (lo, hi) in idx(m).iter().zip(idx(m + 1).iter()) {
                    assert!(delta_sq(&r, 50, lo).unwrap() < delta_sq(&r, 50, hi).unwrap());
                }
            }
            let base = ModelIndex(vec![1; r.app.lattice_dim()]);
            assert!(50.0 * delta_sq(&RateSpec { k: 1.0, ..r }, 50, &base).unwrap() >= 1.0);
        }
    }

    #[test]
    fn zero_index_is_rejected() {
        assert!(matches!(
            delta_sq(&RateSpec::iso(1.0), 10, &ModelIndex::one(0)),
            Err(Error::IndexOutOfRange(_))
        ));
    }

    #[test]
    fn two_model_weights() {
        let w = weights_from_n_delta_sq(&[1.0, 2.0], 2.0);
        assert_relative_eq!(w[0], 0.880_797_077_977_882_3, epsilon = 1e-12);
        assert_relative_eq!(w[1], 0.119_202_922_022_117_7, epsilon = 1e-12);
    }

    #[test]
    fn weights_are_normalized() {
        let prior = TwoStepPrior::new(RateSpec::partial_linear(1.0, 5), vec![5, 30]);
        let t = model_weights(&prior, 30).unwrap();
        assert_eq!(t.indices.len(), 150);
        assert_relative_eq!(t.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        let single = TwoStepPrior::new(RateSpec::iso(1.0), vec![1]);
        assert_eq!(model_weights(&single, 10).unwrap().weights, vec![1.0]);
    }

    #[test]
    fn config_round_trip_and_strictness() {
        let json = r#"{"app":"Iso","K":0.5,"temperature":2.0,"g":{"family":"Cauchy","scale":1.0}}"#;
        let cfg: PriorConfig = serde_json::from_str(json).unwrap();
        let prior = cfg.build(40).unwrap();
        assert_eq!(prior.m_max, vec![40]);
        assert!(serde_json::from_str::<PriorConfig>(r#"{"app":"Iso","bogus":1}"#).is_err());
    }
}
