use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::experiments::{log_likelihood, Dataset, Design, ExperimentKind, ExperimentSpec};
use crate::experiments::regression_loglik;
use crate::params::{ModelIndex, ParameterPoint, StepFunction};
use crate::priors::{model_weights, within_model_log_density, App, LevelLaw, TwoStepPrior};
use crate::priors::within_model_log_density_law;

/// Unnormalized log posterior `log lambda_m + log pi_m(theta) + log L(theta)`
/// on the truncated lattice, restricted to parameters satisfying the
/// experiment's constraints.
pub(crate) struct Target<'a> {
    pub exp: &'a ExperimentSpec,
    pub data: &'a Dataset,
    pub prior: &'a TwoStepPrior,
    pub law: LevelLaw,
    pub app: App,
    pub y: Vec<f64>,
    pub n: usize,
    /// Largest reachable value of each lattice coordinate.
    pub caps: Vec<usize>,
    pub prior_only: bool,
    log_weights: HashMap<ModelIndex, f64>,
    /// Prefix sums of `y` and `y^2` for the iso fast path.
    prefix: Option<(Vec<f64>, Vec<f64>)>,
    bounds: (f64, f64),
}

impl<'a> Target<'a> {
    pub fn new(
        exp: &'a ExperimentSpec,
        data: &'a Dataset,
        prior: &'a TwoStepPrior,
        prior_only: bool,
    ) -> Result<Self> {
        prior.validate()?;
        if !exp.kind.is_regression() {
            return Err(Error::KindMismatch {
                expected: "regression experiment".into(),
                found: exp.kind.to_string(),
            });
        }
        if data.kind != exp.kind {
            return Err(Error::KindMismatch {
                expected: exp.kind.to_string(),
                found: data.kind.to_string(),
            });
        }
        let app = prior.rate.app;
        let design_ok = matches!(
            (app, &exp.design),
            (App::Iso, Design::Index { .. })
                | (App::Convex, Design::Points { .. })
                | (App::Trace, Design::Matrices { .. })
                | (App::PartialLinear, Design::PartialLinear { .. })
        );
        if !design_ok {
            return Err(Error::KindMismatch {
                expected: format!("design for {app:?}"),
                found: format!("{:?}", exp.design).chars().take(60).collect(),
            });
        }
        let y = data.scalars()?.to_vec();
        let n = exp.design.len().unwrap_or(0);
        if n == 0 || y.len() != n {
            return Err(Error::LengthMismatch { left: y.len(), right: n });
        }
        let r = &prior.rate;
        let caps = match app {
            App::Iso => vec![prior.m_max[0].min(n)],
            App::Convex => vec![prior.m_max[0]],
            App::Trace => vec![prior.m_max[0].min(r.m1.min(r.m2))],
            App::PartialLinear => {
                if let Design::PartialLinear { p, .. } = &exp.design {
                    if *p != r.p {
                        return Err(Error::InvalidConfig(format!(
                            "prior p = {} differs from design p = {p}",
                            r.p
                        )));
                    }
                }
                vec![prior.m_max[0].min(r.p), prior.m_max[1].min(n)]
            }
            App::CovFactor => {
                return Err(Error::InvalidConfig(
                    "no sampler for covariance factor models".into(),
                ))
            }
        };
        if app == App::Convex {
            if let Design::Points { points } = &exp.design {
                if points.iter().any(|x| x.len() != r.d) {
                    return Err(Error::InvalidConfig("design points must have dimension d".into()));
                }
            }
        }
        if app == App::Trace {
            if let Design::Matrices { rows, cols, .. } = &exp.design {
                if (*rows, *cols) != (r.m1, r.m2) {
                    return Err(Error::InvalidConfig("design matrices must be m1 x m2".into()));
                }
            }
        }
        let table = model_weights(prior, n)?;
        let log_weights = table
            .indices
            .into_iter()
            .zip(table.log_weights)
            .collect();
        let prefix = (app == App::Iso).then(|| {
            let mut p1 = vec![0.0; n + 1];
            let mut p2 = vec![0.0; n + 1];
            for i in 0..n {
                p1[i + 1] = p1[i] + y[i];
                p2[i + 1] = p2[i] + y[i] * y[i];
            }
            (p1, p2)
        });
        let c = &exp.constraints;
        let bounds = match exp.kind {
            ExperimentKind::BinaryReg => (c.eta, 1.0 - c.eta),
            ExperimentKind::PoissonReg => (1.0 / c.m_bound, c.m_bound),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        };
        Ok(Target {
            exp,
            data,
            prior,
            law: LevelLaw::from_prior(prior)?,
            app,
            y,
            n,
            caps,
            prior_only,
            log_weights,
            prefix,
            bounds,
        })
    }

    pub fn log_weight(&self, m: &ModelIndex) -> f64 {
        self.log_weights.get(m).copied().unwrap_or(f64::NEG_INFINITY)
    }

    pub fn within(&self, m: &ModelIndex) -> bool {
        m.dim() == self.caps.len() && m.0.iter().zip(&self.caps).all(|(&c, &hi)| c >= 1 && c <= hi)
    }

    pub fn log_prior(&self, p: &ParameterPoint) -> f64 {
        let Some(m) = p.model_index() else {
            return f64::NEG_INFINITY;
        };
        if !self.within(&m) {
            return f64::NEG_INFINITY;
        }
        self.log_weight(&m) + within_model_log_density_law(self.prior, &self.law, self.n, p)
    }

    pub fn log_lik(&self, p: &ParameterPoint) -> f64 {
        if self.prior_only {
            return 0.0;
        }
        if let (Some((p1, p2)), ParameterPoint::StepFunction(s)) = (&self.prefix, p) {
            return self.iso_loglik(s, p1, p2);
        }
        match self.exp.signal(p) {
            Ok(theta) => {
                if theta.iter().any(|&t| !(t >= self.bounds.0 && t <= self.bounds.1)) {
                    return f64::NEG_INFINITY;
                }
                regression_loglik(self.exp.kind, &theta, &self.y).unwrap_or(f64::NEG_INFINITY)
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn iso_loglik(&self, s: &StepFunction, p1: &[f64], p2: &[f64]) -> f64 {
        if s.validate(self.n).is_err() {
            return f64::NEG_INFINITY;
        }
        let mut total = 0.0;
        for ((a, b), &mu) in s.blocks(self.n).into_iter().zip(&s.levels) {
            if !(mu >= self.bounds.0 && mu <= self.bounds.1) {
                return f64::NEG_INFINITY;
            }
            let cnt = (b - a) as f64;
            let s1 = p1[b] - p1[a];
            total += match self.exp.kind {
                ExperimentKind::GaussianReg => {
                    let ybar = s1 / cnt;
                    let within = (p2[b] - p2[a] - s1 * ybar).max(0.0);
                    -0.5 * (within + cnt * (mu - ybar) * (mu - ybar))
                }
                ExperimentKind::BinaryReg => s1 * mu.ln() + (cnt - s1) * (-mu).ln_1p(),
                _ => s1 * mu.ln() - cnt * mu,
            };
        }
        total
    }

    pub fn log_post(&self, p: &ParameterPoint) -> f64 {
        let lp = self.log_prior(p);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let v = lp + self.log_lik(p);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    /// Log posterior computed through the generic experiment and prior code,
    /// used to audit the sampler's own evaluation.
    pub fn log_post_reference(&self, p: &ParameterPoint) -> f64 {
        let Some(m) = p.model_index() else {
            return f64::NEG_INFINITY;
        };
        if !self.within(&m) || self.exp.validate(p).is_err() {
            return f64::NEG_INFINITY;
        }
        let table_weight = self.log_weight(&m);
        let prior = table_weight + within_model_log_density(self.prior, self.n, p);
        if prior == f64::NEG_INFINITY {
            return prior;
        }
        if self.prior_only {
            return prior;
        }
        log_likelihood(self.exp, p, self.data).map_or(f64::NEG_INFINITY, |l| prior + l)
    }

    /// Feasible signal range of the experiment.
    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }
}
