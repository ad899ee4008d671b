//! Second-step base densities `g` and their discretized counterparts.

use rand_distr::{Cauchy, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Cauchy,
    Gaussian,
    Laplace,
}

/// Symmetric density `g(x) = h(x / scale) / scale`, nonincreasing on `(0, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseDensity {
    pub family: Family,
    #[serde(default = "unit")]
    pub scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for BaseDensity {
    fn default() -> Self {
        BaseDensity::cauchy(1.0)
    }
}

impl BaseDensity {
    pub fn cauchy(scale: f64) -> Self {
        BaseDensity {
            family: Family::Cauchy,
            scale,
        }
    }

    pub fn gaussian(scale: f64) -> Self {
        BaseDensity {
            family: Family::Gaussian,
            scale,
        }
    }

    pub fn laplace(scale: f64) -> Self {
        BaseDensity {
            family: Family::Laplace,
            scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.is_finite() && self.scale > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "base density scale must be positive, got {}",
                self.scale
            )))
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let s = self.scale;
        let z = x / s;
        match self.family {
            Family::Cauchy => -(std::f64::consts::PI * s).ln() - z.mul_add(z, 1.0).ln(),
            Family::Gaussian => -0.5 * z * z - s.ln() - crate::numeric::LN_SQRT_2PI,
            Family::Laplace => -z.abs() - (2.0 * s).ln(),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = x / self.scale;
        match self.family {
            Family::Cauchy => 0.5 + z.atan() / std::f64::consts::PI,
            Family::Gaussian => 0.5 * erfc(-z / std::f64::consts::SQRT_2),
            Family::Laplace => {
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> f64 {
        let s = self.scale;
        match self.family {
            Family::Cauchy => Cauchy::new(0.0, s).expect("positive scale").sample(rng),
            Family::Gaussian => s * rng.sample::<f64, _>(StandardNormal),
            Family::Laplace => {
                let e: f64 = rng.sample(Exp1);
                if rng.random::<bool>() {
                    s * e
                } else {
                    -s * e
                }
            }
        }
    }
}

/// Outcome of the tail check `liminf x^alpha g(x) > 0` on a probe grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeavyTailReport {
    pub alpha: f64,
    pub probes: Vec<f64>,
    pub values: Vec<f64>,
    pub pass: bool,
}

pub const TAIL_PROBES: [f64; 4] = [1e1, 1e2, 1e3, 1e4];

/// Evaluate `x^alpha g(x)` at the probes. The check passes when every value
/// is positive and the value at the largest probe retains at least half of
/// the largest value seen, so the product is not decaying to zero.
pub fn heavy_tail_check(g: &BaseDensity, alpha: f64, probes: &[f64]) -> HeavyTailReport {
    let values: Vec<f64> = probes
        .iter()
        .map(|&x| (alpha * x.ln() + g.log_pdf(x)).exp())
        .collect();
    let max = values.iter().copied().fold(0.0, f64::max);
    let last = values.last().copied().unwrap_or(0.0);
    let pass = !values.is_empty() && values.iter().all(|&v| v > 0.0) && last >= 0.5 * max;
    HeavyTailReport {
        alpha,
        probes: probes.to_vec(),
        values,
        pass,
    }
}

/// Finite support for levels and coordinates, used by exact enumeration.
/// Probabilities are proportional to `g` at the grid values unless explicit
/// weights are supplied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelGrid {
    pub values: Vec<f64>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

impl LevelGrid {
    /// Log-probabilities of the grid values.
    pub fn log_probs(&self, g: &BaseDensity) -> Result<Vec<f64>> {
        if self.values.is_empty() {
            return Err(Error::InsufficientGrid { needed: 1, got: 0 });
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "level grid must be strictly increasing".into(),
            ));
        }
        let raw: Vec<f64> = match &self.weights {
            Some(w) => {
                if w.len() != self.values.len() {
                    return Err(Error::LengthMismatch {
                        left: w.len(),
                        right: self.values.len(),
                    });
                }
                if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                    return Err(Error::InvalidConfig("grid weights must be nonnegative".into()));
                }
                w.iter().map(|x| x.ln()).collect()
            }
            None => self.values.iter().map(|&v| g.log_pdf(v)).collect(),
        };
        let z = crate::numeric::log_sum_exp(&raw);
        Ok(raw.into_iter().map(|x| x - z).collect())
    }

    /// Position of `v` on the grid, if it is a grid value.
    pub fn position(&self, v: f64) -> Option<usize> {
        self.values.binary_search_by(|x| x.total_cmp(&v)).ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{ks_statistic, trapezoid};
    use crate::rng::{stream, Purpose};
    use approx::assert_relative_eq;

    #[test]
    fn cauchy_at_zero() {
        assert_relative_eq!(
            BaseDensity::cauchy(1.0).log_pdf(0.0),
            (1.0 / std::f64::consts::PI).ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn densities_integrate_to_one() {
        for g in [
            BaseDensity::gaussian(0.7),
            BaseDensity::laplace(1.3),
            BaseDensity::cauchy(0.5),
        ] {
            let h = 1e-3;
            let v: Vec<f64> = (0..40_001).map(|i| g.pdf(-20.0 + i as f64 * h)).collect();
            let want = g.cdf(20.0) - g.cdf(-20.0);
            assert_relative_eq!(trapezoid(&v, h), want, epsilon = 1e-6);
        }
    }

    #[test]
    fn samplers_match_cdfs() {
        for g in [
            BaseDensity::gaussian(2.0),
            BaseDensity::laplace(1.0),
            BaseDensity::cauchy(1.0),
        ] {
            let mut rng = stream(11, Purpose::Prior);
            let xs: Vec<f64> = (0..20_000).map(|_| g.sample(&mut rng)).collect();
            assert!(ks_statistic(&xs, |x| g.cdf(x)) < 1.63 / (20_000f64).sqrt());
        }
    }

    #[test]
    fn tail_check_separates_families() {
        assert!(heavy_tail_check(&BaseDensity::cauchy(1.0), 2.0, &TAIL_PROBES).pass);
        assert!(!heavy_tail_check(&BaseDensity::gaussian(1.0), 2.0, &TAIL_PROBES).pass);
        assert!(!heavy_tail_check(&BaseDensity::laplace(1.0), 2.0, &TAIL_PROBES).pass);
        let r = heavy_tail_check(&BaseDensity::cauchy(1.0), 2.0, &TAIL_PROBES);
        assert_relative_eq!(r.values[3], 1.0 / std::f64::consts::PI, epsilon = 1e-8);
    }

    #[test]
    fn grid_probabilities_follow_g() {
        let grid = LevelGrid {
            values: vec![-1.0, 0.0, 1.0],
            weights: None,
        };
        let lp = grid.log_probs(&BaseDensity::cauchy(1.0)).unwrap();
        // Cauchy: g(0) = 2 g(1).
        assert_relative_eq!(lp[1] - lp[2], 2f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(crate::numeric::log_sum_exp(&lp), 0.0, epsilon = 1e-14);
    }
}
