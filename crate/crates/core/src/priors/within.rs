//! Within-model priors for the four regression applications.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample as sample_indices;

use super::{App, TwoStepPrior};
use crate::error::{Error, Result};
use crate::numeric::{ln_choose, ln_factorial};
use crate::params::{FactorMatrix, MaxAffine, ModelIndex, ParameterPoint, Plane, SparsePlusStep, StepFunction};
use crate::rng::{stream, Purpose, Rng};

/// Law of one level or coordinate: `g` itself or its restriction to a grid.
#[derive(Debug, Clone)]
pub enum LevelLaw {
    Continuous(super::BaseDensity),
    Grid {
        values: Vec<f64>,
        log_q: Vec<f64>,
        sampler: WeightedIndex<f64>,
    },
}

impl LevelLaw {
    pub fn from_prior(prior: &TwoStepPrior) -> Result<Self> {
        match &prior.level_grid {
            None => Ok(LevelLaw::Continuous(prior.g)),
            Some(grid) => {
                let log_q = grid.log_probs(&prior.g)?;
                let sampler = WeightedIndex::new(log_q.iter().map(|l| l.exp()))
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?;
                Ok(LevelLaw::Grid {
                    values: grid.values.clone(),
                    log_q,
                    sampler,
                })
            }
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        match self {
            LevelLaw::Continuous(g) => g.log_pdf(x),
            LevelLaw::Grid { values, log_q, .. } => values
                .binary_search_by(|v| v.total_cmp(&x))
                .map_or(f64::NEG_INFINITY, |i| log_q[i]),
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            LevelLaw::Continuous(g) => g.sample(rng),
            LevelLaw::Grid {
                values, sampler, ..
            } => values[sampler.sample(rng)],
        }
    }

    /// Density of the order statistics of `levels.len()` i.i.d. draws.
    pub fn sorted_log_density(&self, levels: &[f64]) -> f64 {
        if levels.windows(2).any(|w| w[0] > w[1]) {
            return f64::NEG_INFINITY;
        }
        let m = levels.len() as u64;
        let base: f64 = levels.iter().map(|&x| self.log_density(x)).sum();
        match self {
            LevelLaw::Continuous(_) => ln_factorial(m) + base,
            LevelLaw::Grid { .. } => {
                // Multinomial coefficient m! / prod(mult!) over runs of ties.
                let mut ties = 0.0;
                let mut run = 1u64;
                for w in levels.windows(2) {
                    if w[0] == w[1] {
                        run += 1;
                    } else {
                        ties += ln_factorial(run);
                        run = 1;
                    }
                }
                ties += ln_factorial(run);
                ln_factorial(m) - ties + base
            }
        }
    }

    pub fn sample_sorted(&self, m: usize, rng: &mut Rng) -> Vec<f64> {
        let mut v: Vec<f64> = (0..m).map(|_| self.sample(rng)).collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }
}

/// Log density of one level or coordinate under the prior.
pub fn level_log_density(prior: &TwoStepPrior, x: f64) -> Result<f64> {
    Ok(LevelLaw::from_prior(prior)?.log_density(x))
}

/// Log density of a nondecreasing level vector (`-inf` if unsorted).
pub fn sorted_levels_log_density(prior: &TwoStepPrior, levels: &[f64]) -> Result<f64> {
    Ok(LevelLaw::from_prior(prior)?.sorted_log_density(levels))
}

/// Draw from the within-model prior of `m`, using the prior stream of `seed`.
/// `n` is the design size.
pub fn sample_within_model(
    prior: &TwoStepPrior,
    m: &ModelIndex,
    n: usize,
    seed: u64,
) -> Result<ParameterPoint> {
    let mut rng = stream(seed, Purpose::Prior);
    sample_within_model_with(prior, m, n, &mut rng)
}

pub fn sample_within_model_with(
    prior: &TwoStepPrior,
    m: &ModelIndex,
    n: usize,
    rng: &mut Rng,
) -> Result<ParameterPoint> {
    if m.dim() != prior.rate.app.lattice_dim() || m.0.iter().any(|&c| c == 0) {
        return Err(Error::IndexOutOfRange(format!("{m}")));
    }
    let law = LevelLaw::from_prior(prior)?;
    let r = &prior.rate;
    Ok(match r.app {
        App::Iso => ParameterPoint::StepFunction(sample_step(&law, m.0[0], n, rng)?),
        App::Convex => ParameterPoint::MaxAffine(MaxAffine {
            planes: (0..m.0[0])
                .map(|_| Plane {
                    slope: (0..r.d).map(|_| law.sample(rng)).collect(),
                    intercept: law.sample(rng),
                })
                .collect(),
        }),
        App::Trace => {
            let rank = m.0[0];
            let mut u = Vec::with_capacity(rank);
            let mut v = Vec::with_capacity(rank);
            for _ in 0..rank {
                u.push((0..r.m1).map(|_| law.sample(rng)).collect());
                v.push((0..r.m2).map(|_| law.sample(rng)).collect());
            }
            ParameterPoint::FactorMatrix(FactorMatrix {
                rows: r.m1,
                cols: r.m2,
                u,
                v,
            })
        }
        App::PartialLinear => {
            let (s, pieces) = (m.0[0], m.0[1]);
            if s > r.p {
                return Err(Error::SupportTooLarge { s, p: r.p });
            }
            let mut support = sample_indices(rng, r.p, s).into_vec();
            support.sort_unstable();
            let beta = (0..s).map(|_| law.sample(rng)).collect();
            ParameterPoint::SparsePlusStep(SparsePlusStep {
                p: r.p,
                support,
                beta,
                step: sample_step(&law, pieces, n, rng)?,
            })
        }
        App::CovFactor => {
            return Err(Error::InvalidConfig(
                "covariance factor models ship a rate function only".into(),
            ))
        }
    })
}

fn sample_step(law: &LevelLaw, m: usize, n: usize, rng: &mut Rng) -> Result<StepFunction> {
    if m > n {
        return Err(Error::TooManyPieces { m, n });
    }
    let mut change_indices = sample_indices(rng, n, m).into_vec();
    change_indices.sort_unstable();
    Ok(StepFunction {
        change_indices,
        levels: law.sample_sorted(m, rng),
    })
}

/// Exact log density of `point` under the within-model prior of its model.
/// Structurally invalid points and ordering violations give `-inf`.
pub fn within_model_log_density(prior: &TwoStepPrior, n: usize, point: &ParameterPoint) -> f64 {
    let Ok(law) = LevelLaw::from_prior(prior) else {
        return f64::NEG_INFINITY;
    };
    within_model_log_density_law(prior, &law, n, point)
}

pub(crate) fn within_model_log_density_law(
    prior: &TwoStepPrior,
    law: &LevelLaw,
    n: usize,
    point: &ParameterPoint,
) -> f64 {
    let r = &prior.rate;
    match (r.app, point) {
        (App::Iso, ParameterPoint::StepFunction(s)) => step_log_density(law, s, n),
        (App::Convex, ParameterPoint::MaxAffine(ma)) => {
            if ma.planes.is_empty() || ma.planes.iter().any(|p| p.slope.len() != r.d) {
                return f64::NEG_INFINITY;
            }
            ma.planes
                .iter()
                .map(|p| {
                    p.slope.iter().map(|&a| law.log_density(a)).sum::<f64>()
                        + law.log_density(p.intercept)
                })
                .sum()
        }
        (App::Trace, ParameterPoint::FactorMatrix(fm)) => {
            if fm.u.is_empty() || fm.rows != r.m1 || fm.cols != r.m2 || fm.validate().is_err() {
                return f64::NEG_INFINITY;
            }
            fm.u
                .iter()
                .chain(&fm.v)
                .flatten()
                .map(|&x| law.log_density(x))
                .sum()
        }
        (App::PartialLinear, ParameterPoint::SparsePlusStep(sp)) => {
            let s = sp.support.len();
            if sp.p != r.p
                || s == 0
                || s > r.p
                || sp.beta.len() != s
                || sp.support.windows(2).any(|w| w[0] >= w[1])
                || sp.support[s - 1] >= r.p
            {
                return f64::NEG_INFINITY;
            }
            -ln_choose(r.p as u64, s as u64)
                + sp.beta.iter().map(|&b| law.log_density(b)).sum::<f64>()
                + step_log_density(law, &sp.step, n)
        }
        _ => f64::NEG_INFINITY,
    }
}

fn step_log_density(law: &LevelLaw, s: &StepFunction, n: usize) -> f64 {
    let m = s.levels.len();
    if m == 0
        || m != s.change_indices.len()
        || m > n
        || s.change_indices.windows(2).any(|w| w[0] >= w[1])
        || s.change_indices[m - 1] >= n
    {
        return f64::NEG_INFINITY;
    }
    -ln_choose(n as u64, m as u64) + law.sorted_log_density(&s.levels)
}

#[cfg(test)]
mod tests {
    use super::super::{BaseDensity, LevelGrid, RateSpec};
    use super::*;
    use approx::assert_relative_eq;

    fn iso_prior() -> TwoStepPrior {
        TwoStepPrior::new(RateSpec::iso(1.0), vec![10])
    }

    #[test]
    fn single_level_at_zero() {
        let p = iso_prior();
        let s = ParameterPoint::StepFunction(StepFunction::constant(0.0));
        let want = (1.0 / std::f64::consts::PI).ln() - 10f64.ln();
        assert_relative_eq!(within_model_log_density(&p, 10, &s), want, epsilon = 1e-13);
    }

    #[test]
    fn unsorted_levels_have_no_mass() {
        let s = ParameterPoint::StepFunction(StepFunction {
            change_indices: vec![0, 3],
            levels: vec![1.0, 0.0],
        });
        assert_eq!(within_model_log_density(&iso_prior(), 10, &s), f64::NEG_INFINITY);
    }

    #[test]
    fn full_subset_when_m_equals_n() {
        let p = iso_prior();
        match sample_within_model(&p, &ModelIndex::one(6), 6, 3).unwrap() {
            ParameterPoint::StepFunction(s) => {
                assert_eq!(s.change_indices, vec![0, 1, 2, 3, 4, 5]);
                assert!(s.is_sorted());
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            sample_within_model(&p, &ModelIndex::one(7), 6, 3),
            Err(Error::TooManyPieces { m: 7, n: 6 })
        ));
    }

    #[test]
    fn degenerate_grid_gives_ones_matrix() {
        let p = TwoStepPrior::new(RateSpec::trace(1.0, 3, 2), vec![2]).with_grid(LevelGrid {
            values: vec![1.0],
            weights: None,
        });
        match sample_within_model(&p, &ModelIndex::one(1), 0, 1).unwrap() {
            ParameterPoint::FactorMatrix(f) => {
                assert_eq!(f.matrix(), nalgebra::DMatrix::from_element(3, 2, 1.0))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn support_too_large() {
        let p = TwoStepPrior::new(RateSpec::partial_linear(1.0, 3), vec![3, 5]);
        assert!(matches!(
            sample_within_model(&p, &ModelIndex::pair(4, 1), 5, 0),
            Err(Error::SupportTooLarge { s: 4, p: 3 })
        ));
    }

    #[test]
    fn grid_sorted_density_sums_to_one() {
        // Sum of the sorted-vector pmf over all nondecreasing 3-tuples on a 3-point grid.
        let p = iso_prior().with_grid(LevelGrid {
            values: vec![-1.0, 0.5, 2.0],
            weights: None,
        });
        let law = LevelLaw::from_prior(&p).unwrap();
        let v = [-1.0, 0.5, 2.0];
        let mut total = 0.0;
        for a in 0..3 {
            for b in a..3 {
                for c in b..3 {
                    total += law.sorted_log_density(&[v[a], v[b], v[c]]).exp();
                }
            }
        }
        assert_relative_eq!(total, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn gaussian_prior_density_is_normalized_by_importance_sampling() {
        // Proposal: same construction with a wider Cauchy base; target: Gaussian base.
        let target = iso_prior().with_g(BaseDensity::gaussian(1.0));
        let proposal = iso_prior().with_g(BaseDensity::cauchy(2.0));
        let mut rng = stream(5, Purpose::MonteCarlo);
        let reps = 100_000;
        let w: Vec<f64> = (0..reps)
            .map(|_| {
                let x = sample_within_model_with(&proposal, &ModelIndex::one(2), 10, &mut rng)
                    .unwrap();
                (within_model_log_density(&target, 10, &x)
                    - within_model_log_density(&proposal, 10, &x))
                .exp()
            })
            .collect();
        let m = crate::numeric::mean(&w);
        let se = (crate::numeric::variance(&w) / reps as f64).sqrt();
        assert!((m - 1.0).abs() < 3.0 * se, "mean {m} se {se}");
    }
}
