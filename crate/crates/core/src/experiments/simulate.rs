use nalgebra::{Cholesky, DVector};
use rand::Rng as _;
use rand_distr::{Bernoulli, Distribution, Poisson, StandardNormal};

use super::{toeplitz_cov, Dataset, ExperimentKind, ExperimentSpec, Observations, TiltDensity};
use crate::error::{Error, Result};
use crate::params::ParameterPoint;
use crate::rng::{stream, Purpose, Rng};

/// Steps discarded before an autoregressive path is recorded.
pub const AR_BURN_IN: usize = 1000;

/// Draw a sample of size `n` from `P_{f0}` using the data stream of `seed`.
pub fn sample_data(exp: &ExperimentSpec, f0: &ParameterPoint, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = stream(seed, Purpose::Data);
    sample_data_with(exp, f0, n, seed, &mut rng)
}

/// Like [`sample_data`] but drawing from a caller-supplied stream. `seed` is
/// only recorded in the dataset.
pub fn sample_data_with(
    exp: &ExperimentSpec,
    f0: &ParameterPoint,
    n: usize,
    seed: u64,
    rng: &mut Rng,
) -> Result<Dataset> {
    exp.validate(f0)?;
    let normal = |rng: &mut Rng| -> f64 { rng.sample(StandardNormal) };
    let obs = match exp.kind {
        ExperimentKind::GaussianReg | ExperimentKind::BinaryReg | ExperimentKind::PoissonReg => {
            let theta = exp.signal(f0)?;
            if theta.len() != n {
                return Err(Error::LengthMismatch {
                    left: theta.len(),
                    right: n,
                });
            }
            let y = theta
                .iter()
                .map(|&t| match exp.kind {
                    ExperimentKind::GaussianReg => Ok(t + normal(rng)),
                    ExperimentKind::BinaryReg => {
                        let b = Bernoulli::new(t).map_err(|e| Error::DomainError(e.to_string()))?;
                        Ok(if b.sample(rng) { 1.0 } else { 0.0 })
                    }
                    _ => {
                        let p = Poisson::new(t).map_err(|e| Error::DomainError(e.to_string()))?;
                        Ok(p.sample(rng))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            Observations::Scalar(y)
        }
        ExperimentKind::DensityEst => {
            let d = TiltDensity::new(grid(f0))?;
            Observations::Scalar((0..n).map(|_| d.sample(rng)).collect())
        }
        ExperimentKind::GaussAutoReg => {
            let f = grid(f0);
            let mut x = 0.0;
            for _ in 0..AR_BURN_IN {
                x = f.at(x) + normal(rng);
            }
            let mut path = Vec::with_capacity(n + 1);
            path.push(x);
            for _ in 0..n {
                x = f.at(x) + normal(rng);
                path.push(x);
            }
            Observations::Scalar(path)
        }
        ExperimentKind::GaussTimeSeries => {
            let t = toeplitz_cov(grid(f0), n)?;
            let chol = Cholesky::new(t)
                .ok_or_else(|| Error::FactorizationFailure("Toeplitz matrix".into()))?;
            let z = DVector::from_fn(n, |_, _| normal(rng));
            Observations::Scalar((chol.l() * z).iter().copied().collect())
        }
        ExperimentKind::CovarianceEst => {
            let s = f0.covariance_matrix().expect("validated covariance");
            let p = s.nrows();
            let chol = Cholesky::new(s)
                .ok_or_else(|| Error::FactorizationFailure("covariance".into()))?;
            let l = chol.l();
            Observations::Vectors(
                (0..n)
                    .map(|_| {
                        let z = DVector::from_fn(p, |_, _| normal(rng));
                        (&l * z).iter().copied().collect()
                    })
                    .collect(),
            )
        }
    };
    Ok(Dataset::new(exp.kind, seed, obs))
}

fn grid(f: &ParameterPoint) -> &crate::params::GridFunction {
    match f {
        ParameterPoint::GridFunction(g) => g,
        _ => unreachable!("validated grid parameter"),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{kl_divergence, log_likelihood_ratio, Design};
    use super::*;
    use crate::numeric::{mean, variance};
    use crate::params::GridFunction;
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    #[test]
    fn sampling_is_reproducible() {
        let e = ExperimentSpec::regression(ExperimentKind::PoissonReg, 50);
        let f = ParameterPoint::signal(vec![2.0; 50]);
        assert_eq!(sample_data(&e, &f, 50, 9).unwrap(), sample_data(&e, &f, 50, 9).unwrap());
        assert_ne!(sample_data(&e, &f, 50, 9).unwrap(), sample_data(&e, &f, 50, 10).unwrap());
    }

    #[test]
    fn poisson_moments() {
        let n = 20_000;
        let e = ExperimentSpec::regression(ExperimentKind::PoissonReg, n);
        let d = sample_data(&e, &ParameterPoint::signal(vec![3.0; n]), n, 1).unwrap();
        let y = d.scalars().unwrap();
        assert!((mean(y) - 3.0).abs() < 0.06);
        assert!((variance(y) - 3.0).abs() < 0.15);
    }

    #[test]
    fn infeasible_truth_is_rejected() {
        let e = ExperimentSpec::regression(ExperimentKind::BinaryReg, 1);
        assert!(sample_data(&e, &ParameterPoint::signal(vec![1.0]), 1, 0).is_err());
    }

    #[test]
    fn white_noise_series_has_variance_two_pi() {
        let e = ExperimentSpec::new(ExperimentKind::GaussTimeSeries, Design::None);
        let g = ParameterPoint::GridFunction(GridFunction::constant(0.0, PI, 257, 0.0));
        let d = sample_data(&e, &g, 400, 5).unwrap();
        let v = d.scalars().unwrap().iter().map(|x| x * x).sum::<f64>() / 400.0;
        assert!((v / (2.0 * PI) - 1.0).abs() < 0.25);
    }

    #[test]
    fn mean_llr_matches_kl_for_covariance() {
        let e = ExperimentSpec::new(ExperimentKind::CovarianceEst, Design::None);
        let s0 = ParameterPoint::covariance(&DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let s1 = ParameterPoint::covariance(&DMatrix::identity(2, 2));
        let kl = kl_divergence(&e, &s0, &s1, 10).unwrap();
        let reps = 4000;
        let llrs: Vec<f64> = (0..reps)
            .map(|r| {
                let d = sample_data(&e, &s0, 10, r).unwrap();
                log_likelihood_ratio(&e, &s0, &s1, &d).unwrap()
            })
            .collect();
        let se = (variance(&llrs) / reps as f64).sqrt();
        assert!((mean(&llrs) - kl).abs() < 4.0 * se);
    }
}
