use nalgebra::{Cholesky, DMatrix, DVector};

use super::{Dataset, ExperimentKind, ExperimentSpec, Observations, TiltDensity};
use crate::error::{Error, Result};
use crate::params::{GridFunction, ParameterPoint};

/// Log-likelihood of `f` on `data`, up to terms that do not depend on `f`.
pub fn log_likelihood(exp: &ExperimentSpec, f: &ParameterPoint, data: &Dataset) -> Result<f64> {
    if data.kind != exp.kind {
        return Err(Error::KindMismatch {
            expected: exp.kind.to_string(),
            found: data.kind.to_string(),
        });
    }
    match exp.kind {
        ExperimentKind::GaussianReg | ExperimentKind::BinaryReg | ExperimentKind::PoissonReg => {
            let theta = exp.signal(f)?;
            regression_loglik(exp.kind, &theta, data.scalars()?)
        }
        ExperimentKind::DensityEst => {
            let g = grid(f)?;
            let d = TiltDensity::new(g)?;
            let xs = data.scalars()?;
            Ok(xs.iter().map(|&x| g.at(x)).sum::<f64>() - xs.len() as f64 * d.log_normalizer())
        }
        ExperimentKind::GaussAutoReg => {
            let g = grid(f)?;
            let xs = data.scalars()?;
            Ok(-0.5
                * xs.windows(2)
                    .map(|w| (w[1] - g.at(w[0])).powi(2))
                    .sum::<f64>())
        }
        ExperimentKind::GaussTimeSeries => {
            let g = grid(f)?;
            let xs = data.scalars()?;
            let t = super::toeplitz_cov(g, xs.len())?;
            gaussian_loglik(&t, std::iter::once(DVector::from_column_slice(xs)))
        }
        ExperimentKind::CovarianceEst => {
            let s = f.covariance_matrix().ok_or_else(|| Error::KindMismatch {
                expected: "covariance".into(),
                found: f.variant_name().into(),
            })?;
            let rows = match &data.obs {
                Observations::Vectors(v) => v,
                _ => return Err(Error::InvalidConfig("covariance data must be vectors".into())),
            };
            if rows.iter().any(|r| r.len() != s.nrows()) {
                return Err(Error::LengthMismatch {
                    left: rows.first().map_or(0, |r| r.len()),
                    right: s.nrows(),
                });
            }
            gaussian_loglik(&s, rows.iter().map(|r| DVector::from_column_slice(r)))
        }
    }
}

/// Regression log-likelihood for signal values `theta`.
pub(crate) fn regression_loglik(kind: ExperimentKind, theta: &[f64], y: &[f64]) -> Result<f64> {
    if theta.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: theta.len(),
            right: y.len(),
        });
    }
    let pairs = theta.iter().zip(y);
    Ok(match kind {
        ExperimentKind::GaussianReg => -0.5 * pairs.map(|(t, y)| (y - t) * (y - t)).sum::<f64>(),
        ExperimentKind::BinaryReg => pairs
            .map(|(&t, &y)| {
                let a = if y > 0.0 { y * t.ln() } else { 0.0 };
                let b = if y < 1.0 { (1.0 - y) * (-t).ln_1p() } else { 0.0 };
                a + b
            })
            .sum(),
        ExperimentKind::PoissonReg => pairs
            .map(|(&t, &y)| if y > 0.0 { y * t.ln() - t } else { -t })
            .sum(),
        other => {
            return Err(Error::KindMismatch {
                expected: "regression".into(),
                found: other.to_string(),
            })
        }
    })
}

/// `log p_{f0} - log p_{f1}` on `data`.
pub fn log_likelihood_ratio(
    exp: &ExperimentSpec,
    f0: &ParameterPoint,
    f1: &ParameterPoint,
    data: &Dataset,
) -> Result<f64> {
    Ok(log_likelihood(exp, f0, data)? - log_likelihood(exp, f1, data)?)
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

/// `sum_i -1/2 x_i^T S^{-1} x_i - 1/2 log det S` over the given vectors.
fn gaussian_loglik(s: &DMatrix<f64>, xs: impl Iterator<Item = DVector<f64>>) -> Result<f64> {
    let chol = Cholesky::new(s.clone())
        .ok_or_else(|| Error::FactorizationFailure("covariance is not positive definite".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut total = 0.0;
    for x in xs {
        let z = chol.l().solve_lower_triangular(&x).ok_or_else(|| {
            Error::FactorizationFailure("triangular solve failed".into())
        })?;
        total += -0.5 * z.norm_squared() - 0.5 * log_det;
    }
    Ok(total)
}

pub(crate) fn log_det_spd(s: &DMatrix<f64>) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    let chol = Cholesky::new(s.clone())
        .ok_or_else(|| Error::FactorizationFailure("matrix is not positive definite".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok((chol, log_det))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reg(kind: ExperimentKind, y: Vec<f64>) -> (ExperimentSpec, Dataset) {
        let n = y.len();
        (
            ExperimentSpec::regression(kind, n),
            Dataset::new(kind, 0, Observations::Scalar(y)),
        )
    }

    #[test]
    fn poisson_zero_count() {
        let (e, d) = reg(ExperimentKind::PoissonReg, vec![0.0]);
        let ll = log_likelihood(&e, &ParameterPoint::signal(vec![1.0]), &d).unwrap();
        assert_relative_eq!(ll, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn binary_success() {
        let (e, d) = reg(ExperimentKind::BinaryReg, vec![1.0]);
        let ll = log_likelihood(&e, &ParameterPoint::signal(vec![0.5]), &d).unwrap();
        assert_relative_eq!(ll, 0.5f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn gaussian_residual_sum() {
        let (e, d) = reg(ExperimentKind::GaussianReg, vec![1.0, -1.0]);
        let ll = log_likelihood(&e, &ParameterPoint::signal(vec![0.0, 0.0]), &d).unwrap();
        assert_relative_eq!(ll, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let e = ExperimentSpec::regression(ExperimentKind::GaussianReg, 1);
        let d = Dataset::new(ExperimentKind::PoissonReg, 0, Observations::Scalar(vec![1.0]));
        assert!(matches!(
            log_likelihood(&e, &ParameterPoint::signal(vec![1.0]), &d),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn covariance_loglik_matches_scalar_formula() {
        let e = ExperimentSpec::new(ExperimentKind::CovarianceEst, super::super::Design::None);
        let d = Dataset::new(
            ExperimentKind::CovarianceEst,
            0,
            Observations::Vectors(vec![vec![1.0], vec![2.0]]),
        );
        let s = ParameterPoint::covariance(&DMatrix::from_element(1, 1, 2.0));
        let ll = log_likelihood(&e, &s, &d).unwrap();
        assert_relative_eq!(ll, -0.25 * 5.0 - 2f64.ln(), epsilon = 1e-14);
    }
}
