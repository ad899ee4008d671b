//! Statistical experiments: data generators together with exact
//! log-likelihoods, Kullback-Leibler divergences and intrinsic metrics.
//!
//! Log-likelihoods omit every term that does not depend on the parameter:
//!
//! | kind              | log-likelihood kept                                   |
//! |-------------------|-------------------------------------------------------|
//! | `GaussianReg`     | `-1/2 sum (y_i - theta_i)^2`                          |
//! | `BinaryReg`       | `sum y_i log theta_i + (1 - y_i) log(1 - theta_i)`    |
//! | `PoissonReg`      | `sum y_i log theta_i - theta_i` (drops `log y_i!`)    |
//! | `DensityEst`      | `sum g(X_i) - n log int e^g`                          |
//! | `GaussAutoReg`    | `-1/2 sum_{i>=1} (X_i - f(X_{i-1}))^2` (drops `X_0`)  |
//! | `GaussTimeSeries` | `-1/2 X^T T_n^{-1} X - 1/2 log det T_n`               |
//! | `CovarianceEst`   | `-1/2 sum X_i^T S^{-1} X_i - n/2 log det S`           |

mod autoreg;
mod dataset;
mod density;
mod divergence;
mod likelihood;
mod simulate;
mod spectral;

pub use autoreg::{ar_weight, stationary_density, StationaryDensity};
pub use dataset::{Dataset, DatasetMeta, Observations};
pub use density::TiltDensity;
pub use divergence::{intrinsic_metric_sq, kl_divergence};
pub use likelihood::{log_likelihood, log_likelihood_ratio};
pub(crate) use likelihood::regression_loglik;
pub use simulate::{sample_data, sample_data_with, AR_BURN_IN};
pub use spectral::toeplitz_cov;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    GaussianReg,
    BinaryReg,
    PoissonReg,
    DensityEst,
    GaussAutoReg,
    GaussTimeSeries,
    CovarianceEst,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::GaussianReg,
        ExperimentKind::BinaryReg,
        ExperimentKind::PoissonReg,
        ExperimentKind::DensityEst,
        ExperimentKind::GaussAutoReg,
        ExperimentKind::GaussTimeSeries,
        ExperimentKind::CovarianceEst,
    ];

    pub fn is_regression(self) -> bool {
        matches!(
            self,
            ExperimentKind::GaussianReg | ExperimentKind::BinaryReg | ExperimentKind::PoissonReg
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::GaussianReg => "GaussianReg",
            ExperimentKind::BinaryReg => "BinaryReg",
            ExperimentKind::PoissonReg => "PoissonReg",
            ExperimentKind::DensityEst => "DensityEst",
            ExperimentKind::GaussAutoReg => "GaussAutoReg",
            ExperimentKind::GaussTimeSeries => "GaussTimeSeries",
            ExperimentKind::CovarianceEst => "CovarianceEst",
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Design of a regression experiment. Non-regression experiments use `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Design {
    None,
    /// Fixed design `x_i = i / (n + 1)`; parameters are indexed by position.
    Index { n: usize },
    /// Points `x_i` in `[0, 1]^d`.
    Points { points: Vec<Vec<f64>> },
    /// Trace-regression design: each `x_i` is a `rows x cols` matrix stored
    /// row major; `f_A(x) = trace(x^T A)`.
    Matrices {
        rows: usize,
        cols: usize,
        xs: Vec<Vec<f64>>,
    },
    /// Partially linear design: covariates `x_i` in `R^p` and `z_i = i / (n + 1)`.
    PartialLinear { p: usize, x: Vec<Vec<f64>> },
}

impl Design {
    /// Number of design points, when the design fixes it.
    pub fn len(&self) -> Option<usize> {
        match self {
            Design::None => None,
            Design::Index { n } => Some(*n),
            Design::Points { points } => Some(points.len()),
            Design::Matrices { xs, .. } => Some(xs.len()),
            Design::PartialLinear { x, .. } => Some(x.len()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    /// Apply the linear map `A -> (trace(x_i^T A))_i`.
    pub fn apply_matrix(&self, a: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            Design::Matrices { rows, cols, xs } => {
                if a.nrows() != *rows || a.ncols() != *cols {
                    return Err(Error::ConstraintViolation(format!(
                        "matrix is {}x{}, design expects {rows}x{cols}",
                        a.nrows(),
                        a.ncols()
                    )));
                }
                Ok(xs
                    .iter()
                    .map(|x| {
                        let mut s = 0.0;
                        for i in 0..*rows {
                            for j in 0..*cols {
                                s += x[i * cols + j] * a[(i, j)];
                            }
                        }
                        s
                    })
                    .collect())
            }
            _ => Err(Error::KindMismatch {
                expected: "matrix design".into(),
                found: "other design".into(),
            }),
        }
    }
}

/// Box and eigenvalue bounds of the parameter spaces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Constraints {
    /// Binary signals lie in `[eta, 1 - eta]`.
    pub eta: f64,
    /// Poisson signals lie in `[1/M, M]`; autoregression functions are bounded by `M`.
    pub m_bound: f64,
    /// Covariance spectra lie in `[1/L, L]`.
    pub l_bound: f64,
    /// Uniform bound on log-tilts and log-spectral densities.
    pub g_bound: f64,
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints {
            eta: 0.05,
            m_bound: 10.0,
            l_bound: 4.0,
            g_bound: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub design: Design,
    #[serde(default)]
    pub constraints: Constraints,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, design: Design) -> Self {
        ExperimentSpec {
            kind,
            design,
            constraints: Constraints::default(),
        }
    }

    /// Regression experiment on the index design `x_i = i/(n+1)`.
    pub fn regression(kind: ExperimentKind, n: usize) -> Self {
        Self::new(kind, Design::Index { n })
    }

    pub fn with_constraints(mut self, c: Constraints) -> Self {
        self.constraints = c;
        self
    }

    /// Signal values `f(x_i)` of a regression parameter on the design.
    pub fn signal(&self, f: &ParameterPoint) -> Result<Vec<f64>> {
        let n = self.design.len().ok_or_else(|| Error::KindMismatch {
            expected: "regression design".into(),
            found: "no design".into(),
        })?;
        let mismatch = || Error::KindMismatch {
            expected: format!("parameter compatible with {:?} design", self.design),
            found: f.variant_name().into(),
        };
        let values = match (f, &self.design) {
            (ParameterPoint::Signal { values }, _) => {
                if values.len() != n {
                    return Err(Error::LengthMismatch {
                        left: values.len(),
                        right: n,
                    });
                }
                values.clone()
            }
            (ParameterPoint::StepFunction(s), Design::Index { .. } | Design::PartialLinear { .. }) => {
                s.validate(n)?;
                s.evaluate(n)
            }
            (ParameterPoint::MaxAffine(m), Design::Points { points }) => m.evaluate(points),
            (ParameterPoint::FactorMatrix(fm), Design::Matrices { .. }) => {
                fm.validate()?;
                self.design.apply_matrix(&fm.matrix())?
            }
            (ParameterPoint::SparsePlusStep(sp), Design::PartialLinear { p, x }) => {
                if sp.p != *p {
                    return Err(mismatch());
                }
                sp.validate(n)?;
                let u = sp.step.evaluate(n);
                x.iter()
                    .zip(u)
                    .map(|(xi, ui)| {
                        ui + sp
                            .support
                            .iter()
                            .zip(&sp.beta)
                            .map(|(&j, &b)| xi[j] * b)
                            .sum::<f64>()
                    })
                    .collect()
            }
            _ => return Err(mismatch()),
        };
        Ok(values)
    }

    /// Check `f` against the kind's constraints.
    pub fn validate(&self, f: &ParameterPoint) -> Result<()> {
        let c = &self.constraints;
        match self.kind {
            ExperimentKind::GaussianReg => {
                let th = self.signal(f)?;
                if th.iter().any(|t| !t.is_finite()) {
                    return Err(Error::ConstraintViolation("non-finite signal".into()));
                }
            }
            ExperimentKind::BinaryReg => {
                let th = self.signal(f)?;
                if let Some(t) = th.iter().find(|&&t| !(c.eta..=1.0 - c.eta).contains(&t)) {
                    return Err(Error::ConstraintViolation(format!(
                        "binary signal {t} outside [{}, {}]",
                        c.eta,
                        1.0 - c.eta
                    )));
                }
            }
            ExperimentKind::PoissonReg => {
                let th = self.signal(f)?;
                let lo = 1.0 / c.m_bound;
                if let Some(t) = th.iter().find(|&&t| !(lo..=c.m_bound).contains(&t)) {
                    return Err(Error::ConstraintViolation(format!(
                        "Poisson signal {t} outside [{lo}, {}]",
                        c.m_bound
                    )));
                }
            }
            ExperimentKind::DensityEst => {
                let g = expect_grid(f, self.kind)?;
                if g.lo != 0.0 || g.hi != 1.0 || g.values.len() < 2 {
                    return Err(Error::ConstraintViolation(
                        "density tilt must live on a grid over [0, 1]".into(),
                    ));
                }
                check_bound(g.sup_norm(), c.g_bound, "log-tilt")?;
            }
            ExperimentKind::GaussAutoReg => {
                let g = expect_grid(f, self.kind)?;
                check_bound(g.sup_norm(), c.m_bound, "autoregression function")?;
            }
            ExperimentKind::GaussTimeSeries => {
                let g = expect_grid(f, self.kind)?;
                if g.lo != 0.0 || (g.hi - std::f64::consts::PI).abs() > 1e-12 {
                    return Err(Error::ConstraintViolation(
                        "log-spectral density must live on a grid over [0, pi]".into(),
                    ));
                }
                check_bound(g.sup_norm(), c.g_bound, "log-spectral density")?;
            }
            ExperimentKind::CovarianceEst => {
                let s = f.covariance_matrix().ok_or_else(|| Error::KindMismatch {
                    expected: "covariance".into(),
                    found: f.variant_name().into(),
                })?;
                let p = s.nrows();
                for i in 0..p {
                    for j in 0..i {
                        if (s[(i, j)] - s[(j, i)]).abs() > 1e-12 * (1.0 + s[(i, j)].abs()) {
                            return Err(Error::ConstraintViolation("covariance not symmetric".into()));
                        }
                    }
                }
                let eig = s.symmetric_eigenvalues();
                let (lo, hi) = (1.0 / c.l_bound, c.l_bound);
                if eig.iter().any(|&e| e < lo - 1e-12 || e > hi + 1e-12) {
                    return Err(Error::ConstraintViolation(format!(
                        "covariance spectrum outside [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn expect_grid(f: &ParameterPoint, kind: ExperimentKind) -> Result<&crate::params::GridFunction> {
    match f {
        ParameterPoint::GridFunction(g) => Ok(g),
        other => Err(Error::KindMismatch {
            expected: format!("grid function for {kind}"),
            found: other.variant_name().into(),
        }),
    }
}

fn check_bound(value: f64, bound: f64, what: &str) -> Result<()> {
    if value > bound {
        Err(Error::ConstraintViolation(format!(
            "{what} has sup norm {value} above bound {bound}"
        )))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{FactorMatrix, GridFunction, StepFunction};

    #[test]
    fn binary_constraint_is_enforced() {
        let e = ExperimentSpec::regression(ExperimentKind::BinaryReg, 2);
        assert!(e.validate(&ParameterPoint::signal(vec![0.5, 0.5])).is_ok());
        assert!(matches!(
            e.validate(&ParameterPoint::signal(vec![0.5, 0.99])),
            Err(Error::ConstraintViolation(_))
        ));
    }

    #[test]
    fn poisson_constraint_is_enforced() {
        let e = ExperimentSpec::regression(ExperimentKind::PoissonReg, 1);
        assert!(e.validate(&ParameterPoint::signal(vec![0.01])).is_err());
        assert!(e.validate(&ParameterPoint::signal(vec![3.0])).is_ok());
    }

    #[test]
    fn covariance_spectrum_is_enforced() {
        let e = ExperimentSpec::new(ExperimentKind::CovarianceEst, Design::None);
        let ok = ParameterPoint::covariance(&DMatrix::identity(3, 3));
        assert!(e.validate(&ok).is_ok());
        let bad = ParameterPoint::covariance(&(DMatrix::identity(3, 3) * 10.0));
        assert!(e.validate(&bad).is_err());
    }

    #[test]
    fn step_signal_on_index_design() {
        let e = ExperimentSpec::regression(ExperimentKind::GaussianReg, 4);
        let s = ParameterPoint::StepFunction(StepFunction {
            change_indices: vec![0, 2],
            levels: vec![1.0, 3.0],
        });
        assert_eq!(e.signal(&s).unwrap(), vec![1.0, 1.0, 3.0, 3.0]);
    }

    #[test]
    fn trace_signal_is_inner_product() {
        let design = Design::Matrices {
            rows: 2,
            cols: 2,
            xs: vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 1.0, 1.0, 0.0]],
        };
        let e = ExperimentSpec::new(ExperimentKind::GaussianReg, design);
        let a = ParameterPoint::FactorMatrix(FactorMatrix {
            rows: 2,
            cols: 2,
            u: vec![vec![1.0, 2.0]],
            v: vec![vec![3.0, 4.0]],
        });
        // A = [[3, 4], [6, 8]]
        assert_eq!(e.signal(&a).unwrap(), vec![3.0, 10.0]);
    }

    #[test]
    fn grid_parameter_kind_mismatch() {
        let e = ExperimentSpec::new(ExperimentKind::DensityEst, Design::None);
        let err = e.validate(&ParameterPoint::signal(vec![1.0])).unwrap_err();
        assert!(matches!(err, Error::KindMismatch { .. }));
        let g = ParameterPoint::GridFunction(GridFunction::constant(0.0, 1.0, 8, 0.0));
        assert!(e.validate(&g).is_ok());
    }
}
