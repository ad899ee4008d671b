use nalgebra::DMatrix;

use super::likelihood::log_det_spd;
use super::{
    ar_weight, stationary_density, toeplitz_cov, ExperimentKind, ExperimentSpec, TiltDensity,
};
use crate::error::{Error, Result};
use crate::numeric::trapezoid;
use crate::params::{GridFunction, ParameterPoint};

/// Exact `K(P^n_{f0}, P^n_{f1})` for a sample of size `n`.
pub fn kl_divergence(
    exp: &ExperimentSpec,
    f0: &ParameterPoint,
    f1: &ParameterPoint,
    n: usize,
) -> Result<f64> {
    let nf = n as f64;
    match exp.kind {
        ExperimentKind::GaussianReg | ExperimentKind::BinaryReg | ExperimentKind::PoissonReg => {
            let (t0, t1) = signals(exp, f0, f1, n)?;
            let pairs = t0.iter().zip(&t1);
            Ok(match exp.kind {
                ExperimentKind::GaussianReg => {
                    0.5 * pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                }
                ExperimentKind::BinaryReg => pairs
                    .map(|(&a, &b)| a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln())
                    .sum(),
                _ => pairs.map(|(&a, &b)| a * (a / b).ln() + b - a).sum(),
            })
        }
        ExperimentKind::DensityEst => {
            let (g0, g1) = (grid(f0)?, grid(f1)?);
            Ok(nf * TiltDensity::new(g0)?.kl_to(&TiltDensity::new(g1)?)?)
        }
        ExperimentKind::GaussAutoReg => {
            let (g0, g1) = (grid(f0)?, grid(f1)?);
            let q = stationary_density(g0);
            Ok(0.5 * nf * q.expect(|x| (g0.at(x) - g1.at(x)).powi(2)))
        }
        ExperimentKind::GaussTimeSeries => {
            let (g0, g1) = (grid(f0)?, grid(f1)?);
            gaussian_kl(&toeplitz_cov(g0, n)?, &toeplitz_cov(g1, n)?)
        }
        ExperimentKind::CovarianceEst => {
            let (s0, s1) = (cov(f0)?, cov(f1)?);
            Ok(nf * gaussian_kl(&s0, &s1)?)
        }
    }
}

/// Squared intrinsic metric `d_n^2(f0, f1)` of the experiment.
pub fn intrinsic_metric_sq(
    exp: &ExperimentSpec,
    f0: &ParameterPoint,
    f1: &ParameterPoint,
    n: usize,
) -> Result<f64> {
    match exp.kind {
        ExperimentKind::GaussianReg | ExperimentKind::BinaryReg | ExperimentKind::PoissonReg => {
            let (t0, t1) = signals(exp, f0, f1, n)?;
            Ok(t0.iter().zip(&t1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64)
        }
        ExperimentKind::DensityEst => {
            TiltDensity::new(grid(f0)?)?.hellinger_sq(&TiltDensity::new(grid(f1)?)?)
        }
        ExperimentKind::GaussAutoReg => {
            let (g0, g1) = (grid(f0)?, grid(f1)?);
            Ok(weighted_sq_distance(g0, g1, exp.constraints.m_bound))
        }
        ExperimentKind::GaussTimeSeries => {
            let d = toeplitz_cov(grid(f0)?, n)? - toeplitz_cov(grid(f1)?, n)?;
            Ok(d.norm_squared() / n as f64)
        }
        ExperimentKind::CovarianceEst => Ok((cov(f0)? - cov(f1)?).norm_squared()),
    }
}

/// `int (f0 - f1)^2 r_M`, integrated over the region where `r_M` has mass.
fn weighted_sq_distance(g0: &GridFunction, g1: &GridFunction, m: f64) -> f64 {
    let half = m + 12.0;
    let k = 2 * ((half / 0.005).ceil() as usize) + 1;
    let h = 2.0 * half / (k - 1) as f64;
    let v: Vec<f64> = (0..k)
        .map(|i| {
            let x = -half + i as f64 * h;
            (g0.at(x) - g1.at(x)).powi(2) * ar_weight(x, m)
        })
        .collect();
    trapezoid(&v, h)
}

/// `KL(N(0, s0) || N(0, s1))`.
fn gaussian_kl(s0: &DMatrix<f64>, s1: &DMatrix<f64>) -> Result<f64> {
    let (c1, ld1) = log_det_spd(s1)?;
    let (_, ld0) = log_det_spd(s0)?;
    let tr = c1.solve(s0).trace();
    Ok((0.5 * (tr - s0.nrows() as f64 + ld1 - ld0)).max(0.0))
}

fn signals(
    exp: &ExperimentSpec,
    f0: &ParameterPoint,
    f1: &ParameterPoint,
    n: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let t0 = exp.signal(f0)?;
    let t1 = exp.signal(f1)?;
    if t0.len() != n {
        return Err(Error::LengthMismatch {
            left: t0.len(),
            right: n,
        });
    }
    Ok((t0, t1))
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

fn cov(f: &ParameterPoint) -> Result<DMatrix<f64>> {
    f.covariance_matrix().ok_or_else(|| Error::KindMismatch {
        expected: "covariance".into(),
        found: f.variant_name().into(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::Design;
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn sig(v: &[f64]) -> ParameterPoint {
        ParameterPoint::signal(v.to_vec())
    }

    #[test]
    fn regression_divergences() {
        let g = ExperimentSpec::regression(ExperimentKind::GaussianReg, 2);
        assert_relative_eq!(
            kl_divergence(&g, &sig(&[0.0, 0.0]), &sig(&[1.0, 1.0]), 2).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            intrinsic_metric_sq(&g, &sig(&[1.0, 3.0]), &sig(&[1.0, 1.0]), 2).unwrap(),
            2.0,
            epsilon = 1e-15
        );
        let p = ExperimentSpec::regression(ExperimentKind::PoissonReg, 1);
        assert_relative_eq!(
            kl_divergence(&p, &sig(&[2.0]), &sig(&[1.0]), 1).unwrap(),
            2.0 * 2f64.ln() - 1.0,
            epsilon = 1e-12
        );
        let b = ExperimentSpec::regression(ExperimentKind::BinaryReg, 1);
        let want = 0.3 * (0.3f64 / 0.6).ln() + 0.7 * (0.7f64 / 0.4).ln();
        assert_relative_eq!(
            kl_divergence(&b, &sig(&[0.3]), &sig(&[0.6]), 1).unwrap(),
            want,
            epsilon = 1e-14
        );
    }

    #[test]
    fn covariance_divergence() {
        let e = ExperimentSpec::new(ExperimentKind::CovarianceEst, Design::None);
        let s0 = ParameterPoint::covariance(&DMatrix::from_element(1, 1, 2.0));
        let s1 = ParameterPoint::covariance(&DMatrix::from_element(1, 1, 1.0));
        // 1/2 (2 - 1 - log 2)
        assert_relative_eq!(
            kl_divergence(&e, &s0, &s1, 1).unwrap(),
            0.5 * (1.0 - 2f64.ln()),
            epsilon = 1e-14
        );
        assert_relative_eq!(intrinsic_metric_sq(&e, &s0, &s1, 1).unwrap(), 1.0);
    }

    #[test]
    fn constant_spectral_densities() {
        let e = ExperimentSpec::new(ExperimentKind::GaussTimeSeries, Design::None);
        let (c0, c1) = (1.5f64, 0.5f64);
        let g0 = ParameterPoint::GridFunction(GridFunction::constant(0.0, PI, 65, c0.ln()));
        let g1 = ParameterPoint::GridFunction(GridFunction::constant(0.0, PI, 65, c1.ln()));
        let d2 = intrinsic_metric_sq(&e, &g0, &g1, 20).unwrap();
        assert_relative_eq!(d2, 4.0 * PI * PI * (c0 - c1).powi(2), epsilon = 1e-10);
        let kl = kl_divergence(&e, &g0, &g1, 20).unwrap();
        let r = c0 / c1;
        assert_relative_eq!(kl, 10.0 * (r - 1.0 - r.ln()), epsilon = 1e-10);
    }

    #[test]
    fn constant_offset_autoregression() {
        let mut e = ExperimentSpec::new(ExperimentKind::GaussAutoReg, Design::None);
        e.constraints.m_bound = 2.0;
        let f0 = GridFunction::from_fn(-4.0, 4.0, 81, |x| 0.8 * x.tanh());
        let mut f1 = f0.clone();
        f1.values.iter_mut().for_each(|v| *v += 0.3);
        let (p0, p1) = (
            ParameterPoint::GridFunction(f0),
            ParameterPoint::GridFunction(f1),
        );
        assert_relative_eq!(
            intrinsic_metric_sq(&e, &p0, &p1, 50).unwrap(),
            0.09,
            epsilon = 1e-9
        );
        assert_relative_eq!(
            kl_divergence(&e, &p0, &p1, 50).unwrap(),
            25.0 * 0.09,
            epsilon = 1e-8
        );
    }
}
