use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::params::GridFunction;

/// Toeplitz covariance `T_n(f)` of a stationary Gaussian series whose
/// spectral density is `f = e^g`, with `g` even and tabulated on `[0, pi]`.
///
/// Entries are `gamma(h) = int_{-pi}^{pi} cos(lambda h) f(lambda) dlambda`,
/// evaluated as twice the trapezoid rule on the nodes of `g`. The rule is
/// exact for trigonometric polynomials of degree below twice the grid size,
/// so `g = 0` yields exactly `2 pi I`. Lags at or beyond that degree alias,
/// which is reported as an insufficient grid.
pub fn toeplitz_cov(g: &GridFunction, n: usize) -> Result<DMatrix<f64>> {
    let cells = g.values.len().saturating_sub(1);
    if cells == 0 || n > 2 * cells {
        return Err(Error::InsufficientGrid {
            needed: n.div_ceil(2) + 1,
            got: g.values.len(),
        });
    }
    let h = g.step();
    let f: Vec<f64> = g.values.iter().map(|v| v.exp()).collect();
    let gamma: Vec<f64> = (0..n)
        .map(|lag| {
            let mut s = 0.0;
            for (j, fj) in f.iter().enumerate() {
                let w = if j == 0 || j == cells { 0.5 } else { 1.0 };
                s += w * fj * (g.node(j) * lag as f64).cos();
            }
            2.0 * h * s
        })
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| gamma[i.abs_diff(j)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn flat_log_spectrum_gives_scaled_identity() {
        let g = GridFunction::constant(0.0, PI, 33, 0.0);
        let t = toeplitz_cov(&g, 10).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let want = if i == j { 2.0 * PI } else { 0.0 };
                assert_relative_eq!(t[(i, j)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cosine_spectrum_has_known_autocovariance() {
        // f = 1 + 0.5 cos(lambda) gives gamma(0) = 2 pi, gamma(1) = pi / 2.
        let g = GridFunction::from_fn(0.0, PI, 65, |l| (1.0 + 0.5 * l.cos()).ln());
        let t = toeplitz_cov(&g, 3).unwrap();
        assert_relative_eq!(t[(0, 0)], 2.0 * PI, epsilon = 1e-5);
        assert_relative_eq!(t[(0, 1)], PI / 2.0, epsilon = 1e-5);
        assert_relative_eq!(t[(0, 2)], 0.0, epsilon = 1e-5);
    }

    #[test]
    fn too_coarse_grid_is_rejected() {
        let g = GridFunction::constant(0.0, PI, 3, 0.0);
        assert!(toeplitz_cov(&g, 10).is_err());
    }
}
