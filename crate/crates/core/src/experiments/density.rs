//! Densities on `[0, 1]` in exponential-tilt form `f = e^g / int e^g`, with
//! `g` piecewise linear between grid nodes.
//!
//! On each cell `e^g` is an exponential of a linear function, so the
//! normalizer, the cross-entropy and the Bhattacharyya integral all have
//! closed forms per cell. The grid is too coarse when `g` moves by more than
//! [`MAX_CELL_INCREMENT`] across one cell. A trapezoid evaluation of the
//! normalizer is kept as a cross-check; on exponential-linear cells it is
//! off by about `d^2 / 12` for an increment `d`, and larger gaps signal a
//! numerical breakdown.

use crate::error::{Error, Result};
use crate::numeric::trapezoid;
use crate::params::GridFunction;

/// Largest change of the log-tilt across one grid cell.
pub const MAX_CELL_INCREMENT: f64 = 1.0;

/// Relative trapezoid disagreement tolerated on top of its leading error term.
const TRAPEZOID_TOLERANCE: f64 = 1e-3;

/// `int_0^1 e^{d t} dt`.
fn phi0(d: f64) -> f64 {
    if d.abs() < 1e-5 {
        1.0 + d / 2.0 + d * d / 6.0
    } else {
        d.exp_m1() / d
    }
}

/// `int_0^1 t e^{d t} dt`.
fn phi1(d: f64) -> f64 {
    if d.abs() < 1e-3 {
        0.5 + d / 3.0 + d * d / 8.0 + d * d * d / 30.0
    } else {
        (d.exp() * (d - 1.0) + 1.0) / (d * d)
    }
}

#[derive(Debug, Clone)]
pub struct TiltDensity {
    g: GridFunction,
    /// Shift applied before exponentiating, for overflow safety.
    shift: f64,
    /// Mass of each cell under `e^{g - shift}`.
    cell_mass: Vec<f64>,
    /// `log int e^g`.
    log_norm: f64,
}

impl TiltDensity {
    pub fn new(g: &GridFunction) -> Result<Self> {
        let k = g.values.len();
        if k < 2 {
            return Err(Error::InsufficientGrid { needed: 2, got: k });
        }
        if g.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::QuadratureFailure("non-finite log-tilt".into()));
        }
        let max_d = g.values.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max);
        if max_d > MAX_CELL_INCREMENT {
            return Err(Error::QuadratureFailure(format!(
                "log-tilt changes by {max_d} across one cell; refine the grid"
            )));
        }
        let h = g.step();
        let shift = g.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cell_mass: Vec<f64> = g
            .values
            .windows(2)
            .map(|w| h * (w[0] - shift).exp() * phi0(w[1] - w[0]))
            .collect();
        let z: f64 = cell_mass.iter().sum();
        let trap = trapezoid(
            &g.values.iter().map(|v| (v - shift).exp()).collect::<Vec<_>>(),
            h,
        );
        if ((trap - z) / z).abs() > TRAPEZOID_TOLERANCE + max_d * max_d / 6.0 {
            return Err(Error::QuadratureFailure(format!(
                "trapezoid normalizer {trap} disagrees with exact {z}"
            )));
        }
        Ok(TiltDensity {
            g: g.clone(),
            shift,
            cell_mass,
            log_norm: shift + z.ln(),
        })
    }

    pub fn tilt(&self) -> &GridFunction {
        &self.g
    }

    /// `log int_0^1 e^g`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return f64::NEG_INFINITY;
        }
        self.g.at(x) - self.log_norm
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let h = self.g.step();
        let t = x / h;
        let i = (t.floor() as usize).min(self.cell_mass.len() - 1);
        let below: f64 = self.cell_mass[..i].iter().sum();
        let (a, b) = (self.g.values[i], self.g.values[i + 1]);
        let d = b - a;
        let s = t - i as f64;
        let partial = h * (a - self.shift).exp() * s * phi0(d * s);
        let z: f64 = self.cell_mass.iter().sum();
        ((below + partial) / z).clamp(0.0, 1.0)
    }

    /// Exact draw: pick a cell by mass, then invert the exponential-linear CDF.
    pub fn sample(&self, rng: &mut impl rand::Rng) -> f64 {
        let z: f64 = self.cell_mass.iter().sum();
        let mut u = rng.random::<f64>() * z;
        let mut cell = self.cell_mass.len() - 1;
        for (i, &m) in self.cell_mass.iter().enumerate() {
            if u < m {
                cell = i;
                break;
            }
            u -= m;
        }
        let d = self.g.values[cell + 1] - self.g.values[cell];
        let v: f64 = rng.random();
        let t = if d.abs() < 1e-12 {
            v
        } else {
            (v * d.exp_m1()).ln_1p() / d
        };
        ((cell as f64 + t.clamp(0.0, 1.0)) * self.g.step()).min(1.0)
    }

    /// `KL(self || other) = int f0 (g0 - g1) - log Z0 + log Z1`.
    pub fn kl_to(&self, other: &TiltDensity) -> Result<f64> {
        let diff = common_grid(&self.g, &other.g)?;
        let h = self.g.step();
        let z0: f64 = self.cell_mass.iter().sum();
        let mut cross = 0.0;
        for i in 0..self.cell_mass.len() {
            let (a, b) = (self.g.values[i], self.g.values[i + 1]);
            let d = b - a;
            let (da, db) = (diff[i], diff[i + 1]);
            cross += h * (a - self.shift).exp() * (da * phi0(d) + (db - da) * phi1(d));
        }
        let kl = cross / z0 - self.log_norm + other.log_norm;
        if !kl.is_finite() {
            return Err(Error::QuadratureFailure("non-finite divergence".into()));
        }
        Ok(kl.max(0.0))
    }

    /// Squared Hellinger distance `1/2 int (sqrt f0 - sqrt f1)^2`.
    pub fn hellinger_sq(&self, other: &TiltDensity) -> Result<f64> {
        common_grid(&self.g, &other.g)?;
        let h = self.g.step();
        let half_shift = 0.5 * (self.shift + other.shift);
        let mut bc = 0.0;
        for i in 0..self.cell_mass.len() {
            let a = 0.5 * (self.g.values[i] + other.g.values[i]);
            let b = 0.5 * (self.g.values[i + 1] + other.g.values[i + 1]);
            bc += h * (a - half_shift).exp() * phi0(b - a);
        }
        let log_bc = bc.ln() + half_shift - 0.5 * (self.log_norm + other.log_norm);
        Ok((1.0 - log_bc.exp()).max(0.0))
    }
}

/// Nodewise `g0 - g1` for two tilts on the same grid.
fn common_grid(a: &GridFunction, b: &GridFunction) -> Result<Vec<f64>> {
    if a.values.len() != b.values.len() || a.lo != b.lo || a.hi != b.hi {
        return Err(Error::LengthMismatch {
            left: a.values.len(),
            right: b.values.len(),
        });
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect())
}
