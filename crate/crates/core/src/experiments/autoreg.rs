//! Helpers for the nonlinear autoregression `X_i = f(X_{i-1}) + e_i`.

use crate::numeric::{std_normal_pdf, trapezoid};
use crate::params::GridFunction;

/// Margin added beyond `sup |f|`; the normal tail past it is below 1e-22.
const MARGIN: f64 = 10.0;
const SPACING: f64 = 0.02;

/// Stationary density of the chain, tabulated on a uniform grid.
#[derive(Debug, Clone)]
pub struct StationaryDensity {
    pub lo: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

impl StationaryDensity {
    pub fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }

    /// `E_q[h(X)]` by the trapezoid rule.
    pub fn expect(&self, h: impl Fn(f64) -> f64) -> f64 {
        let v: Vec<f64> = self
            .values
            .iter()
            .enumerate()
            .map(|(i, q)| q * h(self.node(i)))
            .collect();
        trapezoid(&v, self.step)
    }
}

/// Power iteration of the transition kernel `q(y) = int phi(y - f(x)) q(x) dx`.
///
/// The kernel satisfies a Doeblin condition when `f` is bounded, so the
/// iteration contracts geometrically.
pub fn stationary_density(f: &GridFunction) -> StationaryDensity {
    let half = f.sup_norm() + MARGIN;
    let k = (2.0 * half / SPACING).ceil() as usize + 1;
    let step = 2.0 * half / (k - 1) as f64;
    let lo = -half;
    let fx: Vec<f64> = (0..k).map(|i| f.at(lo + i as f64 * step)).collect();
    let w: Vec<f64> = (0..k)
        .map(|i| if i == 0 || i == k - 1 { 0.5 * step } else { step })
        .collect();
    // Row i holds phi(y_j - f(x_i)); the kernel does not change between sweeps.
    let kernel: Vec<f64> = (0..k)
        .flat_map(|i| {
            let fi = fx[i];
            (0..k).map(move |j| std_normal_pdf(lo + j as f64 * step - fi))
        })
        .collect();
    let mut q: Vec<f64> = (0..k).map(|i| std_normal_pdf(lo + i as f64 * step)).collect();
    let mut next = vec![0.0; k];
    for _ in 0..500 {
        next.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..k {
            let mass = w[i] * q[i];
            if mass < 1e-300 {
                continue;
            }
            for (nj, kij) in next.iter_mut().zip(&kernel[i * k..(i + 1) * k]) {
                *nj += mass * kij;
            }
        }
        let z = trapezoid(&next, step);
        next.iter_mut().for_each(|v| *v /= z);
        let change: f64 = q.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum::<f64>() * step;
        std::mem::swap(&mut q, &mut next);
        if change < 1e-13 {
            break;
        }
    }
    StationaryDensity { lo, step, values: q }
}

/// Weight `r_M(x) = (phi(x - M) + phi(x + M)) / 2` of the intrinsic metric.
pub fn ar_weight(x: f64, m: f64) -> f64 {
    0.5 * (std_normal_pdf(x - m) + std_normal_pdf(x + m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_map_has_shifted_normal_stationary_law() {
        let f = GridFunction::constant(-3.0, 3.0, 7, 1.5);
        let q = stationary_density(&f);
        assert_relative_eq!(q.expect(|_| 1.0), 1.0, epsilon = 1e-10);
        assert_relative_eq!(q.expect(|x| x), 1.5, epsilon = 1e-8);
        assert_relative_eq!(q.expect(|x| (x - 1.5).powi(2)), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn weight_integrates_to_one() {
        let h = 0.01;
        let v: Vec<f64> = (0..4001).map(|i| ar_weight(-20.0 + i as f64 * h, 2.0)).collect();
        assert_relative_eq!(trapezoid(&v, h), 1.0, epsilon = 1e-12);
    }
}
