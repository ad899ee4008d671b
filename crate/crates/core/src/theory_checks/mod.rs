//! Executable checks of the structural conditions behind the contraction
//! theory: the Bernstein envelope of the log-likelihood ratio, the
//! equivalence of KL and the intrinsic metric, the likelihood-ratio test and
//! its error decay, local entropy, and the two prior-mass conditions.
//!
//! Every check is a pure function of its inputs and seed. Monte Carlo loops
//! are split into blocks, each drawing from its own substream, and merged in
//! block order so results do not depend on the thread count.

mod bernstein;
mod covering;
mod lr;
mod prior_mass;
mod sandwich;

pub use bernstein::{default_constants, estimate_llr_mgf, BernsteinOptions, BernsteinReport};
pub use covering::{covering_radii, greedy_covering_upper_bound, intrinsic_distance};
pub use lr::{
    lr_test, probe_set, test_error_decay, test_threshold, DecayOptions, TestErrorReport,
};
pub use prior_mass::{
    check_p1, check_p1_report, estimate_p2_mass, P1Report, P2Report,
};
pub use sandwich::{kl_metric_ratio, metric_kl_sandwich, random_pair, SandwichReport};

use crate::error::{Error, Result};
use crate::plot::{render, Series};

impl BernsteinReport {
    /// Empirical log-MGF with two-standard-error band against the envelope.
    pub fn to_svg(&self) -> String {
        let x = self.lambda_grid.clone();
        let upper = self.empirical_log_mgf.iter().zip(&self.stderr).map(|(e, s)| e + 2.0 * s).collect();
        render(
            &format!("{}: centered log-likelihood-ratio MGF", self.kind),
            "lambda",
            "log MGF",
            &[
                Series::line("envelope", x.clone(), self.envelope.clone()),
                Series::points("empirical", x.clone(), self.empirical_log_mgf.clone()),
                Series::points("empirical + 2 se", x, upper),
            ],
        )
    }
}

impl TestErrorReport {
    /// Log error rates against `n d^2`, with the fitted line.
    pub fn to_svg(&self) -> String {
        let x = self.n_d_sq.clone();
        let ln = |v: &[f64]| v.iter().map(|p| p.ln()).collect::<Vec<f64>>();
        let mut series = vec![
            Series::line("log type I", x.clone(), ln(&self.type1)),
            Series::line("log type II", x.clone(), ln(&self.type2)),
        ];
        if self.decay_slope.is_finite() {
            let (xs, ys): (Vec<f64>, Vec<f64>) = (0..x.len())
                .filter(|&i| self.included[i])
                .map(|i| (x[i], self.type1[i].max(self.type2[i]).ln()))
                .unzip();
            let (a, b, _) = crate::numeric::ols_line(&xs, &ys);
            series.push(Series::line("fit", xs.clone(), xs.iter().map(|v| a + b * v).collect()));
        }
        render("likelihood-ratio test errors", "n d^2", "log error", &series)
    }
}

/// Bernstein function `psi_{v,c}(lambda) = v lambda^2 / (2 (1 - c |lambda|))`.
///
/// Defined for `c |lambda| < 1`; `c = 0` gives the sub-Gaussian envelope.
pub fn psi(v: f64, c: f64, lambda: f64) -> Result<f64> {
    if !(v >= 0.0) || !(c >= 0.0) || !lambda.is_finite() {
        return Err(Error::DomainError(format!(
            "psi needs v >= 0, c >= 0 and finite lambda, got v = {v}, c = {c}, lambda = {lambda}"
        )));
    }
    let cl = c * lambda.abs();
    if cl >= 1.0 {
        return Err(Error::DomainError(format!(
            "|lambda| = {} is outside the domain |lambda| < 1/c = {}",
            lambda.abs(),
            1.0 / c
        )));
    }
    Ok(v * lambda * lambda / (2.0 * (1.0 - cl)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psi_values() {
        assert_eq!(psi(3.0, 0.7, 0.0).unwrap(), 0.0);
        assert_relative_eq!(psi(1.0, 0.0, 1.0).unwrap(), 0.5);
        assert_relative_eq!(psi(2.0, 0.5, 1.0).unwrap(), 2.0);
        assert_relative_eq!(psi(2.0, 0.5, -1.0).unwrap(), 2.0);
    }

    #[test]
    fn psi_domain() {
        assert!(matches!(psi(1.0, 0.5, 2.0), Err(Error::DomainError(_))));
        assert!(matches!(psi(1.0, 0.5, -2.5), Err(Error::DomainError(_))));
        assert!(psi(1.0, 0.0, 1e6).is_ok());
        assert!(psi(-1.0, 0.0, 1.0).is_err());
    }
}
