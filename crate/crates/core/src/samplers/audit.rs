//! Reversibility audit of the move set.
//!
//! For random prior states, every move type is proposed once. The proposal
//! densities reported by the sampler are compared with densities recomputed
//! from the two states alone, the sampler's posterior differences with the
//! generic likelihood and prior code, and the forward acceptance ratio with
//! the reciprocal of the reverse one.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::moves::{MoveKind, Mover};
use super::target::Target;
use super::SamplerConfig;
use crate::error::Result;
use crate::experiments::{Dataset, ExperimentSpec};
use crate::params::ModelIndex;
use crate::priors::{sample_within_model_with, App, TwoStepPrior};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub app: App,
    pub states: usize,
    /// Proposals that changed the state and were compared.
    pub checked: usize,
    /// Proposals that were impossible from the drawn state.
    pub skipped: usize,
    pub max_proposal_error: f64,
    /// Largest posterior-difference error, relative to `max(1, |log post|)`.
    pub max_posterior_error: f64,
    pub max_balance_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Audit `states` random states drawn uniformly over the truncated lattice
/// and then from the within-model prior.
pub fn reversibility_audit(
    exp: &ExperimentSpec,
    data: &Dataset,
    prior: &TwoStepPrior,
    cfg: &SamplerConfig,
    states: usize,
    tolerance: f64,
) -> Result<AuditReport> {
    cfg.validate()?;
    let t = Target::new(exp, data, prior, cfg.prior_only)?;
    let mover = Mover::new(&t, cfg.move_probs, cfg.informed);
    let sc = cfg.scales;
    let mut rng = substream(cfg.seed, 1, 0, Purpose::Sampler);
    let (mut checked, mut skipped) = (0, 0);
    let (mut e_q, mut e_post, mut e_bal) = (0.0f64, 0.0f64, 0.0f64);
    let kinds: Vec<MoveKind> = MoveKind::ALL
        .into_iter()
        .filter(|&k| mover.kind_log_prob(k).is_finite())
        .collect();

    for _ in 0..states {
        // Constrained experiments reject many prior draws; redraw until the
        // state is feasible.
        let mut start = None;
        for _ in 0..1000 {
            let m = ModelIndex(t.caps.iter().map(|&c| rng.random_range(1..=c)).collect());
            let x = sample_within_model_with(prior, &m, t.n, &mut rng)?;
            let lx = t.log_post(&x);
            if lx.is_finite() {
                start = Some((x, lx));
                break;
            }
        }
        let Some((x, lx)) = start else {
            skipped += kinds.len();
            continue;
        };
        let lx_ref = t.log_post_reference(&x);
        for &kind in &kinds {
            let Some(prop) = mover.propose(kind, &x, &sc, &mut rng) else {
                skipped += 1;
                continue;
            };
            let y = prop.point;
            if y == x {
                skipped += 1;
                continue;
            }
            let q_fwd = mover.log_q(kind, &x, &y, &sc);
            let q_rev = mover.log_q(kind.reverse(), &y, &x, &sc);
            e_q = e_q
                .max(gap(prop.log_q_fwd, q_fwd))
                .max(gap(prop.log_q_rev, q_rev));
            let ly = t.log_post(&y);
            let ly_ref = t.log_post_reference(&y);
            if ly.is_finite() || ly_ref.is_finite() {
                let scale = 1f64.max(lx.abs()).max(ly.abs());
                e_post = e_post.max(gap(ly - lx, ly_ref - lx_ref) / scale);
                let fwd = ly - lx + prop.log_q_rev - prop.log_q_fwd;
                let rev = lx_ref - ly_ref + q_fwd - q_rev;
                e_bal = e_bal.max(gap(fwd, -rev) / scale);
            }
            checked += 1;
        }
    }
    let pass = checked > 0 && e_q <= tolerance && e_post <= tolerance && e_bal <= tolerance;
    Ok(AuditReport {
        app: t.app,
        states,
        checked,
        skipped,
        max_proposal_error: e_q,
        max_posterior_error: e_post,
        max_balance_error: e_bal,
        tolerance,
        pass,
    })
}

/// Absolute difference treating equal infinities as agreeing.
fn gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        let d = (a - b).abs();
        if d.is_nan() {
            f64::INFINITY
        } else {
            d
        }
    }
}
