//! Reversible-jump proposals.
//!
//! Every move returns the log densities of the forward proposal and of the
//! reverse proposal that would undo it, including the probability of picking
//! the move type. [`Mover::log_q`] recomputes the same densities from a pair
//! of states alone, by locating the difference between them instead of
//! replaying random choices; the reversibility audit compares the two.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::target::Target;
use crate::experiments::{Design, ExperimentKind};
use crate::numeric::{log_sum_exp, LN_SQRT_2PI};
use crate::params::{FactorMatrix, MaxAffine, ParameterPoint, Plane, SparsePlusStep, StepFunction};
use crate::priors::{App, LevelLaw};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Birth,
    Death,
    /// Relocation: a change point, a support coordinate, or one coordinate.
    Move,
    /// Random-walk refresh of one block.
    Refresh,
    /// Data-informed independence refresh of one block.
    InformedRefresh,
}

impl MoveKind {
    pub const ALL: [MoveKind; 5] = [
        MoveKind::Birth,
        MoveKind::Death,
        MoveKind::Move,
        MoveKind::Refresh,
        MoveKind::InformedRefresh,
    ];

    pub fn reverse(self) -> MoveKind {
        match self {
            MoveKind::Birth => MoveKind::Death,
            MoveKind::Death => MoveKind::Birth,
            other => other,
        }
    }
}

/// Probabilities of the four move families; they must sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveProbs {
    pub birth: f64,
    pub death: f64,
    #[serde(rename = "move")]
    pub relocate: f64,
    pub refresh: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        MoveProbs {
            birth: 0.25,
            death: 0.25,
            relocate: 0.2,
            refresh: 0.3,
        }
    }
}

/// Random-walk scales: `level` for step-function levels, `coef` for
/// regression coefficients, plane coefficients and factor entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scales {
    pub level: f64,
    pub coef: f64,
}

impl Default for Scales {
    fn default() -> Self {
        Scales {
            level: 0.3,
            coef: 0.2,
        }
    }
}

/// Which scale a proposal exercised, for adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Block {
    Level,
    Coef,
}

pub(crate) struct Proposal {
    pub point: ParameterPoint,
    pub log_q_fwd: f64,
    pub log_q_rev: f64,
    pub block: Block,
}

pub(crate) struct Mover<'t, 'a> {
    pub t: &'t Target<'a>,
    pub probs: MoveProbs,
    pub informed: bool,
}

const LN_HALF: f64 = -std::f64::consts::LN_2;

fn ln(x: f64) -> f64 {
    x.ln()
}

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn lse2(a: f64, b: f64) -> f64 {
    log_sum_exp(&[a, b])
}

/// `(only in a, only in b)` for sorted slices, as multisets.
fn diff_sorted<T: Copy + PartialOrd>(a: &[T], b: &[T]) -> (Vec<T>, Vec<T>) {
    let (mut i, mut j) = (0, 0);
    let (mut only_a, mut only_b) = (Vec::new(), Vec::new());
    while i < a.len() && j < b.len() {
        if a[i] == b[j] {
            i += 1;
            j += 1;
        } else if a[i] < b[j] {
            only_a.push(a[i]);
            i += 1;
        } else {
            only_b.push(b[j]);
            j += 1;
        }
    }
    only_a.extend_from_slice(&a[i..]);
    only_b.extend_from_slice(&b[j..]);
    (only_a, only_b)
}

/// Index range of the block labelled by `c[k]`.
fn block_of_label(c: &[usize], k: usize, n: usize) -> (usize, usize) {
    let start = if k == 0 { 0 } else { c[k] };
    let end = if k + 1 < c.len() { c[k + 1] } else { n };
    (start, end)
}

/// Half-width of local change-point shifts.
fn local_width(n: usize) -> usize {
    (n / 50).clamp(1, 25)
}

fn draw_unused(rng: &mut Rng, n: usize, used: &[usize]) -> usize {
    loop {
        let u = rng.random_range(0..n);
        if used.binary_search(&u).is_err() {
            return u;
        }
    }
}

fn random_walk(law: &LevelLaw, v: f64, scale: f64, rng: &mut Rng) -> Option<f64> {
    match law {
        LevelLaw::Continuous(_) => Some(v + scale * normal(rng)),
        LevelLaw::Grid { values, .. } => {
            let pos = values.binary_search_by(|x| x.total_cmp(&v)).ok()?;
            if rng.random::<bool>() {
                values.get(pos + 1).copied()
            } else {
                pos.checked_sub(1).map(|p| values[p])
            }
        }
    }
}

fn random_walk_log_density(law: &LevelLaw, v: f64, w: f64, scale: f64) -> f64 {
    match law {
        LevelLaw::Continuous(_) => {
            let z = (w - v) / scale;
            -0.5 * z * z - scale.ln() - LN_SQRT_2PI
        }
        LevelLaw::Grid { values, .. } => {
            let pos = |x: f64| values.binary_search_by(|g| g.total_cmp(&x)).ok();
            match (pos(v), pos(w)) {
                (Some(a), Some(b)) if a.abs_diff(b) == 1 => LN_HALF,
                _ => f64::NEG_INFINITY,
            }
        }
    }
}

fn grid_informed_logits(values: &[f64], center: f64, sd: f64) -> Vec<f64> {
    let raw: Vec<f64> = values
        .iter()
        .map(|v| -0.5 * ((v - center) / sd).powi(2))
        .collect();
    let z = log_sum_exp(&raw);
    raw.into_iter().map(|r| r - z).collect()
}

impl<'t, 'a> Mover<'t, 'a> {
    pub fn new(t: &'t Target<'a>, probs: MoveProbs, informed: bool) -> Self {
        Mover { t, probs, informed }
    }

    /// Weight of the prior component in birth and informed proposals.
    fn omega(&self) -> f64 {
        if self.informed {
            0.5
        } else {
            1.0
        }
    }

    pub fn kind_log_prob(&self, kind: MoveKind) -> f64 {
        let p = &self.probs;
        match kind {
            MoveKind::Birth => ln(p.birth),
            MoveKind::Death => ln(p.death),
            MoveKind::Move => ln(p.relocate),
            MoveKind::Refresh => ln(p.refresh) + if self.informed { LN_HALF } else { 0.0 },
            MoveKind::InformedRefresh => {
                if self.informed {
                    ln(p.refresh) + LN_HALF
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn choose_kind(&self, rng: &mut Rng) -> MoveKind {
        let p = &self.probs;
        let u: f64 = rng.random();
        if u < p.birth {
            MoveKind::Birth
        } else if u < p.birth + p.death {
            MoveKind::Death
        } else if u < p.birth + p.death + p.relocate {
            MoveKind::Move
        } else if self.informed && rng.random::<bool>() {
            MoveKind::InformedRefresh
        } else {
            MoveKind::Refresh
        }
    }

    /// Density of the birth and informed proposal: a mixture of the level law
    /// and a normal (or discretized normal) around a data-driven center.
    fn mix_log_density(&self, center: f64, sd: f64, v: f64) -> f64 {
        let law = &self.t.law;
        let prior = law.log_density(v);
        let w = self.omega();
        let informed = if w >= 1.0 {
            f64::NEG_INFINITY
        } else {
            match law {
                LevelLaw::Continuous(_) => {
                    let z = (v - center) / sd;
                    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
                }
                LevelLaw::Grid { values, .. } => match values.binary_search_by(|x| x.total_cmp(&v)) {
                    Ok(i) => grid_informed_logits(values, center, sd)[i],
                    Err(_) => f64::NEG_INFINITY,
                },
            }
        };
        lse2(w.ln() + prior, (1.0 - w).ln() + informed)
    }

    fn mix_sample(&self, center: f64, sd: f64, rng: &mut Rng) -> f64 {
        let law = &self.t.law;
        if rng.random::<f64>() < self.omega() {
            return law.sample(rng);
        }
        match law {
            LevelLaw::Continuous(_) => center + sd * normal(rng),
            LevelLaw::Grid { values, .. } => {
                let logits = grid_informed_logits(values, center, sd);
                let mut u: f64 = rng.random();
                for (v, l) in values.iter().zip(&logits) {
                    u -= l.exp();
                    if u <= 0.0 {
                        return *v;
                    }
                }
                *values.last().expect("grid is nonempty")
            }
        }
    }

    fn noise_sd(&self, c: f64) -> f64 {
        let (lo, hi) = self.t.bounds();
        let c = c.clamp(lo, hi);
        match self.t.exp.kind {
            ExperimentKind::BinaryReg => (c * (1.0 - c)).sqrt(),
            ExperimentKind::PoissonReg => c.sqrt(),
            _ => 1.0,
        }
    }

    /// Center and spread for a level fitted to `r[a..b]`.
    fn block_center(&self, r: &[f64], a: usize, b: usize) -> (f64, f64) {
        let cnt = (b - a).max(1) as f64;
        let mean = r[a..b].iter().sum::<f64>() / cnt;
        let (lo, hi) = self.t.bounds();
        let c = mean.clamp(lo, hi);
        (c, (self.noise_sd(c) / cnt.sqrt()).max(1e-3))
    }

    fn snap(&self, v: f64) -> f64 {
        match &self.t.law {
            LevelLaw::Continuous(_) => v,
            LevelLaw::Grid { values, .. } => values
                .iter()
                .copied()
                .min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()))
                .unwrap_or(v),
        }
    }

    /// Starting state: a constant fit for step functions, a least-squares
    /// plane for max-affine models, a rank-one fit for matrices.
    pub fn initial_point(&self) -> ParameterPoint {
        let (lo, hi) = self.t.bounds();
        let n = self.t.n;
        let y = &self.t.y;
        let level = |r: &[f64]| self.snap((r.iter().sum::<f64>() / n as f64).clamp(lo, hi));
        match self.t.app {
            App::Iso => ParameterPoint::StepFunction(StepFunction::constant(level(y))),
            App::PartialLinear => {
                let x = self.pl_x();
                let p = self.t.prior.rate.p;
                let ybar = y.iter().sum::<f64>() / n as f64;
                let centered: Vec<f64> = y.iter().map(|v| v - ybar).collect();
                let score = |j: usize| {
                    let (xx, xr) = x.iter().zip(&centered).fold((0.0, 0.0), |(a, b), (row, r)| {
                        (a + row[j] * row[j], b + row[j] * r)
                    });
                    if xx > 0.0 {
                        xr.abs() / xx.sqrt()
                    } else {
                        0.0
                    }
                };
                let j = (0..p).max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap_or(0);
                let b = self.snap(self.beta_center(j, &centered).0);
                let resid: Vec<f64> = y.iter().zip(x).map(|(v, row)| v - row[j] * b).collect();
                ParameterPoint::SparsePlusStep(SparsePlusStep {
                    p,
                    support: vec![j],
                    beta: vec![b],
                    step: StepFunction::constant(level(&resid)),
                })
            }
            _ => {
                let item: Vec<f64> = self.list_center(&[]).into_iter().map(|v| self.snap(v)).collect();
                let like = self.list_point(&[]);
                self.from_items(&like, vec![item])
            }
        }
    }

    // ----- dispatch -------------------------------------------------------

    pub fn propose(
        &self,
        kind: MoveKind,
        x: &ParameterPoint,
        sc: &Scales,
        rng: &mut Rng,
    ) -> Option<Proposal> {
        let lp = self.kind_log_prob(kind);
        let lp_rev = self.kind_log_prob(kind.reverse());
        match (self.t.app, x) {
            (App::Iso, ParameterPoint::StepFunction(s)) => {
                let cap = self.t.caps[0];
                let (s2, f, r) = self.iso_propose(kind, s, &self.t.y, cap, lp, lp_rev, sc, rng)?;
                Some(Proposal {
                    point: ParameterPoint::StepFunction(s2),
                    log_q_fwd: f,
                    log_q_rev: r,
                    block: Block::Level,
                })
            }
            (App::PartialLinear, ParameterPoint::SparsePlusStep(sp)) => {
                self.pl_propose(kind, sp, lp, lp_rev, sc, rng)
            }
            (App::Convex | App::Trace, _) => {
                let items = self.items(x)?;
                let (items2, f, r) = self.list_propose(kind, &items, lp, lp_rev, sc, rng)?;
                Some(Proposal {
                    point: self.from_items(x, items2),
                    log_q_fwd: f,
                    log_q_rev: r,
                    block: Block::Coef,
                })
            }
            _ => None,
        }
    }

    /// Log density of proposing `to` from `from` with a move of type `kind`,
    /// recomputed from the two states.
    pub fn log_q(&self, kind: MoveKind, from: &ParameterPoint, to: &ParameterPoint, sc: &Scales) -> f64 {
        let lp = self.kind_log_prob(kind);
        match (self.t.app, from, to) {
            (App::Iso, ParameterPoint::StepFunction(a), ParameterPoint::StepFunction(b)) => {
                self.iso_log_q(kind, a, b, &self.t.y, self.t.caps[0], lp, sc)
            }
            (App::PartialLinear, ParameterPoint::SparsePlusStep(a), ParameterPoint::SparsePlusStep(b)) => {
                self.pl_log_q(kind, a, b, lp, sc)
            }
            (App::Convex | App::Trace, _, _) => match (self.items(from), self.items(to)) {
                (Some(a), Some(b)) => self.list_log_q(kind, &a, &b, lp, sc),
                _ => f64::NEG_INFINITY,
            },
            _ => f64::NEG_INFINITY,
        }
    }

    // ----- step functions ------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn iso_propose(
        &self,
        kind: MoveKind,
        s: &StepFunction,
        r: &[f64],
        cap: usize,
        lp: f64,
        lp_rev: f64,
        sc: &Scales,
        rng: &mut Rng,
    ) -> Option<(StepFunction, f64, f64)> {
        let n = self.t.n;
        let m = s.levels.len();
        let c = &s.change_indices;
        let l = &s.levels;
        let law = &self.t.law;
        match kind {
            MoveKind::Birth => {
                if m >= cap || m >= n {
                    return None;
                }
                let u = draw_unused(rng, n, c);
                let mut c2 = c.clone();
                let k = c2.binary_search(&u).unwrap_err();
                c2.insert(k, u);
                let (a, b) = block_of_label(&c2, k, n);
                let (cen, sd) = self.block_center(r, a, b);
                let v = self.mix_sample(cen, sd, rng);
                let mut l2 = l.clone();
                l2.insert(l.partition_point(|&x| x <= v), v);
                let mult = l2.iter().filter(|&&x| x == v).count() as f64;
                let fwd = lp - ln((n - m) as f64) + self.mix_log_density(cen, sd, v);
                let rev = lp_rev - ln((m + 1) as f64) + ln(mult / (m + 1) as f64);
                Some((StepFunction { change_indices: c2, levels: l2 }, fwd, rev))
            }
            MoveKind::Death => {
                if m < 2 {
                    return None;
                }
                let j = rng.random_range(0..m);
                let i = rng.random_range(0..m);
                let (a, b) = block_of_label(c, j, n);
                let (cen, sd) = self.block_center(r, a, b);
                let v = l[i];
                let mult = l.iter().filter(|&&x| x == v).count() as f64;
                let mut c2 = c.clone();
                c2.remove(j);
                let mut l2 = l.clone();
                l2.remove(i);
                let fwd = lp - ln(m as f64) + ln(mult / m as f64);
                let rev = lp_rev - ln((n - m + 1) as f64) + self.mix_log_density(cen, sd, v);
                Some((StepFunction { change_indices: c2, levels: l2 }, fwd, rev))
            }
            MoveKind::Move => {
                if m >= n {
                    return None;
                }
                let k = rng.random_range(0..m);
                let old = c[k];
                let w = local_width(n);
                let new = if rng.random::<bool>() {
                    draw_unused(rng, n, c)
                } else {
                    let d = rng.random_range(1..=w);
                    let cand = if rng.random::<bool>() {
                        old.checked_add(d)?
                    } else {
                        old.checked_sub(d)?
                    };
                    if cand >= n || c.binary_search(&cand).is_ok() {
                        return None;
                    }
                    cand
                };
                let mut c2 = c.clone();
                c2.remove(k);
                c2.insert(c2.binary_search(&new).unwrap_err(), new);
                let q = lp - ln(m as f64) + relocation_log_density(n, m, old, new);
                Some((StepFunction { change_indices: c2, levels: l.clone() }, q, q))
            }
            MoveKind::Refresh => {
                let k = rng.random_range(0..m);
                let v = random_walk(law, l[k], sc.level, rng)?;
                let mut l2 = l.clone();
                l2[k] = v;
                let fwd = lp - ln(m as f64) + random_walk_log_density(law, l[k], v, sc.level);
                let rev = lp - ln(m as f64) + random_walk_log_density(law, v, l[k], sc.level);
                Some((StepFunction { change_indices: c.clone(), levels: l2 }, fwd, rev))
            }
            MoveKind::InformedRefresh => {
                let k = rng.random_range(0..m);
                let (a, b) = s.blocks(n)[k];
                let (cen, sd) = self.block_center(r, a, b);
                let v = self.mix_sample(cen, sd, rng);
                let mut l2 = l.clone();
                l2[k] = v;
                let fwd = lp - ln(m as f64) + self.mix_log_density(cen, sd, v);
                let rev = lp - ln(m as f64) + self.mix_log_density(cen, sd, l[k]);
                Some((StepFunction { change_indices: c.clone(), levels: l2 }, fwd, rev))
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn iso_log_q(
        &self,
        kind: MoveKind,
        from: &StepFunction,
        to: &StepFunction,
        r: &[f64],
        cap: usize,
        lp: f64,
        sc: &Scales,
    ) -> f64 {
        let n = self.t.n;
        let (m, m2) = (from.levels.len(), to.levels.len());
        let ninf = f64::NEG_INFINITY;
        let (cf, ct) = (&from.change_indices, &to.change_indices);
        match kind {
            MoveKind::Birth => {
                if m2 != m + 1 || m >= cap || m >= n {
                    return ninf;
                }
                let (gone, added) = diff_sorted(cf, ct);
                let (lgone, ladded) = diff_sorted(&from.levels, &to.levels);
                if !gone.is_empty() || added.len() != 1 || !lgone.is_empty() || ladded.len() != 1 {
                    return ninf;
                }
                let k = ct.binary_search(&added[0]).expect("added index is present");
                let (a, b) = block_of_label(ct, k, n);
                let (cen, sd) = self.block_center(r, a, b);
                lp - ln((n - m) as f64) + self.mix_log_density(cen, sd, ladded[0])
            }
            MoveKind::Death => {
                if m2 + 1 != m || m < 2 {
                    return ninf;
                }
                let (gone, added) = diff_sorted(cf, ct);
                let (lgone, ladded) = diff_sorted(&from.levels, &to.levels);
                if gone.len() != 1 || !added.is_empty() || lgone.len() != 1 || !ladded.is_empty() {
                    return ninf;
                }
                let mult = from.levels.iter().filter(|&&x| x == lgone[0]).count() as f64;
                lp - ln(m as f64) + ln(mult / m as f64)
            }
            MoveKind::Move => {
                if m2 != m || from.levels != to.levels || m >= n {
                    return ninf;
                }
                let (gone, added) = diff_sorted(cf, ct);
                if gone.len() != 1 || added.len() != 1 {
                    return ninf;
                }
                lp - ln(m as f64) + relocation_log_density(n, m, gone[0], added[0])
            }
            MoveKind::Refresh | MoveKind::InformedRefresh => {
                if m2 != m || cf != ct {
                    return ninf;
                }
                let changed: Vec<usize> = (0..m).filter(|&i| from.levels[i] != to.levels[i]).collect();
                if changed.len() != 1 {
                    return ninf;
                }
                let k = changed[0];
                let (old, new) = (from.levels[k], to.levels[k]);
                if kind == MoveKind::Refresh {
                    lp - ln(m as f64) + random_walk_log_density(&self.t.law, old, new, sc.level)
                } else {
                    let (a, b) = from.blocks(n)[k];
                    let (cen, sd) = self.block_center(r, a, b);
                    lp - ln(m as f64) + self.mix_log_density(cen, sd, new)
                }
            }
        }
    }

    // ----- partially linear ----------------------------------------------

    fn pl_x(&self) -> &[Vec<f64>] {
        match &self.t.exp.design {
            Design::PartialLinear { x, .. } => x,
            _ => &[],
        }
    }

    /// `y - X_S beta`, optionally leaving out support position `skip`, and
    /// optionally also subtracting the step component.
    fn pl_residual(&self, sp: &SparsePlusStep, skip: Option<usize>, with_step: bool) -> Vec<f64> {
        let x = self.pl_x();
        let u = with_step.then(|| sp.step.evaluate(self.t.n));
        (0..self.t.n)
            .map(|i| {
                let mut r = self.t.y[i];
                for (k, (&j, &b)) in sp.support.iter().zip(&sp.beta).enumerate() {
                    if Some(k) != skip {
                        r -= x[i][j] * b;
                    }
                }
                if let Some(u) = &u {
                    r -= u[i];
                }
                r
            })
            .collect()
    }

    /// Least-squares coefficient of covariate `j` on the residual.
    fn beta_center(&self, j: usize, r: &[f64]) -> (f64, f64) {
        let x = self.pl_x();
        let (mut xx, mut xr) = (0.0, 0.0);
        for (row, &ri) in x.iter().zip(r) {
            xx += row[j] * row[j];
            xr += row[j] * ri;
        }
        if xx <= 0.0 {
            return (0.0, 1.0);
        }
        let mean_y = self.t.y.iter().sum::<f64>() / self.t.n as f64;
        (xr / xx, (self.noise_sd(mean_y) / xx.sqrt()).max(1e-3))
    }

    fn pl_propose(
        &self,
        kind: MoveKind,
        sp: &SparsePlusStep,
        lp: f64,
        lp_rev: f64,
        sc: &Scales,
        rng: &mut Rng,
    ) -> Option<Proposal> {
        let (cap_s, cap_m) = (self.t.caps[0], self.t.caps[1]);
        if rng.random::<bool>() {
            let r = self.pl_residual(sp, None, false);
            let (step, f, rv) = self.iso_propose(kind, &sp.step, &r, cap_m, lp, lp_rev, sc, rng)?;
            return Some(Proposal {
                point: ParameterPoint::SparsePlusStep(SparsePlusStep { step, ..sp.clone() }),
                log_q_fwd: f + LN_HALF,
                log_q_rev: rv + LN_HALF,
                block: Block::Level,
            });
        }
        let p = sp.p;
        let s = sp.support.len();
        let law = &self.t.law;
        let mut out = sp.clone();
        let (fwd, rev) = match kind {
            MoveKind::Birth => {
                if s >= cap_s || s >= p {
                    return None;
                }
                let j = draw_unused(rng, p, &sp.support);
                let r = self.pl_residual(sp, None, true);
                let (cen, sd) = self.beta_center(j, &r);
                let b = self.mix_sample(cen, sd, rng);
                let k = sp.support.binary_search(&j).unwrap_err();
                out.support.insert(k, j);
                out.beta.insert(k, b);
                (
                    lp - ln((p - s) as f64) + self.mix_log_density(cen, sd, b),
                    lp_rev - ln((s + 1) as f64),
                )
            }
            MoveKind::Death => {
                if s < 2 {
                    return None;
                }
                let k = rng.random_range(0..s);
                let (j, b) = (out.support.remove(k), out.beta.remove(k));
                let r = self.pl_residual(&out, None, true);
                let (cen, sd) = self.beta_center(j, &r);
                (
                    lp - ln(s as f64),
                    lp_rev - ln((p - s + 1) as f64) + self.mix_log_density(cen, sd, b),
                )
            }
            MoveKind::Move => {
                if s >= p {
                    return None;
                }
                let k = rng.random_range(0..s);
                let j = draw_unused(rng, p, &sp.support);
                let b = out.beta.remove(k);
                out.support.remove(k);
                let pos = out.support.binary_search(&j).unwrap_err();
                out.support.insert(pos, j);
                out.beta.insert(pos, b);
                let q = lp - ln(s as f64) - ln((p - s) as f64);
                (q, q)
            }
            MoveKind::Refresh => {
                let k = rng.random_range(0..s);
                let b = random_walk(law, sp.beta[k], sc.coef, rng)?;
                out.beta[k] = b;
                (
                    lp - ln(s as f64) + random_walk_log_density(law, sp.beta[k], b, sc.coef),
                    lp - ln(s as f64) + random_walk_log_density(law, b, sp.beta[k], sc.coef),
                )
            }
            MoveKind::InformedRefresh => {
                let k = rng.random_range(0..s);
                let r = self.pl_residual(sp, Some(k), true);
                let (cen, sd) = self.beta_center(sp.support[k], &r);
                let b = self.mix_sample(cen, sd, rng);
                out.beta[k] = b;
                (
                    lp - ln(s as f64) + self.mix_log_density(cen, sd, b),
                    lp - ln(s as f64) + self.mix_log_density(cen, sd, sp.beta[k]),
                )
            }
        };
        Some(Proposal {
            point: ParameterPoint::SparsePlusStep(out),
            log_q_fwd: fwd + LN_HALF,
            log_q_rev: rev + LN_HALF,
            block: Block::Coef,
        })
    }

    fn pl_log_q(&self, kind: MoveKind, a: &SparsePlusStep, b: &SparsePlusStep, lp: f64, sc: &Scales) -> f64 {
        let ninf = f64::NEG_INFINITY;
        if a.p != b.p {
            return ninf;
        }
        let same_sparse = a.support == b.support && a.beta == b.beta;
        let same_step = a.step == b.step;
        if same_sparse && !same_step {
            let r = self.pl_residual(a, None, false);
            return LN_HALF + self.iso_log_q(kind, &a.step, &b.step, &r, self.t.caps[1], lp, sc);
        }
        if !same_step || same_sparse {
            return ninf;
        }
        let (p, s, s2) = (a.p, a.support.len(), b.support.len());
        let value = |sp: &SparsePlusStep, j: usize| {
            sp.support.binary_search(&j).ok().map(|k| sp.beta[k])
        };
        let (gone, added) = diff_sorted(&a.support, &b.support);
        let law = &self.t.law;
        let q = match kind {
            MoveKind::Birth => {
                if s2 != s + 1 || s >= self.t.caps[0] || s >= p || !gone.is_empty() || added.len() != 1 {
                    return ninf;
                }
                if a.support.iter().any(|&j| value(a, j) != value(b, j)) {
                    return ninf;
                }
                let j = added[0];
                let r = self.pl_residual(a, None, true);
                let (cen, sd) = self.beta_center(j, &r);
                lp - ln((p - s) as f64) + self.mix_log_density(cen, sd, value(b, j).unwrap_or(f64::NAN))
            }
            MoveKind::Death => {
                if s2 + 1 != s || s < 2 || gone.len() != 1 || !added.is_empty() {
                    return ninf;
                }
                if b.support.iter().any(|&j| value(a, j) != value(b, j)) {
                    return ninf;
                }
                lp - ln(s as f64)
            }
            MoveKind::Move => {
                if s2 != s || s >= p || gone.len() != 1 || added.len() != 1 {
                    return ninf;
                }
                let kept_same = a.support.iter().filter(|&&j| j != gone[0]).all(|&j| value(a, j) == value(b, j));
                if !kept_same || value(a, gone[0]) != value(b, added[0]) {
                    return ninf;
                }
                lp - ln(s as f64) - ln((p - s) as f64)
            }
            MoveKind::Refresh | MoveKind::InformedRefresh => {
                if a.support != b.support {
                    return ninf;
                }
                let changed: Vec<usize> = (0..s).filter(|&k| a.beta[k] != b.beta[k]).collect();
                if changed.len() != 1 {
                    return ninf;
                }
                let k = changed[0];
                if kind == MoveKind::Refresh {
                    lp - ln(s as f64) + random_walk_log_density(law, a.beta[k], b.beta[k], sc.coef)
                } else {
                    let r = self.pl_residual(a, Some(k), true);
                    let (cen, sd) = self.beta_center(a.support[k], &r);
                    lp - ln(s as f64) + self.mix_log_density(cen, sd, b.beta[k])
                }
            }
        };
        LN_HALF + q
    }

    // ----- planes and factor pairs ---------------------------------------

    /// Planes as `[slope.., intercept]`, factor pairs as `[u.., v..]`.
    fn items(&self, x: &ParameterPoint) -> Option<Vec<Vec<f64>>> {
        match x {
            ParameterPoint::MaxAffine(ma) => Some(
                ma.planes
                    .iter()
                    .map(|p| p.slope.iter().copied().chain([p.intercept]).collect())
                    .collect(),
            ),
            ParameterPoint::FactorMatrix(fm) => Some(
                fm.u.iter()
                    .zip(&fm.v)
                    .map(|(u, v)| u.iter().chain(v).copied().collect())
                    .collect(),
            ),
            _ => None,
        }
    }

    fn from_items(&self, like: &ParameterPoint, items: Vec<Vec<f64>>) -> ParameterPoint {
        match like {
            ParameterPoint::FactorMatrix(fm) => {
                let m1 = fm.rows;
                let (u, v) = items
                    .into_iter()
                    .map(|mut it| {
                        let v = it.split_off(m1);
                        (it, v)
                    })
                    .unzip();
                ParameterPoint::FactorMatrix(FactorMatrix { rows: fm.rows, cols: fm.cols, u, v })
            }
            _ => ParameterPoint::MaxAffine(MaxAffine {
                planes: items
                    .into_iter()
                    .map(|mut it| {
                        let intercept = it.pop().unwrap_or(0.0);
                        Plane { slope: it, intercept }
                    })
                    .collect(),
            }),
        }
    }

    fn item_dim(&self) -> usize {
        let r = &self.t.prior.rate;
        match self.t.app {
            App::Trace => r.m1 + r.m2,
            _ => r.d + 1,
        }
    }

    fn list_point(&self, items: &[Vec<f64>]) -> ParameterPoint {
        let r = &self.t.prior.rate;
        let like = match self.t.app {
            App::Trace => ParameterPoint::FactorMatrix(FactorMatrix::zero(r.m1, r.m2)),
            _ => ParameterPoint::MaxAffine(MaxAffine { planes: Vec::new() }),
        };
        self.from_items(&like, items.to_vec())
    }

    /// Data-driven center for a new plane or factor pair, given the other items.
    fn list_center(&self, items: &[Vec<f64>]) -> Vec<f64> {
        let dim = self.item_dim();
        let fitted = if items.is_empty() {
            vec![0.0; self.t.n]
        } else {
            self.t
                .exp
                .signal(&self.list_point(items))
                .unwrap_or_else(|_| vec![0.0; self.t.n])
        };
        let resid: Vec<f64> = self.t.y.iter().zip(&fitted).map(|(y, f)| y - f).collect();
        match &self.t.exp.design {
            Design::Points { points } => {
                let d = dim - 1;
                let positive: Vec<usize> = (0..self.t.n).filter(|&i| resid[i] > 0.0).collect();
                let rows: Vec<usize> = if !items.is_empty() && positive.len() > d {
                    positive
                } else {
                    (0..self.t.n).collect()
                };
                let a = DMatrix::from_fn(rows.len(), dim, |i, j| {
                    if j < d {
                        points[rows[i]][j]
                    } else {
                        1.0
                    }
                });
                let yv = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.t.y[i]));
                let ata = a.transpose() * &a + DMatrix::identity(dim, dim) * 1e-8;
                ata.cholesky()
                    .map(|c| c.solve(&(a.transpose() * yv)).iter().copied().collect())
                    .unwrap_or_else(|| vec![0.0; dim])
            }
            Design::Matrices { rows, cols, xs } => {
                let (m1, m2) = (*rows, *cols);
                let mut e = DMatrix::<f64>::zeros(m1, m2);
                let mut energy = 0.0;
                for (x, r) in xs.iter().zip(&resid) {
                    for i in 0..m1 {
                        for j in 0..m2 {
                            e[(i, j)] += r * x[i * m2 + j];
                        }
                    }
                    energy += x.iter().map(|v| v * v).sum::<f64>();
                }
                if energy <= 0.0 {
                    return vec![0.0; dim];
                }
                e *= (m1 * m2) as f64 / energy;
                match e.try_svd(true, true, 1e-12, 200) {
                    Some(svd) => {
                        let k = svd
                            .singular_values
                            .iter()
                            .enumerate()
                            .fold(0, |best, (i, &s)| if s > svd.singular_values[best] { i } else { best });
                        let s = svd.singular_values[k].sqrt();
                        let u = svd.u.as_ref().expect("requested u");
                        let vt = svd.v_t.as_ref().expect("requested v");
                        (0..m1)
                            .map(|i| s * u[(i, k)])
                            .chain((0..m2).map(|j| s * vt[(k, j)]))
                            .collect()
                    }
                    None => vec![0.0; dim],
                }
            }
            _ => vec![0.0; dim],
        }
    }

    fn mix_vec_log_density(&self, center: &[f64], sd: f64, v: &[f64]) -> f64 {
        center
            .iter()
            .zip(v)
            .map(|(&c, &x)| self.mix_log_density(c, sd, x))
            .sum()
    }

    fn list_propose(
        &self,
        kind: MoveKind,
        items: &[Vec<f64>],
        lp: f64,
        lp_rev: f64,
        sc: &Scales,
        rng: &mut Rng,
    ) -> Option<(Vec<Vec<f64>>, f64, f64)> {
        let m = items.len();
        let dim = self.item_dim();
        let law = &self.t.law;
        let sd = sc.coef;
        let mut out = items.to_vec();
        match kind {
            MoveKind::Birth => {
                if m >= self.t.caps[0] {
                    return None;
                }
                let center = self.list_center(items);
                let item: Vec<f64> = center.iter().map(|&c| self.mix_sample(c, sd, rng)).collect();
                let q = self.mix_vec_log_density(&center, sd, &item);
                out.insert(rng.random_range(0..=m), item);
                let k = ln(removal_count(&out, items) as f64);
                Some((out, lp + k - ln((m + 1) as f64) + q, lp_rev + k - ln((m + 1) as f64)))
            }
            MoveKind::Death => {
                if m < 2 {
                    return None;
                }
                let item = out.remove(rng.random_range(0..m));
                let center = self.list_center(&out);
                let q = self.mix_vec_log_density(&center, sd, &item);
                let k = ln(removal_count(items, &out) as f64);
                Some((out.clone(), lp + k - ln(m as f64), lp_rev + k - ln(m as f64) + q))
            }
            MoveKind::Move => {
                let j = rng.random_range(0..m);
                let t = rng.random_range(0..dim);
                let v = random_walk(law, items[j][t], sd, rng)?;
                out[j][t] = v;
                let base = lp - ln(m as f64) - ln(dim as f64);
                Some((
                    out,
                    base + random_walk_log_density(law, items[j][t], v, sd),
                    base + random_walk_log_density(law, v, items[j][t], sd),
                ))
            }
            MoveKind::Refresh => {
                let j = rng.random_range(0..m);
                let (lo, hi, side) = self.refresh_range(rng);
                for t in lo..hi {
                    out[j][t] = random_walk(law, items[j][t], sd, rng)?;
                }
                let base = lp - ln(m as f64) + side;
                let (mut f, mut r) = (base, base);
                for t in lo..hi {
                    f += random_walk_log_density(law, items[j][t], out[j][t], sd);
                    r += random_walk_log_density(law, out[j][t], items[j][t], sd);
                }
                Some((out, f, r))
            }
            MoveKind::InformedRefresh => {
                let j = rng.random_range(0..m);
                let mut rest = items.to_vec();
                rest.remove(j);
                let center = self.list_center(&rest);
                out[j] = center.iter().map(|&c| self.mix_sample(c, sd, rng)).collect();
                let base = lp - ln(m as f64);
                Some((
                    out.clone(),
                    base + self.mix_vec_log_density(&center, sd, &out[j]),
                    base + self.mix_vec_log_density(&center, sd, &items[j]),
                ))
            }
        }
    }

    /// Coordinates refreshed together: one factor of a pair, or a whole plane.
    fn refresh_range(&self, rng: &mut Rng) -> (usize, usize, f64) {
        match self.t.app {
            App::Trace => {
                let m1 = self.t.prior.rate.m1;
                if rng.random::<bool>() {
                    (0, m1, LN_HALF)
                } else {
                    (m1, self.item_dim(), LN_HALF)
                }
            }
            _ => (0, self.item_dim(), 0.0),
        }
    }

    fn list_log_q(&self, kind: MoveKind, a: &[Vec<f64>], b: &[Vec<f64>], lp: f64, sc: &Scales) -> f64 {
        let ninf = f64::NEG_INFINITY;
        let (m, m2) = (a.len(), b.len());
        let dim = self.item_dim();
        let sd = sc.coef;
        let law = &self.t.law;
        match kind {
            MoveKind::Birth => {
                if m2 != m + 1 || m >= self.t.caps[0] {
                    return ninf;
                }
                let k = removal_count(b, a);
                let Some(j) = (0..m2).find(|&j| removed(b, j) == a) else {
                    return ninf;
                };
                let center = self.list_center(a);
                lp + ln(k as f64) - ln(m2 as f64) + self.mix_vec_log_density(&center, sd, &b[j])
            }
            MoveKind::Death => {
                if m2 + 1 != m || m < 2 {
                    return ninf;
                }
                let k = removal_count(a, b);
                if k == 0 {
                    return ninf;
                }
                lp + ln(k as f64) - ln(m as f64)
            }
            MoveKind::Move | MoveKind::Refresh | MoveKind::InformedRefresh => {
                if m2 != m {
                    return ninf;
                }
                let changed: Vec<usize> = (0..m).filter(|&j| a[j] != b[j]).collect();
                if changed.len() != 1 {
                    return ninf;
                }
                let j = changed[0];
                let coords: Vec<usize> = (0..dim).filter(|&t| a[j][t] != b[j][t]).collect();
                match kind {
                    MoveKind::Move => {
                        if coords.len() != 1 {
                            return ninf;
                        }
                        let t = coords[0];
                        lp - ln(m as f64) - ln(dim as f64) + random_walk_log_density(law, a[j][t], b[j][t], sd)
                    }
                    MoveKind::Refresh => {
                        let (lo, hi, side) = match self.t.app {
                            App::Trace => {
                                let m1 = self.t.prior.rate.m1;
                                if coords.iter().all(|&t| t < m1) {
                                    (0, m1, LN_HALF)
                                } else if coords.iter().all(|&t| t >= m1) {
                                    (m1, dim, LN_HALF)
                                } else {
                                    return ninf;
                                }
                            }
                            _ => (0, dim, 0.0),
                        };
                        lp - ln(m as f64)
                            + side
                            + (lo..hi)
                                .map(|t| random_walk_log_density(law, a[j][t], b[j][t], sd))
                                .sum::<f64>()
                    }
                    _ => {
                        let center = self.list_center(&removed(a, j));
                        lp - ln(m as f64) + self.mix_vec_log_density(&center, sd, &b[j])
                    }
                }
            }
        }
    }
}

/// Density of the relocation kernel for one change point: a uniform draw
/// among unused indices or a local shift, each with probability one half.
fn relocation_log_density(n: usize, m: usize, old: usize, new: usize) -> f64 {
    let w = local_width(n);
    let d = old.abs_diff(new);
    let local = if (1..=w).contains(&d) { 0.5 / (2 * w) as f64 } else { 0.0 };
    (0.5 / (n - m) as f64 + local).ln()
}

fn removed(items: &[Vec<f64>], j: usize) -> Vec<Vec<f64>> {
    let mut v = items.to_vec();
    v.remove(j);
    v
}

/// Number of positions of `big` whose removal leaves `small`.
fn removal_count(big: &[Vec<f64>], small: &[Vec<f64>]) -> usize {
    (0..big.len()).filter(|&j| removed(big, j) == small).count()
}
