//! Exact posterior by summation over every state of a gridded model.

use serde::{Deserialize, Serialize};

use super::target::Target;
use crate::error::{Error, Result};
use crate::experiments::{Dataset, ExperimentSpec};
use crate::numeric::log_sum_exp;
use crate::params::{FactorMatrix, ModelIndex, ParameterPoint, SparsePlusStep, StepFunction};
use crate::priors::{App, TwoStepPrior};

/// Largest number of states the enumeration will visit.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub index: ModelIndex,
    pub point: ParameterPoint,
    pub log_post: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorTable {
    pub entries: Vec<TableEntry>,
    /// Log of the normalizing constant of the unnormalized posterior.
    pub log_evidence: f64,
}

impl PosteriorTable {
    /// Posterior expectation of the fitted values.
    pub fn mean_fit(&self, exp: &ExperimentSpec) -> Result<Vec<f64>> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.entries {
            let v = exp.signal(&e.point)?;
            if out.is_empty() {
                out = vec![0.0; v.len()];
            }
            for (o, x) in out.iter_mut().zip(v) {
                *o += e.prob * x;
            }
        }
        Ok(out)
    }

    /// Posterior probability of each model index.
    pub fn index_marginal(&self) -> std::collections::BTreeMap<ModelIndex, f64> {
        let mut h = std::collections::BTreeMap::new();
        for e in &self.entries {
            *h.entry(e.index.clone()).or_insert(0.0) += e.prob;
        }
        h
    }
}

fn choose(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        let Some(i) = (0..k).rev().find(|&i| c[i] != i + n - k) else {
            return out;
        };
        c[i] += 1;
        for j in i + 1..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

/// All nondecreasing index vectors of length `k` over `0..g`.
fn multisets(g: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut c = vec![0usize; k];
    loop {
        out.push(c.clone());
        let Some(i) = (0..k).rev().find(|&i| c[i] + 1 < g) else {
            return out;
        };
        c[i] += 1;
        for j in i + 1..k {
            c[j] = c[i];
        }
    }
}

/// All vectors of length `k` over `0..g`.
fn tuples(g: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..g).map(move |v| {
                    let mut t = t.clone();
                    t.push(v);
                    t
                })
            })
            .collect();
    }
    out
}

fn step_states(n: usize, cap: usize, grid: &[f64]) -> Vec<StepFunction> {
    let mut out = Vec::new();
    for m in 1..=cap {
        let levels: Vec<Vec<f64>> = multisets(grid.len(), m)
            .into_iter()
            .map(|ix| ix.into_iter().map(|i| grid[i]).collect())
            .collect();
        for c in subsets(n, m) {
            for l in &levels {
                out.push(StepFunction {
                    change_indices: c.clone(),
                    levels: l.clone(),
                });
            }
        }
    }
    out
}

fn step_count(n: usize, cap: usize, g: usize) -> u128 {
    (1..=cap as u128)
        .map(|m| choose(n as u128, m).saturating_mul(choose(g as u128 + m - 1, m)))
        .fold(0u128, u128::saturating_add)
}

fn state_count(t: &Target<'_>, g: usize) -> Result<u128> {
    let r = &t.prior.rate;
    let g128 = g as u128;
    Ok(match t.app {
        App::Iso => step_count(t.n, t.caps[0], g),
        App::PartialLinear => {
            let sparse = (1..=t.caps[0] as u32)
                .map(|s| choose(r.p as u128, s as u128).saturating_mul(g128.saturating_pow(s)))
                .fold(0u128, u128::saturating_add);
            sparse.saturating_mul(step_count(t.n, t.caps[1], g))
        }
        App::Trace => {
            if r.m1 > 3 || r.m2 > 3 {
                return Err(Error::InvalidConfig(
                    "matrix enumeration needs m1, m2 <= 3".into(),
                ));
            }
            let dim = (r.m1 + r.m2) as u32;
            (1..=t.caps[0] as u32)
                .map(|k| g128.saturating_pow(k * dim))
                .fold(0u128, u128::saturating_add)
        }
        _ => {
            return Err(Error::InvalidConfig(format!(
                "no enumeration for {:?} models",
                t.app
            )))
        }
    })
}

/// Exact posterior over every state of the truncated, gridded model space.
/// Requires a level grid on the prior.
pub fn enumerate_posterior(
    exp: &ExperimentSpec,
    data: &Dataset,
    prior: &TwoStepPrior,
) -> Result<PosteriorTable> {
    let grid = prior
        .level_grid
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("enumeration needs a level grid".into()))?
        .values
        .clone();
    let t = Target::new(exp, data, prior, false)?;
    let states = state_count(&t, grid.len())?;
    if states > ENUMERATION_LIMIT {
        return Err(Error::StateSpaceTooLarge {
            states,
            limit: ENUMERATION_LIMIT,
        });
    }
    let r = &prior.rate;
    let points: Vec<ParameterPoint> = match t.app {
        App::Iso => step_states(t.n, t.caps[0], &grid)
            .into_iter()
            .map(ParameterPoint::StepFunction)
            .collect(),
        App::PartialLinear => {
            let steps = step_states(t.n, t.caps[1], &grid);
            let mut out = Vec::new();
            for s in 1..=t.caps[0] {
                for support in subsets(r.p, s) {
                    for b in tuples(grid.len(), s) {
                        let beta: Vec<f64> = b.iter().map(|&i| grid[i]).collect();
                        for step in &steps {
                            out.push(ParameterPoint::SparsePlusStep(SparsePlusStep {
                                p: r.p,
                                support: support.clone(),
                                beta: beta.clone(),
                                step: step.clone(),
                            }));
                        }
                    }
                }
            }
            out
        }
        _ => {
            let (m1, m2) = (r.m1, r.m2);
            let items: Vec<Vec<f64>> = tuples(grid.len(), m1 + m2)
                .into_iter()
                .map(|ix| ix.into_iter().map(|i| grid[i]).collect())
                .collect();
            let mut lists: Vec<Vec<&Vec<f64>>> = vec![Vec::new()];
            let mut out = Vec::new();
            for _ in 0..t.caps[0] {
                lists = lists
                    .into_iter()
                    .flat_map(|l| {
                        items.iter().map(move |it| {
                            let mut l = l.clone();
                            l.push(it);
                            l
                        })
                    })
                    .collect();
                for l in &lists {
                    out.push(ParameterPoint::FactorMatrix(FactorMatrix {
                        rows: m1,
                        cols: m2,
                        u: l.iter().map(|it| it[..m1].to_vec()).collect(),
                        v: l.iter().map(|it| it[m1..].to_vec()).collect(),
                    }));
                }
            }
            out
        }
    };
    let logs: Vec<f64> = points.iter().map(|p| t.log_post(p)).collect();
    let z = log_sum_exp(&logs);
    if !z.is_finite() {
        return Err(Error::NonFiniteEstimate("posterior has no finite state".into()));
    }
    let entries = points
        .into_iter()
        .zip(logs)
        .filter(|(_, l)| l.is_finite())
        .map(|(point, log_post)| TableEntry {
            index: point.model_index().expect("enumerated states have an index"),
            point,
            log_post,
            prob: (log_post - z).exp(),
        })
        .collect();
    Ok(PosteriorTable {
        entries,
        log_evidence: z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn combinatorial_helpers() {
        assert_eq!(subsets(4, 2).len(), 6);
        assert_eq!(multisets(3, 2).len(), 6);
        assert_eq!(tuples(3, 2).len(), 9);
        assert_eq!(step_count(4, 2, 5), 4 * 5 + 6 * 15);
        assert_eq!(step_states(4, 2, &[0.0, 1.0, 2.0, 3.0, 4.0]).len(), 110);
    }
}
