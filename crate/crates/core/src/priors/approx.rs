//! Best approximations `f_{0,m}` of a truth within a model.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;

use crate::error::{Error, Result};
use crate::params::{FactorMatrix, MaxAffine, Plane, StepFunction};
use crate::rng::Rng;

/// Largest design for which non-monotone truths are handled by the exact
/// order-constrained dynamic program. Larger designs fall back to an
/// unconstrained partition repaired by pool-adjacent-violators.
pub const EXACT_CONSTRAINED_LIMIT: usize = 400;

const TIE_TOL: f64 = 1e-12;

/// Incremental least-squares approximation of a vector by nondecreasing step
/// functions with at most `m` pieces. Layers are computed on demand, so
/// callers that scan `m = 1, 2, ...` pay only for the layers they use.
#[derive(Debug, Clone)]
pub struct IsoApproximator {
    n: usize,
    s1: Vec<f64>,
    s2: Vec<f64>,
    mode: Mode,
    /// `best[k - 1]` = smallest SSE over feasible partitions with at most `k` blocks.
    best: Vec<f64>,
    /// Number of blocks attaining `best[k - 1]`, preferring fewer.
    best_blocks: Vec<usize>,
    /// Global isotonic fit: blocks and its SSE.
    pav: (Vec<(usize, usize)>, f64),
}

#[derive(Debug, Clone)]
enum Mode {
    /// Unconstrained partition DP. `cost[k - 1][i]` is the optimal SSE of the
    /// prefix `[0, i)` with exactly `k` blocks; `back` stores the last start.
    Free {
        cost: Vec<Vec<f64>>,
        back: Vec<Vec<u32>>,
        repair: bool,
    },
    /// Constrained DP over (last block start, end).
    Ordered {
        prev: Vec<f64>,
        back: Vec<Vec<u16>>,
        layers: usize,
    },
}

impl IsoApproximator {
    pub fn new(f0: &[f64]) -> Self {
        let n = f0.len();
        let mut s1 = vec![0.0; n + 1];
        let mut s2 = vec![0.0; n + 1];
        for (i, &v) in f0.iter().enumerate() {
            s1[i + 1] = s1[i] + v;
            s2[i + 1] = s2[i] + v * v;
        }
        let monotone = f0.windows(2).all(|w| w[0] <= w[1]);
        let mode = if monotone || n > EXACT_CONSTRAINED_LIMIT {
            Mode::Free {
                cost: Vec::new(),
                back: Vec::new(),
                repair: !monotone,
            }
        } else {
            Mode::Ordered {
                prev: Vec::new(),
                back: Vec::new(),
                layers: 0,
            }
        };
        let mut me = IsoApproximator {
            n,
            s1,
            s2,
            mode,
            best: Vec::new(),
            best_blocks: Vec::new(),
            pav: (Vec::new(), 0.0),
        };
        let unit: Vec<(usize, usize)> = (0..n).map(|i| (i, i + 1)).collect();
        let blocks = me.pav_merge(&unit);
        let sse = blocks.iter().map(|&(a, b)| me.sse(a, b)).sum();
        me.pav = (blocks, sse);
        me
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Whether every answer is an exact minimizer.
    pub fn is_exact(&self) -> bool {
        !matches!(self.mode, Mode::Free { repair: true, .. })
    }

    fn mean(&self, a: usize, b: usize) -> f64 {
        (self.s1[b] - self.s1[a]) / (b - a) as f64
    }

    fn sse(&self, a: usize, b: usize) -> f64 {
        let s = self.s1[b] - self.s1[a];
        (self.s2[b] - self.s2[a] - s * s / (b - a) as f64).max(0.0)
    }

    /// Smallest `ell_n^2` error over the model with at most `m` pieces.
    pub fn error(&mut self, m: usize) -> Result<f64> {
        self.check(m)?;
        self.extend_to(m);
        Ok(self.best[m - 1] / self.n as f64)
    }

    /// A minimizer with at most `m` pieces, using as few pieces as possible.
    pub fn step(&mut self, m: usize) -> Result<StepFunction> {
        self.check(m)?;
        self.extend_to(m);
        let blocks = self.blocks_for(m);
        Ok(StepFunction {
            change_indices: blocks.iter().map(|b| b.0).collect(),
            levels: blocks.iter().map(|&(a, b)| self.mean(a, b)).collect(),
        })
    }

    fn check(&self, m: usize) -> Result<()> {
        if m == 0 {
            return Err(Error::IndexOutOfRange("m = 0".into()));
        }
        if m > self.n {
            return Err(Error::TooManyPieces { m, n: self.n });
        }
        Ok(())
    }

    fn pav_pieces(&self) -> usize {
        self.pav.0.len()
    }

    fn extend_to(&mut self, m: usize) {
        while self.best.len() < m {
            let k = self.best.len() + 1;
            let (sse, blocks) = if k >= self.pav_pieces() {
                // The global isotonic fit is feasible and optimal from here on.
                match self.best.last() {
                    Some(&prev) if prev <= self.pav.1 + TIE_TOL * (1.0 + self.pav.1) => {
                        (prev, self.best_blocks[k - 2])
                    }
                    _ => (self.pav.1, self.pav_pieces()),
                }
            } else {
                let layer = self.next_layer(k);
                let (prev_sse, prev_blocks) = match k {
                    1 => (f64::INFINITY, 0),
                    _ => (self.best[k - 2], self.best_blocks[k - 2]),
                };
                if !prev_sse.is_finite() || layer < prev_sse - TIE_TOL * (1.0 + prev_sse.abs()) {
                    (layer, k)
                } else {
                    (prev_sse, prev_blocks)
                }
            };
            self.best.push(sse);
            self.best_blocks.push(blocks);
        }
    }

    /// Compute DP layer `k` and return the best SSE with exactly `k` blocks
    /// (after repair in the fallback mode).
    fn next_layer(&mut self, k: usize) -> f64 {
        let n = self.n;
        let mut mode = std::mem::replace(
            &mut self.mode,
            Mode::Free {
                cost: Vec::new(),
                back: Vec::new(),
                repair: false,
            },
        );
        let out = match &mut mode {
            Mode::Free { cost, back, repair } => {
                let mut c = vec![f64::INFINITY; n + 1];
                let mut bk = vec![0u32; n + 1];
                if k == 1 {
                    for (i, ci) in c.iter_mut().enumerate().skip(1) {
                        *ci = self.sse(0, i);
                    }
                } else {
                    let p = &cost[k - 2];
                    for i in k..=n {
                        let mut best = f64::INFINITY;
                        let mut arg = 0;
                        for j in (k - 1)..i {
                            let v = p[j] + self.sse(j, i);
                            if v < best {
                                best = v;
                                arg = j;
                            }
                        }
                        c[i] = best;
                        bk[i] = arg as u32;
                    }
                }
                cost.push(c);
                back.push(bk);
                if *repair {
                    let blocks = free_blocks(back, k, n);
                    let merged = self.pav_merge(&blocks);
                    merged.iter().map(|&(a, b)| self.sse(a, b)).sum()
                } else {
                    cost[k - 1][n]
                }
            }
            Mode::Ordered { prev, back, layers } => {
                let w = n + 1;
                let mut cur = vec![f64::INFINITY; w * w];
                let mut bk = vec![0u16; w * w];
                if k == 1 {
                    for i in 1..=n {
                        cur[i] = self.sse(0, i);
                    }
                } else {
                    let mut cand: Vec<(f64, f64, usize)> = Vec::with_capacity(n);
                    for j in (k - 1)..n {
                        cand.clear();
                        for l in 0..j {
                            let v = prev[l * w + j];
                            if v.is_finite() {
                                cand.push((self.mean(l, j), v, l));
                            }
                        }
                        if cand.is_empty() {
                            continue;
                        }
                        cand.sort_by(|a, b| a.0.total_cmp(&b.0));
                        // Prefix minima of cost over candidates sorted by mean.
                        let mut pref: Vec<(f64, usize)> = Vec::with_capacity(cand.len());
                        for &(_, v, l) in &cand {
                            match pref.last() {
                                Some(&(bv, _)) if bv <= v => pref.push(*pref.last().unwrap()),
                                _ => pref.push((v, l)),
                            }
                        }
                        for i in (j + 1)..=n {
                            let thr = self.mean(j, i) + 1e-12 * (1.0 + self.mean(j, i).abs());
                            let cnt = cand.partition_point(|c| c.0 <= thr);
                            if cnt == 0 {
                                continue;
                            }
                            let (v, l) = pref[cnt - 1];
                            cur[j * w + i] = v + self.sse(j, i);
                            bk[j * w + i] = l as u16;
                        }
                    }
                }
                let best = (0..n).map(|j| cur[j * w + n]).fold(f64::INFINITY, f64::min);
                *prev = cur;
                back.push(bk);
                *layers = k;
                best
            }
        };
        self.mode = mode;
        out
    }

    fn blocks_for(&self, m: usize) -> Vec<(usize, usize)> {
        let k = self.best_blocks[m - 1];
        if k == self.pav_pieces() && (self.best[m - 1] - self.pav.1).abs() <= TIE_TOL * (1.0 + self.pav.1) {
            return self.pav.0.clone();
        }
        let n = self.n;
        match &self.mode {
            Mode::Free { back, repair, .. } => {
                let blocks = free_blocks(back, k, n);
                if *repair {
                    self.pav_merge(&blocks)
                } else {
                    blocks
                }
            }
            Mode::Ordered { back, .. } => {
                let w = n + 1;
                // The exact layer-k cost matrix is gone; recover the last
                // start by re-scanning ends through the back pointers.
                let mut best = (f64::INFINITY, 0);
                for j in 0..n {
                    let c = self.ordered_cost(back, k, j, n);
                    if c < best.0 {
                        best = (c, j);
                    }
                }
                let mut blocks = Vec::with_capacity(k);
                let (mut j, mut i) = (best.1, n);
                for layer in (1..=k).rev() {
                    blocks.push((j, i));
                    if layer > 1 {
                        let l = back[layer - 1][j * w + i] as usize;
                        i = j;
                        j = l;
                    }
                }
                blocks.reverse();
                blocks
            }
        }
    }

    /// SSE of the chain of blocks ending with `[j, i)` at `layer`, following
    /// back pointers; `inf` when the chain is infeasible.
    fn ordered_cost(&self, back: &[Vec<u16>], layer: usize, j: usize, i: usize) -> f64 {
        let w = self.n + 1;
        let (mut j, mut i) = (j, i);
        let mut total = 0.0;
        let mut last_mean = f64::INFINITY;
        for k in (1..=layer).rev() {
            if j >= i || (k == 1 && j != 0) || (k > 1 && j == 0) {
                return f64::INFINITY;
            }
            let mu = self.mean(j, i);
            if mu > last_mean + 1e-12 * (1.0 + last_mean.abs()) {
                return f64::INFINITY;
            }
            last_mean = mu;
            total += self.sse(j, i);
            if k > 1 {
                let l = back[k - 1][j * w + i] as usize;
                i = j;
                j = l;
            }
        }
        total
    }

    /// Merge adjacent blocks whose means violate the order or tie.
    fn pav_merge(&self, blocks: &[(usize, usize)]) -> Vec<(usize, usize)> {
        let mut stack: Vec<(usize, usize)> = Vec::with_capacity(blocks.len());
        for &b in blocks {
            let mut cur = b;
            while let Some(&top) = stack.last() {
                if self.mean(top.0, top.1) >= self.mean(cur.0, cur.1) {
                    stack.pop();
                    cur = (top.0, cur.1);
                } else {
                    break;
                }
            }
            stack.push(cur);
        }
        stack
    }
}

fn free_blocks(back: &[Vec<u32>], k: usize, n: usize) -> Vec<(usize, usize)> {
    let mut blocks = Vec::with_capacity(k);
    let mut i = n;
    for layer in (1..=k).rev() {
        let j = if layer == 1 { 0 } else { back[layer - 1][i] as usize };
        blocks.push((j, i));
        i = j;
    }
    blocks.reverse();
    blocks
}

/// Best nondecreasing step approximation with at most `m` pieces and its
/// `ell_n^2` error.
pub fn best_approx_iso(f0: &[f64], m: usize) -> Result<(StepFunction, f64)> {
    let mut a = IsoApproximator::new(f0);
    let e = a.error(m)?;
    Ok((a.step(m)?, e))
}

/// Rank-`r` truncated SVD of `a0` and the squared Frobenius error.
pub fn best_approx_rank(a0: &DMatrix<f64>, r: usize) -> Result<(FactorMatrix, f64)> {
    let (rows, cols) = a0.shape();
    if r > rows.min(cols) {
        return Err(Error::IndexOutOfRange(format!(
            "rank {r} exceeds min({rows}, {cols})"
        )));
    }
    let svd = a0
        .clone()
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or(Error::SvdFailure)?;
    let (u, vt) = (svd.u.ok_or(Error::SvdFailure)?, svd.v_t.ok_or(Error::SvdFailure)?);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut fm = FactorMatrix::zero(rows, cols);
    for &k in order.iter().take(r) {
        let s = svd.singular_values[k];
        fm.u.push((0..rows).map(|i| s * u[(i, k)]).collect());
        fm.v.push((0..cols).map(|j| vt[(k, j)]).collect());
    }
    let err = order
        .iter()
        .skip(r)
        .map(|&k| svd.singular_values[k].powi(2))
        .sum();
    Ok((fm, err))
}

/// Least-squares max-affine fit with `m` planes by alternating between
/// assigning points to their maximizing plane and refitting each plane.
/// Returns the best of `restarts` random starts and its mean squared error;
/// the result bounds the optimal error from above.
pub fn fit_max_affine(
    points: &[Vec<f64>],
    y: &[f64],
    m: usize,
    restarts: usize,
    rng: &mut Rng,
) -> Result<(MaxAffine, f64)> {
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    if y.len() != n {
        return Err(Error::LengthMismatch { left: y.len(), right: n });
    }
    if m == 0 || m > n {
        return Err(Error::TooManyPieces { m, n });
    }
    let d = points[0].len();
    let mut best: Option<(MaxAffine, f64)> = None;
    for _ in 0..restarts.max(1) {
        let seeds = sample_indices(rng, n, m).into_vec();
        let mut assign: Vec<usize> = points
            .iter()
            .map(|x| {
                (0..m)
                    .min_by(|&a, &b| {
                        sq_dist(x, &points[seeds[a]]).total_cmp(&sq_dist(x, &points[seeds[b]]))
                    })
                    .unwrap()
            })
            .collect();
        let mut planes: Vec<Plane> = vec![
            Plane {
                slope: vec![0.0; d],
                intercept: crate::numeric::mean(y),
            };
            m
        ];
        for _ in 0..200 {
            for (k, plane) in planes.iter_mut().enumerate() {
                let members: Vec<usize> = (0..n).filter(|&i| assign[i] == k).collect();
                if !members.is_empty() {
                    *plane = ls_plane(points, y, &members, d);
                }
            }
            let next: Vec<usize> = points
                .iter()
                .map(|x| {
                    (0..m)
                        .max_by(|&a, &b| planes[a].at(x).total_cmp(&planes[b].at(x)))
                        .unwrap()
                })
                .collect();
            if next == assign {
                break;
            }
            assign = next;
        }
        let fit = MaxAffine { planes };
        let mse = points
            .iter()
            .zip(y)
            .map(|(x, &v)| (v - fit.at(x)).powi(2))
            .sum::<f64>()
            / n as f64;
        if best.as_ref().is_none_or(|b| mse < b.1) {
            best = Some((fit, mse));
        }
    }
    Ok(best.expect("at least one restart"))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ridge-stabilized least-squares plane through the given members.
fn ls_plane(points: &[Vec<f64>], y: &[f64], members: &[usize], d: usize) -> Plane {
    let p = d + 1;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for &i in members {
        let mut row = points[i].clone();
        row.push(1.0);
        for a in 0..p {
            xty[a] += row[a] * y[i];
            for b in 0..p {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        xtx[(a, a)] += 1e-9;
    }
    xtx[(d, d)] += 1e-12;
    let beta = xtx
        .clone()
        .cholesky()
        .map(|c| c.solve(&xty))
        .unwrap_or_else(|| {
            xtx.pseudo_inverse(1e-12)
                .map(|pi| pi * &xty)
                .unwrap_or_else(|_| DVector::zeros(p))
        });
    Plane {
        slope: beta.rows(0, d).iter().copied().collect(),
        intercept: beta[d],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Exhaustive oracle: every partition into at most `m` blocks whose
    /// block means are nondecreasing.
    fn brute_force(f: &[f64], m: usize) -> f64 {
        let n = f.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << (n - 1)) {
            if mask.count_ones() as usize + 1 > m {
                continue;
            }
            let mut starts = vec![0];
            starts.extend((1..n).filter(|i| mask & (1 << (i - 1)) != 0));
            let mut ends = starts[1..].to_vec();
            ends.push(n);
            let means: Vec<f64> = starts
                .iter()
                .zip(&ends)
                .map(|(&a, &b)| f[a..b].iter().sum::<f64>() / (b - a) as f64)
                .collect();
            if means.windows(2).any(|w| w[0] > w[1] + 1e-12) {
                continue;
            }
            let sse: f64 = starts
                .iter()
                .zip(&ends)
                .zip(&means)
                .map(|((&a, &b), mu)| f[a..b].iter().map(|v| (v - mu).powi(2)).sum::<f64>())
                .sum();
            best = best.min(sse);
        }
        best / n as f64
    }

    #[test]
    fn four_points_two_pieces() {
        let (s, e) = best_approx_iso(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(s.change_indices, vec![0, 2]);
        assert_relative_eq!(s.levels[0], 1.5);
        assert_relative_eq!(s.levels[1], 3.5);
        assert_relative_eq!(e, 0.25, epsilon = 1e-14);
    }

    #[test]
    fn one_piece_is_the_mean() {
        let f = [3.0, -1.0, 2.0, 0.5];
        let (s, e) = best_approx_iso(&f, 1).unwrap();
        let mu = 4.5 / 4.0;
        assert_relative_eq!(s.levels[0], mu, epsilon = 1e-14);
        let var = f.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 4.0;
        assert_relative_eq!(e, var, epsilon = 1e-14);
    }

    #[test]
    fn interpolation_when_m_equals_n() {
        let f = [0.0, 1.0, 1.0, 5.0];
        let (s, e) = best_approx_iso(&f, 4).unwrap();
        assert_eq!(e, 0.0);
        // Ties prefer fewer pieces: the repeated value needs only three.
        assert_eq!(s.pieces(), 3);
    }

    #[test]
    fn matches_exhaustive_search() {
        let cases: Vec<Vec<f64>> = vec![
            vec![3.0, 1.0, 2.0, 5.0, 4.0, 0.0, 6.0],
            vec![5.0, 4.0, 3.0, 2.0, 1.0],
            vec![0.1, 0.3, -0.2, 0.8, 0.7, 0.9, 1.5, 1.2, 2.0, 1.9],
            vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 1.0, 3.0],
        ];
        for f in cases {
            let mut a = IsoApproximator::new(&f);
            for m in 1..=4.min(f.len()) {
                let e = a.error(m).unwrap();
                assert_relative_eq!(e, brute_force(&f, m), epsilon = 1e-12);
                let s = a.step(m).unwrap();
                s.validate(f.len()).unwrap();
                assert!(s.pieces() <= m);
                let fitted = s.evaluate(f.len());
                let sse: f64 = f.iter().zip(&fitted).map(|(a, b)| (a - b).powi(2)).sum();
                assert_relative_eq!(sse / f.len() as f64, e, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rank_truncation() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let (f, e) = best_approx_rank(&a, 1).unwrap();
        assert_relative_eq!(e, 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.matrix()[(0, 0)].abs(), 3.0, epsilon = 1e-12);
        let (z, e0) = best_approx_rank(&a, 0).unwrap();
        assert_eq!(z.matrix(), DMatrix::zeros(2, 2));
        assert_relative_eq!(e0, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_rank_is_recovered() {
        let u = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 2.0, 1.0, -1.0, 3.0, 0.5, 0.5]);
        let v = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, -1.0]);
        let (f, e) = best_approx_rank(&(&u * &v), 2).unwrap();
        assert!(e < 1e-20);
        assert!((f.matrix() - &u * &v).norm() < 1e-10);
    }

    #[test]
    fn max_affine_fit_recovers_two_planes() {
        let pts: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 39.0]).collect();
        let y: Vec<f64> = pts.iter().map(|x| (2.0 * x[0] - 1.0).abs()).collect();
        let mut rng = crate::rng::stream(1, crate::rng::Purpose::Restart);
        let (_, mse) = fit_max_affine(&pts, &y, 2, 32, &mut rng).unwrap();
        assert!(mse < 1e-12);
    }
}
