//! Parameter points: the within-model parameterizations of every model
//! family, plus the raw parameter forms used by the non-regression
//! experiments.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Point on the model lattice `N^q`, ordered componentwise.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelIndex(pub Vec<usize>);

impl ModelIndex {
    pub fn one(m: usize) -> Self {
        ModelIndex(vec![m])
    }

    pub fn pair(a: usize, b: usize) -> Self {
        ModelIndex(vec![a, b])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &ModelIndex) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    /// Componentwise strict `self > other` in every coordinate.
    pub fn gt_all(&self, other: &ModelIndex) -> bool {
        self.0.len() == other.0.len() && self.0.iter().zip(&other.0).all(|(a, b)| a > b)
    }
}

impl std::fmt::Display for ModelIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Monotone step function on the design indices `0..n`.
///
/// Block `k` starts at `change_indices[k]` and carries `levels[k]`; indices
/// before the first change point take the first level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    pub change_indices: Vec<usize>,
    pub levels: Vec<f64>,
}

impl StepFunction {
    pub fn constant(level: f64) -> Self {
        StepFunction {
            change_indices: vec![0],
            levels: vec![level],
        }
    }

    pub fn pieces(&self) -> usize {
        self.levels.len()
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.levels.is_empty() || self.levels.len() != self.change_indices.len() {
            return Err(Error::ConstraintViolation(
                "step function needs equally many (>= 1) change points and levels".into(),
            ));
        }
        if self.change_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ConstraintViolation(
                "change indices must be strictly increasing".into(),
            ));
        }
        if *self.change_indices.last().unwrap() >= n {
            return Err(Error::ConstraintViolation(format!(
                "change index beyond design of size {n}"
            )));
        }
        if !self.is_sorted() {
            return Err(Error::ConstraintViolation("levels must be nondecreasing".into()));
        }
        Ok(())
    }

    pub fn is_sorted(&self) -> bool {
        self.levels.windows(2).all(|w| w[0] <= w[1])
    }

    /// Half-open index ranges `[start, end)` of each block over `0..n`.
    pub fn blocks(&self, n: usize) -> Vec<(usize, usize)> {
        let m = self.levels.len();
        (0..m)
            .map(|k| {
                let start = if k == 0 { 0 } else { self.change_indices[k] };
                let end = if k + 1 < m { self.change_indices[k + 1] } else { n };
                (start, end)
            })
            .collect()
    }

    pub fn evaluate(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for ((start, end), &level) in self.blocks(n).into_iter().zip(&self.levels) {
            out[start..end].fill(level);
        }
        out
    }
}

/// One affine piece `a . x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub slope: Vec<f64>,
    pub intercept: f64,
}

impl Plane {
    pub fn at(&self, x: &[f64]) -> f64 {
        self.intercept + self.slope.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Convex piecewise-affine function `max_i (a_i . x + b_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxAffine {
    pub planes: Vec<Plane>,
}

impl MaxAffine {
    pub fn at(&self, x: &[f64]) -> f64 {
        self.planes
            .iter()
            .map(|p| p.at(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn evaluate(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.iter().map(|x| self.at(x)).collect()
    }
}

/// Low-rank matrix `A = sum_k u_k v_k^T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorMatrix {
    pub rows: usize,
    pub cols: usize,
    pub u: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl FactorMatrix {
    pub fn zero(rows: usize, cols: usize) -> Self {
        FactorMatrix {
            rows,
            cols,
            u: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn rank_bound(&self) -> usize {
        self.u.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.rows, self.cols);
        for (u, v) in self.u.iter().zip(&self.v) {
            for i in 0..self.rows {
                for j in 0..self.cols {
                    a[(i, j)] += u[i] * v[j];
                }
            }
        }
        a
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.len() != self.v.len()
            || self.u.iter().any(|u| u.len() != self.rows)
            || self.v.iter().any(|v| v.len() != self.cols)
        {
            return Err(Error::ConstraintViolation(
                "factor dimensions do not match the matrix shape".into(),
            ));
        }
        Ok(())
    }
}

/// Partially linear parameter `x^T beta + u(z)` with sparse `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsePlusStep {
    pub p: usize,
    pub support: Vec<usize>,
    pub beta: Vec<f64>,
    pub step: StepFunction,
}

impl SparsePlusStep {
    pub fn dense_beta(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.p];
        for (&j, &v) in self.support.iter().zip(&self.beta) {
            b[j] = v;
        }
        b
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.support.len() != self.beta.len() {
            return Err(Error::ConstraintViolation("support and beta lengths differ".into()));
        }
        if self.support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::ConstraintViolation("support must be strictly increasing".into()));
        }
        if self.support.last().is_some_and(|&j| j >= self.p) {
            return Err(Error::SupportTooLarge {
                s: self.support.len(),
                p: self.p,
            });
        }
        self.step.validate(n)
    }
}

/// Function tabulated on a uniform grid over `[lo, hi]`, linearly
/// interpolated inside and held constant outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub lo: f64,
    pub hi: f64,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn from_fn(lo: f64, hi: f64, nodes: usize, f: impl Fn(f64) -> f64) -> Self {
        let h = (hi - lo) / (nodes - 1) as f64;
        GridFunction {
            lo,
            hi,
            values: (0..nodes).map(|i| f(lo + i as f64 * h)).collect(),
        }
    }

    pub fn constant(lo: f64, hi: f64, nodes: usize, c: f64) -> Self {
        GridFunction {
            lo,
            hi,
            values: vec![c; nodes],
        }
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.values.len() - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step()
    }

    pub fn at(&self, x: f64) -> f64 {
        let k = self.values.len();
        if x <= self.lo {
            return self.values[0];
        }
        if x >= self.hi {
            return self.values[k - 1];
        }
        let t = (x - self.lo) / self.step();
        let i = (t.floor() as usize).min(k - 2);
        let w = t - i as f64;
        (1.0 - w) * self.values[i] + w * self.values[i + 1]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Parameter of one experiment or one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParameterPoint {
    /// Raw signal values on the design.
    Signal { values: Vec<f64> },
    StepFunction(StepFunction),
    MaxAffine(MaxAffine),
    FactorMatrix(FactorMatrix),
    SparsePlusStep(SparsePlusStep),
    /// Log-tilt, autoregression function or log-spectral density.
    GridFunction(GridFunction),
    /// Covariance matrix, row major.
    Covariance { rows: Vec<Vec<f64>> },
}

impl ParameterPoint {
    pub fn signal(values: Vec<f64>) -> Self {
        ParameterPoint::Signal { values }
    }

    pub fn covariance(m: &DMatrix<f64>) -> Self {
        ParameterPoint::Covariance {
            rows: (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect(),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            ParameterPoint::Signal { .. } => "signal",
            ParameterPoint::StepFunction(_) => "step_function",
            ParameterPoint::MaxAffine(_) => "max_affine",
            ParameterPoint::FactorMatrix(_) => "factor_matrix",
            ParameterPoint::SparsePlusStep(_) => "sparse_plus_step",
            ParameterPoint::GridFunction(_) => "grid_function",
            ParameterPoint::Covariance { .. } => "covariance",
        }
    }

    /// Model index the point belongs to, for the model families.
    pub fn model_index(&self) -> Option<ModelIndex> {
        match self {
            ParameterPoint::StepFunction(s) => Some(ModelIndex::one(s.pieces())),
            ParameterPoint::MaxAffine(m) => Some(ModelIndex::one(m.planes.len())),
            ParameterPoint::FactorMatrix(f) => Some(ModelIndex::one(f.rank_bound())),
            ParameterPoint::SparsePlusStep(sp) => {
                Some(ModelIndex::pair(sp.support.len(), sp.step.pieces()))
            }
            _ => None,
        }
    }

    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            ParameterPoint::Covariance { rows } => {
                let p = rows.len();
                Some(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_function_blocks_extend_first_level_left() {
        let s = StepFunction {
            change_indices: vec![1, 3],
            levels: vec![0.0, 2.0],
        };
        assert_eq!(s.evaluate(5), vec![0.0, 0.0, 0.0, 2.0, 2.0]);
        assert_eq!(s.blocks(5), vec![(0, 3), (3, 5)]);
    }

    #[test]
    fn step_function_validation() {
        let bad = StepFunction {
            change_indices: vec![0, 2],
            levels: vec![1.0, 0.0],
        };
        assert!(bad.validate(4).is_err());
        let ok = StepFunction {
            change_indices: vec![0, 2],
            levels: vec![0.0, 1.0],
        };
        assert!(ok.validate(4).is_ok());
        assert!(ok.validate(2).is_err());
    }

    #[test]
    fn factor_matrix_of_ones() {
        let f = FactorMatrix {
            rows: 2,
            cols: 3,
            u: vec![vec![1.0; 2]],
            v: vec![vec![1.0; 3]],
        };
        assert_eq!(f.matrix(), DMatrix::from_element(2, 3, 1.0));
    }

    #[test]
    fn model_index_order() {
        let a = ModelIndex::pair(1, 2);
        let b = ModelIndex::pair(2, 2);
        assert!(a.le(&b));
        assert!(!b.le(&a));
        assert!(!b.gt_all(&a));
        assert!(ModelIndex::pair(3, 3).gt_all(&a));
    }

    #[test]
    fn grid_function_interpolates() {
        let g = GridFunction::from_fn(0.0, 1.0, 3, |x| 2.0 * x);
        assert!((g.at(0.25) - 0.5).abs() < 1e-15);
        assert_eq!(g.at(-1.0), 0.0);
        assert_eq!(g.at(3.0), 2.0);
    }

    #[test]
    fn parameter_point_json_round_trip() {
        let p = ParameterPoint::StepFunction(StepFunction {
            change_indices: vec![0, 4],
            levels: vec![-1.0, 1.5],
        });
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"type\":\"step_function\""));
        let back: ParameterPoint = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
    }
}
