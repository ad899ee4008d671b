use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::experiments::Design;
use crate::rng::{stream, Purpose};

/// Empirical range of `||X(A)||_2 / (sqrt(n) ||A||_F)` over `reps` random
/// rank-`r` probes `A = U V^T` with Gaussian factors.
///
/// The minimum and maximum can certify a violation of a restricted isometry
/// with given constants, never that one holds.
pub fn rip_estimate(design: &Design, r: usize, reps: usize, seed: u64) -> Result<(f64, f64)> {
    let (rows, cols, n) = match design {
        Design::Matrices { rows, cols, xs } => (*rows, *cols, xs.len()),
        _ => {
            return Err(crate::Error::KindMismatch {
                expected: "matrix design".into(),
                found: "other design".into(),
            })
        }
    };
    let mut rng = stream(seed, Purpose::Probe);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for _ in 0..reps {
        let u = DMatrix::<f64>::from_fn(rows, r.max(1), |_, _| rng.sample(StandardNormal));
        let v = DMatrix::<f64>::from_fn(cols, r.max(1), |_, _| rng.sample(StandardNormal));
        let a = &u * v.transpose();
        let norm = a.norm();
        if norm == 0.0 {
            continue;
        }
        let image = design.apply_matrix(&(a / norm))?;
        let ratio = image.iter().map(|x| x * x).sum::<f64>().sqrt() / (n as f64).sqrt();
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok((lo, hi))
}
