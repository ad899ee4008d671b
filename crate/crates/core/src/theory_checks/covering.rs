use crate::error::{Error, Result};
use crate::experiments::{intrinsic_metric_sq, ExperimentSpec};
use crate::params::ParameterPoint;

/// The intrinsic distance `d_n` of an experiment as a metric closure.
pub fn intrinsic_distance(
    exp: &ExperimentSpec,
    n: usize,
) -> impl Fn(&ParameterPoint, &ParameterPoint) -> Result<f64> + '_ {
    move |a, b| Ok(intrinsic_metric_sq(exp, a, b, n)?.max(0.0).sqrt())
}

/// Covering radii of the farthest-first ordering of the cloud: entry `k - 1`
/// is the largest distance from a cloud point to the first `k` centers.
/// The ordering starts at the first point and does not depend on any radius,
/// so the radii are nonincreasing.
pub fn covering_radii<M>(cloud: &[ParameterPoint], metric: M) -> Result<Vec<f64>>
where
    M: Fn(&ParameterPoint, &ParameterPoint) -> Result<f64>,
{
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut nearest = vec![f64::INFINITY; cloud.len()];
    let mut radii = Vec::with_capacity(cloud.len());
    let mut center = 0;
    loop {
        nearest[center] = 0.0;
        for (i, p) in cloud.iter().enumerate() {
            if nearest[i] > 0.0 {
                nearest[i] = nearest[i].min(metric(&cloud[center], p)?);
            }
        }
        let (far, r) = nearest
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        radii.push(r);
        if r == 0.0 {
            return Ok(radii);
        }
        center = far;
    }
}

/// Size of a greedy `eps`-net of the cloud, an upper bound on its covering
/// number at radius `eps` (centers taken from the cloud).
pub fn greedy_covering_upper_bound<M>(cloud: &[ParameterPoint], eps: f64, metric: M) -> Result<usize>
where
    M: Fn(&ParameterPoint, &ParameterPoint) -> Result<f64>,
{
    if !(eps >= 0.0) {
        return Err(Error::DomainError(format!("eps must be nonnegative, got {eps}")));
    }
    let radii = covering_radii(cloud, metric)?;
    Ok(radii.iter().position(|&r| r <= eps).unwrap_or(radii.len() - 1) + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::ExperimentKind;

    fn line(xs: &[f64]) -> Vec<ParameterPoint> {
        xs.iter().map(|&x| ParameterPoint::signal(vec![x])).collect()
    }

    #[test]
    fn trivial_clouds() {
        let exp = ExperimentSpec::regression(ExperimentKind::GaussianReg, 1);
        let d = intrinsic_distance(&exp, 1);
        assert_eq!(greedy_covering_upper_bound(&line(&[0.3]), 0.0, &d).unwrap(), 1);
        assert_eq!(greedy_covering_upper_bound(&line(&[0.0, 1.0, 2.0]), 5.0, &d).unwrap(), 1);
        assert_eq!(greedy_covering_upper_bound(&line(&[0.0, 1.0, 2.0]), 0.5, &d).unwrap(), 3);
        assert_eq!(greedy_covering_upper_bound(&[], 1.0, &d), Err(Error::EmptyCloud));
    }

    #[test]
    fn unit_spacing_needs_every_other_point() {
        let exp = ExperimentSpec::regression(ExperimentKind::GaussianReg, 1);
        let pts: Vec<f64> = (0..=10).map(|i| i as f64).collect();
        let k = greedy_covering_upper_bound(&line(&pts), 1.0, intrinsic_distance(&exp, 1)).unwrap();
        // Any 1-net of 0..=10 on the line needs at least 4 centers.
        assert!((4..=11).contains(&k));
    }
}
