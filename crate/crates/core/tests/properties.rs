use proptest::prelude::*;

use tsb::analysis::rate_slope;
use tsb::experiments::{ExperimentKind, ExperimentSpec};
use tsb::numeric::{log_sum_exp, softmax};
use tsb::params::{ModelIndex, ParameterPoint, StepFunction};
use tsb::priors::{model_weights, App, IsoApproximator, RateSpec, TwoStepPrior};
use tsb::rng::{substream, Purpose};
use tsb::samplers::{posterior_mean, Chain, PosteriorDraw, Scales};
use tsb::theory_checks::psi;

/// Weighted pool-adjacent-violators; returns the fitted value per block.
fn pav(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 && blocks[blocks.len() - 2].0 > blocks[blocks.len() - 1].0 {
            let (v2, w2, c2) = blocks.pop().unwrap();
            let (v1, w1, c1) = blocks.pop().unwrap();
            blocks.push(((v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, c1 + c2));
        }
    }
    blocks.into_iter().flat_map(|(v, _, c)| std::iter::repeat_n(v, c)).collect()
}

/// Smallest mean squared error of a nondecreasing step fit with at most `m`
/// pieces, by enumerating every split of the index range.
fn brute_force_iso(f: &[f64], m: usize) -> f64 {
    let n = f.len();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << (n - 1)) {
        if mask.count_ones() as usize + 1 > m {
            continue;
        }
        let mut starts = vec![0];
        starts.extend((1..n).filter(|i| mask & (1 << (i - 1)) != 0));
        starts.push(n);
        let (mut means, mut sizes, mut within) = (Vec::new(), Vec::new(), 0.0);
        for w in starts.windows(2) {
            let block = &f[w[0]..w[1]];
            let mu = block.iter().sum::<f64>() / block.len() as f64;
            within += block.iter().map(|x| (x - mu).powi(2)).sum::<f64>();
            means.push(mu);
            sizes.push(block.len() as f64);
        }
        let fitted = pav(&means, &sizes);
        let between: f64 = (0..means.len()).map(|k| sizes[k] * (means[k] - fitted[k]).powi(2)).sum();
        best = best.min(within + between);
    }
    best / n as f64
}

fn step_chain(points: Vec<StepFunction>) -> Chain {
    Chain {
        chain_id: 0,
        draws: points
            .into_iter()
            .enumerate()
            .map(|(i, s)| PosteriorDraw {
                iteration: i,
                index: ModelIndex::one(s.pieces()),
                point: ParameterPoint::StepFunction(s),
                log_post: 0.0,
            })
            .collect(),
        moves: Default::default(),
        log_post_trace: Vec::new(),
        top_mass: 0.0,
        truncation_warning: false,
        final_scales: Scales::default(),
    }
}

fn sorted_step(n: usize) -> impl Strategy<Value = StepFunction> {
    (1..=n.min(4))
        .prop_flat_map(move |m| {
            (
                proptest::sample::subsequence((1..n).collect::<Vec<_>>(), m - 1),
                proptest::collection::vec(-5.0..5.0f64, m),
            )
        })
        .prop_map(|(cuts, mut levels)| {
            levels.sort_by(f64::total_cmp);
            let mut change_indices = vec![0];
            change_indices.extend(cuts);
            StepFunction {
                change_indices,
                levels,
            }
        })
}

proptest! {
    #[test]
    fn iso_approximation_matches_brute_force(
        f in proptest::collection::vec(-3.0..3.0f64, 1..8),
        m in 1usize..5,
    ) {
        let m = m.min(f.len());
        let mut approx = IsoApproximator::new(&f);
        let got = approx.error(m).unwrap();
        let want = brute_force_iso(&f, m);
        prop_assert!((got - want).abs() <= 1e-10 * (1.0 + want), "{got} vs {want}");
        if m > 1 {
            prop_assert!(approx.error(m).unwrap() <= approx.error(m - 1).unwrap() + 1e-12);
        }
    }

    #[test]
    fn psi_is_even_nonnegative_and_increasing(
        v in 0.0..10.0f64,
        c in 0.0..2.0f64,
        l in 0.0..1.0f64,
    ) {
        let lambda = 0.99 * l / c.max(1e-9).max(1.0);
        let a = psi(v, c, lambda).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a, psi(v, c, -lambda).unwrap());
        prop_assert!(psi(v, c, 0.5 * lambda).unwrap() <= a);
        if c > 0.0 {
            prop_assert!(psi(v, c, 1.0001 / c).is_err());
        }
    }

    #[test]
    fn iso_model_weights_normalize_and_decrease(
        k in 0.05..3.0f64,
        temperature in 0.5..4.0f64,
        n in 2usize..400,
        cap in 1usize..30,
    ) {
        let prior = TwoStepPrior::new(RateSpec::iso(k), vec![cap.min(n)]).with_temperature(temperature);
        let table = model_weights(&prior, n).unwrap();
        let total: f64 = table.weights.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(table.log_weights.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn trace_model_weights_normalize(k in 0.1..2.0f64, m1 in 2usize..8, m2 in 2usize..8) {
        let prior = TwoStepPrior::new(RateSpec::trace(k, m1, m2), vec![m1.min(m2)]);
        let table = model_weights(&prior, 100).unwrap();
        prop_assert_eq!(table.indices.len(), m1.min(m2));
        prop_assert!((table.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(prior.rate.app, App::Trace);
    }

    #[test]
    fn posterior_mean_of_monotone_draws_is_monotone(
        draws in proptest::collection::vec(sorted_step(12), 1..30),
    ) {
        let exp = ExperimentSpec::regression(ExperimentKind::GaussianReg, 12);
        let fit = posterior_mean(&step_chain(draws), &exp).unwrap();
        prop_assert_eq!(fit.len(), 12);
        prop_assert!(fit.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    }

    #[test]
    fn log_sum_exp_is_shift_equivariant(
        xs in proptest::collection::vec(-50.0..50.0f64, 1..20),
        shift in -700.0..700.0f64,
    ) {
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        prop_assert!((log_sum_exp(&xs) - naive).abs() < 1e-10);
        let shifted: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        prop_assert!((log_sum_exp(&shifted) - naive - shift).abs() < 1e-9 * (1.0 + shift.abs()));
        let p = softmax(&shifted);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rate_slope_recovers_power_laws(
        a in 0.01..100.0f64,
        b in -2.0..-0.1f64,
        n0 in 10usize..100,
    ) {
        let grid: Vec<usize> = (0..5).map(|k| n0 << k).collect();
        let risks: Vec<f64> = grid.iter().map(|&n| a * (n as f64).powf(b)).collect();
        let (slope, se) = rate_slope(&grid, &risks).unwrap();
        prop_assert!((slope - b).abs() < 1e-9);
        prop_assert!(se < 1e-6);
    }

    #[test]
    fn substreams_are_reproducible_and_distinct(seed in any::<u64>(), chain in 0u64..1000) {
        use rand::Rng as _;
        let a: Vec<u64> = (0..4).map({
            let mut r = substream(seed, 0, chain, Purpose::Sampler);
            move |_| r.random()
        }).collect();
        let b: Vec<u64> = (0..4).map({
            let mut r = substream(seed, 0, chain, Purpose::Sampler);
            move |_| r.random()
        }).collect();
        let c: Vec<u64> = (0..4).map({
            let mut r = substream(seed, 0, chain, Purpose::Prior);
            move |_| r.random()
        }).collect();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(a, c);
    }
}
