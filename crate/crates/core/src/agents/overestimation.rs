//! Max-operator overestimation on a single-state bandit with zero true
//! values and standard-normal reward noise.

use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverestimationTrial {
    /// `max_a Q(a)` with one estimator for selection and evaluation.
    pub single: f64,
    /// `Q_B(argmax_a Q_A(a))` with two estimators built from disjoint halves
    /// of the same samples.
    pub double: f64,
}

/// Draws `samples_per_action` rewards for each of `n_actions` arms and forms
/// both estimates from the same data. `samples_per_action` must be even and
/// at least 2.
pub fn overestimation_trial<R: Rng + ?Sized>(
    n_actions: usize,
    samples_per_action: usize,
    rng: &mut R,
) -> OverestimationTrial {
    assert!(n_actions > 0 && samples_per_action >= 2 && samples_per_action % 2 == 0);
    let half = samples_per_action / 2;
    let mut full = Vec::with_capacity(n_actions);
    let mut first = Vec::with_capacity(n_actions);
    let mut second = Vec::with_capacity(n_actions);
    for _ in 0..n_actions {
        let draws: Vec<f64> = (0..samples_per_action).map(|_| rng.sample(StandardNormal)).collect();
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        full.push(mean(&draws));
        first.push(mean(&draws[..half]));
        second.push(mean(&draws[half..]));
    }
    OverestimationTrial {
        single: full.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        double: second[crate::argmax(&first)],
    }
}

/// One-sided percentile-bootstrap lower bound on the mean of `xs` at
/// `confidence` (e.g. 0.99).
pub fn bootstrap_mean_lower_bound<R: Rng + ?Sized>(
    xs: &[f64],
    confidence: f64,
    resamples: usize,
    rng: &mut R,
) -> f64 {
    assert!(!xs.is_empty() && resamples > 0);
    let n = xs.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let k = (((1.0 - confidence) * resamples as f64).floor() as usize).min(resamples - 1);
    means[k]
}
