use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::tensor::{TensorError, Var};

/// ε-greedy over one row of action values; ties go to the lowest index.
///
/// # Panics
/// If the row contains NaN.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    assert!(q.iter().all(|v| !v.is_nan()), "NaN action value");
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return rng.gen_range(0..q.len());
    }
    argmax(q)
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Draws an index from a row of log-probabilities.
///
/// # Panics
/// If the row contains NaN.
pub fn sample_categorical<R: Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    assert!(log_probs.iter().all(|v| !v.is_nan()), "NaN probability");
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

pub fn gaussian_sample<R: Rng + ?Sized>(mean: f64, std: f64, rng: &mut R) -> f64 {
    assert!(mean.is_finite() && std > 0.0, "invalid Gaussian policy ({mean}, {std})");
    Normal::new(mean, std).expect("positive std").sample(rng)
}

pub fn clamp_action(a: f64, low: f64, high: f64) -> f64 {
    a.clamp(low, high)
}

/// Deterministic action plus exploration noise, clamped to the bounds.
pub fn noisy_action<R: Rng + ?Sized>(action: f64, noise_std: f64, low: f64, high: f64, rng: &mut R) -> f64 {
    assert!(action.is_finite(), "non-finite action");
    let noise = if noise_std > 0.0 {
        let e: f64 = StandardNormal.sample(rng);
        noise_std * e
    } else {
        0.0
    };
    clamp_action(action + noise, low, high)
}

/// Linear interpolation from `start` to `end` over the first `fraction` of
/// training, constant afterwards.
pub fn linear_schedule(start: f64, end: f64, fraction: f64, progress: f64) -> f64 {
    let t = (progress / fraction).clamp(0.0, 1.0);
    start * (1.0 - t) + end * t
}

/// `log N(a; mean, exp(log_std)²)`.
pub fn gaussian_log_prob(a: f64, mean: f64, log_std: f64) -> f64 {
    let z = (a - mean) * (-log_std).exp();
    -0.5 * z * z - log_std - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Maps an unbounded head output into `[low, high]` via tanh.
pub fn squash_mean(raw: Var<'_>, low: f64, high: f64) -> Var<'_> {
    raw.tanh().scale(0.5 * (high - low)).add_scalar(0.5 * (high + low))
}

/// `Q = V + A − mean_a(A)` per row; `value` is `r × 1`, `advantage` `r × n`.
pub fn dueling_combine<'t>(value: Var<'t>, advantage: Var<'t>) -> Result<Var<'t>, TensorError> {
    let n = advantage.cols();
    let centre = advantage.sum_cols().scale(1.0 / n as f64).expand_cols(n)?;
    value.expand_cols(n)?.add(advantage)?.sub(centre)
}
