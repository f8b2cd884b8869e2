//! Bootstrapped targets and return estimators. Inputs are plain values;
//! nothing here records gradients.

use crate::tensor::Tensor;

use super::policy::argmax;

/// `y = r + γ·c·max_a Q_target(s', a)` per row of a `B·S` slot batch, where
/// `c` is the row's continuation flag (0 on terminal or vacated slots).
pub fn dqn_targets(rewards: &[f64], continuing: &[f64], next_target_q: &Tensor, gamma: f64) -> Vec<f64> {
    let slots = next_target_q.rows() / rewards.len();
    (0..next_target_q.rows())
        .map(|row| {
            let best = next_target_q.row(row).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            rewards[row / slots] + gamma * continuing[row] * best
        })
        .collect()
}

/// `y = r + γ·c·Q_target(s', argmax_a Q_online(s', a))`.
pub fn double_dqn_targets(
    rewards: &[f64],
    continuing: &[f64],
    next_online_q: &Tensor,
    next_target_q: &Tensor,
    gamma: f64,
) -> Vec<f64> {
    let slots = next_target_q.rows() / rewards.len();
    (0..next_target_q.rows())
        .map(|row| {
            let a = argmax(next_online_q.row(row));
            rewards[row / slots] + gamma * continuing[row] * next_target_q.get(row, a)
        })
        .collect()
}

/// Returns-to-go `G_t = Σ_{k≥t} γ^{k−t} r_k`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    n_step_returns(rewards, &vec![false; rewards.len()], 0.0, gamma)
}

/// `G_t = r_t + γ·G_{t+1}` with `G_T = bootstrap`; a terminal step cuts the chain.
pub fn n_step_returns(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            g = 0.0;
        }
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

/// `y_t = r_t + γ·V(s_{t+1})`, no bootstrap on terminal steps.
pub fn one_step_targets(rewards: &[f64], next_values: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(next_values)
        .zip(dones)
        .map(|((r, v), &d)| if d { *r } else { r + gamma * v })
        .collect()
}

/// Generalized advantage estimation. `values[t] = V(s_t)`, `last_value` is
/// `V(s_T)` after the final step.
pub fn gae(rewards: &[f64], values: &[f64], last_value: f64, dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let (next_value, carry) = if dones[t] { (0.0, 0.0) } else { (next_value, running) };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    adv
}

/// Zero mean, unit variance; all zeros when the spread vanishes.
pub fn normalize(xs: &[f64]) -> Vec<f64> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-12 {
        vec![0.0; xs.len()]
    } else {
        xs.iter().map(|x| (x - mean) / std).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_by_hand() {
        assert_eq!(discounted_returns(&[1.0, 1.0, 1.0], 0.5), vec![1.75, 1.5, 1.0]);
        assert_eq!(discounted_returns(&[3.0, -1.0, 2.0], 0.0), vec![3.0, -1.0, 2.0]);
    }

    #[test]
    fn n_step_tail_bootstrap() {
        // G_2 = r2 + γV, G_1 = r1 + γG_2, G_0 = r0 + γG_1
        let (r, v, g) = ([1.0, 2.0, 3.0], 10.0, 0.9);
        let g2 = 3.0 + g * v;
        let g1 = 2.0 + g * g2;
        let g0 = 1.0 + g * g1;
        let out = n_step_returns(&r, &[false; 3], v, g);
        for (a, b) in out.iter().zip([g0, g1, g2]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_lambda_one_is_monte_carlo_advantage() {
        let r = [1.0, -0.5, 2.0];
        let v = [0.3, 0.7, -0.2];
        let gamma = 0.9;
        let adv = gae(&r, &v, 0.0, &[false; 3], gamma, 1.0);
        let ret = discounted_returns(&r, gamma);
        for t in 0..3 {
            assert!((adv[t] - (ret[t] - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn terminal_cuts_bootstrap() {
        let q = Tensor::matrix(2, 2, vec![5.0, 7.0, 1.0, 2.0]);
        assert_eq!(dqn_targets(&[1.0], &[0.0, 1.0], &q, 0.5), vec![1.0, 2.0]);
        assert_eq!(dqn_targets(&[1.0], &[1.0, 1.0], &q, 0.0), vec![1.0, 1.0]);
    }

    #[test]
    fn double_uses_online_argmax() {
        let online = Tensor::matrix(1, 2, vec![1.0, 0.0]);
        let target = Tensor::matrix(1, 2, vec![3.0, 8.0]);
        assert_eq!(double_dqn_targets(&[0.0], &[1.0], &online, &target, 1.0), vec![3.0]);
        assert_eq!(dqn_targets(&[0.0], &[1.0], &target, 1.0), vec![8.0]);
    }

    #[test]
    fn normalize_constant_is_zero() {
        assert_eq!(normalize(&[2.0, 2.0, 2.0]), vec![0.0; 3]);
    }
}
