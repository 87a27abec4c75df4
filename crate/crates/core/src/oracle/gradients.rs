//! Closed-form objective values and logit gradients over the full
//! distribution.
//!
//! Everything here is exact given the logits, with no sampling involved:
//! log Z, the conditional distribution q over the correct set, its entropy
//! and KL to the uniform target, the full-space entropy, and the combined
//! correctness-plus-uniformity objective L(z) = log Z - tau * KL(u || q).
//!
//! The conditional quantities are computed from the correct-set logits only
//! (a restricted log-softmax), so they are bitwise independent of incorrect
//! logits; their gradients are exactly zero on incorrect coordinates.

use crate::env::EnvSpec;
use crate::policy::softmax;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// log Z(z) = lse(correct logits) - lse(all logits).
pub fn log_correct_mass(logits: &[f64], env: &EnvSpec) -> f64 {
    let correct = log_sum_exp(env.correct_indices().iter().map(|&y| logits[y]));
    let all = log_sum_exp(logits.iter().copied());
    correct - all
}

/// d log Z / dz_k = q_k * [k correct] - pi_k.
pub fn grad_log_correct_mass(logits: &[f64], env: &EnvSpec) -> Vec<f64> {
    let pi = softmax(logits).expect("finite logits");
    let q = conditional_q(logits, env);
    let mut grad: Vec<f64> = pi.iter().map(|&p| -p).collect();
    for (pos, &y) in env.correct_indices().iter().enumerate() {
        grad[y] += q[pos];
    }
    grad
}

/// Conditional distribution over the correct set, restricted log-softmax.
pub fn conditional_q(logits: &[f64], env: &EnvSpec) -> Vec<f64> {
    let correct: Vec<f64> = env.correct_indices().iter().map(|&y| logits[y]).collect();
    softmax(&correct).expect("finite logits")
}

/// KL(u || q) with u uniform over the correct set, in nats.
pub fn kl_uniform_to_conditional(logits: &[f64], env: &EnvSpec) -> f64 {
    let m = env.num_correct() as f64;
    let lse = log_sum_exp(env.correct_indices().iter().map(|&y| logits[y]));
    // sum_y u * (ln u - ln q_y) with ln q_y = z_y - lse
    env.correct_indices()
        .iter()
        .map(|&y| (1.0 / m) * (-(m.ln()) - (logits[y] - lse)))
        .sum()
}

/// Gradient of -KL(u || q): (u_k - q_k) on correct coordinates, zero
/// elsewhere. Equals E_u[grad log pi] - E_q[grad log pi].
pub fn grad_neg_kl_uniform(logits: &[f64], env: &EnvSpec) -> Vec<f64> {
    let q = conditional_q(logits, env);
    let m = env.num_correct() as f64;
    let mut grad = vec![0.0; logits.len()];
    for (pos, &y) in env.correct_indices().iter().enumerate() {
        grad[y] = 1.0 / m - q[pos];
    }
    grad
}

/// Entropy of the conditional distribution, H(q), in nats.
pub fn conditional_entropy_value(logits: &[f64], env: &EnvSpec) -> f64 {
    crate::policy::entropy(&conditional_q(logits, env))
}

/// Gradient of H(q): -q_k (ln q_k + H(q)) on correct coordinates, zero
/// elsewhere. Mirrors -E_q[(1 + ln q) grad log q].
pub fn grad_conditional_entropy(logits: &[f64], env: &EnvSpec) -> Vec<f64> {
    let q = conditional_q(logits, env);
    let h = crate::policy::entropy(&q);
    let mut grad = vec![0.0; logits.len()];
    for (pos, &y) in env.correct_indices().iter().enumerate() {
        grad[y] = if q[pos] > 0.0 {
            -q[pos] * (q[pos].ln() + h)
        } else {
            0.0
        };
    }
    grad
}

/// Entropy of the full distribution, H(pi), in nats.
pub fn entropy_value(logits: &[f64]) -> f64 {
    crate::policy::entropy(&softmax(logits).expect("finite logits"))
}

/// Gradient of H(pi): -pi_k (ln pi_k + H(pi)).
pub fn grad_entropy(logits: &[f64]) -> Vec<f64> {
    let pi = softmax(logits).expect("finite logits");
    let h = crate::policy::entropy(&pi);
    pi.iter()
        .map(|&p| if p > 0.0 { -p * (p.ln() + h) } else { 0.0 })
        .collect()
}

/// The correctness-plus-uniformity objective log Z - tau * KL(u || q).
pub fn combined_objective(logits: &[f64], env: &EnvSpec, tau: f64) -> f64 {
    log_correct_mass(logits, env) - tau * kl_uniform_to_conditional(logits, env)
}

/// Closed-form gradient of [`combined_objective`].
pub fn grad_combined_objective(logits: &[f64], env: &EnvSpec, tau: f64) -> Vec<f64> {
    let mut grad = grad_log_correct_mass(logits, env);
    for (g, k) in grad.iter_mut().zip(grad_neg_kl_uniform(logits, env)) {
        *g += tau * k;
    }
    grad
}

/// grad log pi(y) = e_y - pi, the softmax score function.
pub fn score_gradient(logits: &[f64], y: usize) -> Vec<f64> {
    let pi = softmax(logits).expect("finite logits");
    let mut grad: Vec<f64> = pi.iter().map(|&p| -p).collect();
    grad[y] += 1.0;
    grad
}

/// The blended-weight expansion of the combined objective's gradient:
/// sum over correct y of [(1 - tau) q_y + tau / m] * grad log pi(y).
pub fn decomposition_gradient(logits: &[f64], env: &EnvSpec, tau: f64) -> Vec<f64> {
    let q = conditional_q(logits, env);
    let m = env.num_correct() as f64;
    let mut grad = vec![0.0; logits.len()];
    for (pos, &y) in env.correct_indices().iter().enumerate() {
        let weight = (1.0 - tau) * q[pos] + tau / m;
        for (g, s) in grad.iter_mut().zip(score_gradient(logits, y)) {
            *g += weight * s;
        }
    }
    grad
}

/// Enumerated two-term form of the -KL(u || q) gradient:
/// E_u[grad log pi] - E_q[grad log pi].
pub fn neg_kl_two_term_gradient(logits: &[f64], env: &EnvSpec) -> Vec<f64> {
    let q = conditional_q(logits, env);
    let m = env.num_correct() as f64;
    let mut grad = vec![0.0; logits.len()];
    for (pos, &y) in env.correct_indices().iter().enumerate() {
        let weight = 1.0 / m - q[pos];
        for (g, s) in grad.iter_mut().zip(score_gradient(logits, y)) {
            *g += weight * s;
        }
    }
    grad
}
