//! Per-step trace recording and collapse-cycle detection.
//!
//! A trace row captures the policy as the batch saw it (pre-update), the
//! realized counts, expected counts K * pi(y), per-token gradient mass, the
//! dominant correct token, and which correct tokens sit below the 1/K
//! sampling threshold. Drift analysis over a finished run compares the
//! realized log-ratio increments against the closed-form per-step drift
//! lr * A+ * K * (pi(i) - pi(j)).

use serde::Serialize;
use thiserror::Error;

use crate::env::{sample_batch, EnvSpec, RolloutBatch};
use crate::optim::OptimizerConfig;
use crate::policy::{snapshot, PolicyError, PolicyState, ProbeSnapshot};
use crate::rng::SeedStream;

/// Runs whose final normalized conditional entropy is below this are
/// classified collapsed by default.
pub const DEFAULT_COLLAPSE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("need at least 2 traces for a drift series, got {0}")]
    InsufficientTraces(usize),
    #[error("correct-set position {0} out of range (m = {1})")]
    BadCorrectPosition(usize, usize),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// One step of a training run. `snapshot` is the pre-update policy the batch
/// was drawn from; `counts` and `per_token_grad_mass` describe that batch and
/// its update.
#[derive(Debug, Clone, Serialize)]
pub struct StepTrace {
    pub step: usize,
    pub snapshot: ProbeSnapshot,
    pub counts: Vec<u32>,
    pub per_token_grad_mass: Vec<f64>,
    pub expected_counts: Vec<f64>,
    /// Position (within the correct set) of the argmax of the conditional
    /// distribution; ties break to the lowest position.
    pub dominant_correct: usize,
    /// Vocabulary indices of correct tokens with pi(y) < 1/K.
    pub below_threshold: Vec<usize>,
}

/// A completed (or aborted) single-seed training run.
#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub env: EnvSpec,
    pub optimizer: OptimizerConfig,
    pub samples_per_step: usize,
    pub seed: u64,
    pub traces: Vec<StepTrace>,
    pub final_snapshot: ProbeSnapshot,
    /// Dominant correct position at the final state.
    pub winner: usize,
    /// Normalized conditional entropy below [`DEFAULT_COLLAPSE_THRESHOLD`]
    /// at the final state.
    pub collapsed: bool,
    /// Step at which a non-finite update aborted the run, if any; traces up
    /// to that step are retained.
    pub aborted_at_step: Option<usize>,
}

/// Outcome of a run under a configurable entropy threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Outcome {
    /// Collapsed onto the correct token at this position.
    CollapsedTo(usize),
    Diverse,
}

pub fn dominant_position(conditional_q: &[f64]) -> usize {
    let mut best = 0;
    for (pos, &q) in conditional_q.iter().enumerate() {
        if q > conditional_q[best] {
            best = pos;
        }
    }
    best
}

/// Record one training step from the pre-update policy, the batch sampled
/// from it, and the per-token gradient mass of the applied update.
pub fn record_step(
    policy: &PolicyState,
    env: &EnvSpec,
    batch: &RolloutBatch,
    per_token_grad_mass: &[f64],
    step: usize,
) -> Result<StepTrace, DiagnosticsError> {
    let snap = snapshot(policy, env)?;
    let k = batch.k() as f64;
    let expected_counts: Vec<f64> = snap.probs.iter().map(|&p| k * p).collect();
    let threshold = 1.0 / k;
    let below_threshold: Vec<usize> = env
        .correct_indices()
        .iter()
        .copied()
        .filter(|&y| snap.probs[y] < threshold)
        .collect();
    let dominant_correct = dominant_position(&snap.conditional_q);
    Ok(StepTrace {
        step,
        counts: batch.counts.clone(),
        per_token_grad_mass: per_token_grad_mass.to_vec(),
        expected_counts,
        dominant_correct,
        below_threshold,
        snapshot: snap,
    })
}

/// Realized and closed-form per-step drift of the log-ratio between the
/// correct tokens at positions `i` and `j`.
#[derive(Debug, Clone, Serialize)]
pub struct DriftSeries {
    pub realized: Vec<f64>,
    pub theoretical: Vec<f64>,
    pub mean_realized: f64,
    pub mean_theoretical: f64,
}

/// Per-step drift series for log pi(y_i)/pi(y_j), positions within the
/// correct set. The realized increment at step t spans trace t to trace t+1
/// (the final increment lands on the run's final snapshot); the closed-form
/// drift at step t is lr * A+_t * K * (pi_t(i) - pi_t(j)) with A+_t
/// recomputed from that step's realized batch composition.
pub fn divergence_drift(
    result: &RunResult,
    i: usize,
    j: usize,
) -> Result<DriftSeries, DiagnosticsError> {
    let m = result.env.num_correct();
    for pos in [i, j] {
        if pos >= m {
            return Err(DiagnosticsError::BadCorrectPosition(pos, m));
        }
    }
    let t = result.traces.len();
    if t < 2 {
        return Err(DiagnosticsError::InsufficientTraces(t));
    }
    let k = result.samples_per_step as f64;
    let lr = result.optimizer.learning_rate;
    let adv_eps = result.optimizer.adv_eps;
    let ratio_at = |snap: &ProbeSnapshot| snap.log_ratios[i][j];

    let mut realized = Vec::with_capacity(t);
    let mut theoretical = Vec::with_capacity(t);
    for (step, trace) in result.traces.iter().enumerate() {
        let next = if step + 1 < t {
            ratio_at(&result.traces[step + 1].snapshot)
        } else {
            ratio_at(&result.final_snapshot)
        };
        realized.push(next - ratio_at(&trace.snapshot));

        let n_correct: u32 = result
            .env
            .correct_indices()
            .iter()
            .map(|&y| trace.counts[y])
            .sum();
        let mean = n_correct as f64 / k;
        let a_plus = if n_correct == 0 || n_correct as f64 == k {
            0.0
        } else {
            let sigma = (mean * (1.0 - mean)).sqrt();
            (1.0 - mean) / (sigma + adv_eps)
        };
        let yi = result.env.correct_indices()[i];
        let yj = result.env.correct_indices()[j];
        let dp = trace.snapshot.probs[yi] - trace.snapshot.probs[yj];
        theoretical.push(lr * a_plus * k * dp);
    }
    let mean_realized = realized.iter().sum::<f64>() / realized.len() as f64;
    let mean_theoretical = theoretical.iter().sum::<f64>() / theoretical.len() as f64;
    Ok(DriftSeries {
        realized,
        theoretical,
        mean_realized,
        mean_theoretical,
    })
}

/// Collapsed iff the final normalized conditional entropy falls below the
/// threshold; the winner is the dominant correct position of the final state.
pub fn classify_outcome(result: &RunResult, entropy_threshold: f64) -> Outcome {
    if result.final_snapshot.normalized_entropy < entropy_threshold {
        Outcome::CollapsedTo(dominant_position(&result.final_snapshot.conditional_q))
    } else {
        Outcome::Diverse
    }
}

/// Mean counts per token over repeated batches at a fixed policy.
pub fn empirical_mean_counts(
    policy: &PolicyState,
    env: &EnvSpec,
    k: usize,
    n_batches: u64,
    seed: u64,
) -> Vec<f64> {
    let stream = SeedStream::new(seed);
    let mut totals = vec![0u64; env.vocab_size()];
    for b in 0..n_batches {
        let batch = sample_batch(policy, env, k, &mut stream.step_rng(b));
        for (y, &c) in batch.counts.iter().enumerate() {
            totals[y] += c as u64;
        }
    }
    totals
        .iter()
        .map(|&t| t as f64 / n_batches as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{init_policy, InitProfile};
    use crate::optim::{grpo_advantages, policy_gradient_update};

    fn run_grpo(env: &EnvSpec, steps: usize, seed: u64, k: usize) -> RunResult {
        let cfg = OptimizerConfig::default();
        let stream = SeedStream::new(seed);
        let mut policy = init_policy(env).unwrap();
        let mut traces = Vec::new();
        for step in 0..steps {
            let batch = sample_batch(&policy, env, k, &mut stream.step_rng(step as u64));
            let adv = grpo_advantages(&batch, cfg.adv_eps);
            let pre = policy.clone();
            let out = policy_gradient_update(policy, &batch, &adv, &cfg).unwrap();
            traces.push(record_step(&pre, env, &batch, &out.per_token_grad_mass, step).unwrap());
            policy = out.policy;
        }
        let final_snapshot = snapshot(&policy, env).unwrap();
        let winner = dominant_position(&final_snapshot.conditional_q);
        let collapsed = final_snapshot.normalized_entropy < DEFAULT_COLLAPSE_THRESHOLD;
        RunResult {
            env: env.clone(),
            optimizer: cfg,
            samples_per_step: k,
            seed,
            traces,
            final_snapshot,
            winner,
            collapsed,
            aborted_at_step: None,
        }
    }

    #[test]
    fn record_step_fields_consistent() {
        let env = EnvSpec::default_skewed();
        let policy = init_policy(&env).unwrap();
        let batch = sample_batch(&policy, &env, 8, &mut SeedStream::new(1).step_rng(0));
        let trace = record_step(&policy, &env, &batch, &[0.0; 20], 0).unwrap();
        let total: f64 = trace.expected_counts.iter().sum();
        assert!((total - 8.0).abs() < 1e-9);
        assert!(trace
            .below_threshold
            .iter()
            .all(|y| env.correct_indices().contains(y)));
        // skewed init: pi(y2) = (1/7) / 1.17 ~ 0.122 < 1/8
        assert_eq!(trace.below_threshold, vec![2]);
        assert_eq!(trace.dominant_correct, 0);
    }

    #[test]
    fn below_threshold_detects_starved_token() {
        let env = EnvSpec::default_skewed();
        let mut logits = vec![0.0; 20];
        logits[2] = (0.001f64).ln() - (0.05f64).ln(); // push y2 to ~0.001
        let policy = PolicyState::new(logits).unwrap();
        let batch = sample_batch(&policy, &env, 8, &mut SeedStream::new(2).step_rng(0));
        let trace = record_step(&policy, &env, &batch, &[0.0; 20], 0).unwrap();
        assert!(trace.below_threshold.contains(&2));
    }

    #[test]
    fn zero_advantage_step_zero_grad_mass() {
        let env = EnvSpec::default_skewed();
        let policy = init_policy(&env).unwrap();
        let batch = sample_batch(&policy, &env, 4, &mut SeedStream::new(3).step_rng(0));
        let trace = record_step(&policy, &env, &batch, &[0.0; 20], 7).unwrap();
        assert_eq!(trace.step, 7);
        assert!(trace.per_token_grad_mass.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn classify_near_point_mass() {
        let env = EnvSpec::default_skewed();
        let mut result = run_grpo(&env, 3, 1, 8);
        result.final_snapshot.conditional_q = vec![0.98, 0.01, 0.01];
        result.final_snapshot.normalized_entropy = 0.1;
        assert_eq!(classify_outcome(&result, 0.5), Outcome::CollapsedTo(0));
        result.final_snapshot.conditional_q = vec![1.0 / 3.0; 3];
        result.final_snapshot.normalized_entropy = 1.0;
        assert_eq!(classify_outcome(&result, 0.999), Outcome::Diverse);
    }

    #[test]
    fn drift_requires_traces_and_valid_positions() {
        let env = EnvSpec::default_skewed();
        let result = run_grpo(&env, 1, 1, 8);
        assert!(matches!(
            divergence_drift(&result, 0, 2),
            Err(DiagnosticsError::InsufficientTraces(1))
        ));
        let result = run_grpo(&env, 5, 1, 8);
        assert!(matches!(
            divergence_drift(&result, 0, 3),
            Err(DiagnosticsError::BadCorrectPosition(3, 3))
        ));
    }

    #[test]
    fn theoretical_drift_matches_closed_form() {
        let env = EnvSpec::default_skewed();
        let result = run_grpo(&env, 20, 4, 8);
        let drift = divergence_drift(&result, 0, 2).unwrap();
        for (step, trace) in result.traces.iter().enumerate() {
            let n: u32 = env.correct_indices().iter().map(|&y| trace.counts[y]).sum();
            let mean = n as f64 / 8.0;
            let a_plus = if n == 0 || n == 8 {
                0.0
            } else {
                (1.0 - mean) / ((mean * (1.0 - mean)).sqrt() + result.optimizer.adv_eps)
            };
            let expect = result.optimizer.learning_rate
                * a_plus
                * 8.0
                * (trace.snapshot.probs[0] - trace.snapshot.probs[2]);
            assert!((drift.theoretical[step] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_counts_match_expected_at_fixed_policy() {
        let env = EnvSpec::default_skewed();
        let policy = init_policy(&env).unwrap();
        let probs = policy.probs();
        let k = 8usize;
        let batches = 10_000u64;
        let means = empirical_mean_counts(&policy, &env, k, batches, 17);
        for y in 0..env.vocab_size() {
            let expect = k as f64 * probs[y];
            let se = (k as f64 * probs[y] * (1.0 - probs[y]) / batches as f64).sqrt();
            assert!(
                (means[y] - expect).abs() <= 4.0 * se.max(1e-12),
                "token {y}: {} vs {expect} (4se = {})",
                means[y],
                4.0 * se
            );
        }
    }

    #[test]
    fn uniform_profile_symmetric_drift_near_zero() {
        // symmetric tokens: across many seeds the mean drift has no sign bias
        let env = EnvSpec::new(20, vec![0, 1, 2], InitProfile::Uniform, 0.01).unwrap();
        let mut total = 0.0;
        let seeds = 200;
        for seed in 0..seeds {
            let result = run_grpo(&env, 10, seed, 8);
            let drift = divergence_drift(&result, 0, 1).unwrap();
            total += drift.mean_realized;
        }
        let grand_mean = total / seeds as f64;
        assert!(
            grand_mean.abs() < 0.05,
            "symmetric drift should hover near zero, got {grand_mean}"
        );
    }
}
