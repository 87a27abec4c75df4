//! Advantage rules and the analytic softmax policy-gradient update.
//!
//! Three interchangeable training rules operate on sampled rollout batches:
//!
//! - `grpo`: group-relative advantages A_i = (R_i - mean R) / (std R + eps),
//!   population standard deviation.
//! - `ucpo`: keeps GRPO's negative advantages but redistributes the total
//!   positive advantage budget n * A+ across distinct correct tokens with
//!   blended self-normalized inverse-probability weights, so underrepresented
//!   correct tokens receive larger updates.
//! - `global-entropy`: GRPO advantages plus the exact analytic gradient of
//!   tau_ent * H(pi) over the full output space, applied once per sample so
//!   the reward-to-entropy ratio does not depend on the batch size.
//!
//! Rules live behind the [`UpdateRule`] trait and are selected by name
//! through [`rules::build_rule`]. The logit update itself is shared:
//! delta_z = lr * sum_i A_i * (e_{y_i} - pi), the closed-form softmax score
//! function.

mod rules;

pub use rules::{available_methods, build_rule, UpdateRule};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::RolloutBatch;
use crate::policy::{entropy, PolicyState};

/// Normalized conditional probabilities below this floor are clamped before
/// inversion when forming importance weights.
pub const Q_HAT_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("non-finite logit update; |batch| = {batch_size}, first bad coordinate {index}")]
    NonFiniteUpdate {
        index: usize,
        batch_size: usize,
        /// Pre-update logits and the raw gradient, for post-mortem dumps.
        logits: Vec<f64>,
        gradient: Vec<f64>,
    },
}

/// Training rule selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Grpo,
    Ucpo,
    GlobalEntropy,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Grpo => "grpo",
            Method::Ucpo => "ucpo",
            Method::GlobalEntropy => "global-entropy",
        }
    }

    pub fn from_name(name: &str) -> Option<Method> {
        match name {
            "grpo" => Some(Method::Grpo),
            "ucpo" => Some(Method::Ucpo),
            "global-entropy" => Some(Method::GlobalEntropy),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub method: Method,
    pub learning_rate: f64,
    /// UCPO interpolation strength in [0, 1]; 0 reduces to GRPO.
    pub tau: f64,
    /// Entropy coefficient for the global-entropy rule.
    pub tau_ent: f64,
    /// Stabilizer added to the reward standard deviation.
    pub adv_eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Grpo,
            learning_rate: 0.5,
            tau: 0.2,
            tau_ent: 0.0,
            adv_eps: 1e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(OptimError::InvalidConfig(format!(
                "learning rate must be a positive finite real, got {}",
                self.learning_rate
            )));
        }
        if self.method == Method::Ucpo && !(0.0..=1.0).contains(&self.tau) {
            return Err(OptimError::InvalidConfig(format!(
                "ucpo requires tau in [0, 1], got {}",
                self.tau
            )));
        }
        if self.method == Method::GlobalEntropy && (self.tau_ent.is_nan() || self.tau_ent < 0.0) {
            return Err(OptimError::InvalidConfig(format!(
                "global-entropy requires tau_ent >= 0, got {}",
                self.tau_ent
            )));
        }
        if !(self.adv_eps >= 0.0 && self.adv_eps.is_finite()) {
            return Err(OptimError::InvalidConfig(format!(
                "adv_eps must be a nonnegative finite real, got {}",
                self.adv_eps
            )));
        }
        Ok(())
    }
}

/// Per-sample advantages aligned with `RolloutBatch::samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector {
    pub per_sample_adv: Vec<f64>,
    pub method_tag: Method,
}

impl AdvantageVector {
    pub fn correct_sum(&self, batch: &RolloutBatch) -> f64 {
        self.per_sample_adv
            .iter()
            .zip(&batch.rewards)
            .filter(|(_, &r)| r == 1.0)
            .map(|(&a, _)| a)
            .sum()
    }
}

/// Group-relative advantages: A_i = (R_i - mean R) / (pop std R + adv_eps).
///
/// Batches where every reward is equal carry no signal and yield all-zero
/// advantages, including at adv_eps = 0.
pub fn grpo_advantages(batch: &RolloutBatch, adv_eps: f64) -> AdvantageVector {
    let k = batch.k() as f64;
    let n = batch.n_correct;
    if n == 0 || n == batch.k() {
        return AdvantageVector {
            per_sample_adv: vec![0.0; batch.k()],
            method_tag: Method::Grpo,
        };
    }
    let mean = n as f64 / k;
    let var = batch
        .rewards
        .iter()
        .map(|r| (r - mean) * (r - mean))
        .sum::<f64>()
        / k;
    let denom = var.sqrt() + adv_eps;
    AdvantageVector {
        per_sample_adv: batch.rewards.iter().map(|r| (r - mean) / denom).collect(),
        method_tag: Method::Grpo,
    }
}

/// Blended self-normalized importance weights over the distinct correct
/// tokens of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct UcpoWeights {
    pub weights: Vec<f64>,
    /// How many normalized probabilities hit [`Q_HAT_FLOOR`] before
    /// inversion; nonzero values flag a noisy-weight regime.
    pub clamped: usize,
}

/// w_i = (1 - tau)/n + tau * v_i / sum_j v_j with v_i = 1 / q_hat_i and
/// q_hat_i = p_i / sum_j p_j. The weights sum to one by construction.
pub fn ucpo_weights(correct_probs: &[f64], tau: f64) -> UcpoWeights {
    let n = correct_probs.len();
    assert!(n >= 1, "need at least one correct probability");
    let total: f64 = correct_probs.iter().sum();
    let mut clamped = 0usize;
    let inverse: Vec<f64> = correct_probs
        .iter()
        .map(|&p| {
            let q_hat = if total > 0.0 { p / total } else { 0.0 };
            let floored = if q_hat < Q_HAT_FLOOR {
                clamped += 1;
                Q_HAT_FLOOR
            } else {
                q_hat
            };
            1.0 / floored
        })
        .collect();
    let inverse_sum: f64 = inverse.iter().sum();
    let uniform = (1.0 - tau) / n as f64;
    let weights = inverse
        .iter()
        .map(|&v| uniform + tau * v / inverse_sum)
        .collect();
    UcpoWeights { weights, clamped }
}

/// UCPO advantages: redistribute the GRPO budget n * A+ over the distinct
/// correct tokens of the batch with [`ucpo_weights`], splitting each token's
/// share equally among its samples. Incorrect samples keep GRPO's A-.
///
/// At tau = 0 the rule reduces to GRPO, so GRPO advantages are returned
/// verbatim; likewise for all-incorrect batches, where there is no correct
/// set to reweight.
pub fn ucpo_advantages(
    batch: &RolloutBatch,
    policy: &PolicyState,
    config: &OptimizerConfig,
) -> AdvantageVector {
    let grpo = grpo_advantages(batch, config.adv_eps);
    if batch.n_correct == 0 || config.tau == 0.0 {
        return AdvantageVector {
            method_tag: Method::Ucpo,
            ..grpo
        };
    }
    // A+ is shared by every correct sample under GRPO.
    let a_plus = grpo
        .per_sample_adv
        .iter()
        .zip(&batch.rewards)
        .find(|(_, &r)| r == 1.0)
        .map(|(&a, _)| a)
        .expect("n_correct > 0");

    let probs = policy.probs();
    // Distinct correct tokens present in the batch, ascending token order.
    let mut tokens: Vec<usize> = Vec::new();
    for (y, &c) in batch.counts.iter().enumerate() {
        if c > 0 && is_sample_correct(batch, y) {
            tokens.push(y);
        }
    }
    let token_probs: Vec<f64> = tokens.iter().map(|&y| probs[y]).collect();
    let blend = ucpo_weights(&token_probs, config.tau);

    let budget = batch.n_correct as f64 * a_plus;
    let mut per_sample_adv = grpo.per_sample_adv;
    for (pos, &y) in tokens.iter().enumerate() {
        let share = budget * blend.weights[pos] / batch.counts[y] as f64;
        for (i, &s) in batch.samples.iter().enumerate() {
            if s == y {
                per_sample_adv[i] = share;
            }
        }
    }
    AdvantageVector {
        per_sample_adv,
        method_tag: Method::Ucpo,
    }
}

fn is_sample_correct(batch: &RolloutBatch, token: usize) -> bool {
    batch
        .samples
        .iter()
        .zip(&batch.rewards)
        .any(|(&s, &r)| s == token && r == 1.0)
}

/// Exact analytic gradient of tau_ent * H(softmax(z)) with respect to the
/// logits: grad_k = -tau_ent * pi_k * (log pi_k + H(pi)).
pub fn global_entropy_gradient(policy: &PolicyState, tau_ent: f64) -> Vec<f64> {
    let probs = policy.probs();
    if tau_ent == 0.0 {
        return vec![0.0; probs.len()];
    }
    let h = entropy(&probs);
    probs
        .iter()
        .map(|&p| {
            if p > 0.0 {
                -tau_ent * p * (p.ln() + h)
            } else {
                0.0
            }
        })
        .collect()
}

/// Result of one logit update.
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub policy: PolicyState,
    /// Per-token aggregated |advantage| contributions: for each token y,
    /// sum over samples of y of |A_i|.
    pub per_token_grad_mass: Vec<f64>,
}

/// Apply the analytic softmax policy-gradient step:
/// delta_z = lr * [ sum_i A_i * (e_{y_i} - pi) + entropy term if configured ].
pub fn policy_gradient_update(
    mut policy: PolicyState,
    batch: &RolloutBatch,
    adv: &AdvantageVector,
    config: &OptimizerConfig,
) -> Result<UpdateOutcome, OptimError> {
    assert_eq!(
        adv.per_sample_adv.len(),
        batch.k(),
        "advantages misaligned with batch"
    );
    let probs = policy.probs();
    let v = probs.len();
    let total_adv: f64 = adv.per_sample_adv.iter().sum();
    let mut gradient: Vec<f64> = probs.iter().map(|&p| -p * total_adv).collect();
    let mut per_token_grad_mass = vec![0.0; v];
    for (&y, &a) in batch.samples.iter().zip(&adv.per_sample_adv) {
        gradient[y] += a;
        per_token_grad_mass[y] += a.abs();
    }
    if config.method == Method::GlobalEntropy {
        // the reward side of the batch gradient is a K-sample sum, so the
        // entropy bonus enters once per sample to keep the objective's
        // reward-to-entropy ratio batch-size independent
        let k = batch.k() as f64;
        for (g, e) in gradient
            .iter_mut()
            .zip(global_entropy_gradient(&policy, config.tau_ent))
        {
            *g += k * e;
        }
    }
    let new_logits: Vec<f64> = policy
        .logits()
        .iter()
        .zip(&gradient)
        .map(|(&z, &g)| z + config.learning_rate * g)
        .collect();
    if let Some(index) = new_logits.iter().position(|z| !z.is_finite()) {
        return Err(OptimError::NonFiniteUpdate {
            index,
            batch_size: batch.k(),
            logits: policy.logits().to_vec(),
            gradient,
        });
    }
    policy
        .apply_logits(new_logits)
        .expect("finiteness checked above");
    Ok(UpdateOutcome {
        policy,
        per_token_grad_mass,
    })
}
