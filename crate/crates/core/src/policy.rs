//! Softmax policy over a finite output space and its distribution-level
//! probes.
//!
//! The logit vector IS the policy: pi(y) = exp(z_y) / sum_y' exp(z_y').
//! Collapse dynamics drive logits far apart, so all probabilities are
//! computed in log-space with max-subtraction.

use serde::Serialize;
use thiserror::Error;

use crate::env::EnvSpec;

/// Conditional quantities become numerically meaningless below this much
/// correct mass; probing such a policy is an explicit error rather than NaN.
pub const DEGENERATE_MASS_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("logits must be finite, found {value} at index {index}")]
    NonFiniteInput { index: usize, value: f64 },
    #[error("logit vector must be nonempty")]
    EmptyInput,
    #[error("token index {index} out of bounds for vocabulary of {vocab_size}")]
    IndexOutOfBounds { index: usize, vocab_size: usize },
    #[error("correct mass {mass:e} below degenerate-mass floor; conditional quantities undefined")]
    DegenerateMass { mass: f64 },
}

/// Logit vector over the output space; the single mutable object of a
/// training run. `version` counts applied updates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    logits: Vec<f64>,
    version: u64,
}

impl PolicyState {
    pub fn new(logits: Vec<f64>) -> Result<Self, PolicyError> {
        check_finite(&logits)?;
        Ok(Self { logits, version: 0 })
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn vocab_size(&self) -> usize {
        self.logits.len()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn probs(&self) -> Vec<f64> {
        softmax_unchecked(&self.logits)
    }

    /// Replace the logits after an update, bumping the version counter.
    /// Fails if any new logit is non-finite; the caller decides how to
    /// surface the aborted state.
    pub fn apply_logits(&mut self, logits: Vec<f64>) -> Result<(), PolicyError> {
        check_finite(&logits)?;
        debug_assert_eq!(logits.len(), self.logits.len());
        self.logits = logits;
        self.version += 1;
        Ok(())
    }
}

/// Immutable probe of every distribution-level quantity tracked per step:
/// the full probability vector, correct mass Z, the conditional distribution
/// q over the correct set, its entropy (nats) and normalized entropy, and
/// the pairwise log-ratio matrix over correct tokens.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeSnapshot {
    pub probs: Vec<f64>,
    pub correct_mass: f64,
    pub conditional_q: Vec<f64>,
    pub conditional_entropy: f64,
    /// H(q) / ln(m); defined as 1.0 for m == 1 (a point target is trivially
    /// uniform).
    pub normalized_entropy: f64,
    /// `log_ratios[i][j] = log pi(y_i) - log pi(y_j)` over correct pairs,
    /// indexed by position within the correct set.
    pub log_ratios: Vec<Vec<f64>>,
}

fn check_finite(logits: &[f64]) -> Result<(), PolicyError> {
    if logits.is_empty() {
        return Err(PolicyError::EmptyInput);
    }
    for (index, &value) in logits.iter().enumerate() {
        if !value.is_finite() {
            return Err(PolicyError::NonFiniteInput { index, value });
        }
    }
    Ok(())
}

/// Numerically stable softmax: invariant to adding a constant to all logits.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, PolicyError> {
    check_finite(logits)?;
    Ok(softmax_unchecked(logits))
}

fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Probe the policy against an environment's correct set.
///
/// Errors with [`PolicyError::DegenerateMass`] when the correct mass has
/// collapsed below [`DEGENERATE_MASS_FLOOR`].
pub fn snapshot(policy: &PolicyState, env: &EnvSpec) -> Result<ProbeSnapshot, PolicyError> {
    let probs = policy.probs();
    let correct = env.correct_indices();
    let correct_mass: f64 = correct.iter().map(|&y| probs[y]).sum();
    if correct_mass < DEGENERATE_MASS_FLOOR {
        return Err(PolicyError::DegenerateMass { mass: correct_mass });
    }
    let conditional_q: Vec<f64> = correct.iter().map(|&y| probs[y] / correct_mass).collect();
    let conditional_entropy = entropy(&conditional_q);
    let m = correct.len();
    let normalized_entropy = if m > 1 {
        conditional_entropy / (m as f64).ln()
    } else {
        1.0
    };
    let log_ratios = correct
        .iter()
        .map(|&i| {
            correct
                .iter()
                .map(|&j| policy.logits[i] - policy.logits[j])
                .collect()
        })
        .collect();
    Ok(ProbeSnapshot {
        probs,
        correct_mass,
        conditional_q,
        conditional_entropy,
        normalized_entropy,
        log_ratios,
    })
}

/// Shannon entropy in nats with the 0 * log 0 := 0 convention.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// log pi(i) - log pi(j); under softmax this is exactly `logits[i] - logits[j]`.
pub fn log_ratio(policy: &PolicyState, i: usize, j: usize) -> Result<f64, PolicyError> {
    let v = policy.vocab_size();
    for index in [i, j] {
        if index >= v {
            return Err(PolicyError::IndexOutOfBounds {
                index,
                vocab_size: v,
            });
        }
    }
    Ok(policy.logits[i] - policy.logits[j])
}
