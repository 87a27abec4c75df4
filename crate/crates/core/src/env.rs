//! The controlled RLVR environment: a discrete output space with a designated
//! correct subset, deterministic binary rewards, reference-policy
//! initialization profiles, and seeded on-policy rollout sampling.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::PolicyState;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

/// How the reference policy distributes conditional mass within the correct
/// set. Ratios are relative weights over the m correct tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitProfile {
    /// 1:1:1 conditional distribution.
    Uniform,
    /// 1.5:1.2:1 conditional distribution.
    MildSkew,
    /// 4:2:1 conditional distribution.
    Skewed,
    /// Arbitrary positive ratios, one per correct token.
    Custom(Vec<f64>),
}

impl InitProfile {
    /// Ratio vector for a correct set of size `m`.
    pub fn ratios(&self, m: usize) -> Result<Vec<f64>, EnvError> {
        let fixed = |base: &[f64]| -> Result<Vec<f64>, EnvError> {
            if m == base.len() {
                Ok(base.to_vec())
            } else {
                // Named profiles are 3-way in origin; cycle them for other m.
                Ok((0..m).map(|i| base[i % base.len()]).collect())
            }
        };
        match self {
            InitProfile::Uniform => Ok(vec![1.0; m]),
            InitProfile::MildSkew => fixed(&[1.5, 1.2, 1.0]),
            InitProfile::Skewed => fixed(&[4.0, 2.0, 1.0]),
            InitProfile::Custom(ratios) => {
                if ratios.len() != m {
                    return Err(EnvError::InvalidConfig(format!(
                        "custom profile has {} ratios but the correct set has {m} tokens",
                        ratios.len()
                    )));
                }
                if let Some(&bad) = ratios.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
                    return Err(EnvError::InvalidConfig(format!(
                        "custom profile ratios must be positive and finite, found {bad}"
                    )));
                }
                Ok(ratios.clone())
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            InitProfile::Uniform => "uniform".into(),
            InitProfile::MildSkew => "mild-skew".into(),
            InitProfile::Skewed => "skewed".into(),
            InitProfile::Custom(_) => "custom".into(),
        }
    }
}

/// Output-space size, correct-index set, initialization profile, and the
/// per-incorrect-token background mass of the reference policy.
///
/// Deserialization funnels through [`EnvSpec::new`], so a config file cannot
/// construct an inconsistent spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnvSpec")]
pub struct EnvSpec {
    vocab_size: usize,
    correct_indices: Vec<usize>,
    pub init_profile: InitProfile,
    pub background_mass_per_incorrect: f64,
}

#[derive(Deserialize)]
struct RawEnvSpec {
    vocab_size: usize,
    correct_indices: Vec<usize>,
    init_profile: InitProfile,
    #[serde(default = "default_background_mass")]
    background_mass_per_incorrect: f64,
}

fn default_background_mass() -> f64 {
    0.01
}

impl TryFrom<RawEnvSpec> for EnvSpec {
    type Error = EnvError;

    fn try_from(raw: RawEnvSpec) -> Result<Self, EnvError> {
        EnvSpec::new(
            raw.vocab_size,
            raw.correct_indices,
            raw.init_profile,
            raw.background_mass_per_incorrect,
        )
    }
}

impl EnvSpec {
    pub fn new(
        vocab_size: usize,
        correct_indices: Vec<usize>,
        init_profile: InitProfile,
        background_mass_per_incorrect: f64,
    ) -> Result<Self, EnvError> {
        let m = correct_indices.len();
        if m == 0 || m >= vocab_size {
            return Err(EnvError::InvalidConfig(format!(
                "need 1 <= |correct set| < vocab size, got {m} of {vocab_size}"
            )));
        }
        let mut seen = vec![false; vocab_size];
        for &y in &correct_indices {
            if y >= vocab_size {
                return Err(EnvError::InvalidConfig(format!(
                    "correct index {y} out of bounds for vocab size {vocab_size}"
                )));
            }
            if seen[y] {
                return Err(EnvError::InvalidConfig(format!(
                    "duplicate correct index {y}"
                )));
            }
            seen[y] = true;
        }
        if !background_mass_per_incorrect.is_finite() || background_mass_per_incorrect < 0.0 {
            return Err(EnvError::InvalidConfig(format!(
                "background mass must be a finite nonnegative real, got {background_mass_per_incorrect}"
            )));
        }
        // profile arity check happens eagerly so bad configs fail at load time
        init_profile.ratios(m)?;
        Ok(Self {
            vocab_size,
            correct_indices,
            init_profile,
            background_mass_per_incorrect,
        })
    }

    /// The headline configuration: 20 tokens, 3 correct, 4:2:1 skew, 0.01
    /// background mass per incorrect token.
    pub fn default_skewed() -> Self {
        Self::new(20, vec![0, 1, 2], InitProfile::Skewed, 0.01).expect("static config")
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn correct_indices(&self) -> &[usize] {
        &self.correct_indices
    }

    pub fn num_correct(&self) -> usize {
        self.correct_indices.len()
    }

    pub fn is_correct(&self, y: usize) -> bool {
        self.correct_indices.contains(&y)
    }

    /// Deterministic binary reward.
    pub fn reward(&self, y: usize) -> f64 {
        if self.is_correct(y) {
            1.0
        } else {
            0.0
        }
    }
}

/// K sampled token indices with rewards, per-token counts, and the number of
/// correct samples. The Monte Carlo unit of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub samples: Vec<usize>,
    pub rewards: Vec<f64>,
    pub counts: Vec<u32>,
    pub n_correct: usize,
}

impl RolloutBatch {
    pub fn k(&self) -> usize {
        self.samples.len()
    }
}

/// Build the reference policy for an environment.
///
/// Pre-normalization masses: each incorrect token gets the background mass;
/// the correct tokens share one unit of mass split in the profile's ratios,
/// which fixes the conditional distribution q to the profile exactly. Logits
/// are the log of the normalized probabilities, so every mass must be
/// strictly positive to keep logits finite.
pub fn init_policy(env: &EnvSpec) -> Result<PolicyState, EnvError> {
    let m = env.num_correct();
    let ratios = env.init_profile.ratios(m)?;
    if env.background_mass_per_incorrect == 0.0 {
        return Err(EnvError::InvalidConfig(
            "zero background mass yields non-finite logits under the softmax parameterization"
                .into(),
        ));
    }
    let ratio_sum: f64 = ratios.iter().sum();
    let mut mass = vec![env.background_mass_per_incorrect; env.vocab_size()];
    for (pos, &y) in env.correct_indices().iter().enumerate() {
        mass[y] = ratios[pos] / ratio_sum;
    }
    let total: f64 = mass.iter().sum();
    let logits: Vec<f64> = mass.iter().map(|&w| (w / total).ln()).collect();
    PolicyState::new(logits).map_err(|e| EnvError::InvalidConfig(e.to_string()))
}

/// Draw K i.i.d. samples from the policy's categorical distribution.
///
/// Inverse-CDF with a fixed left-to-right scan over the probability vector,
/// so tie behavior is deterministic and a fixed seed stream reproduces the
/// batch bit-for-bit.
pub fn sample_batch(
    policy: &PolicyState,
    env: &EnvSpec,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> RolloutBatch {
    assert!(k >= 1, "batch size must be at least 1");
    let probs = policy.probs();
    let mut samples = Vec::with_capacity(k);
    let mut rewards = Vec::with_capacity(k);
    let mut counts = vec![0u32; env.vocab_size()];
    let mut n_correct = 0usize;
    for _ in 0..k {
        let y = inverse_cdf(&probs, rng.random::<f64>());
        samples.push(y);
        counts[y] += 1;
        let r = env.reward(y);
        if r == 1.0 {
            n_correct += 1;
        }
        rewards.push(r);
    }
    RolloutBatch {
        samples,
        rewards,
        counts,
        n_correct,
    }
}

fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (y, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return y;
        }
    }
    // u landed in the roundoff tail beyond the accumulated sum
    probs.len() - 1
}

/// P(N_y >= 1) = 1 - (1 - p)^K: the chance a token with probability `p` is
/// sampled at least once in a batch of size `k`.
pub fn sampling_threshold_probability(p: f64, k: usize) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    1.0 - (1.0 - p).powi(k as i32)
}
