//! The training rules behind a common trait, registered by name and
//! selected at runtime from config or CLI.

use crate::env::RolloutBatch;
use crate::policy::PolicyState;

use super::{
    grpo_advantages, ucpo_advantages, AdvantageVector, Method, OptimError, OptimizerConfig,
};

/// One interchangeable training rule: given a sampled batch and the current
/// policy, produce per-sample advantages. The shared softmax score-function
/// update in [`super::policy_gradient_update`] turns them into a logit step.
pub trait UpdateRule: Send + Sync {
    fn name(&self) -> &'static str;
    fn advantages(&self, batch: &RolloutBatch, policy: &PolicyState) -> AdvantageVector;
}

struct Grpo {
    adv_eps: f64,
}

impl UpdateRule for Grpo {
    fn name(&self) -> &'static str {
        Method::Grpo.as_str()
    }

    fn advantages(&self, batch: &RolloutBatch, _policy: &PolicyState) -> AdvantageVector {
        grpo_advantages(batch, self.adv_eps)
    }
}

struct Ucpo {
    config: OptimizerConfig,
}

impl UpdateRule for Ucpo {
    fn name(&self) -> &'static str {
        Method::Ucpo.as_str()
    }

    fn advantages(&self, batch: &RolloutBatch, policy: &PolicyState) -> AdvantageVector {
        ucpo_advantages(batch, policy, &self.config)
    }
}

/// GRPO advantages; the entropy bonus itself is an analytic gradient term
/// applied inside the update, keyed off `Method::GlobalEntropy`.
struct GlobalEntropy {
    adv_eps: f64,
}

impl UpdateRule for GlobalEntropy {
    fn name(&self) -> &'static str {
        Method::GlobalEntropy.as_str()
    }

    fn advantages(&self, batch: &RolloutBatch, _policy: &PolicyState) -> AdvantageVector {
        let mut adv = grpo_advantages(batch, self.adv_eps);
        adv.method_tag = Method::GlobalEntropy;
        adv
    }
}

type Factory = fn(&OptimizerConfig) -> Box<dyn UpdateRule>;

static REGISTRY: &[(&str, Factory)] = &[
    ("grpo", |c| Box::new(Grpo { adv_eps: c.adv_eps })),
    ("ucpo", |c| Box::new(Ucpo { config: c.clone() })),
    ("global-entropy", |c| {
        Box::new(GlobalEntropy { adv_eps: c.adv_eps })
    }),
];

/// Names of every registered rule, in registration order.
pub fn available_methods() -> Vec<&'static str> {
    REGISTRY.iter().map(|(name, _)| *name).collect()
}

/// Validate the config and instantiate its rule.
pub fn build_rule(config: &OptimizerConfig) -> Result<Box<dyn UpdateRule>, OptimError> {
    config.validate()?;
    let name = config.method.as_str();
    REGISTRY
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, factory)| factory(config))
        .ok_or_else(|| OptimError::InvalidConfig(format!("unknown method {name}")))
}
