//! Simulator and verification library for diversity collapse in RL with
//! verifiable rewards (RLVR).
//!
//! The library models a softmax policy over a small discrete output space in
//! which a subset of tokens is "correct" and rewards are binary. Training
//! rules (GRPO, UCPO, global entropy regularization) are interchangeable
//! strategies selected by name at runtime. Because the full distribution is
//! observable, every claimed training property can be checked against exact
//! brute-force oracles, which live in [`oracle`].
//!
//! Module map:
//! - [`policy`]: softmax policy state and distribution-level probes.
//! - [`env`]: output space, correct set, initialization profiles, seeded
//!   rollout sampling.
//! - [`optim`]: advantage rules and the analytic logit update, behind the
//!   [`optim::UpdateRule`] strategy trait and its registry.
//! - [`diagnostics`]: per-step traces, drift series, collapse classification.
//! - [`oracle`]: closed-form gradients, finite differences, enumeration
//!   verifiers for the optimality and robustness claims.
//! - [`experiment`]: config-driven multi-seed runner, presets, CSV/JSON
//!   emission.
//! - [`evaluate`]: offline rollout-log evaluation (pass@k, equation-level
//!   diversity).

pub mod diagnostics;
pub mod env;
pub mod evaluate;
pub mod experiment;
pub mod optim;
pub mod oracle;
pub mod policy;
pub mod rng;

pub use env::{EnvSpec, InitProfile, RolloutBatch};
pub use optim::{AdvantageVector, Method, OptimizerConfig};
pub use policy::{PolicyState, ProbeSnapshot};
