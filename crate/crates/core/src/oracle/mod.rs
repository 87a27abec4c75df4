//! Brute-force and closed-form verifiers for the training-dynamics claims.
//!
//! Everything in this module is computed by full enumeration over the small
//! output space or from closed forms, independent of the sampled training
//! path, and serves as the ground-truth layer the acceptance suite compares
//! against.

pub mod finite_diff;
pub mod gradients;

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use serde::Serialize;
use thiserror::Error;

use crate::env::{sample_batch, EnvSpec, InitProfile};
use crate::optim::{
    global_entropy_gradient, grpo_advantages, ucpo_advantages, ucpo_weights, Method,
    OptimizerConfig,
};
use crate::policy::{softmax, PolicyState};
use crate::rng::SeedStream;
use finite_diff::{central_diff_gradient, max_absolute_error, max_relative_error, FD_STEP};

/// Enumeration refuses output spaces larger than this.
pub const MAX_ENUMERATION_VOCAB: usize = 64;

/// Serialized stand-in for a negatively infinite objective (a correct token
/// with zero conditional probability makes KL(u || q) infinite).
pub const OBJECTIVE_NEG_SENTINEL: f64 = -1e30;

/// Internal step size for exact gradient ascent on closed-form objectives.
/// The correctness-mass tail decays like 1/(lr * t), so the rate is sized
/// for mass > 0.999 within the step budgets used by the verifiers.
const ASCENT_LR: f64 = 1.0;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("output space of {0} tokens is too large to enumerate (max {MAX_ENUMERATION_VOCAB})")]
    VocabTooLarge(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

// ---------------------------------------------------------------------------
// Expected-gradient enumeration
// ---------------------------------------------------------------------------

/// Three independent routes to the expected logit update of one training
/// step, with advantages frozen at the expected batch composition.
#[derive(Debug, Clone, Serialize)]
pub struct ExactGradientReport {
    pub analytic: Vec<f64>,
    pub enumerated: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub max_rel_error: f64,
}

/// Per-outcome advantages at the expected batch composition: the group mean
/// and deviation are evaluated at their expectations (mean reward Z,
/// deviation sqrt(Z(1-Z))), and for the ucpo rule the reweighting is taken
/// over the full correct set at the true conditional distribution.
pub fn expectation_advantages(
    policy: &PolicyState,
    env: &EnvSpec,
    config: &OptimizerConfig,
) -> Vec<f64> {
    let probs = policy.probs();
    let z: f64 = env.correct_indices().iter().map(|&y| probs[y]).sum();
    let sigma = (z * (1.0 - z)).sqrt();
    let a_plus = (1.0 - z) / (sigma + config.adv_eps);
    let a_minus = -z / (sigma + config.adv_eps);
    let mut adv: Vec<f64> = (0..env.vocab_size())
        .map(|y| if env.is_correct(y) { a_plus } else { a_minus })
        .collect();
    if config.method == Method::Ucpo && config.tau > 0.0 {
        let correct_probs: Vec<f64> = env.correct_indices().iter().map(|&y| probs[y]).collect();
        let blend = ucpo_weights(&correct_probs, config.tau);
        for (pos, &y) in env.correct_indices().iter().enumerate() {
            // expected count K*pi_y shares the expected budget K*Z*A+ by w_y
            adv[y] = z * a_plus * blend.weights[pos] / probs[y];
        }
    }
    adv
}

/// Enumerate the expected one-step gradient and cross-check it against the
/// per-token amplification formula and central finite differences.
pub fn exact_expected_gradient(
    policy: &PolicyState,
    env: &EnvSpec,
    config: &OptimizerConfig,
    k: usize,
) -> Result<ExactGradientReport, OracleError> {
    let v = env.vocab_size();
    if v > MAX_ENUMERATION_VOCAB {
        return Err(OracleError::VocabTooLarge(v));
    }
    let logits = policy.logits().to_vec();
    let probs = policy.probs();
    let adv = expectation_advantages(policy, env, config);
    let kf = k as f64;

    // Per-token amplification: contribution of token y is
    // A(y) * K * pi(y) * grad log pi(y).
    let mut analytic = vec![0.0; v];
    for y in 0..v {
        let scale = adv[y] * kf * probs[y];
        for (g, s) in analytic
            .iter_mut()
            .zip(gradients::score_gradient(&logits, y))
        {
            *g += scale * s;
        }
    }

    // Expectation of the per-sample update over all outcomes:
    // K * E_{y~pi}[A(y) * (e_y - pi)].
    let weighted_total: f64 = (0..v).map(|y| probs[y] * adv[y]).sum();
    let mut enumerated: Vec<f64> = probs.iter().map(|&p| -kf * p * weighted_total).collect();
    for y in 0..v {
        enumerated[y] += kf * probs[y] * adv[y];
    }

    // Central differences of the frozen-advantage surrogate
    // f(z) = K * sum_y A(y) * softmax(z)_y (+ entropy bonus if configured).
    let tau_ent = if config.method == Method::GlobalEntropy {
        config.tau_ent
    } else {
        0.0
    };
    // the per-sample entropy bonus sums to K * tau_ent * H over the batch
    let surrogate = |z: &[f64]| -> f64 {
        let pi = softmax(z).expect("finite logits");
        let reward: f64 = (0..v).map(|y| adv[y] * pi[y]).sum();
        kf * (reward + tau_ent * crate::policy::entropy(&pi))
    };
    let finite_difference = central_diff_gradient(surrogate, &logits, FD_STEP);

    if config.method == Method::GlobalEntropy {
        let ent = global_entropy_gradient(policy, config.tau_ent);
        for i in 0..v {
            analytic[i] += kf * ent[i];
            enumerated[i] += kf * ent[i];
        }
    }

    let max_rel_error = f64::max(
        max_relative_error(&analytic, &enumerated, 1e-12),
        max_relative_error(&analytic, &finite_difference, 1e-12),
    );
    Ok(ExactGradientReport {
        analytic,
        enumerated,
        finite_difference,
        max_rel_error,
    })
}

/// Monte Carlo mean of sampled one-step gradients under frozen per-outcome
/// advantages, with per-coordinate standard errors against the enumerated
/// expectation.
#[derive(Debug, Clone, Serialize)]
pub struct McGradientCheck {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub enumerated: Vec<f64>,
    /// max over coordinates of |mean - enumerated| / stderr
    pub max_z_score: f64,
}

pub fn mc_gradient_check(
    policy: &PolicyState,
    env: &EnvSpec,
    config: &OptimizerConfig,
    k: usize,
    n_batches: u64,
    seed: u64,
) -> Result<McGradientCheck, OracleError> {
    let report = exact_expected_gradient(policy, env, config, k)?;
    let v = env.vocab_size();
    let probs = policy.probs();
    let adv = expectation_advantages(policy, env, config);
    let entropy_term = if config.method == Method::GlobalEntropy {
        let mut g = global_entropy_gradient(policy, config.tau_ent);
        g.iter_mut().for_each(|x| *x *= k as f64);
        g
    } else {
        vec![0.0; v]
    };
    let stream = SeedStream::new(seed);
    let mut mean = vec![0.0; v];
    let mut m2 = vec![0.0; v];
    for b in 0..n_batches {
        let batch = sample_batch(policy, env, k, &mut stream.step_rng(b));
        let total: f64 = batch.samples.iter().map(|&y| adv[y]).sum();
        let mut grad: Vec<f64> = probs.iter().map(|&p| -p * total).collect();
        for &y in &batch.samples {
            grad[y] += adv[y];
        }
        for i in 0..v {
            grad[i] += entropy_term[i];
            let delta = grad[i] - mean[i];
            mean[i] += delta / (b + 1) as f64;
            m2[i] += delta * (grad[i] - mean[i]);
        }
    }
    let stderr: Vec<f64> = m2
        .iter()
        .map(|&s| (s / (n_batches as f64 - 1.0) / n_batches as f64).sqrt())
        .collect();
    let max_z_score = (0..v)
        .map(|i| (mean[i] - report.enumerated[i]).abs() / stderr[i].max(1e-300))
        .fold(0.0, f64::max);
    Ok(McGradientCheck {
        mean,
        stderr,
        enumerated: report.enumerated,
        max_z_score,
    })
}

// ---------------------------------------------------------------------------
// Combined-objective landscape
// ---------------------------------------------------------------------------

/// Exact objective log Z - tau * KL(u || q) from the full distribution;
/// returns [`OBJECTIVE_NEG_SENTINEL`] when some correct token has zero
/// conditional probability (infinite KL).
pub fn ucpo_objective_value(policy: &PolicyState, env: &EnvSpec, tau: f64) -> f64 {
    let q = gradients::conditional_q(policy.logits(), env);
    if q.iter().any(|&x| x <= 0.0) {
        return OBJECTIVE_NEG_SENTINEL;
    }
    gradients::combined_objective(policy.logits(), env, tau)
}

#[derive(Debug, Clone, Serialize)]
pub struct AscentOutcome {
    pub final_correct_mass: f64,
    pub max_q_deviation: f64,
    pub final_objective: f64,
    pub final_gradient_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UniqueOptimumReport {
    pub tau: f64,
    pub tolerance: f64,
    pub outcomes: Vec<AscentOutcome>,
    /// Every start reached correct mass > 0.999 and max |q - 1/m| below
    /// tolerance.
    pub all_converged: bool,
}

/// Run exact gradient ascent on the closed-form combined objective from 20
/// random starts; the claimed unique optimum is the uniform-correct policy.
pub fn verify_unique_optimum(
    env: &EnvSpec,
    tau: f64,
    ascent_steps: usize,
    tolerance: f64,
    seed: u64,
) -> Result<UniqueOptimumReport, OracleError> {
    if tau <= 0.0 {
        return Err(OracleError::InvalidParameter(format!(
            "uniqueness holds only for tau > 0, got {tau}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = env.num_correct() as f64;
    let mut outcomes = Vec::with_capacity(20);
    for _ in 0..20 {
        let mut z: Vec<f64> = (0..env.vocab_size())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        for _ in 0..ascent_steps {
            let grad = gradients::grad_combined_objective(&z, env, tau);
            for (zi, gi) in z.iter_mut().zip(&grad) {
                *zi += ASCENT_LR * gi;
            }
        }
        let pi = softmax(&z).expect("ascent keeps logits finite");
        let correct_mass: f64 = env.correct_indices().iter().map(|&y| pi[y]).sum();
        let q = gradients::conditional_q(&z, env);
        let max_q_deviation = q.iter().map(|&x| (x - 1.0 / m).abs()).fold(0.0, f64::max);
        let grad = gradients::grad_combined_objective(&z, env, tau);
        outcomes.push(AscentOutcome {
            final_correct_mass: correct_mass,
            max_q_deviation,
            final_objective: gradients::combined_objective(&z, env, tau),
            final_gradient_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        });
    }
    let all_converged = outcomes
        .iter()
        .all(|o| o.final_correct_mass > 0.999 && o.max_q_deviation < tolerance);
    Ok(UniqueOptimumReport {
        tau,
        tolerance,
        outcomes,
        all_converged,
    })
}

// ---------------------------------------------------------------------------
// Robustness minimax
// ---------------------------------------------------------------------------

/// Worst-case retained mass when an adversary deletes the `s` heaviest
/// entries of `q`: the s largest values are selected and the complement is
/// summed in index order.
pub fn robustness_minimax(q: &[f64], s: usize) -> Result<f64, OracleError> {
    let m = q.len();
    if s == 0 || s >= m {
        return Err(OracleError::InvalidParameter(format!(
            "need 1 <= s < m, got s = {s}, m = {m}"
        )));
    }
    let mut order: Vec<usize> = (0..m).collect();
    // heaviest first; ties by lowest index
    order.sort_by(|&a, &b| q[b].partial_cmp(&q[a]).unwrap().then(a.cmp(&b)));
    let mut removed = vec![false; m];
    for &i in order.iter().take(s) {
        removed[i] = true;
    }
    Ok((0..m).filter(|&i| !removed[i]).map(|i| q[i]).sum())
}

/// The same minimax by full enumeration of all size-s removal subsets.
pub fn robustness_minimax_enumerated(q: &[f64], s: usize) -> Result<f64, OracleError> {
    let m = q.len();
    if s == 0 || s >= m {
        return Err(OracleError::InvalidParameter(format!(
            "need 1 <= s < m, got s = {s}, m = {m}"
        )));
    }
    if m > 20 {
        return Err(OracleError::InvalidParameter(format!(
            "subset enumeration capped at m = 20, got {m}"
        )));
    }
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << m) {
        if mask.count_ones() as usize != s {
            continue;
        }
        let retained: f64 = (0..m).filter(|&i| mask & (1 << i) == 0).map(|i| q[i]).sum();
        if retained < best {
            best = retained;
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Entropy-regularized optimum
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct EntropyOptimumReport {
    pub tau_ent: f64,
    pub optimal_probs: Vec<f64>,
    pub incorrect_mass: f64,
    /// Max |q_y - 1/m| within the correct set at the optimum.
    pub max_within_correct_deviation: f64,
}

/// Closed-form maximizer of Z + tau_ent * H(pi) over the simplex: a Gibbs
/// distribution over rewards, pi*(y) proportional to exp(R(y)/tau_ent),
/// computed in a form stable down to very small tau_ent.
pub fn entropy_reg_optimum(
    env: &EnvSpec,
    tau_ent: f64,
) -> Result<EntropyOptimumReport, OracleError> {
    if tau_ent <= 0.0 {
        return Err(OracleError::InvalidParameter(format!(
            "tau_ent must be positive, got {tau_ent}"
        )));
    }
    let v = env.vocab_size();
    let m = env.num_correct();
    let t = (-1.0 / tau_ent).exp();
    let denom = m as f64 + (v - m) as f64 * t;
    let correct_p = 1.0 / denom;
    let incorrect_p = t / denom;
    let optimal_probs: Vec<f64> = (0..v)
        .map(|y| {
            if env.is_correct(y) {
                correct_p
            } else {
                incorrect_p
            }
        })
        .collect();
    let incorrect_mass = (v - m) as f64 * incorrect_p;
    let q_norm = correct_p * m as f64;
    let max_within_correct_deviation = (correct_p / q_norm - 1.0 / m as f64).abs();
    Ok(EntropyOptimumReport {
        tau_ent,
        optimal_probs,
        incorrect_mass,
        max_within_correct_deviation,
    })
}

/// Maximize Z + tau_ent * H(pi) by exact gradient ascent on logits;
/// cross-checks the closed form at moderate tau_ent.
pub fn entropy_optimum_by_ascent(env: &EnvSpec, tau_ent: f64, steps: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z: Vec<f64> = (0..env.vocab_size())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    for _ in 0..steps {
        let pi = softmax(&z).expect("finite");
        let zmass: f64 = env.correct_indices().iter().map(|&y| pi[y]).sum();
        let ent_grad = gradients::grad_entropy(&z);
        for (y, zi) in z.iter_mut().enumerate() {
            let reward_grad = pi[y] * (if env.is_correct(y) { 1.0 } else { 0.0 } - zmass);
            *zi += ASCENT_LR * (reward_grad + tau_ent * ent_grad[y]);
        }
    }
    softmax(&z).expect("finite")
}

/// Smallest tau_ent at which the closed-form optimum places more than
/// `threshold` mass on incorrect tokens, by bisection.
pub fn incorrect_mass_crossover(env: &EnvSpec, threshold: f64) -> f64 {
    let mass = |tau: f64| {
        entropy_reg_optimum(env, tau)
            .expect("tau > 0")
            .incorrect_mass
    };
    let mut lo = 1e-4;
    let mut hi = 10.0;
    debug_assert!(mass(lo) < threshold && mass(hi) > threshold);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > threshold {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// Full verification suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub all_pass: bool,
}

const IDENTITY_TOL: f64 = 1e-9;
const FD_REL_TOL: f64 = 1e-6;

fn random_logits(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

/// Run every closed-form and enumeration check at its pinned tolerance.
pub fn verify_suite() -> VerifyReport {
    let env = EnvSpec::default_skewed();
    let mut checks: Vec<CheckResult> = Vec::new();
    fn push(checks: &mut Vec<CheckResult>, name: &str, pass: bool, detail: String) {
        checks.push(CheckResult {
            name: name.to_string(),
            pass,
            detail,
        });
    }

    // Expected-gradient agreement per rule, 20 random configurations each.
    for method in [Method::Grpo, Method::Ucpo, Method::GlobalEntropy] {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + method as u64);
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let policy = PolicyState::new(random_logits(&mut rng, 20)).unwrap();
            let config = OptimizerConfig {
                method,
                tau: rng.random_range(0.05..0.95),
                tau_ent: rng.random_range(0.01..0.5),
                ..Default::default()
            };
            let report = exact_expected_gradient(&policy, &env, &config, 8).unwrap();
            worst = worst.max(report.max_rel_error);
        }
        push(
            &mut checks,
            &format!("expected-gradient/{method}"),
            worst < FD_REL_TOL,
            format!("max relative error {worst:.3e} over 20 configs (tol {FD_REL_TOL:.0e})"),
        );
    }

    // Gradient decomposition identity and the two-term KL-direction identity.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst_decomp = 0.0f64;
        let mut worst_kl = 0.0f64;
        for _ in 0..20 {
            let z = random_logits(&mut rng, 20);
            let tau = rng.random_range(0.0..1.0);
            worst_decomp = worst_decomp.max(max_absolute_error(
                &gradients::grad_combined_objective(&z, &env, tau),
                &gradients::decomposition_gradient(&z, &env, tau),
            ));
            worst_kl = worst_kl.max(max_absolute_error(
                &gradients::grad_neg_kl_uniform(&z, &env),
                &gradients::neg_kl_two_term_gradient(&z, &env),
            ));
        }
        push(
            &mut checks,
            "gradient-decomposition",
            worst_decomp < IDENTITY_TOL,
            format!(
                "max |closed form - blended sum| = {worst_decomp:.3e} (tol {IDENTITY_TOL:.0e})"
            ),
        );
        push(
            &mut checks,
            "kl-direction-two-term",
            worst_kl < IDENTITY_TOL,
            format!("max |closed form - two-term| = {worst_kl:.3e} (tol {IDENTITY_TOL:.0e})"),
        );
    }

    // Finite-difference validation of each analytic objective gradient.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut worst: [(&str, f64); 5] = [
            ("log-correct-mass", 0.0),
            ("kl-uniformity", 0.0),
            ("entropy", 0.0),
            ("conditional-entropy", 0.0),
            ("combined-objective", 0.0),
        ];
        for _ in 0..20 {
            let z = random_logits(&mut rng, 20);
            let tau = rng.random_range(0.05..0.95);
            let cases: [(usize, Vec<f64>, Vec<f64>); 5] = [
                (
                    0,
                    gradients::grad_log_correct_mass(&z, &env),
                    central_diff_gradient(|x| gradients::log_correct_mass(x, &env), &z, FD_STEP),
                ),
                (
                    1,
                    gradients::grad_neg_kl_uniform(&z, &env),
                    central_diff_gradient(
                        |x| -gradients::kl_uniform_to_conditional(x, &env),
                        &z,
                        FD_STEP,
                    ),
                ),
                (
                    2,
                    gradients::grad_entropy(&z),
                    central_diff_gradient(gradients::entropy_value, &z, FD_STEP),
                ),
                (
                    3,
                    gradients::grad_conditional_entropy(&z, &env),
                    central_diff_gradient(
                        |x| gradients::conditional_entropy_value(x, &env),
                        &z,
                        FD_STEP,
                    ),
                ),
                (
                    4,
                    gradients::grad_combined_objective(&z, &env, tau),
                    central_diff_gradient(
                        |x| gradients::combined_objective(x, &env, tau),
                        &z,
                        FD_STEP,
                    ),
                ),
            ];
            for (i, analytic, fd) in cases {
                worst[i].1 = worst[i].1.max(max_relative_error(&analytic, &fd, 1e-12));
            }
        }
        for (name, err) in worst {
            push(
                &mut checks,
                &format!("finite-difference/{name}"),
                err < FD_REL_TOL,
                format!("max relative error {err:.3e} (tol {FD_REL_TOL:.0e})"),
            );
        }
    }

    // Advantage mass preservation over sampled batches.
    {
        let policy = crate::env::init_policy(&env).unwrap();
        let stream = SeedStream::new(23);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mut worst = 0.0f64;
        for b in 0..1000u64 {
            let batch = sample_batch(&policy, &env, 8, &mut stream.step_rng(b));
            let config = OptimizerConfig {
                method: Method::Ucpo,
                tau: rng.random_range(0.0..1.0),
                ..Default::default()
            };
            let ucpo = ucpo_advantages(&batch, &policy, &config);
            let grpo = grpo_advantages(&batch, config.adv_eps);
            worst = worst.max((ucpo.correct_sum(&batch) - grpo.correct_sum(&batch)).abs());
        }
        push(
            &mut checks,
            "advantage-mass-preservation",
            worst < IDENTITY_TOL,
            format!("max |sum ucpo - sum grpo| = {worst:.3e} over 1000 batches"),
        );
    }

    // Unique optimum of the combined objective.
    for m in [2usize, 3, 5] {
        for tau in [0.1, 0.2, 0.5] {
            let env_m = EnvSpec::new(20, (0..m).collect(), InitProfile::Uniform, 0.01).unwrap();
            let report = verify_unique_optimum(&env_m, tau, 5000, 1e-3, 41).unwrap();
            let worst_mass = report
                .outcomes
                .iter()
                .map(|o| o.final_correct_mass)
                .fold(f64::INFINITY, f64::min);
            let worst_dev = report
                .outcomes
                .iter()
                .map(|o| o.max_q_deviation)
                .fold(0.0, f64::max);
            push(
                &mut checks,
                &format!("unique-optimum/m{m}-tau{tau}"),
                report.all_converged,
                format!("min correct mass {worst_mass:.6}, max |q - 1/m| {worst_dev:.2e}"),
            );
        }
    }

    // Robustness minimax: uniform attains 1 - s/m exactly; enumeration and
    // sort routes agree exactly; non-uniform is strictly worse.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut pass = true;
        let mut detail = String::new();
        'outer: for m in 2usize..=8 {
            let uniform = vec![1.0 / m as f64; m];
            for s in 1..m {
                let sorted = robustness_minimax(&uniform, s).unwrap();
                let enumerated = robustness_minimax_enumerated(&uniform, s).unwrap();
                let closed = 1.0 - s as f64 / m as f64;
                if sorted != enumerated || (sorted - closed).abs() > 1e-12 {
                    pass = false;
                    detail = format!("uniform m={m} s={s}: sort {sorted}, enum {enumerated}");
                    break 'outer;
                }
            }
            for _ in 0..150 {
                let mut q: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
                let total: f64 = q.iter().sum();
                q.iter_mut().for_each(|x| *x /= total);
                let max_dev = q
                    .iter()
                    .map(|&x| (x - 1.0 / m as f64).abs())
                    .fold(0.0, f64::max);
                for s in 1..m {
                    let sorted = robustness_minimax(&q, s).unwrap();
                    let enumerated = robustness_minimax_enumerated(&q, s).unwrap();
                    if sorted != enumerated {
                        pass = false;
                        detail = format!("m={m} s={s}: sort {sorted} != enum {enumerated}");
                        break 'outer;
                    }
                    if max_dev > 1e-6 && sorted >= 1.0 - s as f64 / m as f64 {
                        pass = false;
                        detail = format!(
                            "non-uniform q not strictly below the uniform bound at m={m} s={s}"
                        );
                        break 'outer;
                    }
                }
            }
        }
        if pass {
            detail = "uniform exact at 1 - s/m; routes agree exactly; non-uniform strictly lower"
                .to_string();
        }
        push(&mut checks, "robustness-minimax", pass, detail);
    }

    // Entropy-regularized optimum: uniform within the correct set, vanishing
    // incorrect mass in the small-coefficient limit, monotone growth.
    {
        let grid = [0.01, 0.05, 0.1, 0.5];
        let reports: Vec<EntropyOptimumReport> = grid
            .iter()
            .map(|&t| entropy_reg_optimum(&env, t).unwrap())
            .collect();
        let uniform_within = reports
            .iter()
            .all(|r| r.max_within_correct_deviation < 1e-12);
        let small_limit = reports[0].incorrect_mass < 1e-3;
        let monotone = reports
            .windows(2)
            .all(|w| w[1].incorrect_mass >= w[0].incorrect_mass);
        let crossover = incorrect_mass_crossover(&env, 0.01);
        push(
            &mut checks,
            "entropy-regularized-optimum",
            uniform_within && small_limit && monotone,
            format!(
                "incorrect mass at {:?} = {:?}; 1% crossover at tau_ent ~= {crossover:.4}",
                grid,
                reports
                    .iter()
                    .map(|r| format!("{:.3e}", r.incorrect_mass))
                    .collect::<Vec<_>>()
            ),
        );
    }

    let all_pass = checks.iter().all(|c| c.pass);
    VerifyReport { checks, all_pass }
}
