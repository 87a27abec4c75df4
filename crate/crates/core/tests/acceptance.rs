//! Acceptance suite: one test per acceptance criterion, each printing one
//! pass/fail line (run with `--nocapture` to see them all). Every tolerance
//! is pinned in this file.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use rlvr_sim::diagnostics::{divergence_drift, empirical_mean_counts};
use rlvr_sim::env::{init_policy, sample_batch, EnvSpec, InitProfile};
use rlvr_sim::evaluate::{equation_diversity, pass_at_k, PromptRecord, Rollout, RolloutLog};
use rlvr_sim::experiment::{preset, run_cells, run_experiment};
use rlvr_sim::optim::{grpo_advantages, ucpo_advantages, Method, OptimizerConfig};
use rlvr_sim::oracle::finite_diff::{central_diff_gradient, FD_STEP};
use rlvr_sim::oracle::{
    entropy_reg_optimum, exact_expected_gradient, gradients, robustness_minimax,
    robustness_minimax_enumerated, verify_unique_optimum,
};
use rlvr_sim::policy::PolicyState;
use rlvr_sim::rng::SeedStream;

fn criterion(name: &str, f: impl FnOnce() -> Result<(), String>) {
    match f() {
        Ok(()) => println!("PASS {name}"),
        Err(e) => {
            println!("FAIL {name}: {e}");
            panic!("{name}: {e}");
        }
    }
}

fn check_elapsed(start: Instant, budget: Duration) -> Result<(), String> {
    let elapsed = start.elapsed();
    if elapsed <= budget {
        Ok(())
    } else {
        Err(format!("runtime {elapsed:?} exceeds budget {budget:?}"))
    }
}

#[test]
fn c01_sampling_bias_law() {
    criterion(
        "C1 sampling-bias law: mean counts match K*pi within 4 SE",
        || {
            let start = Instant::now();
            let env = EnvSpec::default_skewed();
            let policy = init_policy(&env).map_err(|e| e.to_string())?;
            let probs = policy.probs();
            let k = 8usize;
            let batches = 10_000u64;
            let means = empirical_mean_counts(&policy, &env, k, batches, 101);
            for y in 0..env.vocab_size() {
                let expect = k as f64 * probs[y];
                let se = (k as f64 * probs[y] * (1.0 - probs[y]) / batches as f64).sqrt();
                let dev = (means[y] - expect).abs();
                if dev > 4.0 * se {
                    return Err(format!(
                        "token {y}: |{:.4} - {expect:.4}| = {dev:.5} > 4 SE = {:.5}",
                        means[y],
                        4.0 * se
                    ));
                }
            }
            check_elapsed(start, Duration::from_secs(5))
        },
    );
}

#[test]
fn c02_grpo_collapse() {
    criterion(
        "C2 grpo collapse: fig3 entropy < 0.40 all seeds, winner y0 in >= 4/5",
        || {
            let start = Instant::now();
            let config = preset("fig3").map_err(|e| e.to_string())?;
            let grouped = run_cells(&config).map_err(|e| e.to_string())?;
            let results = &grouped[0].1;
            if results.len() != 5 {
                return Err(format!("expected 5 seeds, got {}", results.len()));
            }
            for r in results {
                let h = r.final_snapshot.normalized_entropy;
                if h >= 0.40 {
                    return Err(format!(
                        "seed {}: normalized entropy {h:.3} >= 0.40",
                        r.seed
                    ));
                }
            }
            let winner_y0 = results.iter().filter(|r| r.winner == 0).count();
            if winner_y0 < 4 {
                return Err(format!("winner y0 in only {winner_y0}/5 seeds"));
            }
            check_elapsed(start, Duration::from_secs(10))
        },
    );
}

#[test]
fn c03_symmetry_breaking() {
    criterion(
        "C3 symmetry breaking: fig6 uniform, 20 seeds, >= 18 collapse, >= 2 winners",
        || {
            let start = Instant::now();
            let mut config = preset("fig6").map_err(|e| e.to_string())?;
            config.seeds = (1..=20).collect();
            let grouped = run_cells(&config).map_err(|e| e.to_string())?;
            let (_, results) = grouped
                .iter()
                .find(|(c, _)| c.init_profile == InitProfile::Uniform)
                .ok_or("uniform cell missing")?;
            let collapsed = results
                .iter()
                .filter(|r| r.final_snapshot.normalized_entropy < 0.5)
                .count();
            if collapsed < 18 {
                return Err(format!("only {collapsed}/20 seeds collapsed below 0.5"));
            }
            let winners: BTreeSet<usize> = results.iter().map(|r| r.winner).collect();
            if winners.len() < 2 {
                return Err(format!("single winner {winners:?} across 20 seeds"));
            }
            check_elapsed(start, Duration::from_secs(30))
        },
    );
}

#[test]
fn c04_compounding_divergence() {
    criterion(
        "C4 compounding divergence: log-ratio grows in all seeds, mean drift > 0",
        || {
            let config = preset("fig3").map_err(|e| e.to_string())?;
            let grouped = run_cells(&config).map_err(|e| e.to_string())?;
            let results = &grouped[0].1;
            let mut drift_sum = 0.0;
            for r in results {
                let start_ratio = r.traces[0].snapshot.log_ratios[0][2];
                let end_ratio = r.final_snapshot.log_ratios[0][2];
                if end_ratio <= start_ratio {
                    return Err(format!(
                        "seed {}: log-ratio {end_ratio:.3} did not exceed start {start_ratio:.3}",
                        r.seed
                    ));
                }
                let drift = divergence_drift(r, 0, 2).map_err(|e| e.to_string())?;
                drift_sum += drift.mean_realized;
            }
            let seed_mean = drift_sum / results.len() as f64;
            if seed_mean <= 0.0 {
                return Err(format!("seed-averaged realized drift {seed_mean:.5} <= 0"));
            }
            Ok(())
        },
    );
}

#[test]
fn c05_ucpo_preserves_diversity() {
    criterion(
        "C5 ucpo: fig7 entropy > 0.90 and Z > 0.95 all seeds; grpo entropy < 0.5",
        || {
            let config = preset("fig7").map_err(|e| e.to_string())?;
            let grouped = run_cells(&config).map_err(|e| e.to_string())?;
            let (_, ucpo) = grouped
                .iter()
                .find(|(c, _)| c.method == Method::Ucpo)
                .ok_or("ucpo cell missing")?;
            for r in ucpo {
                let h = r.final_snapshot.normalized_entropy;
                let z = r.final_snapshot.correct_mass;
                if h <= 0.90 {
                    return Err(format!("ucpo seed {}: entropy {h:.3} <= 0.90", r.seed));
                }
                if z <= 0.95 {
                    return Err(format!("ucpo seed {}: Z {z:.3} <= 0.95", r.seed));
                }
            }
            let (_, grpo) = grouped
                .iter()
                .find(|(c, _)| c.method == Method::Grpo)
                .ok_or("grpo cell missing")?;
            for r in grpo {
                let h = r.final_snapshot.normalized_entropy;
                if h >= 0.5 {
                    return Err(format!("grpo seed {}: entropy {h:.3} >= 0.5", r.seed));
                }
            }
            Ok(())
        },
    );
}

#[test]
fn c06_global_entropy_failure_mode() {
    criterion(
        "C6 global entropy: incorrect mass monotone in tau_ent and above ucpo at every grid point",
        || {
            let config = preset("fig9").map_err(|e| e.to_string())?;
            let grouped = run_cells(&config).map_err(|e| e.to_string())?;
            let incorrect_mean = |results: &[rlvr_sim::diagnostics::RunResult]| -> f64 {
                results
                    .iter()
                    .map(|r| 1.0 - r.final_snapshot.correct_mass)
                    .sum::<f64>()
                    / results.len() as f64
            };
            let mut ge: Vec<(f64, f64)> = grouped
                .iter()
                .filter(|(c, _)| c.method == Method::GlobalEntropy)
                .map(|(c, results)| (c.tau_ent, incorrect_mean(results)))
                .collect();
            ge.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let grid: Vec<f64> = ge.iter().map(|(t, _)| *t).collect();
            if grid != vec![0.01, 0.05, 0.1, 0.5] {
                return Err(format!("unexpected tau_ent grid {grid:?}"));
            }
            for pair in ge.windows(2) {
                if pair[1].1 < pair[0].1 {
                    return Err(format!(
                        "incorrect mass not monotone: {:.3e} at tau_ent {} > {:.3e} at {}",
                        pair[0].1, pair[0].0, pair[1].1, pair[1].0
                    ));
                }
            }
            let (_, ucpo) = grouped
                .iter()
                .find(|(c, _)| c.method == Method::Ucpo)
                .ok_or("ucpo reference cell missing")?;
            let ucpo_inc = incorrect_mean(ucpo);
            for (tau_ent, inc) in &ge {
                if *inc <= ucpo_inc {
                    return Err(format!(
                        "incorrect mass {inc:.3e} at tau_ent {tau_ent} does not exceed ucpo's {ucpo_inc:.3e}"
                    ));
                }
            }
            Ok(())
        },
    );
}

#[test]
fn c07_mass_preservation() {
    criterion(
        "C7 mass preservation: |sum ucpo - sum grpo| < 1e-9 over 1000 random batches",
        || {
            let env = EnvSpec::default_skewed();
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let stream = SeedStream::new(78);
            for b in 0..1000u64 {
                let logits: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
                let policy = PolicyState::new(logits).map_err(|e| e.to_string())?;
                let batch = sample_batch(&policy, &env, 8, &mut stream.step_rng(b));
                let config = OptimizerConfig {
                    method: Method::Ucpo,
                    tau: rng.random_range(0.0..=1.0),
                    ..Default::default()
                };
                let ucpo = ucpo_advantages(&batch, &policy, &config);
                let grpo = grpo_advantages(&batch, config.adv_eps);
                let gap = (ucpo.correct_sum(&batch) - grpo.correct_sum(&batch)).abs();
                if gap >= 1e-9 {
                    return Err(format!("batch {b}: advantage mass gap {gap:.2e} >= 1e-9"));
                }
            }
            Ok(())
        },
    );
}

#[test]
fn c08_gradient_decomposition_and_analytic_gradients() {
    criterion(
        "C8 gradients: enumeration vs analytic < 1e-9; analytic vs central FD < 1e-6 rel",
        || {
            let env = EnvSpec::default_skewed();
            let mut rng = ChaCha8Rng::seed_from_u64(88);
            for i in 0..20 {
                let z: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
                let tau = rng.random_range(0.05..0.95);

                // closed-form vs enumerated identities
                let decomp_gap = max_abs_gap(
                    &gradients::grad_combined_objective(&z, &env, tau),
                    &gradients::decomposition_gradient(&z, &env, tau),
                );
                if decomp_gap >= 1e-9 {
                    return Err(format!("config {i}: decomposition gap {decomp_gap:.2e}"));
                }
                let kl_gap = max_abs_gap(
                    &gradients::grad_neg_kl_uniform(&z, &env),
                    &gradients::neg_kl_two_term_gradient(&z, &env),
                );
                if kl_gap >= 1e-9 {
                    return Err(format!("config {i}: kl-direction gap {kl_gap:.2e}"));
                }

                // analytic vs central finite differences, 1e-6 relative
                let fd_checks: [(&str, Vec<f64>, Vec<f64>); 4] = [
                    (
                        "log Z",
                        gradients::grad_log_correct_mass(&z, &env),
                        central_diff_gradient(
                            |x| gradients::log_correct_mass(x, &env),
                            &z,
                            FD_STEP,
                        ),
                    ),
                    (
                        "KL(u||q)",
                        gradients::grad_neg_kl_uniform(&z, &env),
                        central_diff_gradient(
                            |x| -gradients::kl_uniform_to_conditional(x, &env),
                            &z,
                            FD_STEP,
                        ),
                    ),
                    (
                        "entropy",
                        gradients::grad_entropy(&z),
                        central_diff_gradient(gradients::entropy_value, &z, FD_STEP),
                    ),
                    (
                        "full objective",
                        gradients::grad_combined_objective(&z, &env, tau),
                        central_diff_gradient(
                            |x| gradients::combined_objective(x, &env, tau),
                            &z,
                            FD_STEP,
                        ),
                    ),
                ];
                for (name, analytic, fd) in fd_checks {
                    for (a, f) in analytic.iter().zip(&fd) {
                        let rel = (a - f).abs() / a.abs().max(1e-12);
                        if rel >= 1e-6 {
                            return Err(format!(
                                "config {i} {name}: rel FD error {rel:.2e} (analytic {a:.4e}, fd {f:.4e})"
                            ));
                        }
                    }
                }
            }

            // three-route expected-gradient agreement per training rule
            for method in [Method::Grpo, Method::Ucpo, Method::GlobalEntropy] {
                let mut rng = ChaCha8Rng::seed_from_u64(900 + method as u64);
                for i in 0..20 {
                    let z: Vec<f64> = (0..20).map(|_| rng.random_range(-2.0..2.0)).collect();
                    let policy = PolicyState::new(z).map_err(|e| e.to_string())?;
                    let config = OptimizerConfig {
                        method,
                        tau: rng.random_range(0.05..0.95),
                        tau_ent: rng.random_range(0.01..0.5),
                        ..Default::default()
                    };
                    let report = exact_expected_gradient(&policy, &env, &config, 8)
                        .map_err(|e| e.to_string())?;
                    if report.max_rel_error >= 1e-6 {
                        return Err(format!(
                            "{method} config {i}: expected-gradient rel error {:.2e}",
                            report.max_rel_error
                        ));
                    }
                }
            }
            Ok(())
        },
    );
}

fn max_abs_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn c09_unique_optimum() {
    criterion(
        "C9 unique optimum: ascent reaches Z > 0.999 and |q - 1/m| < 1e-3 for m in {2,3,5}, tau in {0.1,0.2,0.5}",
        || {
            for m in [2usize, 3, 5] {
                for tau in [0.1, 0.2, 0.5] {
                    let env = EnvSpec::new(20, (0..m).collect(), InitProfile::Uniform, 0.01)
                        .map_err(|e| e.to_string())?;
                    let report = verify_unique_optimum(&env, tau, 5000, 1e-3, 4242)
                        .map_err(|e| e.to_string())?;
                    if !report.all_converged {
                        let worst = report
                            .outcomes
                            .iter()
                            .min_by(|a, b| {
                                a.final_correct_mass
                                    .partial_cmp(&b.final_correct_mass)
                                    .unwrap()
                            })
                            .unwrap();
                        return Err(format!(
                            "m={m} tau={tau}: worst start Z {:.6}, max |q - 1/m| {:.2e}",
                            worst.final_correct_mass, worst.max_q_deviation
                        ));
                    }
                }
            }
            Ok(())
        },
    );
}

#[test]
fn c10_robustness_minimax() {
    criterion(
        "C10 robustness: uniform retains 1 - s/m, non-uniform strictly lower, routes agree exactly",
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(1010);
            for m in 2usize..=8 {
                let uniform = vec![1.0 / m as f64; m];
                for s in 1..m {
                    let sorted = robustness_minimax(&uniform, s).map_err(|e| e.to_string())?;
                    let enumerated =
                        robustness_minimax_enumerated(&uniform, s).map_err(|e| e.to_string())?;
                    if sorted.to_bits() != enumerated.to_bits() {
                        return Err(format!("uniform m={m} s={s}: routes differ"));
                    }
                    let closed = 1.0 - s as f64 / m as f64;
                    if (sorted - closed).abs() > 1e-12 {
                        return Err(format!(
                            "uniform m={m} s={s}: retained {sorted} != 1 - s/m = {closed}"
                        ));
                    }
                }
                // 1000 random q spread across the m values
                for _ in 0..(1000 / 7 + 1) {
                    let mut q: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
                    let total: f64 = q.iter().sum();
                    q.iter_mut().for_each(|x| *x /= total);
                    let max_dev = q
                        .iter()
                        .map(|&x| (x - 1.0 / m as f64).abs())
                        .fold(0.0, f64::max);
                    for s in 1..m {
                        let sorted = robustness_minimax(&q, s).map_err(|e| e.to_string())?;
                        let enumerated =
                            robustness_minimax_enumerated(&q, s).map_err(|e| e.to_string())?;
                        if sorted.to_bits() != enumerated.to_bits() {
                            return Err(format!("m={m} s={s}: routes differ on random q"));
                        }
                        if max_dev > 1e-9 && sorted >= 1.0 - s as f64 / m as f64 {
                            return Err(format!(
                                "m={m} s={s}: non-uniform retained {sorted} not strictly below uniform bound"
                            ));
                        }
                    }
                }
            }
            Ok(())
        },
    );
}

#[test]
fn c11_entropy_regularized_optimum() {
    criterion(
        "C11 entropy-regularized optimum: uniform within correct set; incorrect mass < 1e-3 at tau_ent 0.01",
        || {
            let env = EnvSpec::default_skewed();
            for tau_ent in [0.01, 0.05, 0.1, 0.5] {
                let report = entropy_reg_optimum(&env, tau_ent).map_err(|e| e.to_string())?;
                if report.max_within_correct_deviation >= 1e-12 {
                    return Err(format!(
                        "tau_ent {tau_ent}: correct-set deviation {:.2e}",
                        report.max_within_correct_deviation
                    ));
                }
            }
            let small = entropy_reg_optimum(&env, 0.01).map_err(|e| e.to_string())?;
            if small.incorrect_mass >= 1e-3 {
                return Err(format!(
                    "incorrect mass {:.3e} >= 1e-3 at tau_ent 0.01",
                    small.incorrect_mass
                ));
            }
            Ok(())
        },
    );
}

#[test]
fn c12_pass_at_k_estimator() {
    criterion(
        "C12 pass@k: matches subset enumeration for n <= 12; stable at n = 64",
        || {
            for n in 1usize..=12 {
                for c in 0..=n {
                    for k in 1..=n {
                        let fast = pass_at_k(n, c, k).map_err(|e| e.to_string())?;
                        let (hits, total) = enumerate_subsets(n, c, k);
                        let slow = hits as f64 / total as f64;
                        if fast.to_bits() != slow.to_bits() {
                            return Err(format!("n={n} c={c} k={k}: {fast} != enumeration {slow}"));
                        }
                    }
                }
            }
            for c in 0..=64usize {
                for k in 1..=64usize {
                    let v = pass_at_k(64, c, k).map_err(|e| e.to_string())?;
                    if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                        return Err(format!("n=64 c={c} k={k}: unstable value {v}"));
                    }
                }
            }
            Ok(())
        },
    );
}

/// Brute-force oracle: count size-k subsets of n rollouts containing at
/// least one of the first c (correct) rollouts.
fn enumerate_subsets(n: usize, c: usize, k: usize) -> (u64, u64) {
    let mut total = 0u64;
    let mut hits = 0u64;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        total += 1;
        if mask & ((1u32 << c) - 1) != 0 {
            hits += 1;
        }
    }
    (hits, total)
}

/// (prompt id, rollouts as (text, correct), expected prompt score if any
/// rollout is correct)
type DiversityFixture = (&'static str, Vec<(&'static str, bool)>, Option<f64>);

#[test]
fn c13_equation_diversity_fixtures() {
    criterion(
        "C13 equation diversity: hand-computed fixtures reproduce exactly",
        || {
            let fixtures: Vec<DiversityFixture> = vec![
                // the worked corpus example: F1={a,b}, F2={b,c}, F3={d}
                (
                    "corpus",
                    vec![("$a$ $b$", true), ("$b$ $c$", true), ("$d$", true)],
                    Some(2.0 / 3.0),
                ),
                ("single", vec![("$x+1$", true)], Some(1.0)),
                (
                    "identical-pair",
                    vec![("$s$", true), ("$s$", true)],
                    Some(0.0),
                ),
                (
                    "disjoint-triple",
                    vec![("\\(a\\)", true), ("$b$", true), ("\\[c\\]", true)],
                    Some(1.0),
                ),
                (
                    "superset",
                    vec![("$a$ $b$ $c$", true), ("$a$", true)],
                    Some((2.0 / 3.0 + 0.0) / 2.0),
                ),
                (
                    "empty-and-unique",
                    vec![("no math", true), ("$q$", true)],
                    Some(0.5),
                ),
                (
                    "chain",
                    vec![("$a$ $b$", true), ("$b$ $c$", true), ("$c$ $d$", true)],
                    Some((0.5 + 0.0 + 0.5) / 3.0),
                ),
                (
                    "all-shared",
                    vec![("$t$", true), ("$t$", true), ("$t$", true)],
                    Some(0.0),
                ),
                (
                    "four-one",
                    vec![("$a$ $b$ $c$ $d$", true), ("$d$", true)],
                    Some((0.75 + 0.0) / 2.0),
                ),
                (
                    "incorrect-ignored",
                    vec![("$a$", true), ("$b$", true), ("$a$ $b$", false)],
                    Some(1.0),
                ),
                (
                    "every-formula-shared",
                    vec![("$a$", true), ("$a$ $b$", true), ("$b$", true)],
                    Some(0.0),
                ),
                ("no-correct", vec![("$a$", false)], None),
            ];
            let log = RolloutLog {
                prompts: fixtures
                    .iter()
                    .map(|(id, rollouts, _)| PromptRecord {
                        prompt_id: id.to_string(),
                        rollouts: rollouts
                            .iter()
                            .map(|(text, correct)| Rollout {
                                text: text.to_string(),
                                correct: *correct,
                            })
                            .collect(),
                    })
                    .collect(),
            };
            let report = equation_diversity(&log, 2000);
            let mut expected_sum = 0.0;
            let mut expected_count = 0usize;
            for (id, _, expect) in &fixtures {
                match expect {
                    Some(score) => {
                        let got = report
                            .per_prompt_scores
                            .get(*id)
                            .ok_or_else(|| format!("{id}: missing score"))?;
                        if (got - score).abs() > 1e-12 {
                            return Err(format!("{id}: score {got} != expected {score}"));
                        }
                        expected_sum += score;
                        expected_count += 1;
                    }
                    None => {
                        if report.per_prompt_scores.contains_key(*id) {
                            return Err(format!("{id}: zero-correct prompt should be skipped"));
                        }
                    }
                }
            }
            let expected_mean = expected_sum / expected_count as f64;
            if (report.dataset_mean - expected_mean).abs() > 1e-12 {
                return Err(format!(
                    "dataset mean {} != expected {expected_mean}",
                    report.dataset_mean
                ));
            }
            if report.rollouts_considered.prompts_skipped_no_correct != 1 {
                return Err("exactly one prompt should be skipped".into());
            }
            Ok(())
        },
    );
}

#[test]
fn c14_determinism() {
    criterion(
        "C14 determinism: re-running presets yields byte-identical trace CSVs",
        || {
            for name in ["fig3", "fig7"] {
                let dir_a = tempfile::tempdir().map_err(|e| e.to_string())?;
                let dir_b = tempfile::tempdir().map_err(|e| e.to_string())?;
                let mut config = preset(name).map_err(|e| e.to_string())?;
                config.output_dir = dir_a.path().to_path_buf();
                run_experiment(&config).map_err(|e| e.to_string())?;
                config.output_dir = dir_b.path().to_path_buf();
                run_experiment(&config).map_err(|e| e.to_string())?;

                let mut names: Vec<String> = std::fs::read_dir(dir_a.path())
                    .map_err(|e| e.to_string())?
                    .filter_map(|entry| {
                        let name = entry.ok()?.file_name().into_string().ok()?;
                        name.ends_with(".csv").then_some(name)
                    })
                    .collect();
                names.sort();
                if names.is_empty() {
                    return Err(format!("{name}: no trace CSVs emitted"));
                }
                for file in &names {
                    let a = std::fs::read(dir_a.path().join(file)).map_err(|e| e.to_string())?;
                    let b = std::fs::read(dir_b.path().join(file)).map_err(|e| e.to_string())?;
                    if a != b {
                        return Err(format!("{name}/{file}: byte mismatch between runs"));
                    }
                }
            }
            Ok(())
        },
    );
}
