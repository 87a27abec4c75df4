//! Deterministic file emission: trace CSVs, the summary JSON, and per-figure
//! panel data.
//!
//! Floats in CSVs are printed with 17 significant digits so re-parsing
//! recovers the exact bit pattern and re-runs are byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{io_err, Cell, ExperimentConfig, RunError, SweepSummary};
use crate::diagnostics::{empirical_mean_counts, RunResult};
use crate::env::init_policy;
use crate::optim::Method;

/// 17-significant-digit scientific notation; round-trips any f64 exactly.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

fn incorrect_mass_of(probs: &[f64], correct: &[usize]) -> f64 {
    probs
        .iter()
        .enumerate()
        .filter(|(y, _)| !correct.contains(y))
        .map(|(_, p)| p)
        .sum()
}

/// One CSV per cell, one row per (seed, step). Header and row layout are
/// fixed: `step,seed,method,q_0..,count_0..,gradmass_0..,Z,H_q,
/// H_q_normalized,incorrect_mass,logratio_01..`.
pub fn write_traces_csv(path: &Path, cell: &Cell, results: &[RunResult]) -> Result<(), RunError> {
    let m = results
        .first()
        .map(|r| r.env.num_correct())
        .unwrap_or_default();
    let mut out = String::new();
    out.push_str("step,seed,method");
    for i in 0..m {
        write!(out, ",q_{i}").unwrap();
    }
    for i in 0..m {
        write!(out, ",count_{i}").unwrap();
    }
    for i in 0..m {
        write!(out, ",gradmass_{i}").unwrap();
    }
    out.push_str(",Z,H_q,H_q_normalized,incorrect_mass");
    for j in 1..m {
        write!(out, ",logratio_0{j}").unwrap();
    }
    out.push('\n');

    for result in results {
        let correct = result.env.correct_indices();
        for trace in &result.traces {
            write!(
                out,
                "{},{},{}",
                trace.step,
                result.seed,
                cell.method.as_str()
            )
            .unwrap();
            for &q in &trace.snapshot.conditional_q {
                write!(out, ",{}", fmt_g17(q)).unwrap();
            }
            for &y in correct {
                write!(out, ",{}", trace.counts[y]).unwrap();
            }
            for &y in correct {
                write!(out, ",{}", fmt_g17(trace.per_token_grad_mass[y])).unwrap();
            }
            write!(out, ",{}", fmt_g17(trace.snapshot.correct_mass)).unwrap();
            write!(out, ",{}", fmt_g17(trace.snapshot.conditional_entropy)).unwrap();
            write!(out, ",{}", fmt_g17(trace.snapshot.normalized_entropy)).unwrap();
            write!(
                out,
                ",{}",
                fmt_g17(incorrect_mass_of(&trace.snapshot.probs, correct))
            )
            .unwrap();
            for j in 1..m {
                write!(out, ",{}", fmt_g17(trace.snapshot.log_ratios[0][j])).unwrap();
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(io_err(path))
}

pub fn write_summary_json(path: &Path, summary: &SweepSummary) -> Result<(), RunError> {
    let body = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(path, body).map_err(io_err(path))
}

fn require_cell<'a>(
    grouped: &'a [(Cell, Vec<RunResult>)],
    figure: &str,
    pred: impl Fn(&Cell) -> bool,
    describe: &str,
) -> Result<&'a (Cell, Vec<RunResult>), RunError> {
    grouped
        .iter()
        .find(|(c, _)| pred(c))
        .ok_or_else(|| RunError::MissingCells {
            figure: figure.to_string(),
            cells: vec![describe.to_string()],
        })
}

/// Write the per-panel data files for a figure preset. Returns the paths
/// written. Unknown figure ids write nothing.
pub fn emit_figure_data(
    figure: &str,
    config: &ExperimentConfig,
    grouped: &[(Cell, Vec<RunResult>)],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, RunError> {
    let mut written = Vec::new();
    let mut emit = |name: &str, body: String| -> Result<(), RunError> {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(io_err(&path))?;
        written.push(path);
        Ok(())
    };
    match figure {
        "fig3" => {
            let (cell, _) =
                require_cell(grouped, figure, |c| c.method == Method::Grpo, "grpo cell")?;
            let env = cell.env_for(&config.env)?;
            let policy = init_policy(&env)?;
            let probs = policy.probs();
            let k = config.samples_per_step;
            let seed = config.seeds[0];
            let means = empirical_mean_counts(&policy, &env, k, 10_000, seed);
            let mut body = String::from("token,pi,expected_count,empirical_mean_count\n");
            for y in 0..env.vocab_size() {
                writeln!(
                    body,
                    "{y},{},{},{}",
                    fmt_g17(probs[y]),
                    fmt_g17(k as f64 * probs[y]),
                    fmt_g17(means[y])
                )
                .unwrap();
            }
            emit("fig3_panelA.csv", body)?;

            // gradient-magnitude profile f(p) = p(1-p) on a grid, plus the
            // correct-token initialization points
            let mut body = String::from("p,f\n");
            for i in 0..=100 {
                let p = i as f64 / 100.0;
                writeln!(body, "{},{}", fmt_g17(p), fmt_g17(p * (1.0 - p))).unwrap();
            }
            for &y in env.correct_indices() {
                let p = probs[y];
                writeln!(body, "{},{}", fmt_g17(p), fmt_g17(p * (1.0 - p))).unwrap();
            }
            emit("fig3_panelB.csv", body)?;
        }
        "fig6" => {
            let mut body =
                String::from("init_profile,seed,q_0,q_1,q_2,H_q_normalized,Z,winner,collapsed\n");
            for (cell, results) in grouped {
                for r in results {
                    let snap = &r.final_snapshot;
                    writeln!(
                        body,
                        "{},{},{},{},{},{},{},{},{}",
                        cell.init_profile.name(),
                        r.seed,
                        fmt_g17(snap.conditional_q[0]),
                        fmt_g17(snap.conditional_q[1]),
                        fmt_g17(snap.conditional_q[2]),
                        fmt_g17(snap.normalized_entropy),
                        fmt_g17(snap.correct_mass),
                        r.winner,
                        r.collapsed
                    )
                    .unwrap();
                }
            }
            emit("fig6_final_states.csv", body)?;
        }
        "fig7" => {
            let mut body = String::from("method,seed,H_q_normalized,Z,incorrect_mass\n");
            for (cell, results) in grouped {
                for r in results {
                    let snap = &r.final_snapshot;
                    writeln!(
                        body,
                        "{},{},{},{},{}",
                        cell.method.as_str(),
                        r.seed,
                        fmt_g17(snap.normalized_entropy),
                        fmt_g17(snap.correct_mass),
                        fmt_g17(incorrect_mass_of(&snap.probs, r.env.correct_indices()))
                    )
                    .unwrap();
                }
            }
            emit("fig7_final_states.csv", body)?;
        }
        "fig8" => {
            // mean per-correct-token gradient mass over all steps and seeds
            let mut body = String::from("method,token,mean_grad_mass\n");
            for (cell, results) in grouped {
                let correct = results[0].env.correct_indices().to_vec();
                let mut totals = vec![0.0; correct.len()];
                let mut rows = 0usize;
                for r in results {
                    for trace in &r.traces {
                        for (pos, &y) in correct.iter().enumerate() {
                            totals[pos] += trace.per_token_grad_mass[y];
                        }
                        rows += 1;
                    }
                }
                for (pos, total) in totals.iter().enumerate() {
                    writeln!(
                        body,
                        "{},{},{}",
                        cell.method.as_str(),
                        pos,
                        fmt_g17(total / rows as f64)
                    )
                    .unwrap();
                }
            }
            emit("fig8_grad_mass.csv", body)?;
        }
        "fig9" => {
            let mut rows: Vec<(f64, String)> = Vec::new();
            for (cell, results) in grouped {
                if cell.method != Method::GlobalEntropy {
                    continue;
                }
                let incorrect: Vec<f64> = results
                    .iter()
                    .map(|r| incorrect_mass_of(&r.final_snapshot.probs, r.env.correct_indices()))
                    .collect();
                let z: Vec<f64> = results
                    .iter()
                    .map(|r| r.final_snapshot.correct_mass)
                    .collect();
                let hq: Vec<f64> = results
                    .iter()
                    .map(|r| r.final_snapshot.conditional_entropy)
                    .collect();
                let (i_mean, i_std) = super::mean_std(&incorrect);
                let (z_mean, _) = super::mean_std(&z);
                let (h_mean, _) = super::mean_std(&hq);
                rows.push((
                    cell.tau_ent,
                    format!(
                        "{},{},{},{},{}",
                        cell.tau_ent,
                        fmt_g17(i_mean),
                        fmt_g17(i_std),
                        fmt_g17(z_mean),
                        fmt_g17(h_mean)
                    ),
                ));
            }
            if rows.is_empty() {
                return Err(RunError::MissingCells {
                    figure: figure.to_string(),
                    cells: vec!["global-entropy cells".to_string()],
                });
            }
            rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut body =
                String::from("tau_ent,incorrect_mass_mean,incorrect_mass_std,Z_mean,Hq_mean\n");
            for (_, row) in rows {
                body.push_str(&row);
                body.push('\n');
            }
            emit("fig9_entropy_sweep.csv", body)?;
        }
        "fig10" => {
            let mut rows: Vec<(f64, String)> = Vec::new();
            for (cell, results) in grouped {
                if cell.method != Method::Ucpo {
                    continue;
                }
                let hqn: Vec<f64> = results
                    .iter()
                    .map(|r| r.final_snapshot.normalized_entropy)
                    .collect();
                let z: Vec<f64> = results
                    .iter()
                    .map(|r| r.final_snapshot.correct_mass)
                    .collect();
                let incorrect: Vec<f64> = results
                    .iter()
                    .map(|r| incorrect_mass_of(&r.final_snapshot.probs, r.env.correct_indices()))
                    .collect();
                let (h_mean, h_std) = super::mean_std(&hqn);
                let (z_mean, _) = super::mean_std(&z);
                let (i_mean, _) = super::mean_std(&incorrect);
                rows.push((
                    cell.tau,
                    format!(
                        "{},{},{},{},{}",
                        cell.tau,
                        fmt_g17(h_mean),
                        fmt_g17(h_std),
                        fmt_g17(z_mean),
                        fmt_g17(i_mean)
                    ),
                ));
            }
            if rows.is_empty() {
                return Err(RunError::MissingCells {
                    figure: figure.to_string(),
                    cells: vec!["ucpo cells".to_string()],
                });
            }
            rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut body = String::from(
                "tau,H_q_normalized_mean,H_q_normalized_std,Z_mean,incorrect_mass_mean\n",
            );
            for (_, row) in rows {
                body.push_str(&row);
                body.push('\n');
            }
            emit("fig10_tau_sweep.csv", body)?;
        }
        _ => {}
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_round_trips() {
        for x in [
            0.0,
            1.0 / 3.0,
            -1.2345678901234567e-200,
            f64::MIN_POSITIVE,
            0.1 + 0.2,
            1e308,
        ] {
            let s = fmt_g17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }
}
