//! Command-line runner: config-driven experiments, named presets, the
//! closed-form verification suite, and offline rollout-log evaluation.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime abort (non-finite policy
//! or failed verification), 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rlvr_sim::evaluate::{equation_diversity, passk_curve, EvalError, RolloutLog};
use rlvr_sim::experiment::{fmt_g17, preset, run_experiment, ExperimentConfig, RunError};
use rlvr_sim::optim::{available_methods, Method};
use rlvr_sim::oracle::verify_suite;

/// Environment variable naming the base output directory used when `--out`
/// is not given.
const OUT_ENV_VAR: &str = "RLVR_SIM_OUT";

#[derive(Parser)]
#[command(
    name = "rlvr-sim",
    about = "Softmax-policy RLVR training simulator with exact verification oracles",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config file.
    Run {
        /// Path to the experiment config.
        config: PathBuf,
        /// Output directory (overrides the config and RLVR_SIM_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the seed list with 1..=N.
        #[arg(long)]
        seeds: Option<u64>,
        /// Override the number of training steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Override the rollouts drawn per step.
        #[arg(long)]
        samples_per_step: Option<usize>,
        /// Override the training rule (grpo | ucpo | global-entropy).
        #[arg(long)]
        method: Option<String>,
        /// Override the ucpo interpolation strength.
        #[arg(long)]
        tau: Option<f64>,
        /// Override the global-entropy coefficient.
        #[arg(long = "tau-ent")]
        tau_ent: Option<f64>,
        /// Override the learning rate.
        #[arg(long = "learning-rate")]
        learning_rate: Option<f64>,
    },
    /// Run a named preset experiment.
    Preset {
        /// Preset name; an unknown name lists the catalog.
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the seed list with 1..=N.
        #[arg(long)]
        seeds: Option<u64>,
        /// Override the number of training steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Run the full closed-form and enumeration verification suite.
    Verify {
        /// Also write the report as JSON to this path.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Evaluate an external rollout log (line-delimited JSON records).
    Evaluate {
        #[command(subcommand)]
        what: EvaluateCommand,
    },
}

#[derive(Subcommand)]
enum EvaluateCommand {
    /// Mean unbiased pass@k over prompts, as CSV on stdout.
    Passk {
        /// Rollout log: one {"prompt_id", "text", "correct"} record per line.
        #[arg(long)]
        log: PathBuf,
        /// Comma-separated k values.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
        k: Vec<usize>,
    },
    /// Equation-level diversity report, as JSON on stdout.
    Diversity {
        #[arg(long)]
        log: PathBuf,
        /// Per-rollout character budget for formula extraction.
        #[arg(long, default_value_t = 2000)]
        max_chars: usize,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<RunError> for Failure {
    fn from(err: RunError) -> Self {
        let code = match &err {
            RunError::Io { .. } => 3,
            RunError::InvalidConfig(_) | RunError::MissingCells { .. } => 1,
            _ => 2,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(err: EvalError) -> Self {
        let code = match &err {
            EvalError::Io(_) => 3,
            _ => 1,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version requests are not usage errors
            use clap::error::ErrorKind;
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Run {
            config,
            out,
            seeds,
            steps,
            samples_per_step,
            method,
            tau,
            tau_ent,
            learning_rate,
        } => {
            let mut experiment = ExperimentConfig::from_toml_path(&config)?;
            if let Some(name) = method {
                experiment.optimizer.method = Method::from_name(&name).ok_or_else(|| {
                    Failure::usage(format!(
                        "unknown method {name:?}; available: {}",
                        available_methods().join(", ")
                    ))
                })?;
            }
            if let Some(tau) = tau {
                experiment.optimizer.tau = tau;
            }
            if let Some(tau_ent) = tau_ent {
                experiment.optimizer.tau_ent = tau_ent;
            }
            if let Some(lr) = learning_rate {
                experiment.optimizer.learning_rate = lr;
            }
            if let Some(steps) = steps {
                experiment.steps = steps;
            }
            if let Some(k) = samples_per_step {
                experiment.samples_per_step = k;
            }
            if let Some(n) = seeds {
                experiment.seeds = (1..=n).collect();
            }
            let stem = config
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            experiment.output_dir = resolve_out_dir(out, &stem, &experiment.output_dir);
            execute(&experiment)
        }
        Command::Preset {
            name,
            out,
            seeds,
            steps,
        } => {
            let mut experiment = preset(&name).map_err(|e| Failure::usage(e.to_string()))?;
            if let Some(n) = seeds {
                experiment.seeds = (1..=n).collect();
            }
            if let Some(steps) = steps {
                experiment.steps = steps;
            }
            experiment.output_dir = resolve_out_dir(out, &name, &experiment.output_dir);
            execute(&experiment)
        }
        Command::Verify { json } => {
            let report = verify_suite();
            for check in &report.checks {
                let tag = if check.pass { "PASS" } else { "FAIL" };
                println!("{tag} {:40} {}", check.name, check.detail);
            }
            if let Some(path) = json {
                let body = serde_json::to_string_pretty(&report).expect("report serializes");
                std::fs::write(&path, body).map_err(|e| Failure {
                    code: 3,
                    message: format!("{}: {e}", path.display()),
                })?;
            }
            if report.all_pass {
                println!("all checks passed");
                Ok(ExitCode::SUCCESS)
            } else {
                Err(Failure {
                    code: 2,
                    message: "verification failed".into(),
                })
            }
        }
        Command::Evaluate { what } => match what {
            EvaluateCommand::Passk { log, k } => {
                let log = RolloutLog::from_jsonl_path(&log)?;
                let curve = passk_curve(&log, &k)?;
                println!("k,pass_at_k");
                for (k, mean) in curve {
                    println!("{k},{}", fmt_g17(mean));
                }
                Ok(ExitCode::SUCCESS)
            }
            EvaluateCommand::Diversity { log, max_chars } => {
                let log = RolloutLog::from_jsonl_path(&log)?;
                let report = equation_diversity(&log, max_chars);
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                );
                Ok(ExitCode::SUCCESS)
            }
        },
    }
}

/// Output-directory resolution: `--out` wins, then `$RLVR_SIM_OUT/<name>`,
/// then the config's own directory.
fn resolve_out_dir(flag: Option<PathBuf>, name: &str, config_dir: &Path) -> PathBuf {
    if let Some(dir) = flag {
        return dir;
    }
    if let Ok(base) = std::env::var(OUT_ENV_VAR) {
        return PathBuf::from(base).join(name);
    }
    config_dir.to_path_buf()
}

fn execute(experiment: &ExperimentConfig) -> Result<ExitCode, Failure> {
    let (summary, _) = run_experiment(experiment)?;
    for cell in &summary.cells {
        println!(
            "{:40} entropy {:.3} +/- {:.3}  Z {:.4}  collapse {:.2}  winners {:?}{}",
            cell.id,
            cell.final_normalized_entropy_mean,
            cell.final_normalized_entropy_std,
            cell.final_correct_mass_mean,
            cell.collapse_rate,
            cell.winner_histogram,
            if cell.aborted_seeds.is_empty() {
                String::new()
            } else {
                format!("  ABORTED seeds {:?}", cell.aborted_seeds)
            }
        );
    }
    println!("wrote {}", experiment.output_dir.display());
    if summary.any_aborted() {
        Err(Failure {
            code: 2,
            message: "one or more runs aborted on a non-finite policy update".into(),
        })
    } else {
        Ok(ExitCode::SUCCESS)
    }
}
