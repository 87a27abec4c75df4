//! Config-driven experiment runner: multi-seed training runs over a grid of
//! (method, coefficient, initialization profile) cells, with deterministic
//! CSV traces, JSON summaries, and per-figure data files.

mod output;
mod presets;

pub use output::{emit_figure_data, fmt_g17, write_summary_json, write_traces_csv};
pub use presets::{preset, preset_catalog, PresetError};

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{
    classify_outcome, dominant_position, record_step, DiagnosticsError, Outcome, RunResult,
    StepTrace, DEFAULT_COLLAPSE_THRESHOLD,
};
use crate::env::{init_policy, sample_batch, EnvError, EnvSpec, InitProfile};
use crate::optim::{build_rule, policy_gradient_update, Method, OptimError, OptimizerConfig};
use crate::policy::{snapshot, PolicyError};
use crate::rng::SeedStream;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("figure {figure} is missing required cells: {cells:?}")]
    MissingCells { figure: String, cells: Vec<String> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Which output files a run writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmitKind {
    TracesCsv,
    SummaryJson,
    FigureData,
}

/// Optional parameter grid. Coefficients apply to the rules that read them:
/// `taus` expands ucpo cells, `tau_ents` expands global-entropy cells, and
/// grpo ignores both, so the grid never multiplies meaningless duplicates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub methods: Vec<Method>,
    pub taus: Vec<f64>,
    pub tau_ents: Vec<f64>,
    pub init_profiles: Vec<InitProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub env: EnvSpec,
    pub optimizer: OptimizerConfig,
    pub steps: usize,
    pub samples_per_step: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_emit")]
    pub emit: BTreeSet<EmitKind>,
    /// Figure identifier driving [`emit_figure_data`]; set by presets.
    #[serde(default)]
    pub figure: Option<String>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_emit() -> BTreeSet<EmitKind> {
    [EmitKind::TracesCsv, EmitKind::SummaryJson].into()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, RunError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| RunError::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml_path(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(RunError::InvalidConfig(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.steps < 1 {
            return Err(RunError::InvalidConfig("steps must be >= 1".into()));
        }
        if self.samples_per_step < 1 {
            return Err(RunError::InvalidConfig(
                "samples_per_step must be >= 1".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(RunError::InvalidConfig("seeds must be nonempty".into()));
        }
        self.optimizer.validate()?;
        Ok(())
    }
}

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub method: Method,
    pub tau: f64,
    pub tau_ent: f64,
    pub init_profile: InitProfile,
}

impl Cell {
    /// Stable identifier used in file names: method, its active coefficient,
    /// and the profile.
    pub fn id(&self) -> String {
        let coeff = match self.method {
            Method::Grpo => String::new(),
            Method::Ucpo => format!("_tau{}", self.tau),
            Method::GlobalEntropy => format!("_tauent{}", self.tau_ent),
        };
        format!(
            "{}{}_{}",
            self.method.as_str(),
            coeff,
            self.init_profile.name()
        )
    }

    pub fn env_for(&self, base: &EnvSpec) -> Result<EnvSpec, EnvError> {
        EnvSpec::new(
            base.vocab_size(),
            base.correct_indices().to_vec(),
            self.init_profile.clone(),
            base.background_mass_per_incorrect,
        )
    }

    pub fn optimizer_for(&self, base: &OptimizerConfig) -> OptimizerConfig {
        OptimizerConfig {
            method: self.method,
            tau: self.tau,
            tau_ent: self.tau_ent,
            ..base.clone()
        }
    }
}

/// Expand the config's sweep grid into concrete cells (a single cell when no
/// sweep is given).
pub fn expand_cells(config: &ExperimentConfig) -> Vec<Cell> {
    let base = &config.optimizer;
    let Some(sweep) = &config.sweep else {
        return vec![Cell {
            method: base.method,
            tau: base.tau,
            tau_ent: base.tau_ent,
            init_profile: config.env.init_profile.clone(),
        }];
    };
    let methods = if sweep.methods.is_empty() {
        vec![base.method]
    } else {
        sweep.methods.clone()
    };
    let profiles = if sweep.init_profiles.is_empty() {
        vec![config.env.init_profile.clone()]
    } else {
        sweep.init_profiles.clone()
    };
    let taus = if sweep.taus.is_empty() {
        vec![base.tau]
    } else {
        sweep.taus.clone()
    };
    let tau_ents = if sweep.tau_ents.is_empty() {
        vec![base.tau_ent]
    } else {
        sweep.tau_ents.clone()
    };
    let mut cells = Vec::new();
    for profile in &profiles {
        for &method in &methods {
            match method {
                Method::Grpo => cells.push(Cell {
                    method,
                    tau: base.tau,
                    tau_ent: base.tau_ent,
                    init_profile: profile.clone(),
                }),
                Method::Ucpo => {
                    for &tau in &taus {
                        cells.push(Cell {
                            method,
                            tau,
                            tau_ent: base.tau_ent,
                            init_profile: profile.clone(),
                        });
                    }
                }
                Method::GlobalEntropy => {
                    for &tau_ent in &tau_ents {
                        cells.push(Cell {
                            method,
                            tau: base.tau,
                            tau_ent,
                            init_profile: profile.clone(),
                        });
                    }
                }
            }
        }
    }
    cells
}

/// Train one policy for `steps` updates under one seed.
///
/// A non-finite update aborts the run: the policy stays at its last finite
/// state, traces up to the failing step are kept, and `aborted_at_step`
/// marks the break.
pub fn run_single(
    env: &EnvSpec,
    optimizer: &OptimizerConfig,
    steps: usize,
    samples_per_step: usize,
    seed: u64,
) -> Result<RunResult, RunError> {
    let rule = build_rule(optimizer)?;
    let stream = SeedStream::new(seed);
    let mut policy = init_policy(env)?;
    let mut traces: Vec<StepTrace> = Vec::with_capacity(steps);
    let mut aborted_at_step = None;
    for step in 0..steps {
        let batch = sample_batch(
            &policy,
            env,
            samples_per_step,
            &mut stream.step_rng(step as u64),
        );
        let adv = rule.advantages(&batch, &policy);
        let pre = policy.clone();
        match policy_gradient_update(policy, &batch, &adv, optimizer) {
            Ok(out) => {
                traces.push(record_step(
                    &pre,
                    env,
                    &batch,
                    &out.per_token_grad_mass,
                    step,
                )?);
                policy = out.policy;
            }
            Err(OptimError::NonFiniteUpdate { .. }) => {
                policy = pre;
                aborted_at_step = Some(step);
                break;
            }
            Err(e) => return Err(e.into()),
        }
    }
    let final_snapshot = snapshot(&policy, env)?;
    let winner = dominant_position(&final_snapshot.conditional_q);
    let collapsed = final_snapshot.normalized_entropy < DEFAULT_COLLAPSE_THRESHOLD;
    Ok(RunResult {
        env: env.clone(),
        optimizer: optimizer.clone(),
        samples_per_step,
        seed,
        traces,
        final_snapshot,
        winner,
        collapsed,
        aborted_at_step,
    })
}

/// Per-cell aggregates over seeds.
#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub id: String,
    pub method: Method,
    pub tau: f64,
    pub tau_ent: f64,
    pub init_profile: String,
    pub seeds: Vec<u64>,
    pub final_normalized_entropy_mean: f64,
    pub final_normalized_entropy_std: f64,
    pub final_correct_mass_mean: f64,
    pub final_correct_mass_std: f64,
    pub final_incorrect_mass_mean: f64,
    pub final_incorrect_mass_std: f64,
    /// Count of seeds won by each correct-set position; sums to the number
    /// of seeds.
    pub winner_histogram: Vec<usize>,
    pub collapse_rate: f64,
    pub aborted_seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub cells: Vec<CellSummary>,
}

impl SweepSummary {
    pub fn any_aborted(&self) -> bool {
        self.cells.iter().any(|c| !c.aborted_seeds.is_empty())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn incorrect_mass(result: &RunResult) -> f64 {
    result
        .final_snapshot
        .probs
        .iter()
        .enumerate()
        .filter(|(y, _)| !result.env.is_correct(*y))
        .map(|(_, p)| p)
        .sum()
}

fn summarize_cell(cell: &Cell, results: &[RunResult], threshold: f64) -> CellSummary {
    let m = results[0].env.num_correct();
    let entropies: Vec<f64> = results
        .iter()
        .map(|r| r.final_snapshot.normalized_entropy)
        .collect();
    let masses: Vec<f64> = results
        .iter()
        .map(|r| r.final_snapshot.correct_mass)
        .collect();
    let incorrect: Vec<f64> = results.iter().map(incorrect_mass).collect();
    let mut winner_histogram = vec![0usize; m];
    let mut collapsed_count = 0usize;
    for r in results {
        winner_histogram[r.winner] += 1;
        if matches!(classify_outcome(r, threshold), Outcome::CollapsedTo(_)) {
            collapsed_count += 1;
        }
    }
    let (e_mean, e_std) = mean_std(&entropies);
    let (z_mean, z_std) = mean_std(&masses);
    let (i_mean, i_std) = mean_std(&incorrect);
    CellSummary {
        id: cell.id(),
        method: cell.method,
        tau: cell.tau,
        tau_ent: cell.tau_ent,
        init_profile: cell.init_profile.name(),
        seeds: results.iter().map(|r| r.seed).collect(),
        final_normalized_entropy_mean: e_mean,
        final_normalized_entropy_std: e_std,
        final_correct_mass_mean: z_mean,
        final_correct_mass_std: z_std,
        final_incorrect_mass_mean: i_mean,
        final_incorrect_mass_std: i_std,
        winner_histogram,
        collapse_rate: collapsed_count as f64 / results.len() as f64,
        aborted_seeds: results
            .iter()
            .filter(|r| r.aborted_at_step.is_some())
            .map(|r| r.seed)
            .collect(),
    }
}

/// Per-cell run results, ordered by (cell, seed).
pub type CellResults = Vec<(Cell, Vec<RunResult>)>;

/// Run every (cell, seed) pair of the config in parallel. Results come back
/// ordered by (cell, seed); no file is touched.
pub fn run_cells(config: &ExperimentConfig) -> Result<CellResults, RunError> {
    config.validate()?;
    let cells = expand_cells(config);
    let jobs: Vec<(usize, u64)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, _)| config.seeds.iter().map(move |&s| (ci, s)))
        .collect();
    let mut runs: Vec<(usize, u64, RunResult)> = jobs
        .par_iter()
        .map(|&(ci, seed)| {
            let cell = &cells[ci];
            let env = cell.env_for(&config.env)?;
            let optimizer = cell.optimizer_for(&config.optimizer);
            let result = run_single(
                &env,
                &optimizer,
                config.steps,
                config.samples_per_step,
                seed,
            )?;
            Ok((ci, seed, result))
        })
        .collect::<Result<_, RunError>>()?;
    runs.sort_by_key(|&(ci, seed, _)| (ci, seed));
    let mut grouped: CellResults = cells.into_iter().map(|c| (c, Vec::new())).collect();
    for (ci, _, result) in runs {
        grouped[ci].1.push(result);
    }
    Ok(grouped)
}

/// Run the experiment and write the requested outputs into
/// `config.output_dir`. Returns the summary plus the full per-cell results.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(SweepSummary, CellResults), RunError> {
    let grouped = run_cells(config)?;
    let out_dir = &config.output_dir;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let cells: Vec<CellSummary> = grouped
        .iter()
        .map(|(cell, results)| summarize_cell(cell, results, DEFAULT_COLLAPSE_THRESHOLD))
        .collect();
    let summary = SweepSummary {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        cells,
    };

    if config.emit.contains(&EmitKind::TracesCsv) {
        for (cell, results) in &grouped {
            let path = out_dir.join(format!("traces_{}.csv", cell.id()));
            write_traces_csv(&path, cell, results)?;
            let aborted: Vec<(u64, usize)> = results
                .iter()
                .filter_map(|r| r.aborted_at_step.map(|s| (r.seed, s)))
                .collect();
            if !aborted.is_empty() {
                // partial-trace marker
                let marker = out_dir.join(format!("traces_{}.aborted.json", cell.id()));
                let body = serde_json::to_string_pretty(&aborted).expect("serializable");
                std::fs::write(&marker, body).map_err(io_err(&marker))?;
            }
        }
    }
    if config.emit.contains(&EmitKind::SummaryJson) {
        let path = out_dir.join("summary.json");
        write_summary_json(&path, &summary)?;
    }
    if config.emit.contains(&EmitKind::FigureData) {
        if let Some(figure) = &config.figure {
            emit_figure_data(figure, config, &grouped, out_dir)?;
        }
    }
    Ok((summary, grouped))
}
