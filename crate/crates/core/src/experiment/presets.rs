//! Named experiment presets: the standard demonstration runs of the crate,
//! each pinned to a deterministic configuration.

use std::collections::BTreeSet;
use std::path::PathBuf;

use thiserror::Error;

use super::{EmitKind, ExperimentConfig, SweepGrid, SCHEMA_VERSION};
use crate::env::{EnvSpec, InitProfile};
use crate::optim::{Method, OptimizerConfig};

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown preset {name:?}; available: {catalog}")]
    Unknown { name: String, catalog: String },
}

/// Preset names with one-line descriptions.
pub fn preset_catalog() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "fig3",
            "grpo on the skewed profile, 300 steps x 5 seeds; collapse dynamics plus sampling-law panel data",
        ),
        (
            "fig6",
            "grpo across uniform / mild-skew / skewed profiles, 5 seeds; symmetry breaking",
        ),
        (
            "fig7",
            "grpo vs ucpo (tau 0.2) vs global-entropy (tau_ent 0.1) on the skewed profile",
        ),
        (
            "fig8",
            "grpo vs ucpo (tau 0.2) per-token gradient mass on the skewed profile",
        ),
        (
            "fig9",
            "global-entropy coefficient sweep {0.01, 0.05, 0.1, 0.5} with a ucpo reference cell",
        ),
        (
            "fig10",
            "ucpo interpolation sweep tau in {0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5}",
        ),
    ]
}

// Rollouts per step calibrated so the ucpo and global-entropy dynamics
// resolve within 300 steps: smaller batches starve the minority correct
// token (pi_2 ~ 0.12 sits right at the 1/K sampling threshold for K = 8)
// and freeze the run early once every batch comes back all-correct.
const PRESET_SAMPLES_PER_STEP: usize = 32;

fn base_config(name: &str) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        env: EnvSpec::default_skewed(),
        optimizer: OptimizerConfig::default(),
        steps: 300,
        samples_per_step: PRESET_SAMPLES_PER_STEP,
        seeds: (1..=5).collect(),
        sweep: None,
        output_dir: PathBuf::from("out").join(name),
        emit: BTreeSet::from([
            EmitKind::TracesCsv,
            EmitKind::SummaryJson,
            EmitKind::FigureData,
        ]),
        figure: Some(name.to_string()),
    }
}

/// Build the configuration for a named preset.
pub fn preset(name: &str) -> Result<ExperimentConfig, PresetError> {
    let mut config = base_config(name);
    match name {
        "fig3" => {}
        "fig6" => {
            config.sweep = Some(SweepGrid {
                methods: vec![Method::Grpo],
                init_profiles: vec![
                    InitProfile::Uniform,
                    InitProfile::MildSkew,
                    InitProfile::Skewed,
                ],
                ..Default::default()
            });
        }
        "fig7" => {
            config.sweep = Some(SweepGrid {
                methods: vec![Method::Grpo, Method::Ucpo, Method::GlobalEntropy],
                taus: vec![0.2],
                tau_ents: vec![0.1],
                ..Default::default()
            });
        }
        "fig8" => {
            config.sweep = Some(SweepGrid {
                methods: vec![Method::Grpo, Method::Ucpo],
                taus: vec![0.2],
                ..Default::default()
            });
        }
        "fig9" => {
            config.sweep = Some(SweepGrid {
                methods: vec![Method::GlobalEntropy, Method::Ucpo],
                taus: vec![0.2],
                tau_ents: vec![0.01, 0.05, 0.1, 0.5],
                ..Default::default()
            });
        }
        "fig10" => {
            config.sweep = Some(SweepGrid {
                methods: vec![Method::Ucpo],
                taus: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
                ..Default::default()
            });
        }
        other => {
            let catalog = preset_catalog()
                .iter()
                .map(|(n, _)| *n)
                .collect::<Vec<_>>()
                .join(", ");
            return Err(PresetError::Unknown {
                name: other.to_string(),
                catalog,
            });
        }
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::expand_cells;

    #[test]
    fn every_catalog_entry_builds() {
        for (name, _) in preset_catalog() {
            let config = preset(name).unwrap();
            assert!(config.validate().is_ok(), "{name}");
            assert_eq!(config.figure.as_deref(), Some(name));
        }
    }

    #[test]
    fn unknown_preset_lists_catalog() {
        let err = preset("nonexistent").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("fig3") && text.contains("fig10"));
    }

    #[test]
    fn fig6_sweeps_three_profiles() {
        let config = preset("fig6").unwrap();
        let cells = expand_cells(&config);
        assert_eq!(cells.len(), 3);
        assert_eq!(config.seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(config.steps, 300);
    }

    #[test]
    fn fig10_grid_spans_zero_to_half() {
        let config = preset("fig10").unwrap();
        let cells = expand_cells(&config);
        let taus: Vec<f64> = cells.iter().map(|c| c.tau).collect();
        assert!(taus.contains(&0.0) && taus.contains(&0.5));
        assert_eq!(cells.len(), 7);
    }

    #[test]
    fn fig9_has_reference_cell() {
        let config = preset("fig9").unwrap();
        let cells = expand_cells(&config);
        assert_eq!(
            cells
                .iter()
                .filter(|c| c.method == Method::GlobalEntropy)
                .count(),
            4
        );
        assert_eq!(cells.iter().filter(|c| c.method == Method::Ucpo).count(), 1);
    }
}
