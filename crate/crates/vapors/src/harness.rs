//! Experiment orchestration: clearance-curve evaluation across policies and
//! seeds, and the background-subtraction labeling tool.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::dynamics::{load_checkpoint, CheckpointError, ModelParams};
use crate::grid::{GrayGrid, GridError, ObsGrid};
use crate::perception::{self, PerceptionError};
use crate::planner::{self, EpisodeError, EpisodeSetup, Policy};
use crate::platesim::{EpisodeLog, LogError, Spread};

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad user input: missing files, malformed arguments. Exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Log(#[from] LogError),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Task presets fixing the initial item count and action budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskPreset {
    /// 15 granular items, 8 actions.
    Beans,
    /// Noodle-like pile approximated as 40 granular items, 10 actions.
    Spaghetti,
}

impl TaskPreset {
    pub fn n_items(self) -> usize {
        match self {
            TaskPreset::Beans => 15,
            TaskPreset::Spaghetti => 40,
        }
    }

    pub fn budget(self) -> usize {
        match self {
            TaskPreset::Beans => 8,
            TaskPreset::Spaghetti => 10,
        }
    }
}

impl std::str::FromStr for TaskPreset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "beans" => Ok(TaskPreset::Beans),
            "spaghetti" => Ok(TaskPreset::Spaghetti),
            other => Err(format!("unknown preset '{other}'")),
        }
    }
}

/// Policies selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Vapors,
    Acquire,
    Heuristic,
}

impl PolicyKind {
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Vapors => "vapors",
            PolicyKind::Acquire => "acquire",
            PolicyKind::Heuristic => "heuristic",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vapors" => Ok(PolicyKind::Vapors),
            "acquire" => Ok(PolicyKind::Acquire),
            "heuristic" => Ok(PolicyKind::Heuristic),
            other => Err(format!("unknown policy '{other}'")),
        }
    }
}

/// One evaluation run: policies over a shared seed range on one preset.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub preset: TaskPreset,
    pub spread: Spread,
    /// Half-open seed range.
    pub seed_start: u64,
    pub seed_end: u64,
    pub policies: Vec<PolicyKind>,
    /// Trained checkpoint; required when `policies` includes Vapors.
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        self.seed_start..self.seed_end
    }

    pub fn seed_count(&self) -> usize {
        (self.seed_end - self.seed_start) as usize
    }
}

/// Per-step mean cumulative pickup fraction and standard error across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearanceCurve {
    pub policy: String,
    /// One `(mean, stderr)` entry per step, 1..=budget.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub curves: Vec<ClearanceCurve>,
    pub curves_path: PathBuf,
    pub summary_path: PathBuf,
    pub log_paths: Vec<PathBuf>,
    pub logs: Vec<EpisodeLog>,
}

/// Cumulative pickup fraction per step, carried forward past early
/// termination to the full budget.
pub fn pickup_fractions(log: &EpisodeLog, budget: usize) -> Vec<f64> {
    let n0 = log.meta.initial_count.max(1) as f64;
    let cum = log.cumulative_pickup();
    (0..budget)
        .map(|i| {
            let value = if cum.is_empty() {
                0
            } else {
                cum[i.min(cum.len() - 1)]
            };
            value as f64 / n0
        })
        .collect()
}

/// Mean and standard error (sample stddev / sqrt n) of one step's fractions.
fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Build the per-policy clearance curve from its episode logs.
pub fn clearance_curve(policy: &str, logs: &[&EpisodeLog], budget: usize) -> ClearanceCurve {
    let fractions: Vec<Vec<f64>> = logs.iter().map(|l| pickup_fractions(l, budget)).collect();
    let points = (0..budget)
        .map(|step| {
            let at_step: Vec<f64> = fractions.iter().map(|f| f[step]).collect();
            mean_stderr(&at_step)
        })
        .collect();
    ClearanceCurve {
        policy: policy.to_string(),
        points,
    }
}

/// Run every policy over the seed range on identical initial states, write
/// per-seed JSON-lines logs, `curves.csv`, and `summary.csv`.
///
/// Fails before any episode runs if the Vapors policy is requested without a
/// readable checkpoint.
pub fn run_experiment(
    cfg: &Config,
    exp: &ExperimentConfig,
) -> Result<ExperimentOutcome, HarnessError> {
    if exp.seed_count() == 0 {
        return Err(HarnessError::Usage("empty seed range".into()));
    }
    if exp.policies.is_empty() {
        return Err(HarnessError::Usage("no policies selected".into()));
    }
    let params: Option<ModelParams> = if exp.policies.contains(&PolicyKind::Vapors) {
        let path = exp.checkpoint.as_ref().ok_or_else(|| {
            HarnessError::Usage("the vapors policy requires --ckpt <checkpoint>".into())
        })?;
        if !path.is_file() {
            return Err(HarnessError::Usage(format!(
                "checkpoint not found: {}",
                path.display()
            )));
        }
        let params = load_checkpoint(path)?;
        if params.config.grid_size != cfg.sim.plate.grid_size {
            return Err(HarnessError::Usage(format!(
                "checkpoint grid {} does not match configured grid {}",
                params.config.grid_size, cfg.sim.plate.grid_size
            )));
        }
        Some(params)
    } else {
        None
    };

    let mut run_cfg = cfg.clone();
    run_cfg.sim.budget = exp.preset.budget();
    let setup = EpisodeSetup {
        n_items: exp.preset.n_items(),
        spread: exp.spread,
    };

    std::fs::create_dir_all(&exp.out_dir)?;
    let mut logs: Vec<EpisodeLog> = Vec::new();
    let mut log_paths = Vec::new();
    for &policy_kind in &exp.policies {
        let seeds: Vec<u64> = exp.seeds().collect();
        // Episodes across seeds run in parallel; results are collected in
        // seed order and written serially.
        let episodes: Vec<Result<EpisodeLog, EpisodeError>> = seeds
            .par_iter()
            .map(|&seed| {
                let policy = match policy_kind {
                    PolicyKind::Vapors => Policy::Vapors {
                        params: params.as_ref().expect("validated above"),
                        explore: None,
                    },
                    PolicyKind::Acquire => Policy::AcquireOnly,
                    PolicyKind::Heuristic => Policy::Heuristic,
                };
                planner::run_episode(&run_cfg, &policy, seed, &setup)
            })
            .collect();
        for (seed, episode) in seeds.iter().zip(episodes) {
            let episode = episode?;
            let path = exp
                .out_dir
                .join(format!("{}_{seed}.jsonl", policy_kind.label()));
            episode.save_jsonl(&path)?;
            log_paths.push(path);
            logs.push(episode);
        }
    }

    let budget = exp.preset.budget();
    let curves: Vec<ClearanceCurve> = exp
        .policies
        .iter()
        .map(|p| {
            let policy_logs: Vec<&EpisodeLog> = logs
                .iter()
                .filter(|l| l.meta.policy == p.label())
                .collect();
            clearance_curve(p.label(), &policy_logs, budget)
        })
        .collect();

    let curves_path = exp.out_dir.join("curves.csv");
    let mut text = String::from("policy,step,mean,stderr\n");
    for curve in &curves {
        for (i, (mean, stderr)) in curve.points.iter().enumerate() {
            text.push_str(&format!("{},{},{mean},{stderr}\n", curve.policy, i + 1));
        }
    }
    std::fs::write(&curves_path, text)?;

    let summary_path = exp.out_dir.join("summary.csv");
    let mut text = String::from("policy,seeds,final_mean,final_stderr,success_rate\n");
    for (curve, policy) in curves.iter().zip(&exp.policies) {
        let (final_mean, final_stderr) = *curve.points.last().expect("budget >= 1");
        let policy_logs: Vec<&EpisodeLog> = logs
            .iter()
            .filter(|l| l.meta.policy == policy.label())
            .collect();
        let successes = policy_logs.iter().filter(|l| l.meta.success).count();
        let rate = successes as f64 / policy_logs.len() as f64;
        text.push_str(&format!(
            "{},{},{final_mean},{final_stderr},{rate}\n",
            curve.policy,
            policy_logs.len()
        ));
    }
    std::fs::write(&summary_path, text)?;

    Ok(ExperimentOutcome {
        curves,
        curves_path,
        summary_path,
        log_paths,
        logs,
    })
}

/// Read two grayscale renders, label by absolute difference against the
/// threshold, and write the resulting mask as plain-text PBM.
///
/// Unreadable or mismatched inputs are usage errors.
pub fn label_tool(
    empty_path: &Path,
    current_path: &Path,
    thresh: f64,
    out_path: &Path,
) -> Result<ObsGrid, HarnessError> {
    let empty = load_gray_usage(empty_path)?;
    let current = load_gray_usage(current_path)?;
    let mask = perception::background_subtract_label(&empty, &current, thresh).map_err(|e| {
        HarnessError::Usage(format!(
            "{} vs {}: {e}",
            empty_path.display(),
            current_path.display()
        ))
    })?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    mask.save_pbm(out_path)?;
    Ok(mask)
}

fn load_gray_usage(path: &Path) -> Result<GrayGrid, HarnessError> {
    if !path.is_file() {
        return Err(HarnessError::Usage(format!(
            "cannot read {}: no such file",
            path.display()
        )));
    }
    GrayGrid::load_pgm(path)
        .map_err(|e| HarnessError::Usage(format!("cannot read {}: {e}", path.display())))
}
