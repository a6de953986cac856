//! High-level policies: exhaustive imagination-based planning over primitive
//! sequences, plus acquire-only and coverage-threshold baselines, and the
//! episode loop tying perception, planning, and the simulator together.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::config::Config;
use crate::dynamics::{self, ModelError, ModelParams};
use crate::grid::ObsGrid;
use crate::perception::{self, PerceptionError};
use crate::platesim::{
    self, EpisodeLog, EpisodeMeta, PrimitiveKind, SimError, Spread, TransitionRecord,
};
use crate::random::Stream;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("planning horizon must be at least 1")]
    EmptyHorizon,
    #[error("observation history is empty")]
    EmptyHistory,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Outcome of one exhaustive planning call.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    /// First primitive of the best sequence; the one to execute.
    pub chosen: PrimitiveKind,
    pub best_sequence: Vec<PrimitiveKind>,
    pub predicted_return: f64,
    /// Every candidate sequence and its predicted return.
    pub all_candidates: BTreeMap<Vec<PrimitiveKind>, f64>,
}

/// All `k^horizon` primitive-index sequences in lexicographic order.
pub fn enumerate_sequences(k: usize, horizon: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(k.pow(horizon as u32));
    let mut current = vec![0usize; horizon];
    loop {
        out.push(current.clone());
        // Odometer increment.
        let mut pos = horizon;
        loop {
            if pos == 0 {
                return out;
            }
            pos -= 1;
            current[pos] += 1;
            if current[pos] < k {
                break;
            }
            current[pos] = 0;
        }
    }
}

/// Exhaustive argmax over all sequences under `score`. Ties go to the
/// lexicographically smallest sequence (strict-greater keeps the earlier
/// candidate).
pub fn best_sequence_by<F: Fn(&[usize]) -> f64>(
    k: usize,
    horizon: usize,
    score: F,
) -> Result<PlanResult, PlanError> {
    if horizon == 0 {
        return Err(PlanError::EmptyHorizon);
    }
    let mut all_candidates = BTreeMap::new();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for seq in enumerate_sequences(k, horizon) {
        let value = score(&seq);
        let kinds: Vec<PrimitiveKind> = seq
            .iter()
            .map(|&i| PrimitiveKind::from_index(i).expect("index < K"))
            .collect();
        all_candidates.insert(kinds, value);
        match &best {
            Some((_, b)) if value <= *b => {}
            _ => best = Some((seq, value)),
        }
    }
    let (seq, predicted_return) = best.expect("horizon >= 1 yields candidates");
    let best_sequence: Vec<PrimitiveKind> = seq
        .iter()
        .map(|&i| PrimitiveKind::from_index(i).expect("index < K"))
        .collect();
    Ok(PlanResult {
        chosen: best_sequence[0],
        best_sequence,
        predicted_return,
        all_candidates,
    })
}

/// Receding-horizon planning: encode the observation/action history, roll
/// the learned prior forward under every candidate primitive sequence, score
/// each by the sum of decoded rewards, and return the argmax.
pub fn plan(
    history_obs: &[ObsGrid],
    history_prims: &[usize],
    params: &ModelParams,
    horizon: usize,
) -> Result<PlanResult, PlanError> {
    if history_obs.is_empty() {
        return Err(PlanError::EmptyHistory);
    }
    let latents = dynamics::posterior_encode_mean(history_obs, history_prims, params)?;
    let start = latents.last().expect("nonempty history").clone();
    let k = params.geom.act_dim;
    best_sequence_by(k, horizon, |seq| {
        let mut state = start.clone();
        let mut total = 0.0;
        for &prim in seq {
            state = dynamics::prior_transition(&state, prim, params);
            total += dynamics::decode_reward(&state, params);
        }
        total
    })
}

/// How the high-level primitive is selected each step.
pub enum Policy<'a> {
    /// Learned model-predictive planning, optionally with epsilon-random
    /// exploration (probability, seed).
    Vapors {
        params: &'a ModelParams,
        explore: Option<(f64, u64)>,
    },
    /// Always acquire.
    AcquireOnly,
    /// Rearrange whenever the mask coverage fraction exceeds the threshold.
    Heuristic,
    /// Uniform random primitive (replay warmup), seeded.
    Random(u64),
}

impl Policy<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            Policy::Vapors { .. } => "vapors",
            Policy::AcquireOnly => "acquire",
            Policy::Heuristic => "heuristic",
            Policy::Random(_) => "random",
        }
    }
}

/// Episode shape: item count and initial spread.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeSetup {
    pub n_items: usize,
    pub spread: Spread,
}

/// Pixels whose center lies on the plate; the denominator of the heuristic
/// coverage fraction.
fn plate_interior_pixels(cfg: &Config) -> usize {
    let calib = platesim::calibration(&cfg.sim);
    let size = cfg.sim.plate.grid_size;
    let mut count = 0;
    for v in 0..size {
        for u in 0..size {
            let (x, y) = calib.pixel_to_plate(u as f64 + 0.5, v as f64 + 0.5);
            let dx = x - cfg.sim.plate.center.0;
            let dy = y - cfg.sim.plate.center.1;
            if (dx * dx + dy * dy).sqrt() <= cfg.sim.plate.radius {
                count += 1;
            }
        }
    }
    count
}

/// Run one full episode under the given policy: render the mask, pick a
/// primitive, instantiate it from the mask, execute, and log the transition.
/// Terminates at the budget or as soon as the plate is cleared.
pub fn run_episode(
    cfg: &Config,
    policy: &Policy<'_>,
    seed: u64,
    setup: &EpisodeSetup,
) -> Result<EpisodeLog, EpisodeError> {
    let mut state = platesim::reset(&cfg.sim, seed, setup.n_items, setup.spread)?;
    let initial_coverage = state.initial_coverage;
    let calib = platesim::calibration(&cfg.sim);
    let interior = plate_interior_pixels(cfg);
    let grid = cfg.sim.plate.grid_size;

    let mut explore_rng = match policy {
        Policy::Vapors {
            explore: Some((_, seed)),
            ..
        } => Some(Stream::seed_from_u64(*seed)),
        Policy::Random(seed) => Some(Stream::seed_from_u64(*seed)),
        _ => None,
    };

    let mut obs_history: Vec<ObsGrid> = Vec::new();
    let mut prim_history: Vec<usize> = Vec::new();
    let mut records: Vec<TransitionRecord> = Vec::new();
    let mut success = state.is_cleared();

    while state.step_index < cfg.sim.budget {
        if state.is_cleared() {
            success = true;
            break;
        }
        let mask = platesim::render_mask(&cfg.sim, &state, grid, grid);
        if mask.is_empty() {
            success = true;
            break;
        }

        let kind = match policy {
            Policy::AcquireOnly => PrimitiveKind::Acquire,
            Policy::Heuristic => {
                let fraction = mask.count_ones() as f64 / interior as f64;
                if fraction > cfg.policy.heuristic_threshold {
                    PrimitiveKind::Rearrange
                } else {
                    PrimitiveKind::Acquire
                }
            }
            Policy::Random(_) => {
                let rng = explore_rng.as_mut().expect("random policy has rng");
                PrimitiveKind::ALL[rng.gen_range(0..PrimitiveKind::COUNT)]
            }
            Policy::Vapors { params, explore } => {
                obs_history.push(mask.clone());
                let planned = plan(&obs_history, &prim_history, params, cfg.policy.horizon)?;
                let mut kind = planned.chosen;
                if let Some((eps, _)) = explore {
                    let rng = explore_rng.as_mut().expect("exploring policy has rng");
                    if rng.gen::<f64>() < *eps {
                        kind = PrimitiveKind::ALL[rng.gen_range(0..PrimitiveKind::COUNT)];
                    }
                }
                kind
            }
        };

        let action = perception::instantiate_action(
            &mask,
            kind,
            &calib,
            &cfg.perception,
            cfg.sim.actions.acquire_pitch_deg,
        )?;
        let out = platesim::step(&cfg.sim, &state, &action)?;
        if matches!(policy, Policy::Vapors { .. }) {
            prim_history.push(kind.index());
        }
        records.push(out.record);
        state = out.state;
        if state.is_cleared() {
            success = true;
        }
    }

    Ok(EpisodeLog {
        meta: EpisodeMeta {
            seed,
            policy: policy.label().to_string(),
            initial_count: setup.n_items,
            initial_coverage,
            alpha: cfg.sim.alpha,
            budget: cfg.sim.budget,
            success,
        },
        records,
    })
}

/// Full perception-action loop with the learned planner.
pub fn run_vapors_episode(
    cfg: &Config,
    params: &ModelParams,
    seed: u64,
    setup: &EpisodeSetup,
) -> Result<EpisodeLog, EpisodeError> {
    run_episode(
        cfg,
        &Policy::Vapors {
            params,
            explore: None,
        },
        seed,
        setup,
    )
}

/// Baseline that acquires every step.
pub fn run_acquire_only_episode(
    cfg: &Config,
    seed: u64,
    setup: &EpisodeSetup,
) -> Result<EpisodeLog, EpisodeError> {
    run_episode(cfg, &Policy::AcquireOnly, seed, setup)
}

/// Group-then-acquire baseline driven by the mask coverage fraction.
pub fn run_heuristic_episode(
    cfg: &Config,
    seed: u64,
    setup: &EpisodeSetup,
) -> Result<EpisodeLog, EpisodeError> {
    run_episode(cfg, &Policy::Heuristic, seed, setup)
}
