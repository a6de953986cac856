//! Deterministic seeded 2D plate environment.
//!
//! Items are rigid points with circular footprints on a circular plate.
//! Two primitives act on them: an acquisition removes up to a capacity of
//! nearby items, each with Bernoulli success, and a rearrangement pushes
//! items lying near the push segment toward its dense end. Rewards trade
//! off pickup gain against convex-hull coverage loss with weight `alpha`,
//! both normalized by the episode's initial item count and coverage.

mod hull;
mod log;

pub use hull::{convex_hull, convex_hull_area};
pub use log::{EpisodeLog, EpisodeMeta, TransitionRecord};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SimConfig;
use crate::grid::{Calibration, GrayGrid, ObsGrid};
use crate::random::{self, NormalSource, Stream};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{requested} items exceed the plate packing capacity of {capacity}")]
    Capacity { requested: usize, capacity: usize },
    #[error("episode budget of {budget} steps exhausted")]
    BudgetExhausted { budget: usize },
    #[error("malformed action: {0}")]
    InvalidAction(String),
}

/// Discrete manipulation strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Acquire,
    Rearrange,
}

impl PrimitiveKind {
    pub const COUNT: usize = 2;
    pub const ALL: [PrimitiveKind; 2] = [PrimitiveKind::Acquire, PrimitiveKind::Rearrange];

    pub fn index(self) -> usize {
        match self {
            PrimitiveKind::Acquire => 0,
            PrimitiveKind::Rearrange => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            PrimitiveKind::Acquire => "acquire",
            PrimitiveKind::Rearrange => "rearrange",
        }
    }
}

impl std::fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Continuous instantiation of a primitive.
///
/// Acquisitions carry only the dense point plus roll/pitch; rearrangements
/// carry both segment endpoints and are untilted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowLevelAction {
    pub kind: PrimitiveKind,
    pub dense_point: [f64; 3],
    pub far_point: Option<[f64; 3]>,
    /// Utensil roll in [0, 360) degrees.
    pub roll_deg: f64,
    /// Utensil pitch in degrees.
    pub pitch_deg: f64,
}

impl LowLevelAction {
    fn validate(&self) -> Result<(), SimError> {
        match self.kind {
            PrimitiveKind::Acquire => {
                if self.far_point.is_some() {
                    return Err(SimError::InvalidAction(
                        "acquire actions carry no far point".into(),
                    ));
                }
            }
            PrimitiveKind::Rearrange => {
                if self.far_point.is_none() {
                    return Err(SimError::InvalidAction(
                        "rearrange actions require a far point".into(),
                    ));
                }
                if self.pitch_deg != 0.0 {
                    return Err(SimError::InvalidAction(
                        "rearrange actions are untilted".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One granular food item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodItem {
    pub id: u32,
    pub position: (f64, f64),
    pub footprint_radius: f64,
    pub acquired: bool,
}

/// Initial item placement pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spread {
    Clustered,
    HalfSpread,
    FullSpread,
}

impl Spread {
    /// Fraction of the usable plate radius covered by the placement.
    fn radius_frac(self) -> f64 {
        match self {
            Spread::Clustered => 0.25,
            Spread::HalfSpread => 0.55,
            Spread::FullSpread => 0.95,
        }
    }
}

impl std::str::FromStr for Spread {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clustered" => Ok(Spread::Clustered),
            "half" | "half_spread" => Ok(Spread::HalfSpread),
            "full" | "full_spread" => Ok(Spread::FullSpread),
            other => Err(format!("unknown spread '{other}'")),
        }
    }
}

/// Full simulator state.
///
/// `initial_count` and `initial_coverage` are episode-level normalizers for
/// the reward, captured at reset.
#[derive(Debug, Clone)]
pub struct PlateState {
    pub items: Vec<FoodItem>,
    pub plate_center: (f64, f64),
    pub plate_radius: f64,
    pub step_index: usize,
    pub initial_count: usize,
    pub initial_coverage: f64,
    pub rng: Stream,
}

impl PlateState {
    pub fn unacquired(&self) -> impl Iterator<Item = &FoodItem> {
        self.items.iter().filter(|i| !i.acquired)
    }

    pub fn unacquired_count(&self) -> usize {
        self.unacquired().count()
    }

    pub fn acquired_count(&self) -> usize {
        self.items.iter().filter(|i| i.acquired).count()
    }

    pub fn is_cleared(&self) -> bool {
        self.unacquired_count() == 0
    }
}

/// Outcome of one simulator step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: PlateState,
    pub reward: f64,
    pub record: TransitionRecord,
}

/// Maximum item count the plate accepts, from an area packing argument.
pub fn packing_capacity(cfg: &SimConfig) -> usize {
    let usable = cfg.plate.radius - cfg.plate.footprint_radius;
    (0.7 * (usable / cfg.plate.footprint_radius).powi(2)).floor() as usize
}

/// Fixed plate-to-pixel calibration: the rendering grid spans the plate's
/// bounding square.
pub fn calibration(cfg: &SimConfig) -> Calibration {
    Calibration::centered(
        cfg.plate.grid_size,
        cfg.plate.grid_size,
        cfg.plate.center,
        cfg.plate.radius,
        cfg.plate.surface_z,
    )
}

/// Place `n_items` unacquired items by the named distribution. Identical
/// seeds give bit-identical states.
pub fn reset(cfg: &SimConfig, seed: u64, n_items: usize, spread: Spread) -> Result<PlateState, SimError> {
    let capacity = packing_capacity(cfg);
    if n_items > capacity {
        return Err(SimError::Capacity {
            requested: n_items,
            capacity,
        });
    }
    let mut rng = Stream::seed_from_u64(seed);
    let usable = cfg.plate.radius - cfg.plate.footprint_radius;
    let place_radius = spread.radius_frac() * usable;
    let cluster_center = match spread {
        Spread::Clustered => random::point_in_disk(&mut rng, cfg.plate.center, 0.4 * usable),
        _ => cfg.plate.center,
    };
    let mut items = Vec::with_capacity(n_items);
    for id in 0..n_items {
        let (mut x, mut y) = random::point_in_disk(&mut rng, cluster_center, place_radius);
        // Clustered placements near the rim can spill outside; pull them back.
        let d = dist((x, y), cfg.plate.center);
        if d > usable {
            let scale = usable / d;
            x = cfg.plate.center.0 + (x - cfg.plate.center.0) * scale;
            y = cfg.plate.center.1 + (y - cfg.plate.center.1) * scale;
        }
        items.push(FoodItem {
            id: id as u32,
            position: (x, y),
            footprint_radius: cfg.plate.footprint_radius,
            acquired: false,
        });
    }
    let mut state = PlateState {
        items,
        plate_center: cfg.plate.center,
        plate_radius: cfg.plate.radius,
        step_index: 0,
        initial_count: n_items,
        initial_coverage: 0.0,
        rng,
    };
    state.initial_coverage = compute_coverage(&state);
    Ok(state)
}

/// Area of the convex hull of unacquired item positions.
pub fn compute_coverage(state: &PlateState) -> f64 {
    let pts: Vec<(f64, f64)> = state.unacquired().map(|i| i.position).collect();
    convex_hull_area(&pts)
}

/// Items newly acquired between two states of the same episode.
pub fn compute_pickup(before: &PlateState, after: &PlateState) -> usize {
    after.acquired_count().saturating_sub(before.acquired_count())
}

/// Weighted pickup/coverage reward. Pickup gain is normalized by the initial
/// item count and coverage loss by the initial coverage; a zero initial
/// coverage zeroes the coverage term.
pub fn reward(before: &PlateState, after: &PlateState, alpha: f64) -> f64 {
    weighted_reward(
        compute_pickup(before, after),
        compute_coverage(before),
        compute_coverage(after),
        alpha,
        before.initial_count,
        before.initial_coverage,
    )
}

/// The reward expression from its stored ingredients. [`TransitionRecord`]s
/// are recomputable bit-exactly through this same function.
pub fn weighted_reward(
    pickup: usize,
    coverage_before: f64,
    coverage_after: f64,
    alpha: f64,
    initial_count: usize,
    initial_coverage: f64,
) -> f64 {
    let pickup_gain = if initial_count > 0 {
        pickup as f64 / initial_count as f64
    } else {
        0.0
    };
    let coverage_loss = if initial_coverage > 0.0 {
        (coverage_before - coverage_after) / initial_coverage
    } else {
        0.0
    };
    alpha * pickup_gain + (1.0 - alpha) * coverage_loss
}

/// Execute one action. An action targeting a point outside the plate disk is
/// a logged no-op rather than an error.
pub fn step(cfg: &SimConfig, state: &PlateState, action: &LowLevelAction) -> Result<StepOutcome, SimError> {
    if state.step_index >= cfg.budget {
        return Err(SimError::BudgetExhausted { budget: cfg.budget });
    }
    action.validate()?;

    let obs_before = render_mask(cfg, state, cfg.plate.grid_size, cfg.plate.grid_size);
    let coverage_before = compute_coverage(state);

    let mut next = state.clone();
    next.step_index += 1;

    let dense = (action.dense_point[0], action.dense_point[1]);
    let mut targets_ok = dist(dense, state.plate_center) <= state.plate_radius;
    if let Some(far) = action.far_point {
        targets_ok &= dist((far[0], far[1]), state.plate_center) <= state.plate_radius;
    }

    if targets_ok {
        match action.kind {
            PrimitiveKind::Acquire => apply_acquire(cfg, &mut next, dense),
            PrimitiveKind::Rearrange => {
                let far = action.far_point.expect("validated");
                apply_rearrange(cfg, &mut next, dense, (far[0], far[1]));
            }
        }
    }

    let coverage_after = compute_coverage(&next);
    let pickup_count = compute_pickup(state, &next);
    let reward = weighted_reward(
        pickup_count,
        coverage_before,
        coverage_after,
        cfg.alpha,
        state.initial_count,
        state.initial_coverage,
    );
    let obs_after = render_mask(cfg, &next, cfg.plate.grid_size, cfg.plate.grid_size);

    let record = TransitionRecord {
        obs_before,
        primitive: action.kind,
        action: action.clone(),
        reward,
        obs_after,
        pickup_count,
        coverage_before,
        coverage_after,
        mis_executed: !targets_ok,
    };
    Ok(StepOutcome {
        state: next,
        reward,
        record,
    })
}

fn apply_acquire(cfg: &SimConfig, state: &mut PlateState, dense: (f64, f64)) {
    let radius = cfg.actions.acquire_radius_frac * state.plate_radius;
    let mut candidates: Vec<(f64, u32, usize)> = state
        .items
        .iter()
        .enumerate()
        .filter(|(_, it)| !it.acquired)
        .map(|(idx, it)| (dist(it.position, dense), it.id, idx))
        .filter(|(d, _, _)| *d <= radius)
        .collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));

    let mut taken = 0;
    for (_, _, idx) in candidates {
        if taken >= cfg.actions.acquire_capacity {
            break;
        }
        if state.rng.gen::<f64>() < cfg.actions.acquire_prob {
            state.items[idx].acquired = true;
            taken += 1;
        }
    }
}

fn apply_rearrange(cfg: &SimConfig, state: &mut PlateState, dense: (f64, f64), far: (f64, f64)) {
    let capture = cfg.actions.rearrange_capture_frac * state.plate_radius;
    let eta = cfg.actions.rearrange_move_frac;
    let sigma = cfg.actions.rearrange_noise_frac * state.plate_radius;
    let keep_radius = state.plate_radius - cfg.plate.footprint_radius;
    let center = state.plate_center;

    let affected: Vec<usize> = state
        .items
        .iter()
        .enumerate()
        .filter(|(_, it)| !it.acquired && dist_to_segment(it.position, far, dense) <= capture)
        .map(|(idx, _)| idx)
        .collect();

    for idx in affected {
        let (nx, ny) = random::normal_pair(&mut state.rng);
        let item = &mut state.items[idx];
        let (px, py) = item.position;
        let mut x = px + eta * (dense.0 - px) + sigma * nx;
        let mut y = py + eta * (dense.1 - py) + sigma * ny;
        let d = dist((x, y), center);
        if d > keep_radius {
            let scale = keep_radius / d;
            x = center.0 + (x - center.0) * scale;
            y = center.1 + (y - center.1) * scale;
        }
        item.position = (x, y);
    }
}

/// Binary occupancy mask: a pixel is set iff its center lies within the
/// footprint radius of some unacquired item.
pub fn render_mask(cfg: &SimConfig, state: &PlateState, width: usize, height: usize) -> ObsGrid {
    let calib = Calibration::centered(
        width,
        height,
        cfg.plate.center,
        cfg.plate.radius,
        cfg.plate.surface_z,
    );
    let mut grid = ObsGrid::zeros(width, height);
    let items: Vec<&FoodItem> = state.unacquired().collect();
    if items.is_empty() {
        return grid;
    }
    for v in 0..height {
        for u in 0..width {
            let (x, y) = calib.pixel_to_plate(u as f64 + 0.5, v as f64 + 0.5);
            let covered = items
                .iter()
                .any(|it| dist((x, y), it.position) <= it.footprint_radius);
            if covered {
                grid.set(u, v, 1);
            }
        }
    }
    grid
}

/// Synthetic grayscale render: a background intensity field (linear
/// horizontal gradient plus seeded Gaussian noise) with item disks
/// composited at the item intensity, same calibration as [`render_mask`].
pub fn render_gray(
    cfg: &SimConfig,
    state: &PlateState,
    width: usize,
    height: usize,
    noise_seed: u64,
) -> GrayGrid {
    let calib = Calibration::centered(
        width,
        height,
        cfg.plate.center,
        cfg.plate.radius,
        cfg.plate.surface_z,
    );
    let mut noise = NormalSource::new(Stream::seed_from_u64(noise_seed));
    let items: Vec<&FoodItem> = state.unacquired().collect();
    let mut grid = GrayGrid::zeros(width, height);
    for v in 0..height {
        for u in 0..width {
            let (x, y) = calib.pixel_to_plate(u as f64 + 0.5, v as f64 + 0.5);
            let covered = items
                .iter()
                .any(|it| dist((x, y), it.position) <= it.footprint_radius);
            let base = if covered {
                cfg.render.item
            } else {
                let frac = (u as f64 + 0.5) / width as f64;
                cfg.render.background + cfg.render.gradient * (2.0 * frac - 1.0)
            };
            let value = base + cfg.render.noise_std * noise.next_normal();
            grid.set(u, v, value.clamp(0.0, 255.0));
        }
    }
    grid
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Distance from point `p` to the segment `a`-`b`.
fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let abx = b.0 - a.0;
    let aby = b.1 - a.1;
    let len2 = abx * abx + aby * aby;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / len2).clamp(0.0, 1.0);
    dist(p, (a.0 + t * abx, a.1 + t * aby))
}

/// Convenience constructors for actions the tests and policies use.
impl LowLevelAction {
    pub fn acquire(dense: [f64; 3], roll_deg: f64, pitch_deg: f64) -> Self {
        Self {
            kind: PrimitiveKind::Acquire,
            dense_point: dense,
            far_point: None,
            roll_deg,
            pitch_deg,
        }
    }

    pub fn rearrange(dense: [f64; 3], far: [f64; 3], roll_deg: f64) -> Self {
        Self {
            kind: PrimitiveKind::Rearrange,
            dense_point: dense,
            far_point: Some(far),
            roll_deg,
            pitch_deg: 0.0,
        }
    }
}
