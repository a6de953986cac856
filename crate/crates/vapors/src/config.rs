//! Configuration for every subsystem, loadable from a single TOML file.
//!
//! All fields have defaults, so an empty file (or no file) yields the
//! standard desk-scale bean setup.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Plate geometry and rendering grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateConfig {
    /// Plate radius in meters.
    pub radius: f64,
    /// Plate center in the plate frame, meters.
    pub center: (f64, f64),
    /// Footprint radius of a single item, meters.
    pub footprint_radius: f64,
    /// Square observation grid edge, pixels.
    pub grid_size: usize,
    /// Plate-surface height, meters.
    pub surface_z: f64,
}

impl Default for PlateConfig {
    fn default() -> Self {
        Self {
            radius: 0.10,
            center: (0.0, 0.0),
            footprint_radius: 0.008,
            grid_size: 64,
            surface_z: 0.0,
        }
    }
}

/// Constants governing how primitives act on items. Radii and noise are
/// expressed as fractions of the plate radius so presets scale together.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionConfig {
    /// Acquisition radius around the dense point, fraction of plate radius.
    pub acquire_radius_frac: f64,
    /// Per-item Bernoulli success probability for acquisition.
    pub acquire_prob: f64,
    /// Maximum items acquired by a single action.
    pub acquire_capacity: usize,
    /// Utensil pitch for acquisition actions, degrees.
    pub acquire_pitch_deg: f64,
    /// Capture radius around the push segment, fraction of plate radius.
    pub rearrange_capture_frac: f64,
    /// Fraction of the item-to-dense-point distance covered by a push.
    pub rearrange_move_frac: f64,
    /// Isotropic Gaussian push noise, fraction of plate radius.
    pub rearrange_noise_frac: f64,
}

impl Default for ActionConfig {
    fn default() -> Self {
        Self {
            acquire_radius_frac: 0.15,
            acquire_prob: 0.9,
            acquire_capacity: 5,
            acquire_pitch_deg: 80.0,
            rearrange_capture_frac: 0.25,
            rearrange_move_frac: 0.8,
            rearrange_noise_frac: 0.01,
        }
    }
}

/// Grayscale rendering of the plate (synthetic stand-in for a camera image).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Base background intensity.
    pub background: f64,
    /// Item intensity.
    pub item: f64,
    /// Peak-to-center amplitude of a linear horizontal background gradient.
    pub gradient: f64,
    /// Std-dev of seeded per-pixel Gaussian noise.
    pub noise_std: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            background: 200.0,
            item: 80.0,
            gradient: 10.0,
            noise_std: 2.0,
        }
    }
}

/// Full environment configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub plate: PlateConfig,
    pub actions: ActionConfig,
    pub render: RenderConfig,
    /// Reward trade-off weight between pickup gain and coverage loss.
    pub alpha: f64,
    /// Hard per-episode action budget.
    pub budget: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            plate: PlateConfig::default(),
            actions: ActionConfig::default(),
            render: RenderConfig::default(),
            alpha: 0.66,
            budget: 8,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ConfigError::Invalid(format!(
                "alpha must be in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.plate.radius <= 0.0 || self.plate.footprint_radius <= 0.0 {
            return Err(ConfigError::Invalid(
                "plate radius and footprint radius must be positive".into(),
            ));
        }
        if self.plate.footprint_radius >= self.plate.radius {
            return Err(ConfigError::Invalid(
                "footprint radius must be smaller than the plate radius".into(),
            ));
        }
        if self.budget == 0 {
            return Err(ConfigError::Invalid("budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mask-space perception constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    /// Gaussian blur sigma in pixels.
    pub blur_sigma: f64,
    /// Edge of the square crop used for orientation estimation, pixels.
    pub crop_size: usize,
    /// Threshold on absolute intensity difference for the labeler.
    pub label_threshold: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 3.0,
            crop_size: 16,
            label_threshold: 20.0,
        }
    }
}

/// Latent dynamics model architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input mask edge, pixels. Must match the environment grid.
    pub grid_size: usize,
    /// Channels of the two strided convolution layers.
    pub conv_channels: (usize, usize),
    /// Convolution kernel edge; also the stride (non-overlapping windows).
    pub conv_kernel: usize,
    /// Encoder feature dimension.
    pub feature_dim: usize,
    /// Deterministic recurrent state dimension.
    pub hidden_dim: usize,
    /// Stochastic latent dimension.
    pub latent_dim: usize,
    /// Hidden width of the prior/posterior/reward heads.
    pub head_hidden: usize,
    /// Number of discrete primitives.
    pub num_primitives: usize,
    /// Smooth bounds applied to predicted log-stddevs.
    pub logstd_min: f64,
    pub logstd_max: f64,
    /// Adds a two-step latent-overshooting term to the KL component.
    pub overshoot: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            grid_size: 64,
            conv_channels: (8, 16),
            conv_kernel: 4,
            feature_dim: 128,
            hidden_dim: 64,
            latent_dim: 30,
            head_hidden: 128,
            num_primitives: 2,
            logstd_min: -5.0,
            logstd_max: 2.0,
            overshoot: false,
        }
    }
}

impl ModelConfig {
    /// Miniature variant for gradient checks and fast tests.
    pub fn mini() -> Self {
        Self {
            grid_size: 8,
            conv_channels: (2, 4),
            conv_kernel: 2,
            feature_dim: 16,
            hidden_dim: 8,
            latent_dim: 4,
            head_hidden: 16,
            num_primitives: 2,
            logstd_min: -5.0,
            logstd_max: 2.0,
            overshoot: false,
        }
    }
}

/// Training schedule and optimizer constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Total parameter updates.
    pub updates: usize,
    /// Collect one environment episode every this many updates.
    pub collect_every: usize,
    /// Windows per batch.
    pub batch_size: usize,
    /// Transitions per sampled window.
    pub window: usize,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Weights of the reconstruction, KL, and reward loss components.
    pub loss_weights: (f64, f64, f64),
    /// Random-policy episodes used to seed the replay store.
    pub warmup_episodes: usize,
    /// Probability of a random primitive during collection, start and end.
    pub explore_start: f64,
    pub explore_end: f64,
    /// Write a checkpoint every this many updates (and at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            updates: 2250,
            collect_every: 150,
            batch_size: 32,
            window: 8,
            learning_rate: 1e-3,
            adam_eps: 1e-4,
            clip_norm: 1000.0,
            beta1: 0.9,
            beta2: 0.999,
            loss_weights: (1.0, 1.0, 1.0),
            warmup_episodes: 5,
            explore_start: 0.3,
            explore_end: 0.1,
            checkpoint_every: 750,
        }
    }
}

/// High-level policy constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Receding planning horizon, primitives.
    pub horizon: usize,
    /// Mask-coverage fraction above which the heuristic baseline rearranges.
    pub heuristic_threshold: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            horizon: 4,
            heuristic_threshold: 0.08,
        }
    }
}

/// Root configuration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub sim: SimConfig,
    pub perception: PerceptionConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub policy: PolicyConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim.validate()?;
        if self.model.grid_size != self.sim.plate.grid_size {
            return Err(ConfigError::Invalid(format!(
                "model grid ({}) must match plate grid ({})",
                self.model.grid_size, self.sim.plate.grid_size
            )));
        }
        if self.policy.horizon == 0 || self.policy.horizon > self.sim.budget {
            return Err(ConfigError::Invalid(format!(
                "planning horizon must be in 1..=budget ({}), got {}",
                self.sim.budget, self.policy.horizon
            )));
        }
        if self.perception.blur_sigma <= 0.0 {
            return Err(ConfigError::Invalid("blur sigma must be positive".into()));
        }
        Ok(())
    }
}
