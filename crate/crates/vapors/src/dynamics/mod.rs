//! Recurrent latent plate-dynamics model.
//!
//! A single flat parameter vector backs four heads sharing a gated recurrent
//! core: a strided-convolution encoder from masks to features, a transition
//! prior over the stochastic latent conditioned on the executed primitive, a
//! mask decoder, and a scalar reward head. The training loss combines mask
//! reconstruction MSE, the closed-form KL between posterior and prior
//! diagonal Gaussians, and reward MSE; gradients are analytic
//! (backpropagation through the recurrent rollout with reparameterized
//! sampling under frozen noise).

mod checkpoint;
mod layers;
mod model;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};

use std::ops::Range;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ModelConfig;
use crate::grid::ObsGrid;
use crate::random::{NormalSource, Stream};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid model geometry: {0}")]
    Geometry(String),
}

/// Grid and layer sizes derived from a [`ModelConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub grid: usize,
    pub pixels: usize,
    pub kernel: usize,
    pub c1: usize,
    pub c2: usize,
    /// Spatial edge after the first / second convolution.
    pub g1: usize,
    pub g2: usize,
    /// Flattened size after the second convolution.
    pub enc_flat: usize,
    pub feature: usize,
    pub hidden: usize,
    pub latent: usize,
    pub head_hidden: usize,
    pub act_dim: usize,
    /// GRU input: previous latent sample plus primitive one-hot.
    pub gru_in: usize,
    /// Decoder / reward input: recurrent state plus latent sample.
    pub dec_in: usize,
}

impl Geometry {
    pub fn from_config(cfg: &ModelConfig) -> Result<Self, ModelError> {
        let k = cfg.conv_kernel;
        if k == 0 || cfg.grid_size % k != 0 {
            return Err(ModelError::Geometry(format!(
                "grid {} not divisible by kernel {k}",
                cfg.grid_size
            )));
        }
        let g1 = cfg.grid_size / k;
        if g1 % k != 0 {
            return Err(ModelError::Geometry(format!(
                "first conv output {g1} not divisible by kernel {k}"
            )));
        }
        let g2 = g1 / k;
        if g2 == 0 {
            return Err(ModelError::Geometry("second conv output is empty".into()));
        }
        let (c1, c2) = cfg.conv_channels;
        Ok(Self {
            grid: cfg.grid_size,
            pixels: cfg.grid_size * cfg.grid_size,
            kernel: k,
            c1,
            c2,
            g1,
            g2,
            enc_flat: c2 * g2 * g2,
            feature: cfg.feature_dim,
            hidden: cfg.hidden_dim,
            latent: cfg.latent_dim,
            head_hidden: cfg.head_hidden,
            act_dim: cfg.num_primitives,
            gru_in: cfg.latent_dim + cfg.num_primitives,
            dec_in: cfg.hidden_dim + cfg.latent_dim,
        })
    }
}

/// Name, shape, and flat placement of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Flat ranges of every tensor inside the parameter vector.
#[derive(Debug, Clone)]
pub struct Layout {
    pub enc_conv1_w: Range<usize>,
    pub enc_conv1_b: Range<usize>,
    pub enc_conv2_w: Range<usize>,
    pub enc_conv2_b: Range<usize>,
    pub enc_fc_w: Range<usize>,
    pub enc_fc_b: Range<usize>,
    pub gru_wr_x: Range<usize>,
    pub gru_wr_h: Range<usize>,
    pub gru_br: Range<usize>,
    pub gru_wu_x: Range<usize>,
    pub gru_wu_h: Range<usize>,
    pub gru_bu: Range<usize>,
    pub gru_wc_x: Range<usize>,
    pub gru_wc_h: Range<usize>,
    pub gru_bc: Range<usize>,
    pub prior_fc_w: Range<usize>,
    pub prior_fc_b: Range<usize>,
    pub prior_out_w: Range<usize>,
    pub prior_out_b: Range<usize>,
    pub post_fc_w: Range<usize>,
    pub post_fc_b: Range<usize>,
    pub post_out_w: Range<usize>,
    pub post_out_b: Range<usize>,
    pub dec_fc1_w: Range<usize>,
    pub dec_fc1_b: Range<usize>,
    pub dec_fc2_w: Range<usize>,
    pub dec_fc2_b: Range<usize>,
    pub dec_deconv1_w: Range<usize>,
    pub dec_deconv1_b: Range<usize>,
    pub dec_deconv2_w: Range<usize>,
    pub dec_deconv2_b: Range<usize>,
    pub rew_fc_w: Range<usize>,
    pub rew_fc_b: Range<usize>,
    pub rew_out_w: Range<usize>,
    pub rew_out_b: Range<usize>,
    pub total: usize,
}

struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    cursor: usize,
}

impl LayoutBuilder {
    fn new() -> Self {
        Self {
            entries: Vec::new(),
            cursor: 0,
        }
    }

    fn add(&mut self, name: &str, shape: &[usize]) -> Range<usize> {
        let len: usize = shape.iter().product();
        let range = self.cursor..self.cursor + len;
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            offset: self.cursor,
            len,
        });
        self.cursor += len;
        range
    }
}

impl Layout {
    pub fn build(geom: &Geometry) -> (Self, Vec<ParamEntry>) {
        let mut b = LayoutBuilder::new();
        let k = geom.kernel;
        let layout = Layout {
            enc_conv1_w: b.add("enc.conv1.w", &[geom.c1, 1, k, k]),
            enc_conv1_b: b.add("enc.conv1.b", &[geom.c1]),
            enc_conv2_w: b.add("enc.conv2.w", &[geom.c2, geom.c1, k, k]),
            enc_conv2_b: b.add("enc.conv2.b", &[geom.c2]),
            enc_fc_w: b.add("enc.fc.w", &[geom.feature, geom.enc_flat]),
            enc_fc_b: b.add("enc.fc.b", &[geom.feature]),
            gru_wr_x: b.add("gru.reset.wx", &[geom.hidden, geom.gru_in]),
            gru_wr_h: b.add("gru.reset.wh", &[geom.hidden, geom.hidden]),
            gru_br: b.add("gru.reset.b", &[geom.hidden]),
            gru_wu_x: b.add("gru.update.wx", &[geom.hidden, geom.gru_in]),
            gru_wu_h: b.add("gru.update.wh", &[geom.hidden, geom.hidden]),
            gru_bu: b.add("gru.update.b", &[geom.hidden]),
            gru_wc_x: b.add("gru.cand.wx", &[geom.hidden, geom.gru_in]),
            gru_wc_h: b.add("gru.cand.wh", &[geom.hidden, geom.hidden]),
            gru_bc: b.add("gru.cand.b", &[geom.hidden]),
            prior_fc_w: b.add("prior.fc.w", &[geom.head_hidden, geom.hidden]),
            prior_fc_b: b.add("prior.fc.b", &[geom.head_hidden]),
            prior_out_w: b.add("prior.out.w", &[2 * geom.latent, geom.head_hidden]),
            prior_out_b: b.add("prior.out.b", &[2 * geom.latent]),
            post_fc_w: b.add("post.fc.w", &[geom.head_hidden, geom.hidden + geom.feature]),
            post_fc_b: b.add("post.fc.b", &[geom.head_hidden]),
            post_out_w: b.add("post.out.w", &[2 * geom.latent, geom.head_hidden]),
            post_out_b: b.add("post.out.b", &[2 * geom.latent]),
            dec_fc1_w: b.add("dec.fc1.w", &[geom.feature, geom.dec_in]),
            dec_fc1_b: b.add("dec.fc1.b", &[geom.feature]),
            dec_fc2_w: b.add("dec.fc2.w", &[geom.enc_flat, geom.feature]),
            dec_fc2_b: b.add("dec.fc2.b", &[geom.enc_flat]),
            dec_deconv1_w: b.add("dec.deconv1.w", &[geom.c1, geom.c2, k, k]),
            dec_deconv1_b: b.add("dec.deconv1.b", &[geom.c1]),
            dec_deconv2_w: b.add("dec.deconv2.w", &[1, geom.c1, k, k]),
            dec_deconv2_b: b.add("dec.deconv2.b", &[1]),
            rew_fc_w: b.add("rew.fc.w", &[geom.head_hidden, geom.dec_in]),
            rew_fc_b: b.add("rew.fc.b", &[geom.head_hidden]),
            rew_out_w: b.add("rew.out.w", &[1, geom.head_hidden]),
            rew_out_b: b.add("rew.out.b", &[1]),
            total: 0,
        };
        let mut layout = layout;
        layout.total = b.cursor;
        (layout, b.entries)
    }
}

/// Model parameters: config, derived geometry, manifest, and one flat `f64`
/// vector holding every tensor.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub geom: Geometry,
    pub layout: Layout,
    manifest: Vec<ParamEntry>,
    pub data: Vec<f64>,
}

impl ModelParams {
    /// Seeded initialization: weights N(0, 1/fan_in), biases zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let geom = Geometry::from_config(config)?;
        let (layout, manifest) = Layout::build(&geom);
        let mut data = vec![0.0; layout.total];
        let mut noise = NormalSource::new(Stream::seed_from_u64(seed));
        for entry in &manifest {
            // Biases are 1-D tensors and stay zero.
            if entry.shape.len() < 2 {
                continue;
            }
            let fan_in: usize = entry.shape[1..].iter().product();
            let scale = 1.0 / (fan_in as f64).sqrt();
            for v in &mut data[entry.offset..entry.offset + entry.len] {
                *v = scale * noise.next_normal();
            }
        }
        Ok(Self {
            config: config.clone(),
            geom,
            layout,
            manifest,
            data,
        })
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn manifest(&self) -> &[ParamEntry] {
        &self.manifest
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn slice(&self, range: &Range<usize>) -> &[f64] {
        &self.data[range.clone()]
    }
}

/// Recurrent deterministic state plus a diagonal-Gaussian stochastic latent.
///
/// `sample` is the realized latent: `mean + exp(logstd) * eps` for posterior
/// states (seeded noise), the mean itself for imagined prior states.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub deterministic: Vec<f64>,
    pub stochastic_mean: Vec<f64>,
    pub stochastic_logstd: Vec<f64>,
    pub sample: Vec<f64>,
}

impl LatentState {
    pub fn is_finite(&self) -> bool {
        self.deterministic.iter().all(|v| v.is_finite())
            && self.stochastic_mean.iter().all(|v| v.is_finite())
            && self.stochastic_logstd.iter().all(|v| v.is_finite())
            && self.sample.iter().all(|v| v.is_finite())
    }
}

/// Frozen reparameterization noise for a batch: one standard normal per
/// (sequence, frame, latent dimension).
#[derive(Debug, Clone)]
pub struct Noise {
    pub batch: usize,
    pub frames: usize,
    pub latent: usize,
    data: Vec<f64>,
}

impl Noise {
    pub fn sample(seed: u64, batch: usize, frames: usize, latent: usize) -> Self {
        let mut src = NormalSource::new(Stream::seed_from_u64(seed));
        let data = (0..batch * frames * latent)
            .map(|_| src.next_normal())
            .collect();
        Self {
            batch,
            frames,
            latent,
            data,
        }
    }

    pub fn zeros(batch: usize, frames: usize, latent: usize) -> Self {
        Self {
            batch,
            frames,
            latent,
            data: vec![0.0; batch * frames * latent],
        }
    }

    pub fn frame(&self, b: usize, t: usize) -> &[f64] {
        let start = (b * self.frames + t) * self.latent;
        &self.data[start..start + self.latent]
    }
}

/// Weights of the three loss components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub kl: f64,
    pub reward: f64,
}

impl From<(f64, f64, f64)> for LossWeights {
    fn from(w: (f64, f64, f64)) -> Self {
        Self {
            recon: w.0,
            kl: w.1,
            reward: w.2,
        }
    }
}

/// Raw (unweighted) component means plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub reward_mse: f64,
}

/// B training windows: per window, L transitions expand to L+1 mask frames
/// (the observation before each transition plus the final observation
/// after), L primitive indices, and L rewards.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub obs: Vec<Vec<ObsGrid>>,
    pub prims: Vec<Vec<usize>>,
    pub rewards: Vec<Vec<f64>>,
}

impl TrainBatch {
    pub fn validate(&self, config: &ModelConfig) -> Result<(), ModelError> {
        if self.obs.is_empty() {
            return Err(ModelError::ShapeMismatch("empty batch".into()));
        }
        if self.obs.len() != self.prims.len() || self.obs.len() != self.rewards.len() {
            return Err(ModelError::ShapeMismatch(
                "obs/prims/rewards batch sizes differ".into(),
            ));
        }
        let frames = self.obs[0].len();
        if frames < 2 {
            return Err(ModelError::ShapeMismatch(
                "windows need at least one transition (two frames)".into(),
            ));
        }
        for ((obs, prims), rewards) in self.obs.iter().zip(&self.prims).zip(&self.rewards) {
            if obs.len() != frames {
                return Err(ModelError::ShapeMismatch(
                    "sequences have differing lengths".into(),
                ));
            }
            if prims.len() + 1 != obs.len() || rewards.len() + 1 != obs.len() {
                return Err(ModelError::ShapeMismatch(format!(
                    "window needs len(prims) = len(rewards) = len(obs) - 1, got {}/{}/{}",
                    prims.len(),
                    rewards.len(),
                    obs.len()
                )));
            }
            for o in obs {
                if o.width != config.grid_size || o.height != config.grid_size {
                    return Err(ModelError::ShapeMismatch(format!(
                        "mask is {}x{}, model expects {0}x{0}",
                        o.width, o.height
                    )));
                }
            }
            for &p in prims {
                if p >= config.num_primitives {
                    return Err(ModelError::ShapeMismatch(format!(
                        "primitive index {p} out of range"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.obs.len()
    }

    /// Frames per sequence (transitions + 1).
    pub fn frames(&self) -> usize {
        self.obs[0].len()
    }
}

pub use model::{
    decode_obs, decode_reward, grad, loss, posterior_encode, posterior_encode_mean,
    prior_transition,
};
