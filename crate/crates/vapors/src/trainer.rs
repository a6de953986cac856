//! Replay-driven training: episode store, Adam with global-norm clipping,
//! and the interleaved collect/update schedule.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::config::Config;
use crate::dynamics::{
    self, save_checkpoint, CheckpointError, LossBreakdown, ModelError, ModelParams, Noise,
    TrainBatch,
};
use crate::planner::{self, EpisodeError, EpisodeSetup, Policy};
use crate::platesim::EpisodeLog;
use crate::random::{derive_seed, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("replay store has no sampleable episodes")]
    NoReplayData,
    #[error("non-finite loss at update {step}; last good checkpoint retained")]
    NonFiniteLoss { step: usize },
    #[error("training io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Append-only store of episodes with seeded window sampling.
#[derive(Debug, Default)]
pub struct ReplayStore {
    episodes: Vec<EpisodeLog>,
}

impl ReplayStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, episode: EpisodeLog) {
        self.episodes.push(episode);
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.len()
    }

    pub fn transition_count(&self) -> usize {
        self.episodes.iter().map(|e| e.len()).sum()
    }

    pub fn episodes(&self) -> &[EpisodeLog] {
        &self.episodes
    }

    /// Sample `batch` windows of up to `window` transitions each. Windows
    /// never cross episode boundaries; when every stored episode is shorter
    /// than `window`, the window shrinks to the longest available episode so
    /// early-terminated episodes stay sampleable.
    pub fn sample_batch(
        &self,
        rng: &mut Stream,
        batch: usize,
        window: usize,
    ) -> Option<TrainBatch> {
        let longest = self.episodes.iter().map(|e| e.len()).max().unwrap_or(0);
        if longest == 0 || batch == 0 {
            return None;
        }
        let window = window.min(longest).max(1);
        let eligible: Vec<usize> = self
            .episodes
            .iter()
            .enumerate()
            .filter(|(_, e)| e.len() >= window)
            .map(|(i, _)| i)
            .collect();
        let mut obs = Vec::with_capacity(batch);
        let mut prims = Vec::with_capacity(batch);
        let mut rewards = Vec::with_capacity(batch);
        for _ in 0..batch {
            let ep = &self.episodes[eligible[rng.gen_range(0..eligible.len())]];
            let start = rng.gen_range(0..=ep.len() - window);
            let slice = &ep.records[start..start + window];
            let mut frames = Vec::with_capacity(window + 1);
            frames.push(slice[0].obs_before.clone());
            for r in slice {
                frames.push(r.obs_after.clone());
            }
            obs.push(frames);
            prims.push(slice.iter().map(|r| r.primitive.index()).collect());
            rewards.push(slice.iter().map(|r| r.reward).collect());
        }
        Some(TrainBatch {
            obs,
            prims,
            rewards,
        })
    }
}

/// Adam moments plus hyperparameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl OptimizerState {
    pub fn new(param_count: usize, cfg: &crate::config::TrainConfig) -> Self {
        Self {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step: 0,
            learning_rate: cfg.learning_rate,
            eps: cfg.adam_eps,
            clip_norm: cfg.clip_norm,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
        }
    }
}

/// What an [`adam_step`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdamOutcome {
    Applied { grad_norm: f64, clipped: bool },
    SkippedNonFinite,
}

/// Global-norm clip followed by a standard bias-corrected Adam update.
/// Non-finite gradients skip the update and flag it.
pub fn adam_step(params: &mut [f64], grads: &[f64], opt: &mut OptimizerState) -> AdamOutcome {
    assert_eq!(params.len(), grads.len(), "parameter/gradient shape mismatch");
    assert_eq!(params.len(), opt.first_moment.len());
    if grads.iter().any(|g| !g.is_finite()) {
        return AdamOutcome::SkippedNonFinite;
    }
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    let scale = if norm > opt.clip_norm {
        opt.clip_norm / norm
    } else {
        1.0
    };
    opt.step += 1;
    let bc1 = 1.0 - opt.beta1.powi(opt.step as i32);
    let bc2 = 1.0 - opt.beta2.powi(opt.step as i32);
    for i in 0..params.len() {
        let g = grads[i] * scale;
        opt.first_moment[i] = opt.beta1 * opt.first_moment[i] + (1.0 - opt.beta1) * g;
        opt.second_moment[i] = opt.beta2 * opt.second_moment[i] + (1.0 - opt.beta2) * g * g;
        let m_hat = opt.first_moment[i] / bc1;
        let v_hat = opt.second_moment[i] / bc2;
        params[i] -= opt.learning_rate * m_hat / (v_hat.sqrt() + opt.eps);
    }
    AdamOutcome::Applied {
        grad_norm: norm,
        clipped: scale < 1.0,
    }
}

/// Everything a finished training run leaves behind.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub episodes_collected: usize,
    pub updates_skipped: usize,
    pub final_loss: LossBreakdown,
    pub params: ModelParams,
}

/// Interleaved collect/update training.
///
/// Seeds the replay store with random-policy warmup episodes, then runs the
/// configured number of updates, collecting one planner episode (with
/// epsilon-random primitive exploration decaying from `explore_start` to
/// `explore_end`) every `collect_every` updates. Writes per-step loss
/// components to `metrics.csv` and periodic `ckpt_<step>.bin` checkpoints.
/// Fully deterministic per seed.
pub fn train(
    cfg: &Config,
    seed: u64,
    out_dir: &Path,
    setup: &EpisodeSetup,
) -> Result<TrainOutcome, TrainError> {
    std::fs::create_dir_all(out_dir)?;
    let tc = &cfg.train;
    let mut params = ModelParams::init(&cfg.model, derive_seed(seed, "init", 0))?;
    let mut opt = OptimizerState::new(params.param_count(), tc);
    let mut replay = ReplayStore::new();
    let mut episodes_collected = 0;

    for i in 0..tc.warmup_episodes {
        let log = planner::run_episode(
            cfg,
            &Policy::Random(derive_seed(seed, "warmup-policy", i as u64)),
            derive_seed(seed, "warmup-env", i as u64),
            setup,
        )?;
        replay.push(log);
        episodes_collected += 1;
    }

    let metrics_path = out_dir.join("metrics.csv");
    let mut metrics = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    writeln!(metrics, "step,recon,kl,reward_mse,total")?;

    let mut sample_rng = Stream::seed_from_u64(derive_seed(seed, "replay-sample", 0));
    let mut checkpoints = Vec::new();
    let mut updates_skipped = 0;
    let mut last_loss = None;
    let total_collections = if tc.collect_every > 0 {
        tc.updates / tc.collect_every
    } else {
        0
    };
    let mut collections_done = 0usize;

    for step in 1..=tc.updates {
        let batch = replay
            .sample_batch(&mut sample_rng, tc.batch_size, tc.window)
            .ok_or(TrainError::NoReplayData)?;
        let noise = Noise::sample(
            derive_seed(seed, "noise", step as u64),
            batch.batch_size(),
            batch.frames(),
            params.geom.latent,
        );
        let (breakdown, grads) =
            match dynamics::grad(&batch, &params, tc.loss_weights.into(), &noise) {
                Ok(out) => out,
                Err(ModelError::NonFinite(_)) => {
                    return Err(TrainError::NonFiniteLoss { step });
                }
                Err(e) => return Err(e.into()),
            };
        if adam_step(&mut params.data, &grads, &mut opt) == AdamOutcome::SkippedNonFinite {
            updates_skipped += 1;
        }
        writeln!(
            metrics,
            "{step},{},{},{},{}",
            breakdown.recon, breakdown.kl, breakdown.reward_mse, breakdown.total
        )?;
        last_loss = Some(breakdown);

        if tc.collect_every > 0 && step % tc.collect_every == 0 {
            let progress = if total_collections > 1 {
                collections_done as f64 / (total_collections - 1) as f64
            } else {
                0.0
            };
            let eps = tc.explore_start + (tc.explore_end - tc.explore_start) * progress;
            let log = planner::run_episode(
                cfg,
                &Policy::Vapors {
                    params: &params,
                    explore: Some((eps, derive_seed(seed, "explore", step as u64))),
                },
                derive_seed(seed, "collect-env", step as u64),
                setup,
            )?;
            replay.push(log);
            episodes_collected += 1;
            collections_done += 1;
        }

        if tc.checkpoint_every > 0 && step % tc.checkpoint_every == 0 {
            let path = out_dir.join(format!("ckpt_{step}.bin"));
            save_checkpoint(&params, &path)?;
            checkpoints.push(path);
        }
    }
    metrics.flush()?;

    let final_checkpoint = out_dir.join(format!("ckpt_{}.bin", tc.updates));
    if checkpoints.last() != Some(&final_checkpoint) {
        save_checkpoint(&params, &final_checkpoint)?;
        checkpoints.push(final_checkpoint.clone());
    }

    Ok(TrainOutcome {
        metrics_path,
        final_checkpoint,
        checkpoints,
        episodes_collected,
        updates_skipped,
        final_loss: last_loss.expect("at least one update ran"),
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, TrainConfig};
    use crate::platesim::Spread;

    fn opt(n: usize) -> OptimizerState {
        OptimizerState::new(n, &TrainConfig::default())
    }

    #[test]
    fn first_adam_step_matches_hand_computation() {
        // g = 1: bias-corrected m_hat = v_hat = 1, so the update is
        // -lr / (1 + eps) = -1e-3 / 1.0001.
        let mut params = vec![0.0];
        let mut o = opt(1);
        let outcome = adam_step(&mut params, &[1.0], &mut o);
        assert!(matches!(outcome, AdamOutcome::Applied { clipped: false, .. }));
        let expected = -1e-3 / (1.0 + 1e-4);
        assert!((params[0] - expected).abs() < 1e-15, "{} vs {expected}", params[0]);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut params = vec![1.5, -2.0];
        let mut o = opt(2);
        o.first_moment = vec![1.0, -1.0];
        o.second_moment = vec![0.5, 0.5];
        // With eps in the denominator the update from decayed moments is
        // nonzero in general, but a zero gradient must not move parameters
        // through the gradient term itself when moments are zero.
        let mut fresh = opt(2);
        let before = params.clone();
        adam_step(&mut params, &[0.0, 0.0], &mut fresh);
        assert_eq!(params, before);
        assert!(fresh.first_moment.iter().all(|&m| m == 0.0));
        // Nonzero moments decay by beta factors.
        let mut p2 = vec![0.0, 0.0];
        adam_step(&mut p2, &[0.0, 0.0], &mut o);
        assert!((o.first_moment[0] - 0.9).abs() < 1e-15);
        assert!((o.second_moment[0] - 0.4995).abs() < 1e-15);
    }

    #[test]
    fn global_norm_clipping_scales_gradients() {
        // |g| = 2000 with clip 1000: effective gradient is halved.
        let mut params = vec![0.0, 0.0];
        let mut o = opt(2);
        let outcome = adam_step(&mut params, &[1200.0, 1600.0], &mut o);
        match outcome {
            AdamOutcome::Applied { grad_norm, clipped } => {
                assert!((grad_norm - 2000.0).abs() < 1e-9);
                assert!(clipped);
            }
            _ => panic!("expected applied"),
        }
        assert!((o.first_moment[0] - 0.1 * 600.0).abs() < 1e-12);
        assert!((o.first_moment[1] - 0.1 * 800.0).abs() < 1e-12);
        // Post-clip norm is exactly the clip threshold here.
        let clipped_norm = (600.0f64.powi(2) + 800.0f64.powi(2)).sqrt();
        assert!(clipped_norm <= 1000.0 + 1e-6);
    }

    #[test]
    fn non_finite_gradients_skip_the_update() {
        let mut params = vec![1.0];
        let before = params.clone();
        let mut o = opt(1);
        let outcome = adam_step(&mut params, &[f64::NAN], &mut o);
        assert_eq!(outcome, AdamOutcome::SkippedNonFinite);
        assert_eq!(params, before);
        assert_eq!(o.step, 0);
    }

    #[test]
    fn adam_keeps_params_finite_under_huge_gradients() {
        let mut params = vec![0.0; 8];
        let mut o = opt(8);
        let mut rng = Stream::seed_from_u64(5);
        for _ in 0..200 {
            let grads: Vec<f64> = (0..8).map(|_| rng.gen_range(-1e9..1e9)).collect();
            adam_step(&mut params, &grads, &mut o);
            assert!(params.iter().all(|p| p.is_finite()));
        }
    }

    fn tiny_cfg() -> Config {
        let mut cfg = Config::default();
        cfg.model = ModelConfig::mini();
        cfg.sim.plate.grid_size = 8;
        cfg.sim.budget = 4;
        cfg.policy.horizon = 2;
        cfg.train.updates = 24;
        cfg.train.collect_every = 8;
        cfg.train.batch_size = 3;
        cfg.train.window = 3;
        cfg.train.warmup_episodes = 2;
        cfg.train.checkpoint_every = 12;
        cfg
    }

    fn tiny_setup() -> EpisodeSetup {
        EpisodeSetup {
            n_items: 6,
            spread: Spread::HalfSpread,
        }
    }

    fn collect_replay(cfg: &Config, n: usize) -> ReplayStore {
        let mut replay = ReplayStore::new();
        for i in 0..n {
            let log =
                planner::run_episode(cfg, &Policy::Random(i as u64), 40 + i as u64, &tiny_setup())
                    .unwrap();
            replay.push(log);
        }
        replay
    }

    #[test]
    fn windows_never_cross_episode_boundaries() {
        let cfg = tiny_cfg();
        let replay = collect_replay(&cfg, 4);
        let lens: Vec<usize> = replay.episodes().iter().map(|e| e.len()).collect();
        let mut rng = Stream::seed_from_u64(9);
        for _ in 0..20 {
            let batch = replay.sample_batch(&mut rng, 5, 3).unwrap();
            for b in 0..batch.batch_size() {
                let window = batch.prims[b].len();
                assert!(window <= 3);
                assert!(
                    lens.iter().any(|&l| l >= window),
                    "window longer than any episode"
                );
                // Frame chain is consistent: obs[i+1] is the post-state of
                // transition i, so consecutive frames within the window must
                // belong to one episode; verify by replaying the source logs.
                assert_eq!(batch.obs[b].len(), window + 1);
            }
        }
    }

    #[test]
    fn sampling_is_reproducible_per_seed() {
        let cfg = tiny_cfg();
        let replay = collect_replay(&cfg, 3);
        let mut rng1 = Stream::seed_from_u64(12);
        let mut rng2 = Stream::seed_from_u64(12);
        for _ in 0..10 {
            let a = replay.sample_batch(&mut rng1, 4, 3).unwrap();
            let b = replay.sample_batch(&mut rng2, 4, 3).unwrap();
            assert_eq!(a.obs, b.obs);
            assert_eq!(a.prims, b.prims);
            assert_eq!(a.rewards, b.rewards);
        }
    }

    #[test]
    fn window_shrinks_when_episodes_are_short() {
        let cfg = tiny_cfg();
        let replay = collect_replay(&cfg, 2);
        let longest = replay.episodes().iter().map(|e| e.len()).max().unwrap();
        let mut rng = Stream::seed_from_u64(3);
        let batch = replay.sample_batch(&mut rng, 2, 50).unwrap();
        assert_eq!(batch.prims[0].len(), longest);
    }

    #[test]
    fn empty_store_yields_no_batch() {
        let replay = ReplayStore::new();
        let mut rng = Stream::seed_from_u64(1);
        assert!(replay.sample_batch(&mut rng, 4, 8).is_none());
    }

    #[test]
    fn training_runs_and_is_deterministic() {
        let cfg = tiny_cfg();
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let out1 = train(&cfg, 7, dir1.path(), &tiny_setup()).unwrap();
        let out2 = train(&cfg, 7, dir2.path(), &tiny_setup()).unwrap();
        // 24 updates at collect_every 8 -> 3 collected + 2 warmup.
        assert_eq!(out1.episodes_collected, 5);
        assert_eq!(out1.updates_skipped, 0);
        let m1 = std::fs::read(&out1.metrics_path).unwrap();
        let m2 = std::fs::read(&out2.metrics_path).unwrap();
        assert_eq!(m1, m2);
        let c1 = std::fs::read(&out1.final_checkpoint).unwrap();
        let c2 = std::fs::read(&out2.final_checkpoint).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(
            std::fs::read_to_string(&out1.metrics_path)
                .unwrap()
                .lines()
                .count(),
            1 + cfg.train.updates
        );
        // ckpt_12 and ckpt_24.
        assert_eq!(out1.checkpoints.len(), 2);
        let loaded = dynamics::load_checkpoint(&out1.final_checkpoint).unwrap();
        assert_eq!(loaded.param_count(), out1.params.param_count());
    }

    #[test]
    fn paper_schedule_collects_fifteen_episodes() {
        let mut cfg = tiny_cfg();
        cfg.train.updates = 2250;
        cfg.train.collect_every = 150;
        cfg.train.checkpoint_every = 2250;
        let dir = tempfile::tempdir().unwrap();
        let out = train(&cfg, 11, dir.path(), &tiny_setup()).unwrap();
        assert_eq!(
            out.episodes_collected - cfg.train.warmup_episodes,
            15,
            "2250 updates collecting every 150"
        );
    }
}
