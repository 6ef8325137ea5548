//! Training: Adam on the clean-image L1 objective, checkpointing and logging.
//!
//! Each step draws a batch of pairs uniformly with replacement, and for every
//! item a timestep `t ~ U{1..T}` and noise `ε ~ N(0, I)`; it forms
//! `x_t = α_t·HR + σ_t·ε` and regresses the network output onto HR.
//! All draws come from one ChaCha8 stream seeded by `TrainConfig::seed`, in
//! a fixed order (batch indices, then per item `t` then `ε`), so a run is a
//! pure function of its config and data.
//!
//! Condition images are computed once up front: the conditioning model is
//! frozen, so recomputing it per step would change nothing but the cost.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{condition_for, ConditionSource};
use crate::dataset::{load_pairs, read_manifest};
use crate::denoiser::checkpoint;
use crate::denoiser::{loss_and_grad, ArchitectureConfig, ParamStore, Real, TrainingExample, UNet};
use crate::diffusion::{forward_diffuse, NoiseDraw};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, PatchPair, Range};
use crate::rng::{self, streams};
use crate::schedule::NoiseSchedule;

pub const LOG_NAME: &str = "train_log.tsv";
pub const FINAL_CHECKPOINT: &str = "final.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// 0 disables intermediate checkpoints; the final one is always written.
    pub checkpoint_every: usize,
    pub scale: usize,
    pub patch_size: usize,
    pub num_timesteps: usize,
    /// Global L2 gradient-norm ceiling. Off unless set.
    pub grad_clip: Option<f64>,
    pub architecture: ArchitectureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 10_000,
            batch_size: 16,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            checkpoint_every: 1000,
            scale: 4,
            patch_size: 64,
            num_timesteps: 1000,
            grad_clip: None,
            architecture: ArchitectureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0) {
            return bad(format!("adam_beta1 must be in (0, 1), got {}", self.adam_beta1));
        }
        if !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return bad(format!("adam_beta2 must be in (0, 1), got {}", self.adam_beta2));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be > 0, got {}", self.adam_eps));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.num_timesteps == 0 {
            return bad("num_timesteps must be >= 1".into());
        }
        if self.scale < 2 || self.patch_size == 0 || self.patch_size % self.scale != 0 {
            return bad(format!(
                "patch_size {} must be a positive multiple of scale {} (scale >= 2)",
                self.patch_size, self.scale
            ));
        }
        if self.patch_size % self.architecture.size_multiple() != 0 {
            return bad(format!(
                "patch_size {} must be a multiple of {} for this architecture",
                self.patch_size,
                self.architecture.size_multiple()
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be > 0, got {c}"));
            }
        }
        self.architecture.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam moments, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_update<T: Real>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut OptimizerState<T>,
    config: &AdamConfig,
) -> Result<()> {
    params.ensure_same_layout(grads)?;
    params.ensure_same_layout(&state.m)?;
    params.ensure_same_layout(&state.v)?;
    state.step += 1;
    let k = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(k);
    let c2 = 1.0 - b2.powi(k);
    let (tb1, tb2) = (T::of(b1), T::of(b2));
    let (tb1c, tb2c) = (T::of(1.0 - b1), T::of(1.0 - b2));
    for (i, p) in params.tensors.iter_mut().enumerate() {
        let g = &grads.tensors[i].data;
        let m = &mut state.m.tensors[i].data;
        let v = &mut state.v.tensors[i].data;
        for j in 0..p.data.len() {
            m[j] = tb1 * m[j] + tb1c * g[j];
            v[j] = tb2 * v[j] + tb2c * g[j] * g[j];
            let m_hat = m[j].f64() / c1;
            let v_hat = v[j].f64() / c2;
            let delta = config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
            p.data[j] = T::of(p.data[j].f64() - delta);
        }
    }
    Ok(())
}

/// Rescales `grads` so that its global L2 norm is at most `max_norm`.
pub fn clip_grad_norm<T: Real>(grads: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = grads.sum_squares().sqrt();
    if norm > max_norm {
        grads.scale(T::of(max_norm / norm));
    }
    norm
}

/// A training pair with its condition precomputed; HR and condition are in
/// signed range.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub id: String,
    pub hr: ImageTensor,
    pub condition: ImageTensor,
}

pub fn prepare_pairs(pairs: &[PatchPair], source: &ConditionSource) -> Result<Vec<PreparedPair>> {
    pairs
        .iter()
        .map(|p| {
            Ok(PreparedPair {
                id: p.id.clone(),
                hr: p.hr.to_signed()?,
                condition: condition_for(source, &p.lr, p.scale, &p.id)?,
            })
        })
        .collect()
}

/// Draws `(t, ε)` for one item and builds its supervised example.
fn noised_example(pair: &PreparedPair, schedule: &NoiseSchedule, rng: &mut ChaCha8Rng) -> Result<TrainingExample> {
    let t = rng::uniform_inclusive(rng, 1, schedule.num_timesteps());
    let (c, h, w) = pair.hr.dims();
    let mut eps = vec![0.0; c * h * w];
    rng::fill_normal(rng, &mut eps);
    let eps = NoiseDraw::from_values(ImageTensor::new(c, h, w, eps, Range::Signed)?);
    let state = forward_diffuse(&pair.hr, t, &eps, schedule)?;
    Ok(TrainingExample {
        id: pair.id.clone(),
        x_t: state.x,
        t,
        condition: pair.condition.clone(),
        target: pair.hr.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub step: usize,
    pub loss: f64,
    pub timesteps: Vec<usize>,
}

/// Network, optimizer and RNG state of one training run.
pub struct Trainer<T> {
    pub net: UNet,
    pub params: ParamStore<T>,
    pub optimizer: OptimizerState<T>,
    pub schedule: NoiseSchedule,
    config: TrainConfig,
    rng: ChaCha8Rng,
    step: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let net = UNet::new(config.architecture.clone(), config.num_timesteps)?;
        let params = net.init_params(config.seed);
        let optimizer = OptimizerState::new(&params);
        Ok(Self {
            schedule: NoiseSchedule::cosine(config.num_timesteps)?,
            rng: rng::stream_rng(config.seed, streams::TRAINING),
            net,
            params,
            optimizer,
            config,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Steps taken so far.
    pub fn step(&self) -> usize {
        self.step
    }

    fn check_pair(&self, pair: &PreparedPair) -> Result<()> {
        let p = self.config.patch_size;
        let expected = (self.config.architecture.image_channels, p, p);
        if pair.hr.dims() != expected || !pair.hr.same_dims(&pair.condition) {
            return Err(Error::shape(
                format!("HR patch and condition {}x{}x{} for '{}'", expected.0, p, p, pair.id),
                format!(
                    "HR {} / condition {}",
                    crate::image::dims_str(pair.hr.dims()),
                    crate::image::dims_str(pair.condition.dims())
                ),
            ));
        }
        Ok(())
    }

    /// One optimizer step on the given batch.
    pub fn train_step(&mut self, batch: &[&PreparedPair]) -> Result<StepOutcome> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for pair in batch {
            self.check_pair(pair)?;
        }
        let examples = batch
            .iter()
            .map(|p| noised_example(p, &self.schedule, &mut self.rng))
            .collect::<Result<Vec<_>>>()?;
        let timesteps: Vec<usize> = examples.iter().map(|e| e.t).collect();
        let step = self.step + 1;
        let (loss, mut grads) = loss_and_grad(&self.net, &self.params, &examples)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                timesteps,
                ids: examples.into_iter().map(|e| e.id).collect(),
            });
        }
        if let Some(max_norm) = self.config.grad_clip {
            clip_grad_norm(&mut grads, max_norm);
        }
        adam_update(&mut self.params, &grads, &mut self.optimizer, &self.config.adam())?;
        self.step = step;
        Ok(StepOutcome { step, loss, timesteps })
    }

    /// Draws a batch uniformly with replacement and takes one step.
    pub fn sample_and_step(&mut self, data: &[PreparedPair]) -> Result<StepOutcome> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("no training pairs".into()));
        }
        let batch: Vec<&PreparedPair> = (0..self.config.batch_size)
            .map(|_| &data[rng::uniform_inclusive(&mut self.rng, 0, data.len() - 1)])
            .collect();
        self.train_step(&batch)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.net, &self.params, path)
    }
}

/// Mean L1 loss over `data` with `(t, ε)` drawn from a dedicated stream of
/// `seed`, `draws` times per pair. The same arguments give the same draws,
/// so values from different parameter sets are directly comparable.
pub fn evaluation_loss<T: Real>(
    net: &UNet,
    params: &ParamStore<T>,
    data: &[PreparedPair],
    seed: u64,
    draws: usize,
) -> Result<f64> {
    let schedule = NoiseSchedule::cosine(net.num_timesteps())?;
    let mut rng = rng::stream_rng(seed, streams::TRAINING + 1);
    let mut total = 0.0;
    let mut count = 0usize;
    for _ in 0..draws {
        for pair in data {
            let ex = noised_example(pair, &schedule, &mut rng)?;
            let pred = crate::denoiser::predict_x0(net, params, &ex.x_t, ex.t, &ex.condition)?;
            total += pred
                .data()
                .iter()
                .zip(ex.target.data())
                .map(|(p, y)| (p - y).abs())
                .sum::<f64>()
                / pred.len() as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no evaluation pairs".into()));
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub final_checkpoint: PathBuf,
    pub losses: Vec<f64>,
}

/// Loads the manifest, precomputes conditions, and trains for
/// `config.total_steps` steps, writing `ckpt_<step>.bin` every
/// `checkpoint_every` steps, `final.bin` at the end, and one
/// `step<TAB>loss<TAB>seconds` line per step to `train_log.tsv`.
///
/// Interrupted runs cannot be resumed.
pub fn train_loop(
    config: &TrainConfig,
    manifest: &Path,
    source: &ConditionSource,
    out_dir: &Path,
) -> Result<TrainSummary> {
    config.validate()?;
    let entries = read_manifest(manifest)?;
    if entries.is_empty() {
        return Err(Error::Manifest {
            path: manifest.to_path_buf(),
            message: "no entries".into(),
        });
    }
    if let Some(e) = entries.iter().find(|e| e.scale != config.scale) {
        return Err(Error::Config(format!(
            "pair '{}' has scale {}, config says {}",
            e.id(),
            e.scale,
            config.scale
        )));
    }
    let data = prepare_pairs(&load_pairs(&entries)?, source)?;
    train_on(config, &data, out_dir)
}

/// [`train_loop`] on pairs already in memory.
pub fn train_on(config: &TrainConfig, data: &[PreparedPair], out_dir: &Path) -> Result<TrainSummary> {
    let mut trainer = Trainer::<f32>::new(config.clone())?;
    for pair in data {
        trainer.check_pair(pair)?;
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOG_NAME);
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let start = Instant::now();
    let mut losses = Vec::with_capacity(config.total_steps);
    for _ in 0..config.total_steps {
        let out = trainer.sample_and_step(data)?;
        losses.push(out.loss);
        writeln!(log, "{}\t{:.8}\t{:.3}", out.step, out.loss, start.elapsed().as_secs_f64())
            .map_err(|e| Error::io(&log_path, e))?;
        if config.checkpoint_every > 0 && out.step % config.checkpoint_every == 0 {
            trainer.save_checkpoint(&out_dir.join(format!("ckpt_{:07}.bin", out.step)))?;
        }
        if out.step % 100 == 0 {
            log::info!("step {} loss {:.5}", out.step, out.loss);
        }
    }
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    trainer.save_checkpoint(&final_checkpoint)?;
    Ok(TrainSummary {
        final_checkpoint,
        losses,
    })
}
