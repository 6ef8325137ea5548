//! The five pipeline commands, callable as library functions.
//!
//! Each is a thin orchestration over the library modules and writes a
//! [`crate::config`] snapshot into its output directory.

use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::conditioning::{cache_conditions, condition_for, CacheOutcome, ConditionSource};
use crate::config::{
    write_snapshot, CacheConditionsConfig, EvalConfig, MakeDatasetConfig, SampleConfig, TrainRunConfig,
};
use crate::dataset::{make_dataset, read_manifest};
use crate::denoiser::{checkpoint, UNetDenoiser};
use crate::diffusion::sample_with_stream;
use crate::error::{Error, Result};
use crate::image::{load_image, save_image};
use crate::metrics::{evaluate, png_stems, EvalReport, ExternalMetric, Protocol};
use crate::schedule::{NoiseSchedule, TimestepSubsequence};
use crate::training::{train_loop, TrainSummary};

fn condition_source(spec: &str, mapping: Option<&PathBuf>) -> Result<ConditionSource> {
    let source: ConditionSource = spec.parse()?;
    match mapping {
        Some(m) => source.with_mapping_file(m),
        None => Ok(source),
    }
}

/// Sampling stream of an image: the first 8 bytes of SHA-256 of its stem, so
/// an image's output does not depend on which other images are processed.
pub fn image_stream(stem: &str) -> u64 {
    let d = Sha256::digest(stem.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub fn cmd_make_dataset(cfg: &MakeDatasetConfig) -> Result<PathBuf> {
    let manifest = make_dataset(&cfg.hr_dir, cfg.scale, cfg.patch, cfg.stride, &cfg.out_dir)?;
    write_snapshot(&cfg.out_dir, "make-dataset", cfg)?;
    Ok(manifest)
}

pub fn cmd_cache_conditions(cfg: &CacheConditionsConfig) -> Result<CacheOutcome> {
    let source = condition_source(&cfg.condition, cfg.mapping.as_ref())?;
    let entries = read_manifest(&cfg.manifest)?;
    let outcome = cache_conditions(&source, &entries, &cfg.out_dir)?;
    write_snapshot(&cfg.out_dir, "cache-conditions", cfg)?;
    Ok(outcome)
}

pub fn cmd_train(cfg: &TrainRunConfig) -> Result<TrainSummary> {
    let source = condition_source(&cfg.condition, cfg.mapping.as_ref())?;
    cfg.train.validate()?;
    write_snapshot(&cfg.out_dir, "train", cfg)?;
    train_loop(&cfg.train, &cfg.manifest, &source, &cfg.out_dir)
}

/// Super-resolves every PNG in `lr_dir`, writing `<out_dir>/<stem>.png`.
/// Returns the written paths in filename order.
pub fn cmd_sample(cfg: &SampleConfig) -> Result<Vec<PathBuf>> {
    let source = condition_source(&cfg.condition, cfg.mapping.as_ref())?;
    let (net, params) = checkpoint::load::<f32>(&cfg.checkpoint)?;
    let schedule = NoiseSchedule::cosine(net.num_timesteps())?;
    let steps = TimestepSubsequence::evenly_spaced(&schedule, cfg.inference_steps)?;
    let denoiser = UNetDenoiser::new(net, params)?;
    let inputs = png_stems(&cfg.lr_dir)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write_snapshot(&cfg.out_dir, "sample", cfg)?;
    inputs
        .par_iter()
        .map(|(stem, path)| {
            let lr = load_image(path)?;
            let cond = condition_for(&source, &lr, cfg.scale, stem)?;
            let (c, h, w) = cond.dims();
            denoiser.net.check_input(c, h, w)?;
            let sr = sample_with_stream(&denoiser, &cond, &schedule, &steps, cfg.seed, image_stream(stem))?;
            let out = cfg.out_dir.join(format!("{stem}.png"));
            save_image(&sr.to_unit()?, &out)?;
            log::info!("{stem}: wrote {}", out.display());
            Ok(out)
        })
        .collect()
}

pub fn cmd_eval(cfg: &EvalConfig) -> Result<EvalReport> {
    let protocol = Protocol {
        color: cfg.color,
        border: cfg.border,
    };
    let lpips = match &cfg.lpips {
        None => None,
        Some(cmd) => {
            let (program, args) = cmd
                .split_first()
                .ok_or_else(|| Error::InvalidArgument("empty LPIPS command".into()))?;
            Some(ExternalMetric {
                program: program.into(),
                args: args.to_vec(),
            })
        }
    };
    let report = evaluate(&cfg.sr_dir, &cfg.hr_dir, &protocol, lpips.as_ref())?;
    report.write(&cfg.out_dir)?;
    write_snapshot(&cfg.out_dir, "eval", cfg)?;
    Ok(report)
}
