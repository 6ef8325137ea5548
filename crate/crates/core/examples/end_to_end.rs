//! The whole pipeline through the library commands: procedural HR images →
//! patch dataset → cached conditions → a short training run → sampling with
//! bicubic and with external (here: ground-truth) conditions → evaluation.
//!
//! Uses a small network so it finishes in about a minute.
//!
//! ```text
//! cargo run --release --example end_to_end -- [work_dir]
//! ```

use std::path::PathBuf;

use diffsr::commands::{cmd_cache_conditions, cmd_eval, cmd_make_dataset, cmd_sample, cmd_train};
use diffsr::config::{CacheConditionsConfig, EvalConfig, MakeDatasetConfig, SampleConfig, TrainRunConfig};
use diffsr::denoiser::ArchitectureConfig;
use diffsr::image::save_image;
use diffsr::metrics::ColorSpace;
use diffsr::synthetic::synthetic_image;
use diffsr::training::TrainConfig;

fn main() -> diffsr::Result<()> {
    let work = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "end_to_end_out".into()));
    let io = |p: &PathBuf| {
        let p = p.clone();
        move |e| diffsr::Error::Io { path: p, source: e }
    };
    let src = work.join("source");
    std::fs::create_dir_all(&src).map_err(io(&src))?;
    for seed in 0..4 {
        save_image(&synthetic_image(seed, 3, 64, 64), src.join(format!("scene{seed}.png")))?;
    }

    let ds = work.join("dataset");
    let manifest = cmd_make_dataset(&MakeDatasetConfig {
        hr_dir: src,
        scale: 4,
        patch: 32,
        stride: 32,
        out_dir: ds.clone(),
    })?;
    println!("dataset: {}", manifest.display());

    let cached = cmd_cache_conditions(&CacheConditionsConfig {
        manifest: manifest.clone(),
        condition: "bicubic".into(),
        mapping: None,
        out_dir: work.join("conditions"),
    })?;
    println!("conditions: {} written, {} unchanged", cached.written, cached.unchanged);

    let summary = cmd_train(&TrainRunConfig {
        manifest,
        condition: format!("external:{}", work.join("conditions").display()),
        mapping: None,
        out_dir: work.join("train"),
        train: TrainConfig {
            total_steps: 150,
            batch_size: 4,
            learning_rate: 1e-3,
            checkpoint_every: 50,
            scale: 4,
            patch_size: 32,
            num_timesteps: 1000,
            architecture: ArchitectureConfig {
                base_channels: 16,
                channel_multipliers: vec![1, 2],
                res_blocks: 1,
                time_embedding_dim: 32,
                ..ArchitectureConfig::default()
            },
            ..TrainConfig::default()
        },
    })?;
    let n = summary.losses.len();
    println!(
        "trained {n} steps: loss {:.4} -> {:.4}",
        summary.losses[..10].iter().sum::<f64>() / 10.0,
        summary.losses[n - 10..].iter().sum::<f64>() / 10.0
    );

    for (name, condition) in [
        ("bicubic", "bicubic".to_string()),
        ("oracle", format!("external:{}", ds.join("hr").display())),
    ] {
        let out = work.join(format!("sr_{name}"));
        cmd_sample(&SampleConfig {
            checkpoint: summary.final_checkpoint.clone(),
            lr_dir: ds.join("lr"),
            condition,
            mapping: None,
            scale: 4,
            inference_steps: 20,
            seed: 0,
            out_dir: out.clone(),
        })?;
        let report = cmd_eval(&EvalConfig {
            sr_dir: out.clone(),
            hr_dir: ds.join("hr"),
            color: ColorSpace::Rgb,
            border: 4,
            lpips: None,
            out_dir: out,
        })?;
        println!("\n{name} condition:\n{}", report.to_table());
    }
    Ok(())
}
