//! Toy generalization run: ~500 procedural 64 px patches at ×4, trained with
//! batch 8, evaluated on held-out patches by loss and by sampling with both
//! bicubic and ground-truth ("oracle") conditions.
//!
//! The reference length is 20,000 steps, which takes many hours on one CPU
//! core; pass a smaller step count for a quicker look.
//!
//! ```text
//! cargo run --release --example toy_generalization -- [steps] [work_dir]
//! ```

use std::path::{Path, PathBuf};

use diffsr::commands::{cmd_eval, cmd_sample, cmd_train};
use diffsr::conditioning::ConditionSource;
use diffsr::config::{EvalConfig, SampleConfig, TrainRunConfig};
use diffsr::dataset::{load_pairs, make_dataset, read_manifest};
use diffsr::denoiser::{checkpoint, UNet};
use diffsr::image::save_image;
use diffsr::metrics::ColorSpace;
use diffsr::synthetic::synthetic_image;
use diffsr::training::{evaluation_loss, prepare_pairs, TrainConfig};

fn write_images(dir: &Path, seeds: std::ops::Range<u64>) -> diffsr::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| diffsr::Error::Io { path: dir.into(), source: e })?;
    for s in seeds {
        save_image(&synthetic_image(s, 3, 256, 256), dir.join(format!("img{s:03}.png")))?;
    }
    Ok(())
}

fn main() -> diffsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse().expect("steps")).unwrap_or(20_000);
    let work = PathBuf::from(args.next().unwrap_or_else(|| "toy_out".into()));

    write_images(&work.join("train_src"), 100..132)?;
    write_images(&work.join("held_src"), 132..134)?;
    let manifest = make_dataset(&work.join("train_src"), 4, 64, 64, &work.join("train_ds"))?;
    let held_manifest = make_dataset(&work.join("held_src"), 4, 64, 64, &work.join("held_ds"))?;
    let held = prepare_pairs(&load_pairs(&read_manifest(&held_manifest)?)?, &ConditionSource::Bicubic)?;
    println!(
        "{} training patches, {} held out",
        read_manifest(&manifest)?.len(),
        held.len()
    );

    let train = TrainConfig {
        total_steps: steps,
        batch_size: 8,
        checkpoint_every: 1000,
        scale: 4,
        patch_size: 64,
        ..TrainConfig::default()
    };
    let net = UNet::new(train.architecture.clone(), train.num_timesteps)?;
    let before = evaluation_loss(&net, &net.init_params::<f32>(train.seed), &held, 1, 2)?;
    let summary = cmd_train(&TrainRunConfig {
        manifest,
        condition: "bicubic".into(),
        mapping: None,
        out_dir: work.join("train"),
        train,
    })?;
    let (net, params) = checkpoint::load::<f32>(&summary.final_checkpoint)?;
    let after = evaluation_loss(&net, &params, &held, 1, 2)?;
    println!("held-out loss {before:.4} -> {after:.4} (ratio {:.3})", after / before);

    for (name, condition) in [
        ("bicubic", "bicubic".to_string()),
        ("oracle", format!("external:{}", work.join("held_ds/hr").display())),
    ] {
        let out = work.join(format!("sr_{name}"));
        cmd_sample(&SampleConfig {
            checkpoint: summary.final_checkpoint.clone(),
            lr_dir: work.join("held_ds/lr"),
            condition,
            mapping: None,
            scale: 4,
            inference_steps: 100,
            seed: 0,
            out_dir: out.clone(),
        })?;
        let report = cmd_eval(&EvalConfig {
            sr_dir: out.clone(),
            hr_dir: work.join("held_ds/hr"),
            color: ColorSpace::Rgb,
            border: 4,
            lpips: None,
            out_dir: out,
        })?;
        println!(
            "{name:>8} condition: mean PSNR {:.2} dB, SSIM {:.4}",
            report.mean_psnr, report.mean_ssim
        );
    }
    Ok(())
}
