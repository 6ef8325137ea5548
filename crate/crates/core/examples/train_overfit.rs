//! Overfits the denoiser to one 32×32 patch (×4, bicubic condition), then
//! super-resolves that patch's LR with 100 deterministic steps and compares
//! against plain bicubic upscaling.
//!
//! ```text
//! cargo run --release --example train_overfit -- [steps] [out_dir]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use diffsr::conditioning::ConditionSource;
use diffsr::denoiser::UNetDenoiser;
use diffsr::diffusion::sample;
use diffsr::image::{bicubic_resize, save_image, PatchPair};
use diffsr::metrics::{psnr, Protocol};
use diffsr::synthetic::synthetic_image;
use diffsr::training::{prepare_pairs, TrainConfig, Trainer};
use diffsr::TimestepSubsequence;

fn main() -> diffsr::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse().expect("steps")).unwrap_or(2000);
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| "overfit_out".into()));

    let hr = synthetic_image(42, 3, 32, 32);
    let pair = PatchPair::from_hr("patch", hr.clone(), 4)?;
    let data = prepare_pairs(&[pair.clone()], &ConditionSource::Bicubic)?;
    let config = TrainConfig {
        total_steps: steps,
        batch_size: 4,
        learning_rate: 1e-4,
        scale: 4,
        patch_size: 32,
        num_timesteps: 1000,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::<f32>::new(config)?;
    let start = Instant::now();
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let out = trainer.sample_and_step(&data)?;
        losses.push(out.loss);
        if out.step % 100 == 0 {
            let window = &losses[losses.len() - 100..];
            println!(
                "step {:5}  mean loss (last 100) {:.5}  {:.1}s",
                out.step,
                window.iter().sum::<f64>() / 100.0,
                start.elapsed().as_secs_f64()
            );
        }
    }
    if steps >= 200 {
        let first = losses[..100].iter().sum::<f64>() / 100.0;
        let last = losses[steps - 100..].iter().sum::<f64>() / 100.0;
        println!("first-100 mean {first:.5}, last-100 mean {last:.5}, ratio {:.3}", last / first);
    }

    let denoiser = UNetDenoiser::new(trainer.net.clone(), trainer.params.clone())?;
    let steps100 = TimestepSubsequence::evenly_spaced(&trainer.schedule, 100)?;
    let sr = sample(&denoiser, &data[0].condition, &trainer.schedule, &steps100, 0)?.to_unit()?;
    let bicubic = bicubic_resize(&pair.lr, 32, 32)?;
    for protocol in [Protocol::for_scale(4), Protocol::for_scale(0)] {
        println!(
            "[{protocol}] PSNR sample {:.2} dB, bicubic {:.2} dB",
            psnr(&sr, &hr, &protocol)?,
            psnr(&bicubic, &hr, &protocol)?
        );
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| diffsr::Error::Io { path: out_dir.clone(), source: e })?;
    save_image(&hr, out_dir.join("hr.png"))?;
    save_image(&bicubic, out_dir.join("bicubic.png"))?;
    save_image(&sr, out_dir.join("sample.png"))?;
    println!("images in {}", out_dir.display());
    Ok(())
}
