use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use diffsr::commands;
use diffsr::config::{CacheConditionsConfig, EvalConfig, MakeDatasetConfig, SampleConfig, TrainRunConfig};
use diffsr::denoiser::ArchitectureConfig;
use diffsr::metrics::ColorSpace;
use diffsr::training::TrainConfig;

/// Diffusion-based super-resolution refinement: data prep, training,
/// sampling and evaluation.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Crop HR PNGs into patches and synthesize bicubic LR counterparts.
    MakeDataset {
        #[arg(long)]
        hr_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        scale: usize,
        #[arg(long, default_value_t = 64)]
        patch: usize,
        /// Defaults to the patch size (non-overlapping tiles).
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write the condition image of every manifest entry to disk.
    CacheConditions {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        condition: ConditionArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train the denoiser.
    Train(TrainArgs),
    /// Super-resolve every PNG in a directory.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        lr_dir: PathBuf,
        #[command(flatten)]
        condition: ConditionArgs,
        #[arg(long, default_value_t = 4)]
        scale: usize,
        #[arg(long, default_value_t = 100)]
        inference_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score SR images against same-named HR images (PSNR, SSIM).
    Eval {
        #[arg(long)]
        sr_dir: PathBuf,
        #[arg(long)]
        hr_dir: PathBuf,
        /// rgb or y (BT.601 luma).
        #[arg(long, default_value = "rgb")]
        color: ColorSpace,
        /// Pixels cropped from each side before scoring; defaults to --scale.
        #[arg(long)]
        border: Option<usize>,
        #[arg(long, default_value_t = 4)]
        scale: usize,
        /// External perceptual metric command; receives `<sr.png> <hr.png>`
        /// and prints one number.
        #[arg(long, num_args = 1.., allow_hyphen_values = true)]
        lpips: Option<Vec<String>>,
        /// Report directory; defaults to --sr-dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConditionArgs {
    /// `bicubic` or `external:<dir>` (files matched by LR stem).
    #[arg(long, default_value = "bicubic")]
    condition: String,
    /// `id<TAB>path` overrides for external conditions.
    #[arg(long)]
    mapping: Option<PathBuf>,
}

/// Flags override values from --config, which override the defaults.
#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    condition: ConditionArgs,
    #[arg(long)]
    out_dir: PathBuf,
    /// TOML file with training fields and an optional [architecture] table.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    total_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    num_timesteps: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    base_channels: Option<usize>,
}

impl TrainArgs {
    fn resolve(self) -> diffsr::Result<TrainRunConfig> {
        let mut t = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { t.$field = v; } )* };
        }
        set!(total_steps, batch_size, learning_rate, seed, checkpoint_every, scale, patch_size, num_timesteps);
        if self.grad_clip.is_some() {
            t.grad_clip = self.grad_clip;
        }
        if let Some(b) = self.base_channels {
            t.architecture = ArchitectureConfig {
                base_channels: b,
                ..t.architecture
            };
        }
        Ok(TrainRunConfig {
            manifest: self.manifest,
            condition: self.condition.condition,
            mapping: self.condition.mapping,
            out_dir: self.out_dir,
            train: t,
        })
    }
}

fn run(cli: Cli) -> diffsr::Result<()> {
    match cli.command {
        Command::MakeDataset {
            hr_dir,
            scale,
            patch,
            stride,
            out_dir,
        } => {
            let manifest = commands::cmd_make_dataset(&MakeDatasetConfig {
                hr_dir,
                scale,
                patch,
                stride: stride.unwrap_or(patch),
                out_dir,
            })?;
            println!("{}", manifest.display());
        }
        Command::CacheConditions {
            manifest,
            condition,
            out_dir,
        } => {
            let out = commands::cmd_cache_conditions(&CacheConditionsConfig {
                manifest,
                condition: condition.condition,
                mapping: condition.mapping,
                out_dir,
            })?;
            println!("{} written, {} unchanged: {}", out.written, out.unchanged, out.manifest.display());
        }
        Command::Train(args) => {
            let summary = commands::cmd_train(&args.resolve()?)?;
            println!("{}", summary.final_checkpoint.display());
        }
        Command::Sample {
            checkpoint,
            lr_dir,
            condition,
            scale,
            inference_steps,
            seed,
            out_dir,
        } => {
            let written = commands::cmd_sample(&SampleConfig {
                checkpoint,
                lr_dir,
                condition: condition.condition,
                mapping: condition.mapping,
                scale,
                inference_steps,
                seed,
                out_dir,
            })?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Eval {
            sr_dir,
            hr_dir,
            color,
            border,
            scale,
            lpips,
            out_dir,
        } => {
            let report = commands::cmd_eval(&EvalConfig {
                out_dir: out_dir.unwrap_or_else(|| sr_dir.clone()),
                sr_dir,
                hr_dir,
                color,
                border: border.unwrap_or(scale),
                lpips,
            })?;
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
