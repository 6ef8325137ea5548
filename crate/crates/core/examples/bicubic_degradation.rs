//! Builds an HR/LR pair by bicubic downscaling and measures how much a plain
//! bicubic upscale recovers, at several scales.
//!
//! ```text
//! cargo run --example bicubic_degradation -- [out_dir]
//! ```

use std::path::PathBuf;

use diffsr::image::{bicubic_resize, save_image, PatchPair};
use diffsr::metrics::{psnr, ssim, Protocol};
use diffsr::synthetic::synthetic_image;

fn main() -> diffsr::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "bicubic_out".into()));
    std::fs::create_dir_all(&out).map_err(|e| diffsr::Error::Io { path: out.clone(), source: e })?;
    let hr = synthetic_image(2024, 3, 96, 96);
    save_image(&hr, out.join("hr.png"))?;
    for scale in [2, 3, 4] {
        let pair = PatchPair::from_hr("demo", hr.clone(), scale)?;
        let up = bicubic_resize(&pair.lr, 96, 96)?;
        let protocol = Protocol::for_scale(scale);
        println!(
            "x{scale}: LR {}x{}  bicubic PSNR {:.2} dB  SSIM {:.4}  [{protocol}]",
            pair.lr.height(),
            pair.lr.width(),
            psnr(&up, &hr, &protocol)?,
            ssim(&up, &hr, &protocol)?
        );
        save_image(&pair.lr, out.join(format!("lr_x{scale}.png")))?;
        save_image(&up, out.join(format!("bicubic_x{scale}.png")))?;
    }
    println!("images in {}", out.display());
    Ok(())
}
