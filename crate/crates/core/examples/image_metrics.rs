//! PSNR and SSIM under the RGB and luma protocols, on closed-form cases and
//! on progressively noisier copies of an image.

use diffsr::image::{ImageTensor, Range};
use diffsr::metrics::{psnr, ssim, ColorSpace, Protocol};
use diffsr::rng::{fill_normal, stream_rng};
use diffsr::synthetic::synthetic_image;

fn main() -> diffsr::Result<()> {
    let raw = Protocol { color: ColorSpace::Rgb, border: 0 };
    let flat = |v| ImageTensor::filled(3, 16, 16, v, Range::Unit);
    println!("constants 0 vs 1:     {:.4} dB", psnr(&flat(0.0), &flat(1.0), &raw)?);
    println!("constants 0.25 vs 0.75: {:.4} dB", psnr(&flat(0.25), &flat(0.75), &raw)?);
    println!("identical:            {} dB", psnr(&flat(0.3), &flat(0.3), &raw)?);

    let img = synthetic_image(5, 3, 64, 64);
    let luma = Protocol { color: ColorSpace::Y, border: 4 };
    let rgb = Protocol::for_scale(4);
    println!("\n{:>6}  {:>10}  {:>8}  {:>10}  {:>8}", "noise", "PSNR rgb", "SSIM rgb", "PSNR y", "SSIM y");
    for sd in [0.0, 0.01, 0.03, 0.1, 0.3] {
        let mut n = vec![0.0; img.len()];
        fill_normal(&mut stream_rng(1, 0), &mut n);
        let noisy = img
            .with_data(img.data().iter().zip(&n).map(|(v, e)| v + sd * e).collect())?
            .clamped();
        println!(
            "{sd:>6}  {:>10.3}  {:>8.4}  {:>10.3}  {:>8.4}",
            psnr(&noisy, &img, &rgb)?,
            ssim(&noisy, &img, &rgb)?,
            psnr(&noisy, &img, &luma)?,
            ssim(&noisy, &img, &luma)?
        );
    }
    Ok(())
}
