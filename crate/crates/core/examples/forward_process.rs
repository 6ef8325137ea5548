//! Diffuses a fixed image many times and compares the empirical per-pixel
//! mean and variance with `α_t·x0` and `σ_t²`.
//!
//! ```text
//! cargo run --release --example forward_process -- [draws]
//! ```

use diffsr::diffusion::{forward_diffuse, NoiseDraw};
use diffsr::synthetic::synthetic_image;
use diffsr::NoiseSchedule;

fn main() -> diffsr::Result<()> {
    let n: usize = std::env::args().nth(1).map(|s| s.parse().expect("draws")).unwrap_or(5000);
    let schedule = NoiseSchedule::cosine(1000)?;
    let x0 = synthetic_image(1, 1, 8, 8).to_signed()?;

    println!("{:>5}  {:>8}  {:>8}  {:>14}  {:>14}", "t", "alpha", "sigma", "max |mean err|", "max var ratio-1");
    for t in [1, 100, 250, 500, 750, 999, 1000] {
        let mut sum = vec![0.0; x0.len()];
        let mut sq = vec![0.0; x0.len()];
        for k in 0..n {
            let eps = NoiseDraw::generate(7, k as u64, 1, 8, 8);
            let x = forward_diffuse(&x0, t, &eps, &schedule)?.x;
            for (i, v) in x.data().iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        let (a, s) = (schedule.alpha(t), schedule.sigma(t));
        let mut mean_err = 0.0f64;
        let mut var_err = 0.0f64;
        for i in 0..x0.len() {
            let m = sum[i] / n as f64;
            mean_err = mean_err.max((m - a * x0.data()[i]).abs());
            var_err = var_err.max(((sq[i] / n as f64 - m * m) / (s * s) - 1.0).abs());
        }
        println!("{t:>5}  {a:>8.5}  {s:>8.5}  {mean_err:>14.3e}  {var_err:>14.3e}");
    }
    println!("(mean error should scale like σ_t/√{n}; variance ratio like √(2/{n}))");
    Ok(())
}
