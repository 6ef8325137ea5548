//! Runs the deterministic reverse process with a denoiser that always
//! returns the ground truth: every step count recovers `x0` exactly, and the
//! latent trajectory interpolates from noise to the image.

use diffsr::denoiser::{Denoiser, OracleDenoiser};
use diffsr::diffusion::{ddim_step, sample, LatentState, NoiseDraw};
use diffsr::synthetic::synthetic_image;
use diffsr::{NoiseSchedule, TimestepSubsequence};

fn main() -> diffsr::Result<()> {
    let schedule = NoiseSchedule::cosine(1000)?;
    let x0 = synthetic_image(11, 3, 16, 16).to_signed()?;
    let oracle = OracleDenoiser::new(x0.clone());
    let cond = x0.clone();

    for steps in [1, 2, 10, 100, 1000] {
        let seq = TimestepSubsequence::evenly_spaced(&schedule, steps)?;
        let out = sample(&oracle, &cond, &schedule, &seq, 0)?;
        let err = out.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("{steps:>5} steps: max |x̂ - x0| = {err:.3e}");
    }

    // manual trajectory: distance to x0 shrinks like sigma_t
    let seq = TimestepSubsequence::evenly_spaced(&schedule, 10)?;
    let mut state = LatentState {
        x: NoiseDraw::generate(0, 1, 3, 16, 16).eps,
        t: 1000,
    };
    println!("\n{:>5}  {:>10}  {:>14}", "t", "sigma_t", "rms(x_t - α_t·x0)");
    for (t, t_prev) in seq.transitions() {
        let x0_hat = oracle.predict_x0(&state.x, t, &cond)?;
        state = ddim_step(&state, &x0_hat, t_prev, &schedule)?;
        let a = schedule.alpha(state.t);
        let rms = (state.x.data().iter().zip(x0.data()).map(|(x, y)| (x - a * y).powi(2)).sum::<f64>()
            / x0.len() as f64)
            .sqrt();
        println!("{:>5}  {:>10.5}  {:>14.5}", state.t, schedule.sigma(state.t), rms);
    }
    Ok(())
}
