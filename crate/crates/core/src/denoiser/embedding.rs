use crate::error::{Error, Result};

/// Sinusoidal embedding of normalized time `τ = t / T`.
///
/// For `k = 0..dim/2` the frequencies are `ω_k = π · 10000^(2k/dim)` and the
/// output interleaves `[sin(τ ω_0), cos(τ ω_0), sin(τ ω_1), cos(τ ω_1), ...]`.
/// Because `ω_0 = π`, the second component `cos(π τ)` is strictly decreasing
/// on `[0, 1]`, so distinct timesteps never collide.
pub fn time_embedding(t: usize, num_timesteps: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "time embedding dimension must be even and positive, got {dim}"
        )));
    }
    if num_timesteps == 0 || t > num_timesteps {
        return Err(Error::InvalidArgument(format!(
            "timestep {t} outside 0..={num_timesteps}"
        )));
    }
    let tau = t as f64 / num_timesteps as f64;
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for k in 0..half {
        let omega = std::f64::consts::PI * 10000f64.powf(2.0 * k as f64 / dim as f64);
        let phase = tau * omega;
        out.push(phase.sin());
        out.push(phase.cos());
    }
    Ok(out)
}
