//! Cosine noise schedule and inference timestep subsequences.
//!
//! The schedule holds `alpha_t = cos(π t / 2T)` and
//! `sigma_t = sqrt(1 - alpha_t²)` for `t = 0..=T`, precomputed once so that
//! the trainer and the sampler read identical values.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    num_timesteps: usize,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
    snr: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds the cosine schedule with `num_timesteps` diffusion steps.
    ///
    /// The terminal entry is pinned to `alpha_T = 0`, `sigma_T = 1` exactly
    /// (the raw cosine leaves a residue of about 6e-17), so that `x_T` is
    /// exactly the noise draw.
    pub fn cosine(num_timesteps: usize) -> Result<Self> {
        if num_timesteps == 0 {
            return Err(Error::InvalidArgument(
                "noise schedule needs at least one timestep".into(),
            ));
        }
        let t_max = num_timesteps as f64;
        let mut alpha = Vec::with_capacity(num_timesteps + 1);
        let mut sigma = Vec::with_capacity(num_timesteps + 1);
        let mut snr = Vec::with_capacity(num_timesteps + 1);
        for t in 0..=num_timesteps {
            let (a, s) = if t == 0 {
                (1.0, 0.0)
            } else if t == num_timesteps {
                (0.0, 1.0)
            } else {
                let a = (0.5 * std::f64::consts::PI * t as f64 / t_max).cos();
                (a, (1.0 - a * a).max(0.0).sqrt())
            };
            alpha.push(a);
            sigma.push(s);
            snr.push(if t == 0 {
                f64::INFINITY
            } else {
                a * a / (s * s)
            });
        }
        Ok(Self {
            num_timesteps,
            alpha,
            sigma,
            snr,
        })
    }

    /// `T`, the number of diffusion steps.
    pub fn num_timesteps(&self) -> usize {
        self.num_timesteps
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    /// Signal-to-noise ratio `alpha² / sigma²`; `+inf` at `t = 0`, `0` at `t = T`.
    pub fn snr(&self, t: usize) -> f64 {
        self.snr[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn snrs(&self) -> &[f64] {
        &self.snr
    }

    pub(crate) fn check_timestep(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.num_timesteps {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside {lo}..={}",
                self.num_timesteps
            )));
        }
        Ok(())
    }

    /// Variance of the one-step Markov transition `q(x_t | x_{t-1})`,
    /// `(1 - snr_t / snr_{t-1}) * sigma_t²`. Only meaningful for `2 <= t <= T`
    /// and used as a reference quantity when checking the forward process.
    pub fn transition_variance(&self, t: usize) -> f64 {
        assert!(t >= 2 && t <= self.num_timesteps, "t = {t}");
        (1.0 - self.snr[t] / self.snr[t - 1]) * self.sigma[t] * self.sigma[t]
    }
}

/// Strictly decreasing timesteps `T = τ_S > ... > τ_1 >= 1` visited by the
/// sampler; the final target after `τ_1` is always `0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestepSubsequence {
    steps: Vec<usize>,
}

impl TimestepSubsequence {
    /// Evenly spaced subsequence `τ_i = round(i T / S)` for `i = S..=1`.
    pub fn evenly_spaced(schedule: &NoiseSchedule, inference_steps: usize) -> Result<Self> {
        let t_max = schedule.num_timesteps();
        if inference_steps == 0 || inference_steps > t_max {
            return Err(Error::InvalidArgument(format!(
                "inference steps must be in 1..={t_max}, got {inference_steps}"
            )));
        }
        let stride = t_max as f64 / inference_steps as f64;
        // Consecutive unrounded values differ by at least 1, so rounding
        // never produces duplicates.
        let steps = (1..=inference_steps)
            .rev()
            .map(|i| (i as f64 * stride).round() as usize)
            .collect();
        Ok(Self { steps })
    }

    /// Builds a subsequence from explicit timesteps, validating the ordering.
    pub fn from_steps(schedule: &NoiseSchedule, steps: Vec<usize>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidArgument("empty timestep subsequence".into()));
        }
        if steps[0] != schedule.num_timesteps() {
            return Err(Error::InvalidArgument(format!(
                "subsequence must start at T = {}, starts at {}",
                schedule.num_timesteps(),
                steps[0]
            )));
        }
        if steps.windows(2).any(|w| w[1] >= w[0]) || *steps.last().unwrap() == 0 {
            return Err(Error::InvalidArgument(
                "subsequence must be strictly decreasing and positive".into(),
            ));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `(t, t_prev)` pairs, ending with `(τ_1, 0)`.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, self.steps.get(i + 1).copied().unwrap_or(0)))
    }
}
