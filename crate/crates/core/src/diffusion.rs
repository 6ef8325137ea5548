//! Forward noising and the deterministic reverse process.
//!
//! Forward: `x_t = alpha_t x_0 + sigma_t eps`.
//!
//! Reverse, from `t` to any `t_prev < t`, given a clean-image prediction
//! `x0_hat = f(x_t, t, condition)`:
//!
//! ```text
//! z_hat  = (x_t - alpha_t x0_hat) / sigma_t
//! x_prev = alpha_prev x0_hat + sigma_prev z_hat
//! ```
//!
//! No noise is injected after the initial `x_T` draw. Some published
//! pseudocode for this sampler draws a fresh `eps` at every step and then
//! never uses it; that draw is omitted here, so a sample is a pure function
//! of `(denoiser, condition, steps, seed)`.

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::image::{dims_str, ImageTensor, Range};
use crate::rng;
use crate::schedule::{NoiseSchedule, TimestepSubsequence};

/// A latent `x_t` tagged with its timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub x: ImageTensor,
    pub t: usize,
}

/// Standard-normal noise shaped like an image, together with its lineage.
///
/// `(seed, draw_index, shape)` determines the values bit-for-bit: the draw
/// index selects the ChaCha8 stream (see [`crate::rng`]).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub eps: ImageTensor,
    pub seed: u64,
    pub draw_index: u64,
}

impl NoiseDraw {
    pub fn generate(seed: u64, draw_index: u64, channels: usize, height: usize, width: usize) -> Self {
        let mut data = vec![0.0; channels * height * width];
        rng::fill_normal(&mut rng::stream_rng(seed, draw_index), &mut data);
        Self {
            eps: ImageTensor::new(channels, height, width, data, Range::Signed)
                .expect("normal draws are finite"),
            seed,
            draw_index,
        }
    }

    /// Wraps explicitly provided noise values (lineage unknown).
    pub fn from_values(eps: ImageTensor) -> Self {
        Self {
            eps,
            seed: 0,
            draw_index: u64::MAX,
        }
    }
}

fn check_signed(img: &ImageTensor) -> Result<()> {
    img.expect_range(Range::Signed)
}

/// `x_t = alpha_t x0 + sigma_t eps`; the result is not clamped.
pub fn forward_diffuse(
    x0: &ImageTensor,
    t: usize,
    eps: &NoiseDraw,
    schedule: &NoiseSchedule,
) -> Result<LatentState> {
    check_signed(x0)?;
    schedule.check_timestep(t, 1)?;
    x0.ensure_same_dims(&eps.eps)?;
    let (a, s) = (schedule.alpha(t), schedule.sigma(t));
    let data = x0
        .data()
        .iter()
        .zip(eps.eps.data())
        .map(|(x, e)| a * x + s * e)
        .collect();
    Ok(LatentState {
        x: x0.with_data(data)?,
        t,
    })
}

/// Noise implied by a clean-image estimate: `(x_t - alpha_t x0_hat) / sigma_t`.
pub fn estimate_noise(
    state: &LatentState,
    x0_hat: &ImageTensor,
    schedule: &NoiseSchedule,
) -> Result<ImageTensor> {
    schedule.check_timestep(state.t, 1)?;
    state.x.ensure_same_dims(x0_hat)?;
    let (a, s) = (schedule.alpha(state.t), schedule.sigma(state.t));
    let data = state
        .x
        .data()
        .iter()
        .zip(x0_hat.data())
        .map(|(x, p)| (x - a * p) / s)
        .collect();
    state.x.with_data(data)
}

/// One deterministic reverse step from `state.t` to `t_prev`.
pub fn ddim_step(
    state: &LatentState,
    x0_hat: &ImageTensor,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentState> {
    if state.t == 0 || t_prev >= state.t {
        return Err(Error::InvalidArgument(format!(
            "reverse step needs 0 <= t_prev < t, got t = {}, t_prev = {t_prev}",
            state.t
        )));
    }
    schedule.check_timestep(state.t, 1)?;
    if t_prev == 0 {
        state.x.ensure_same_dims(x0_hat)?;
        return Ok(LatentState {
            x: state.x.with_data(x0_hat.data().to_vec())?,
            t: 0,
        });
    }
    let z_hat = estimate_noise(state, x0_hat, schedule)?;
    let (a, s) = (schedule.alpha(t_prev), schedule.sigma(t_prev));
    let data = x0_hat
        .data()
        .iter()
        .zip(z_hat.data())
        .map(|(p, z)| a * p + s * z)
        .collect();
    Ok(LatentState {
        x: state.x.with_data(data)?,
        t: t_prev,
    })
}

/// Draw index of the terminal latent `x_T` for a given sample stream.
pub fn prior_draw_index(stream: u64) -> u64 {
    rng::streams::SAMPLING_BASE.wrapping_add(stream)
}

/// Runs the full deterministic reverse process and returns the clamped
/// clean-image estimate.
///
/// `x_T` is drawn once from `(seed, prior_draw_index(0))`; use
/// [`sample_with_stream`] to give independent images independent priors.
pub fn sample(
    denoiser: &dyn Denoiser,
    condition: &ImageTensor,
    schedule: &NoiseSchedule,
    steps: &TimestepSubsequence,
    seed: u64,
) -> Result<ImageTensor> {
    sample_with_stream(denoiser, condition, schedule, steps, seed, 0)
}

pub fn sample_with_stream(
    denoiser: &dyn Denoiser,
    condition: &ImageTensor,
    schedule: &NoiseSchedule,
    steps: &TimestepSubsequence,
    seed: u64,
    stream: u64,
) -> Result<ImageTensor> {
    check_signed(condition)?;
    let (c, h, w) = condition.dims();
    let prior = NoiseDraw::generate(seed, prior_draw_index(stream), c, h, w);
    sample_from(denoiser, condition, schedule, steps, prior.eps)
}

/// Reverse process starting from an explicit `x_T`.
pub fn sample_from(
    denoiser: &dyn Denoiser,
    condition: &ImageTensor,
    schedule: &NoiseSchedule,
    steps: &TimestepSubsequence,
    x_t: ImageTensor,
) -> Result<ImageTensor> {
    check_signed(condition)?;
    if !x_t.same_dims(condition) {
        return Err(Error::shape(dims_str(x_t.dims()), dims_str(condition.dims())));
    }
    if steps.steps().first() != Some(&schedule.num_timesteps()) {
        return Err(Error::InvalidArgument(
            "timestep subsequence does not start at T".into(),
        ));
    }
    let mut state = LatentState {
        x: x_t,
        t: schedule.num_timesteps(),
    };
    for (t, t_prev) in steps.transitions() {
        debug_assert_eq!(state.t, t);
        let x0_hat = denoiser.predict_x0(&state.x, t, condition)?;
        if !x0_hat.same_dims(&state.x) {
            return Err(Error::shape(dims_str(state.x.dims()), dims_str(x0_hat.dims())));
        }
        state = ddim_step(&state, &x0_hat, t_prev, schedule)?;
    }
    Ok(state.x.clamped())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::OracleDenoiser;

    fn random_signed(seed: u64, c: usize, h: usize, w: usize) -> ImageTensor {
        let mut rng = rng::stream_rng(seed, 99);
        ImageTensor::from_fn(c, h, w, Range::Signed, |_, _, _| {
            2.0 * rng::open_unit(&mut rng) - 1.0
        })
        .unwrap()
    }

    fn max_abs(a: &ImageTensor, b: &ImageTensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn noise_draw_reproducible() {
        let a = NoiseDraw::generate(5, 2, 3, 4, 4);
        let b = NoiseDraw::generate(5, 2, 3, 4, 4);
        assert_eq!(a, b);
        assert_ne!(a.eps, NoiseDraw::generate(5, 3, 3, 4, 4).eps);
    }

    #[test]
    fn forward_reductions() {
        let s = NoiseSchedule::cosine(1000).unwrap();
        let x0 = random_signed(1, 3, 4, 4);
        let zero = NoiseDraw::from_values(ImageTensor::filled(3, 4, 4, 0.0, Range::Signed));
        let xt = forward_diffuse(&x0, 300, &zero, &s).unwrap();
        for (a, b) in xt.x.data().iter().zip(x0.data()) {
            assert_eq!(*a, s.alpha(300) * b);
        }
        let eps = NoiseDraw::generate(3, 0, 3, 4, 4);
        let zeros = ImageTensor::filled(3, 4, 4, 0.0, Range::Signed);
        let xt = forward_diffuse(&zeros, 300, &eps, &s).unwrap();
        for (a, b) in xt.x.data().iter().zip(eps.eps.data()) {
            assert_eq!(*a, s.sigma(300) * b);
        }
        let xt = forward_diffuse(&x0, 1000, &eps, &s).unwrap();
        assert_eq!(xt.x.data(), eps.eps.data());
    }

    #[test]
    fn forward_errors() {
        let s = NoiseSchedule::cosine(10).unwrap();
        let x0 = random_signed(1, 1, 4, 4);
        let eps = NoiseDraw::generate(0, 0, 1, 4, 4);
        assert!(forward_diffuse(&x0, 0, &eps, &s).is_err());
        assert!(forward_diffuse(&x0, 11, &eps, &s).is_err());
        let wrong = NoiseDraw::generate(0, 0, 1, 4, 5);
        assert!(forward_diffuse(&x0, 5, &wrong, &s).is_err());
        assert!(forward_diffuse(&x0.to_unit().unwrap(), 5, &eps, &s).is_err());
    }

    #[test]
    fn estimate_noise_inverts_forward() {
        let s = NoiseSchedule::cosine(1000).unwrap();
        let x0 = random_signed(2, 3, 4, 4);
        let eps = NoiseDraw::generate(4, 0, 3, 4, 4);
        let xt = forward_diffuse(&x0, 640, &eps, &s).unwrap();
        let z = estimate_noise(&xt, &x0, &s).unwrap();
        assert!(max_abs(&z, &eps.eps) < 1e-12);

        let scaled = xt
            .x
            .with_data(xt.x.data().iter().map(|v| v / s.alpha(640)).collect())
            .unwrap();
        let z = estimate_noise(&xt, &scaled, &s).unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 1e-12));

        let state = LatentState {
            x: random_signed(8, 3, 4, 4),
            t: 1000,
        };
        let z = estimate_noise(&state, &random_signed(9, 3, 4, 4), &s).unwrap();
        assert_eq!(z.data(), state.x.data());

        let at_zero = LatentState { x: x0.clone(), t: 0 };
        assert!(estimate_noise(&at_zero, &x0, &s).is_err());
    }

    #[test]
    fn ddim_step_to_zero_returns_prediction() {
        let s = NoiseSchedule::cosine(1000).unwrap();
        let state = LatentState {
            x: random_signed(1, 3, 4, 4),
            t: 10,
        };
        let pred = random_signed(2, 3, 4, 4);
        let out = ddim_step(&state, &pred, 0, &s).unwrap();
        assert_eq!(out.x.data(), pred.data());
        assert_eq!(out.t, 0);
    }

    #[test]
    fn ddim_step_with_true_x0_follows_forward_marginal() {
        let s = NoiseSchedule::cosine(1000).unwrap();
        let x0 = random_signed(1, 3, 4, 4);
        let eps = NoiseDraw::generate(4, 0, 3, 4, 4);
        let xt = forward_diffuse(&x0, 900, &eps, &s).unwrap();
        let out = ddim_step(&xt, &x0, 350, &s).unwrap();
        let direct = forward_diffuse(&x0, 350, &eps, &s).unwrap();
        assert!(max_abs(&out.x, &direct.x) < 1e-12);
    }

    #[test]
    fn ddim_step_errors() {
        let s = NoiseSchedule::cosine(100).unwrap();
        let x = random_signed(1, 1, 4, 4);
        let st = LatentState { x: x.clone(), t: 10 };
        assert!(ddim_step(&st, &x, 10, &s).is_err());
        assert!(ddim_step(&st, &x, 11, &s).is_err());
        let st0 = LatentState { x: x.clone(), t: 0 };
        assert!(ddim_step(&st0, &x, 0, &s).is_err());
    }

    /// Scalar recomputation of the two-step composition.
    #[test]
    fn two_steps_compose_into_one() {
        let s = NoiseSchedule::cosine(1000).unwrap();
        for &(t, m, p) in &[(1000usize, 600usize, 200usize), (700, 699, 1), (50, 20, 10)] {
            let x = random_signed(t as u64, 1, 4, 4);
            let pred = random_signed(7, 1, 4, 4);
            let st = LatentState { x: x.clone(), t };
            let two = ddim_step(&ddim_step(&st, &pred, m, &s).unwrap(), &pred, p, &s).unwrap();
            let one = ddim_step(&st, &pred, p, &s).unwrap();
            for i in 0..16 {
                let (xv, pv) = (x.data()[i], pred.data()[i]);
                let z = (xv - s.alpha(t) * pv) / s.sigma(t);
                let expected = s.alpha(p) * pv + s.sigma(p) * z;
                assert!((two.x.data()[i] - expected).abs() < 1e-12);
                assert!((one.x.data()[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_sampling_recovers_target() {
        let s = NoiseSchedule::cosine(1000).unwrap();
        let g = random_signed(3, 3, 8, 8);
        let oracle = OracleDenoiser::new(g.clone());
        let cond = random_signed(4, 3, 8, 8);
        for n in [1, 7, 100, 1000] {
            let steps = TimestepSubsequence::evenly_spaced(&s, n).unwrap();
            let out = sample(&oracle, &cond, &s, &steps, 42).unwrap();
            assert!(max_abs(&out, &g) < 1e-6);
        }
    }

    #[test]
    fn oracle_output_is_clamped() {
        let s = NoiseSchedule::cosine(10).unwrap();
        let g = ImageTensor::new(1, 1, 2, vec![-1.0, 1.0], Range::Signed)
            .unwrap()
            .with_data(vec![-3.0, 0.25])
            .unwrap();
        let out = sample(
            &OracleDenoiser::new(g.clone()),
            &ImageTensor::filled(1, 1, 2, 0.0, Range::Signed),
            &s,
            &TimestepSubsequence::evenly_spaced(&s, 3).unwrap(),
            1,
        )
        .unwrap();
        assert_eq!(out.data(), &[-1.0, 0.25]);
    }

    #[test]
    fn sample_rejects_mismatched_prior() {
        let s = NoiseSchedule::cosine(10).unwrap();
        let g = random_signed(3, 1, 4, 4);
        let steps = TimestepSubsequence::evenly_spaced(&s, 2).unwrap();
        let err = sample_from(
            &OracleDenoiser::new(g.clone()),
            &g,
            &s,
            &steps,
            random_signed(1, 1, 4, 8),
        );
        assert!(err.is_err());
    }
}
