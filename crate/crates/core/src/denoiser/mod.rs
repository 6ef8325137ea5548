//! The conditional clean-image predictor `f(x_t, t, condition) → x̂₀`.

pub mod checkpoint;
pub mod embedding;
pub mod ops;
pub mod params;
pub mod unet;

use rayon::prelude::*;

pub use embedding::time_embedding;
pub use ops::Real;
pub use params::{ParamStore, Tensor};
pub use unet::{ArchitectureConfig, UNet};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, Range};
use ops::Feature;

/// Anything that can predict `x̂₀` from a latent, its timestep and a condition.
///
/// Implementations must be safe for concurrent read-only use.
pub trait Denoiser: Send + Sync {
    fn predict_x0(&self, x_t: &ImageTensor, t: usize, condition: &ImageTensor) -> Result<ImageTensor>;
}

/// Test double that ignores its inputs and returns a fixed image.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    ground_truth: ImageTensor,
}

impl OracleDenoiser {
    pub fn new(ground_truth: ImageTensor) -> Self {
        Self { ground_truth }
    }
}

impl Denoiser for OracleDenoiser {
    fn predict_x0(&self, _x_t: &ImageTensor, _t: usize, _condition: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.ground_truth.clone())
    }
}

pub(crate) fn to_feature<T: Real>(img: &ImageTensor) -> Feature<T> {
    let (c, h, w) = img.dims();
    Feature::from_vec(c, h, w, img.data().iter().map(|&v| T::of(v)).collect())
}

/// U-Net with its parameters.
#[derive(Debug, Clone)]
pub struct UNetDenoiser<T> {
    pub net: UNet,
    pub params: ParamStore<T>,
}

impl<T: Real> UNetDenoiser<T> {
    pub fn new(net: UNet, params: ParamStore<T>) -> Result<Self> {
        net.check_params(&params)?;
        Ok(Self { net, params })
    }
}

impl<T: Real> Denoiser for UNetDenoiser<T> {
    fn predict_x0(&self, x_t: &ImageTensor, t: usize, condition: &ImageTensor) -> Result<ImageTensor> {
        predict_x0(&self.net, &self.params, x_t, t, condition)
    }
}

/// Runs the network; the output is image-shaped, signed, and not clamped.
pub fn predict_x0<T: Real>(
    net: &UNet,
    params: &ParamStore<T>,
    x_t: &ImageTensor,
    t: usize,
    condition: &ImageTensor,
) -> Result<ImageTensor> {
    x_t.ensure_same_dims(condition)?;
    let (out, _) = net.forward(params, &to_feature(x_t), t, &to_feature(condition))?;
    let (c, h, w) = x_t.dims();
    ImageTensor::new(c, h, w, out.data.iter().map(|v| v.f64()).collect(), Range::Signed)
}

/// One supervised example for the clean-image objective.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub id: String,
    pub x_t: ImageTensor,
    pub t: usize,
    pub condition: ImageTensor,
    pub target: ImageTensor,
}

/// Mean absolute error between prediction and target over batch and pixels,
/// and its exact gradient with respect to every parameter (subgradient 0 at
/// ties).
///
/// Items are evaluated in parallel; their gradients are summed in batch
/// order, so results do not depend on the thread count.
pub fn loss_and_grad<T: Real>(
    net: &UNet,
    params: &ParamStore<T>,
    batch: &[TrainingExample],
) -> Result<(f64, ParamStore<T>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let pixels = batch[0].target.len();
    for ex in batch {
        ex.x_t.ensure_same_dims(&ex.condition)?;
        ex.x_t.ensure_same_dims(&ex.target)?;
        if ex.target.len() != pixels {
            return Err(Error::shape(
                format!("{pixels} values per item"),
                format!("{} values", ex.target.len()),
            ));
        }
    }
    let norm = 1.0 / (batch.len() * pixels) as f64;
    let per_item: Vec<Result<(f64, ParamStore<T>)>> = batch
        .par_iter()
        .map(|ex| {
            let (out, cache) = net.forward(params, &to_feature(&ex.x_t), ex.t, &to_feature(&ex.condition))?;
            let mut abs_sum = 0.0;
            let d_out: Vec<T> = out
                .data
                .iter()
                .zip(ex.target.data())
                .map(|(&p, &y)| {
                    let diff = p.f64() - y;
                    abs_sum += diff.abs();
                    let sign = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    T::of(sign * norm)
                })
                .collect();
            let d_out = Feature::from_vec(out.c, out.h, out.w, d_out);
            let mut grads = params.zeros_like();
            net.backward(params, &cache, &d_out, &mut grads);
            Ok((abs_sum, grads))
        })
        .collect();
    let mut total = 0.0;
    let mut grads = params.zeros_like();
    for item in per_item {
        let (abs_sum, g) = item?;
        total += abs_sum;
        grads.accumulate(&g);
    }
    Ok((total * norm, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn small_config() -> ArchitectureConfig {
        ArchitectureConfig {
            image_channels: 3,
            base_channels: 16,
            channel_multipliers: vec![1, 2],
            res_blocks: 1,
            time_embedding_dim: 16,
        }
    }

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> ImageTensor {
        let mut r = rng::stream_rng(seed, 5);
        ImageTensor::from_fn(c, h, w, Range::Signed, |_, _, _| 2.0 * rng::open_unit(&mut r) - 1.0).unwrap()
    }

    /// Random values in every tensor, including the zero-initialized output conv.
    fn randomize(params: &mut ParamStore<f64>, seed: u64) {
        let mut r = rng::stream_rng(seed, 77);
        for t in &mut params.tensors {
            let fan = (t.data.len() / t.shape[0].max(1)).max(1) as f64;
            for v in &mut t.data {
                let u = 2.0 * rng::open_unit(&mut r) - 1.0;
                *v = if t.name.ends_with("gamma") { 1.0 + 0.2 * u } else { u / fan.sqrt() };
            }
        }
    }

    #[test]
    fn oracle_ignores_inputs() {
        let g = random_image(1, 3, 4, 4);
        let o = OracleDenoiser::new(g.clone());
        let out = o.predict_x0(&random_image(2, 3, 4, 4), 17, &random_image(3, 3, 4, 4)).unwrap();
        assert_eq!(out, g);
    }

    #[test]
    fn zero_output_layer_predicts_zero() {
        let net = UNet::new(small_config(), 100).unwrap();
        let d = UNetDenoiser::new(net.clone(), net.init_params::<f32>(0)).unwrap();
        let out = d.predict_x0(&random_image(1, 3, 8, 8), 40, &random_image(2, 3, 8, 8)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let zero = UNetDenoiser::new(net.clone(), net.zero_params::<f32>()).unwrap();
        let out = zero.predict_x0(&random_image(1, 3, 8, 8), 40, &random_image(2, 3, 8, 8)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prediction_deterministic_and_shaped() {
        let net = UNet::new(small_config(), 100).unwrap();
        let mut p = net.init_params::<f64>(1);
        randomize(&mut p, 2);
        let x = random_image(1, 3, 8, 12);
        let c = random_image(2, 3, 8, 12);
        let a = predict_x0(&net, &p, &x, 55, &c).unwrap();
        let b = predict_x0(&net, &p, &x, 55, &c).unwrap();
        assert_eq!(a.dims(), (3, 8, 12));
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn condition_is_wired_in() {
        let net = UNet::new(small_config(), 100).unwrap();
        let mut p = net.init_params::<f64>(1);
        randomize(&mut p, 3);
        let x = random_image(1, 3, 8, 8);
        let c = random_image(2, 3, 8, 8);
        let zero = ImageTensor::filled(3, 8, 8, 0.0, Range::Signed);
        let a = predict_x0(&net, &p, &x, 10, &c).unwrap();
        let b = predict_x0(&net, &p, &x, 10, &zero).unwrap();
        let diff: f64 = a.data().iter().zip(b.data()).map(|(u, v)| (u - v).abs()).sum();
        assert!(diff > 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = UNet::new(small_config(), 100).unwrap();
        let p = net.init_params::<f32>(1);
        let ok = random_image(1, 3, 8, 8);
        assert!(predict_x0(&net, &p, &random_image(1, 3, 7, 8), 1, &random_image(2, 3, 7, 8)).is_err());
        assert!(predict_x0(&net, &p, &ok, 1, &random_image(2, 3, 8, 4)).is_err());
        assert!(predict_x0(&net, &p, &random_image(1, 1, 8, 8), 1, &random_image(2, 1, 8, 8)).is_err());
        assert!(predict_x0(&net, &p, &ok, 101, &ok).is_err());
        assert!(loss_and_grad(&net, &p, &[]).is_err());
    }

    fn example(seed: u64, t: usize) -> TrainingExample {
        TrainingExample {
            id: format!("e{seed}"),
            x_t: random_image(seed, 3, 8, 8),
            t,
            condition: random_image(seed + 100, 3, 8, 8),
            target: random_image(seed + 200, 3, 8, 8),
        }
    }

    #[test]
    fn zero_prediction_loss_is_mean_abs_target() {
        let net = UNet::new(small_config(), 100).unwrap();
        let p = net.init_params::<f64>(1);
        let batch = vec![example(1, 5), example(2, 80)];
        let (loss, _) = loss_and_grad(&net, &p, &batch).unwrap();
        let want: f64 = batch.iter().flat_map(|e| e.target.data()).map(|v| v.abs()).sum::<f64>() / (2.0 * 192.0);
        assert!((loss - want).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_bias_grad() {
        let net = UNet::new(small_config(), 100).unwrap();
        let mut p = net.init_params::<f64>(1);
        randomize(&mut p, 4);
        let mut ex = example(1, 30);
        ex.target = predict_x0(&net, &p, &ex.x_t, ex.t, &ex.condition).unwrap();
        let (loss, g) = loss_and_grad(&net, &p, &[ex]).unwrap();
        assert_eq!(loss, 0.0);
        let bias = g.find("conv_out.bias").unwrap();
        assert!(g.get(bias).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_same_loss_and_grads() {
        let net = UNet::new(small_config(), 100).unwrap();
        let mut p = net.init_params::<f64>(1);
        randomize(&mut p, 5);
        let batch = vec![example(1, 5), example(2, 60)];
        let doubled: Vec<_> = batch.iter().chain(&batch).cloned().collect();
        let (l1, g1) = loss_and_grad(&net, &p, &batch).unwrap();
        let (l2, g2) = loss_and_grad(&net, &p, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.values().zip(g2.values()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn every_tensor_receives_gradient() {
        let net = UNet::new(small_config(), 100).unwrap();
        let mut p = net.init_params::<f64>(1);
        randomize(&mut p, 6);
        let (_, g) = loss_and_grad(&net, &p, &[example(3, 42)]).unwrap();
        for t in &g.tensors {
            assert!(t.data.iter().any(|&v| v != 0.0), "{} has no gradient", t.name);
        }
    }
}
