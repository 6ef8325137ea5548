//! Procedural test imagery.
//!
//! Deterministic "natural-ish" images built from soft color blobs, oriented
//! gratings and a blurred edge, so that examples and tests can run without
//! downloading an image set. Content varies smoothly at several scales,
//! which is what makes super-resolution non-trivial.

use std::f64::consts::PI;

use rand::Rng;

use crate::image::{ImageTensor, Range};
use crate::rng;

/// Stream reserved for procedural images.
const SYNTHETIC_STREAM: u64 = 7;

struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    color: [f64; 3],
}

struct Grating {
    freq: f64,
    angle: f64,
    phase: f64,
    amp: [f64; 3],
}

/// A `channels × height × width` unit-range image fully determined by `seed`.
pub fn synthetic_image(seed: u64, channels: usize, height: usize, width: usize) -> ImageTensor {
    let mut r = rng::stream_rng(seed, SYNTHETIC_STREAM);
    let size = height.max(width) as f64;
    let base: [f64; 3] = [r.gen_range(0.2..0.8), r.gen_range(0.2..0.8), r.gen_range(0.2..0.8)];
    let blobs: Vec<Blob> = (0..r.gen_range(3..7))
        .map(|_| Blob {
            cy: r.gen_range(0.0..height as f64),
            cx: r.gen_range(0.0..width as f64),
            radius: r.gen_range(0.08..0.35) * size,
            color: [r.gen_range(-0.4..0.4), r.gen_range(-0.4..0.4), r.gen_range(-0.4..0.4)],
        })
        .collect();
    let gratings: Vec<Grating> = (0..2)
        .map(|_| Grating {
            // cycles per pixel, kept well under LR Nyquist for x4 at the low end
            freq: r.gen_range(0.01..0.12),
            angle: r.gen_range(0.0..PI),
            phase: r.gen_range(0.0..2.0 * PI),
            amp: [r.gen_range(0.0..0.12), r.gen_range(0.0..0.12), r.gen_range(0.0..0.12)],
        })
        .collect();
    let edge_angle: f64 = r.gen_range(0.0..2.0 * PI);
    let edge_offset = r.gen_range(-0.3..0.3) * size;
    let edge_width = r.gen_range(0.5..3.0);
    let edge_amp: [f64; 3] = [r.gen_range(-0.3..0.3), r.gen_range(-0.3..0.3), r.gen_range(-0.3..0.3)];

    ImageTensor::from_fn(channels, height, width, Range::Unit, |c, y, x| {
        let k = c % 3;
        let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
        let mut v = base[k];
        for b in &blobs {
            let d2 = (fy - b.cy).powi(2) + (fx - b.cx).powi(2);
            v += b.color[k] * (-d2 / (2.0 * b.radius * b.radius)).exp();
        }
        for g in &gratings {
            let u = fx * g.angle.cos() + fy * g.angle.sin();
            v += g.amp[k] * (2.0 * PI * g.freq * u + g.phase).sin();
        }
        let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
        let s = (fx - cx) * edge_angle.cos() + (fy - cy) * edge_angle.sin() - edge_offset;
        v += edge_amp[k] * (s / edge_width).tanh();
        0.02 + 0.96 * v.clamp(0.0, 1.0)
    })
    .expect("procedural pixels are finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = synthetic_image(5, 3, 24, 40);
        assert_eq!(a, synthetic_image(5, 3, 24, 40));
        assert_ne!(a, synthetic_image(6, 3, 24, 40));
        assert_eq!(a.dims(), (3, 24, 40));
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn not_flat() {
        let a = synthetic_image(1, 1, 32, 32);
        let mean = a.data().iter().sum::<f64>() / a.len() as f64;
        let var = a.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / a.len() as f64;
        assert!(var > 1e-4);
    }
}
