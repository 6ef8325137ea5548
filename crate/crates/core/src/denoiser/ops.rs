//! Layer primitives with explicit backward passes.
//!
//! Feature maps are single-sample `C × H × W` buffers. Backward functions
//! accumulate parameter gradients into caller-provided slices (`+=`) and
//! return the input gradient.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of network parameters and activations.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Sum + Send + Sync + 'static
{
    /// `C = alpha * A B + beta * C` with arbitrary row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite")
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, (rs, cs): (usize, usize)) {
    if rows > 0 && cols > 0 {
        assert!((rows - 1) * rs + (cols - 1) * cs < len, "gemm operand too short");
    }
}

macro_rules! impl_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, c_strides);
                // SAFETY: extents checked above; `c` is exclusively borrowed.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Single-sample activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Feature<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }
}

/// Geometry of a square convolution with zero padding `k / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.kernel / 2;
        (
            (h + 2 * pad - self.kernel) / self.stride + 1,
            (w + 2 * pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }
}

fn im2col<T: Real>(x: &Feature<T>, s: &ConvShape, oh: usize, ow: usize) -> Vec<T> {
    let k = s.kernel;
    let pad = (k / 2) as isize;
    let mut cols = vec![T::zero(); s.c_in * k * k * oh * ow];
    for c in 0..s.c_in {
        let plane = &x.data[c * x.h * x.w..][..x.h * x.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * oh * ow..][..oh * ow];
                for oy in 0..oh {
                    let iy = (oy * s.stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * x.w..][..x.w];
                    let dst = &mut row[oy * ow..][..ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s.stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < x.w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], s: &ConvShape, h: usize, w: usize, oh: usize, ow: usize) -> Feature<T> {
    let k = s.kernel;
    let pad = (k / 2) as isize;
    let mut dx = Feature::zeros(s.c_in, h, w);
    for c in 0..s.c_in {
        let plane = &mut dx.data[c * h * w..][..h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * oh * ow..][..oh * ow];
                for oy in 0..oh {
                    let iy = (oy * s.stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..][..w];
                    for ox in 0..ow {
                        let ix = (ox * s.stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Convolution; `weight` is `[c_out, c_in, k, k]`, `bias` is `[c_out]`.
pub fn conv2d<T: Real>(x: &Feature<T>, s: &ConvShape, weight: &[T], bias: &[T]) -> Feature<T> {
    assert_eq!(x.c, s.c_in, "conv input channels");
    let (oh, ow) = s.out_size(x.h, x.w);
    let n = oh * ow;
    let kk = s.c_in * s.kernel * s.kernel;
    let mut out = Feature::zeros(s.c_out, oh, ow);
    for (o, row) in out.data.chunks_exact_mut(n).enumerate() {
        row.fill(bias[o]);
    }
    let cols;
    let b: &[T] = if s.is_pointwise() {
        &x.data
    } else {
        cols = im2col(x, s, oh, ow);
        &cols
    };
    T::gemm(s.c_out, kk, n, weight, (kk, 1), b, (n, 1), T::one(), &mut out.data, (n, 1));
    out
}

/// Backward of [`conv2d`] given the forward input `x` and output gradient `dy`.
pub fn conv2d_backward<T: Real>(
    x: &Feature<T>,
    s: &ConvShape,
    weight: &[T],
    dy: &Feature<T>,
    dweight: &mut [T],
    dbias: &mut [T],
) -> Feature<T> {
    let (oh, ow) = (dy.h, dy.w);
    let n = oh * ow;
    let kk = s.c_in * s.kernel * s.kernel;
    for (o, row) in dy.data.chunks_exact(n).enumerate() {
        dbias[o] = dbias[o] + row.iter().copied().sum::<T>();
    }
    let cols;
    let b: &[T] = if s.is_pointwise() {
        &x.data
    } else {
        cols = im2col(x, s, oh, ow);
        &cols
    };
    // dW[c_out, kk] += dY[c_out, n] · cols[kk, n]^T
    T::gemm(s.c_out, n, kk, &dy.data, (n, 1), b, (1, n), T::one(), dweight, (kk, 1));
    // dcols[kk, n] = W[c_out, kk]^T · dY[c_out, n]
    let mut dcols = vec![T::zero(); kk * n];
    T::gemm(kk, s.c_out, n, weight, (1, kk), &dy.data, (n, 1), T::zero(), &mut dcols, (n, 1));
    if s.is_pointwise() {
        Feature::from_vec(s.c_in, x.h, x.w, dcols)
    } else {
        col2im(&dcols, s, x.h, x.w, oh, ow)
    }
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Per-group statistics saved for the backward pass.
#[derive(Debug, Clone)]
pub struct GroupStats<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Group normalization with per-channel affine parameters.
pub fn group_norm<T: Real>(
    x: &Feature<T>,
    groups: usize,
    gamma: &[T],
    beta: &[T],
) -> (Feature<T>, GroupStats<T>) {
    assert_eq!(x.c % groups, 0, "channels divisible by groups");
    let cpg = x.c / groups;
    let hw = x.hw();
    let count = T::of((cpg * hw) as f64);
    let eps = T::of(GROUP_NORM_EPS);
    let mut out = Feature::zeros(x.c, x.h, x.w);
    let mut stats = GroupStats {
        mean: Vec::with_capacity(groups),
        inv_std: Vec::with_capacity(groups),
    };
    for g in 0..groups {
        let span = &x.data[g * cpg * hw..][..cpg * hw];
        let mean = span.iter().copied().sum::<T>() / count;
        let var = span.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let inv_std = T::one() / (var + eps).sqrt();
        for ci in 0..cpg {
            let c = g * cpg + ci;
            let src = &x.data[c * hw..][..hw];
            let dst = &mut out.data[c * hw..][..hw];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d = (v - mean) * inv_std * gamma[c] + beta[c];
            }
        }
        stats.mean.push(mean);
        stats.inv_std.push(inv_std);
    }
    (out, stats)
}

pub fn group_norm_backward<T: Real>(
    x: &Feature<T>,
    stats: &GroupStats<T>,
    gamma: &[T],
    dy: &Feature<T>,
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Feature<T> {
    let groups = stats.mean.len();
    let cpg = x.c / groups;
    let hw = x.hw();
    let count = T::of((cpg * hw) as f64);
    let mut dx = Feature::zeros(x.c, x.h, x.w);
    for g in 0..groups {
        let (mean, inv_std) = (stats.mean[g], stats.inv_std[g]);
        // dxhat = dy * gamma; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for ci in 0..cpg {
            let c = g * cpg + ci;
            let xs = &x.data[c * hw..][..hw];
            let ds = &dy.data[c * hw..][..hw];
            let mut dg = T::zero();
            let mut db = T::zero();
            for (&xv, &dv) in xs.iter().zip(ds) {
                let xhat = (xv - mean) * inv_std;
                dg = dg + dv * xhat;
                db = db + dv;
                let dxhat = dv * gamma[c];
                sum_d = sum_d + dxhat;
                sum_dx = sum_dx + dxhat * xhat;
            }
            dgamma[c] = dgamma[c] + dg;
            dbeta[c] = dbeta[c] + db;
        }
        let mean_d = sum_d / count;
        let mean_dx = sum_dx / count;
        for ci in 0..cpg {
            let c = g * cpg + ci;
            let xs = &x.data[c * hw..][..hw];
            let ds = &dy.data[c * hw..][..hw];
            let out = &mut dx.data[c * hw..][..hw];
            for ((o, &xv), &dv) in out.iter_mut().zip(xs).zip(ds) {
                let xhat = (xv - mean) * inv_std;
                *o = inv_std * (dv * gamma[c] - mean_d - xhat * mean_dx);
            }
        }
    }
    dx
}

#[inline]
fn sigmoid<T: Real>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn silu<T: Real>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

pub fn silu_backward<T: Real>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * s * (T::one() + v * (T::one() - s))
        })
        .collect()
}

pub fn silu_feature<T: Real>(x: &Feature<T>) -> Feature<T> {
    Feature::from_vec(x.c, x.h, x.w, silu(&x.data))
}

pub fn silu_feature_backward<T: Real>(x: &Feature<T>, dy: &Feature<T>) -> Feature<T> {
    Feature::from_vec(x.c, x.h, x.w, silu_backward(&x.data, &dy.data))
}

/// Dense layer; `weight` is `[out, in]`.
pub fn linear<T: Real>(x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let (n_out, n_in) = (bias.len(), x.len());
    assert_eq!(weight.len(), n_out * n_in);
    weight
        .chunks_exact(n_in)
        .zip(bias)
        .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &v)| acc + w * v))
        .collect()
}

pub fn linear_backward<T: Real>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let n_in = x.len();
    let mut dx = vec![T::zero(); n_in];
    for (o, &d) in dy.iter().enumerate() {
        dbias[o] = dbias[o] + d;
        let row = &weight[o * n_in..][..n_in];
        let drow = &mut dweight[o * n_in..][..n_in];
        for i in 0..n_in {
            drow[i] = drow[i] + d * x[i];
            dx[i] = dx[i] + d * row[i];
        }
    }
    dx
}

pub fn upsample_nearest2<T: Real>(x: &Feature<T>) -> Feature<T> {
    let (h2, w2) = (2 * x.h, 2 * x.w);
    let mut out = Feature::zeros(x.c, h2, w2);
    for c in 0..x.c {
        for y in 0..h2 {
            for xx in 0..w2 {
                out.data[(c * h2 + y) * w2 + xx] = x.data[(c * x.h + y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2_backward<T: Real>(dy: &Feature<T>) -> Feature<T> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut dx = Feature::zeros(dy.c, h, w);
    for c in 0..dy.c {
        for y in 0..dy.h {
            for xx in 0..dy.w {
                let i = (c * h + y / 2) * w + xx / 2;
                dx.data[i] = dx.data[i] + dy.data[(c * dy.h + y) * dy.w + xx];
            }
        }
    }
    dx
}

/// Channel concatenation `[a ‖ b]`.
pub fn concat<T: Real>(a: &Feature<T>, b: &Feature<T>) -> Feature<T> {
    assert_eq!((a.h, a.w), (b.h, b.w), "concat spatial dims");
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Feature::from_vec(a.c + b.c, a.h, a.w, data)
}

/// Splits a gradient of a concatenation back into its two parts.
pub fn split<T: Real>(d: &Feature<T>, c_first: usize) -> (Feature<T>, Feature<T>) {
    let cut = c_first * d.hw();
    (
        Feature::from_vec(c_first, d.h, d.w, d.data[..cut].to_vec()),
        Feature::from_vec(d.c - c_first, d.h, d.w, d.data[cut..].to_vec()),
    )
}
