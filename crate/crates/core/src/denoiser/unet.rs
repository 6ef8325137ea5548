//! Small conditional U-Net predicting the clean image.
//!
//! Layout (`L` resolution levels, `R` residual blocks per level, `c_l =
//! base · mult[l]`):
//!
//! ```text
//! temb   = Linear(D,D) ∘ SiLU ∘ Linear(D,D) (sinusoid(t / T))
//! h      = Conv3x3(2C → c_0)([x_t ‖ condition])
//! down l : R × Res(→ c_l), each output kept as a skip;
//!          Conv3x3 stride 2 (c_l → c_l) unless l = L-1
//! mid    : Res(c_{L-1} → c_{L-1})
//! up l   : R × Res([h ‖ skip] 2c_l → c_l), skips consumed last-in first-out;
//!          nearest 2× upsample + Conv3x3(c_l → c_{l-1}) unless l = 0
//! out    = Conv3x3(c_0 → C) ∘ SiLU ∘ GroupNorm(h)
//! Res(i → o)(h) = skip(h) + Conv3x3 ∘ SiLU ∘ GN(
//!                   Conv3x3(SiLU(GN(h))) + Linear(D → o)(SiLU(temb)))
//! ```
//!
//! `skip` is the identity when `i = o` and a 1×1 convolution otherwise.
//! Group normalization uses 8 groups, epsilon 1e-5.
//!
//! Initialization: convolution and dense weights are uniform in
//! `±1/sqrt(fan_in)`, biases and normalization offsets are zero,
//! normalization scales one. The output convolution starts at zero, so the
//! untrained network predicts an all-zero image.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::embedding::time_embedding;
use crate::denoiser::ops::{self, ConvShape, Feature, GroupStats, Real};
use crate::denoiser::params::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::rng;

pub const NORM_GROUPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub image_channels: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub res_blocks: usize,
    pub time_embedding_dim: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            base_channels: 32,
            channel_multipliers: vec![1, 2, 4],
            res_blocks: 2,
            time_embedding_dim: 128,
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_channels == 0 {
            return bad("image_channels must be positive".into());
        }
        if self.channel_multipliers.is_empty() || self.channel_multipliers.contains(&0) {
            return bad("channel_multipliers must be a nonempty list of positive integers".into());
        }
        if self.res_blocks == 0 {
            return bad("res_blocks must be positive".into());
        }
        if self.time_embedding_dim == 0 || self.time_embedding_dim % 2 != 0 {
            return bad("time_embedding_dim must be even and positive".into());
        }
        for &m in &self.channel_multipliers {
            if (self.base_channels * m) % NORM_GROUPS != 0 || self.base_channels == 0 {
                return bad(format!(
                    "level width {} not divisible by {NORM_GROUPS} normalization groups",
                    self.base_channels * m
                ));
            }
        }
        Ok(())
    }

    /// Spatial sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << (self.channel_multipliers.len() - 1)
    }

    fn width(&self, level: usize) -> usize {
        self.base_channels * self.channel_multipliers[level]
    }

    /// Closed-form parameter count.
    ///
    /// With `C` image channels, `D` embedding width, `w_l` level widths:
    /// a residual block `i → o` holds `2i + 9io + o + Do + o + 2o + 9o² + o`
    /// plus `io + o` for a 1×1 skip when `i ≠ o`; a 3×3 conv `i → o` holds
    /// `9io + o`. The network sums two `D × D` dense layers, the input conv
    /// `2C → w_0`, the down/mid/up blocks, the down- and up-sampling convs,
    /// and the output norm and conv `w_0 → C`.
    pub fn parameter_count(&self) -> usize {
        let d = self.time_embedding_dim;
        let conv3 = |i: usize, o: usize| 9 * i * o + o;
        let res = |i: usize, o: usize| {
            2 * i + conv3(i, o) + d * o + o + 2 * o + conv3(o, o) + if i != o { i * o + o } else { 0 }
        };
        let levels = self.channel_multipliers.len();
        let c = self.image_channels;
        let mut n = 2 * (d * d + d) + conv3(2 * c, self.width(0));
        let mut prev = self.width(0);
        for l in 0..levels {
            let w = self.width(l);
            n += res(prev, w) + (self.res_blocks - 1) * res(w, w);
            if l + 1 < levels {
                n += conv3(w, w);
            }
            prev = w;
        }
        n += res(prev, prev);
        for l in (0..levels).rev() {
            let w = self.width(l);
            n += self.res_blocks * res(2 * w, w);
            if l > 0 {
                n += conv3(w, self.width(l - 1));
            }
        }
        n + 2 * self.width(0) + conv3(self.width(0), c)
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    FanIn(usize),
    Zero,
    One,
}

#[derive(Debug, Clone)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Debug, Clone)]
struct Conv {
    shape: ConvShape,
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Debug, Clone)]
struct Dense {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct ResBlock {
    c_out: usize,
    norm1: Norm,
    conv1: Conv,
    temb: Dense,
    norm2: Norm,
    conv2: Conv,
    skip: Option<Conv>,
}

#[derive(Debug, Clone)]
struct DownLevel {
    blocks: Vec<ResBlock>,
    downsample: Option<Conv>,
}

#[derive(Debug, Clone)]
struct UpLevel {
    blocks: Vec<ResBlock>,
    upsample: Option<Conv>,
}

struct Builder {
    specs: Vec<TensorSpec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> ParamId {
        self.specs.push(TensorSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize, kernel: usize, stride: usize, zero: bool) -> Conv {
        let fan_in = c_in * kernel * kernel;
        let weight = self.add(
            format!("{name}.weight"),
            vec![c_out, c_in, kernel, kernel],
            if zero { Init::Zero } else { Init::FanIn(fan_in) },
        );
        let bias = self.add(format!("{name}.bias"), vec![c_out], Init::Zero);
        Conv {
            shape: ConvShape { c_in, c_out, kernel, stride },
            weight,
            bias,
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> Norm {
        Norm {
            gamma: self.add(format!("{name}.gamma"), vec![c], Init::One),
            beta: self.add(format!("{name}.beta"), vec![c], Init::Zero),
        }
    }

    fn dense(&mut self, name: &str, n_in: usize, n_out: usize) -> Dense {
        Dense {
            weight: self.add(format!("{name}.weight"), vec![n_out, n_in], Init::FanIn(n_in)),
            bias: self.add(format!("{name}.bias"), vec![n_out], Init::Zero),
        }
    }

    fn res(&mut self, name: &str, c_in: usize, c_out: usize, d: usize) -> ResBlock {
        ResBlock {
            c_out,
            norm1: self.norm(&format!("{name}.norm1"), c_in),
            conv1: self.conv(&format!("{name}.conv1"), c_in, c_out, 3, 1, false),
            temb: self.dense(&format!("{name}.temb"), d, c_out),
            norm2: self.norm(&format!("{name}.norm2"), c_out),
            conv2: self.conv(&format!("{name}.conv2"), c_out, c_out, 3, 1, false),
            skip: (c_in != c_out).then(|| self.conv(&format!("{name}.skip"), c_in, c_out, 1, 1, false)),
        }
    }
}

/// Network structure; parameters live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct UNet {
    config: ArchitectureConfig,
    num_timesteps: usize,
    specs: Vec<TensorSpec>,
    time1: Dense,
    time2: Dense,
    conv_in: Conv,
    down: Vec<DownLevel>,
    mid: ResBlock,
    /// Deepest level first.
    up: Vec<UpLevel>,
    norm_out: Norm,
    conv_out: Conv,
}

struct ResCache<T> {
    x: Feature<T>,
    stats1: GroupStats<T>,
    n1: Feature<T>,
    a1: Feature<T>,
    h1: Feature<T>,
    stats2: GroupStats<T>,
    n2: Feature<T>,
    a2: Feature<T>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache<T> {
    emb: Vec<T>,
    e1: Vec<T>,
    a1: Vec<T>,
    temb: Vec<T>,
    st: Vec<T>,
    input: Feature<T>,
    down: Vec<(Vec<ResCache<T>>, Option<Feature<T>>)>,
    mid: ResCache<T>,
    up: Vec<(Vec<(ResCache<T>, usize, usize)>, Option<(Feature<T>, Feature<T>)>)>,
    out_in: Feature<T>,
    out_stats: GroupStats<T>,
    out_n: Feature<T>,
    out_a: Feature<T>,
    num_skips: usize,
}

impl UNet {
    pub fn new(config: ArchitectureConfig, num_timesteps: usize) -> Result<Self> {
        config.validate()?;
        if num_timesteps == 0 {
            return Err(Error::Config("num_timesteps must be positive".into()));
        }
        let d = config.time_embedding_dim;
        let c = config.image_channels;
        let levels = config.channel_multipliers.len();
        let mut b = Builder { specs: Vec::new() };
        let time1 = b.dense("time.0", d, d);
        let time2 = b.dense("time.1", d, d);
        let conv_in = b.conv("conv_in", 2 * c, config.width(0), 3, 1, false);
        let mut prev = config.width(0);
        let mut down = Vec::new();
        for l in 0..levels {
            let w = config.width(l);
            let blocks = (0..config.res_blocks)
                .map(|i| {
                    let blk = b.res(&format!("down.{l}.{i}"), prev, w, d);
                    prev = w;
                    blk
                })
                .collect();
            let downsample = (l + 1 < levels).then(|| b.conv(&format!("down.{l}.downsample"), w, w, 3, 2, false));
            down.push(DownLevel { blocks, downsample });
        }
        let mid = b.res("mid", prev, prev, d);
        let mut up = Vec::new();
        for l in (0..levels).rev() {
            let w = config.width(l);
            let blocks = (0..config.res_blocks)
                .map(|i| b.res(&format!("up.{l}.{i}"), 2 * w, w, d))
                .collect();
            let upsample = (l > 0).then(|| b.conv(&format!("up.{l}.upsample"), w, config.width(l - 1), 3, 1, false));
            up.push(UpLevel { blocks, upsample });
        }
        let norm_out = b.norm("norm_out", config.width(0));
        let conv_out = b.conv("conv_out", config.width(0), c, 3, 1, true);
        Ok(Self {
            config,
            num_timesteps,
            specs: b.specs,
            time1,
            time2,
            conv_in,
            down,
            mid,
            up,
            norm_out,
            conv_out,
        })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.config
    }

    pub fn num_timesteps(&self) -> usize {
        self.num_timesteps
    }

    /// Parameter names and shapes in storage order.
    pub fn tensor_layout(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.specs.iter().map(|s| (s.name.as_str(), s.shape.as_slice()))
    }

    /// Freshly initialized parameters drawn from the `PARAM_INIT` stream of `seed`.
    pub fn init_params<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = rng::stream_rng(seed, rng::streams::PARAM_INIT);
        ParamStore {
            tensors: self.specs.iter().map(|s| init_tensor(s, &mut rng)).collect(),
        }
    }

    pub fn zero_params<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            tensors: self
                .specs
                .iter()
                .map(|s| Tensor {
                    name: s.name.clone(),
                    shape: s.shape.clone(),
                    data: vec![T::zero(); s.shape.iter().product()],
                })
                .collect(),
        }
    }

    pub fn check_params<T: Real>(&self, params: &ParamStore<T>) -> Result<()> {
        self.zero_params::<T>().ensure_same_layout(params)
    }

    /// Validates input geometry for `(c, h, w)` latents.
    pub fn check_input(&self, c: usize, h: usize, w: usize) -> Result<()> {
        if c != self.config.image_channels {
            return Err(Error::shape(
                format!("{} channels", self.config.image_channels),
                format!("{c} channels"),
            ));
        }
        let m = self.config.size_multiple();
        if h % m != 0 || w % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "image size {h}x{w} not divisible by {m}"
            )));
        }
        Ok(())
    }

    /// Forward pass on one sample. `x_t` and `condition` are `C × H × W`.
    pub fn forward<T: Real>(
        &self,
        p: &ParamStore<T>,
        x_t: &Feature<T>,
        t: usize,
        condition: &Feature<T>,
    ) -> Result<(Feature<T>, ForwardCache<T>)> {
        self.check_input(x_t.c, x_t.h, x_t.w)?;
        if (x_t.c, x_t.h, x_t.w) != (condition.c, condition.h, condition.w) {
            return Err(Error::shape(
                format!("{}x{}x{}", x_t.c, x_t.h, x_t.w),
                format!("{}x{}x{}", condition.c, condition.h, condition.w),
            ));
        }
        let emb: Vec<T> = time_embedding(t, self.num_timesteps, self.config.time_embedding_dim)?
            .into_iter()
            .map(T::of)
            .collect();
        let e1 = ops::linear(&emb, p.get(self.time1.weight), p.get(self.time1.bias));
        let a1 = ops::silu(&e1);
        let temb = ops::linear(&a1, p.get(self.time2.weight), p.get(self.time2.bias));
        let st = ops::silu(&temb);

        let input = ops::concat(x_t, condition);
        let mut h = conv(p, &self.conv_in, &input);
        let mut skips: Vec<Feature<T>> = Vec::new();
        let mut down_cache = Vec::with_capacity(self.down.len());
        for level in &self.down {
            let mut caches = Vec::with_capacity(level.blocks.len());
            for blk in &level.blocks {
                let (out, cache) = res_forward(p, blk, h, &st);
                skips.push(out.clone());
                caches.push(cache);
                h = out;
            }
            let pre = match &level.downsample {
                Some(c) => {
                    let next = conv(p, c, &h);
                    Some(std::mem::replace(&mut h, next))
                }
                None => None,
            };
            down_cache.push((caches, pre));
        }
        let num_skips = skips.len();
        let (out, mid_cache) = res_forward(p, &self.mid, h, &st);
        h = out;
        let mut up_cache = Vec::with_capacity(self.up.len());
        for level in &self.up {
            let mut caches = Vec::with_capacity(level.blocks.len());
            for blk in &level.blocks {
                let skip_index = skips.len() - 1;
                let skip = skips.pop().expect("skip available");
                let c_h = h.c;
                let (out, cache) = res_forward(p, blk, ops::concat(&h, &skip), &st);
                caches.push((cache, c_h, skip_index));
                h = out;
            }
            let up = match &level.upsample {
                Some(c) => {
                    let upsampled = ops::upsample_nearest2(&h);
                    let next = conv(p, c, &upsampled);
                    let pre = std::mem::replace(&mut h, next);
                    Some((pre, upsampled))
                }
                None => None,
            };
            up_cache.push((caches, up));
        }
        let (out_n, out_stats) = ops::group_norm(&h, NORM_GROUPS, p.get(self.norm_out.gamma), p.get(self.norm_out.beta));
        let out_a = ops::silu_feature(&out_n);
        let out = conv(p, &self.conv_out, &out_a);
        Ok((
            out,
            ForwardCache {
                emb,
                e1,
                a1,
                temb,
                st,
                input,
                down: down_cache,
                mid: mid_cache,
                up: up_cache,
                out_in: h,
                out_stats,
                out_n,
                out_a,
                num_skips,
            },
        ))
    }

    /// Accumulates `∂loss/∂θ` into `grads` given `∂loss/∂output`.
    pub fn backward<T: Real>(
        &self,
        p: &ParamStore<T>,
        cache: &ForwardCache<T>,
        d_out: &Feature<T>,
        grads: &mut ParamStore<T>,
    ) {
        let d = self.config.time_embedding_dim;
        let mut d_st = vec![T::zero(); d];

        let d_a = conv_backward(p, &self.conv_out, &cache.out_a, d_out, grads);
        let d_n = ops::silu_feature_backward(&cache.out_n, &d_a);
        let mut dh = norm_backward(p, &self.norm_out, &cache.out_in, &cache.out_stats, &d_n, grads);

        let mut d_skips: Vec<Option<Feature<T>>> = (0..cache.num_skips).map(|_| None).collect();
        for (level, (caches, up)) in self.up.iter().zip(&cache.up).rev() {
            if let (Some(c), Some((_, upsampled))) = (&level.upsample, up) {
                let d_up = conv_backward(p, c, upsampled, &dh, grads);
                dh = ops::upsample_nearest2_backward(&d_up);
            }
            for (blk, (rc, c_h, skip_index)) in level.blocks.iter().zip(caches).rev() {
                let d_cat = res_backward(p, blk, rc, &dh, &cache.st, &mut d_st, grads);
                let (d_h, d_skip) = ops::split(&d_cat, *c_h);
                d_skips[*skip_index] = Some(d_skip);
                dh = d_h;
            }
        }

        dh = res_backward(p, &self.mid, &cache.mid, &dh, &cache.st, &mut d_st, grads);

        let mut skip_index = cache.num_skips;
        for (level, (caches, pre)) in self.down.iter().zip(&cache.down).rev() {
            if let (Some(c), Some(pre)) = (&level.downsample, pre) {
                dh = conv_backward(p, c, pre, &dh, grads);
            }
            for (blk, rc) in level.blocks.iter().zip(caches).rev() {
                skip_index -= 1;
                if let Some(ds) = d_skips[skip_index].take() {
                    dh.add_assign(&ds);
                }
                dh = res_backward(p, blk, rc, &dh, &cache.st, &mut d_st, grads);
            }
        }
        conv_backward(p, &self.conv_in, &cache.input, &dh, grads);

        let d_temb = ops::silu_backward(&cache.temb, &d_st);
        let d_a1 = dense_backward(p, &self.time2, &cache.a1, &d_temb, grads);
        let d_e1 = ops::silu_backward(&cache.e1, &d_a1);
        dense_backward(p, &self.time1, &cache.emb, &d_e1, grads);
    }
}

fn init_tensor<T: Real>(spec: &TensorSpec, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n: usize = spec.shape.iter().product();
    let data = match spec.init {
        Init::Zero => vec![T::zero(); n],
        Init::One => vec![T::one(); n],
        Init::FanIn(fan_in) => {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n)
                .map(|_| T::of((2.0 * rng::open_unit(rng) - 1.0) * bound))
                .collect()
        }
    };
    Tensor {
        name: spec.name.clone(),
        shape: spec.shape.clone(),
        data,
    }
}

fn conv<T: Real>(p: &ParamStore<T>, c: &Conv, x: &Feature<T>) -> Feature<T> {
    ops::conv2d(x, &c.shape, p.get(c.weight), p.get(c.bias))
}

fn split_two<T>(grads: &mut ParamStore<T>, a: ParamId, b: ParamId) -> (&mut [T], &mut [T]) {
    assert!(a < b, "parameter ids registered in order");
    let (lo, hi) = grads.tensors.split_at_mut(b);
    (&mut lo[a].data, &mut hi[0].data)
}

fn conv_backward<T: Real>(
    p: &ParamStore<T>,
    c: &Conv,
    x: &Feature<T>,
    dy: &Feature<T>,
    grads: &mut ParamStore<T>,
) -> Feature<T> {
    let (dw, db) = split_two(grads, c.weight, c.bias);
    ops::conv2d_backward(x, &c.shape, p.get(c.weight), dy, dw, db)
}

fn norm_backward<T: Real>(
    p: &ParamStore<T>,
    n: &Norm,
    x: &Feature<T>,
    stats: &GroupStats<T>,
    dy: &Feature<T>,
    grads: &mut ParamStore<T>,
) -> Feature<T> {
    let (dg, db) = split_two(grads, n.gamma, n.beta);
    ops::group_norm_backward(x, stats, p.get(n.gamma), dy, dg, db)
}

fn dense_backward<T: Real>(
    p: &ParamStore<T>,
    l: &Dense,
    x: &[T],
    dy: &[T],
    grads: &mut ParamStore<T>,
) -> Vec<T> {
    let (dw, db) = split_two(grads, l.weight, l.bias);
    ops::linear_backward(x, p.get(l.weight), dy, dw, db)
}

fn res_forward<T: Real>(
    p: &ParamStore<T>,
    blk: &ResBlock,
    x: Feature<T>,
    st: &[T],
) -> (Feature<T>, ResCache<T>) {
    let (n1, stats1) = ops::group_norm(&x, NORM_GROUPS, p.get(blk.norm1.gamma), p.get(blk.norm1.beta));
    let a1 = ops::silu_feature(&n1);
    let mut h1 = conv(p, &blk.conv1, &a1);
    let proj = ops::linear(st, p.get(blk.temb.weight), p.get(blk.temb.bias));
    let hw = h1.hw();
    for (row, &v) in h1.data.chunks_exact_mut(hw).zip(&proj) {
        for e in row {
            *e = *e + v;
        }
    }
    let (n2, stats2) = ops::group_norm(&h1, NORM_GROUPS, p.get(blk.norm2.gamma), p.get(blk.norm2.beta));
    let a2 = ops::silu_feature(&n2);
    let mut out = conv(p, &blk.conv2, &a2);
    match &blk.skip {
        Some(s) => out.add_assign(&conv(p, s, &x)),
        None => out.add_assign(&x),
    }
    debug_assert_eq!(out.c, blk.c_out);
    (
        out,
        ResCache {
            x,
            stats1,
            n1,
            a1,
            h1,
            stats2,
            n2,
            a2,
        },
    )
}

fn res_backward<T: Real>(
    p: &ParamStore<T>,
    blk: &ResBlock,
    c: &ResCache<T>,
    d_out: &Feature<T>,
    st: &[T],
    d_st: &mut [T],
    grads: &mut ParamStore<T>,
) -> Feature<T> {
    let d_a2 = conv_backward(p, &blk.conv2, &c.a2, d_out, grads);
    let d_n2 = ops::silu_feature_backward(&c.n2, &d_a2);
    let d_h1 = norm_backward(p, &blk.norm2, &c.h1, &c.stats2, &d_n2, grads);
    let hw = d_h1.hw();
    let d_proj: Vec<T> = d_h1
        .data
        .chunks_exact(hw)
        .map(|row| row.iter().copied().sum())
        .collect();
    let d_st_part = dense_backward(p, &blk.temb, st, &d_proj, grads);
    for (a, b) in d_st.iter_mut().zip(d_st_part) {
        *a = *a + b;
    }
    let d_a1 = conv_backward(p, &blk.conv1, &c.a1, &d_h1, grads);
    let d_n1 = ops::silu_feature_backward(&c.n1, &d_a1);
    let mut dx = norm_backward(p, &blk.norm1, &c.x, &c.stats1, &d_n1, grads);
    match &blk.skip {
        Some(s) => dx.add_assign(&conv_backward(p, s, &c.x, d_out, grads)),
        None => dx.add_assign(d_out),
    }
    dx
}
