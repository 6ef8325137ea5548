//! Image rasters, value-range conventions, PNG I/O, bicubic resampling and
//! patch extraction.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Value-range convention of an [`ImageTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Range {
    /// Values in `[0, 1]`; used for I/O and metrics.
    Unit,
    /// Values in `[-1, 1]`; used for diffusion latents.
    Signed,
}

impl Range {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Range::Unit => (0.0, 1.0),
            Range::Signed => (-1.0, 1.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Range::Unit => "unit",
            Range::Signed => "signed",
        }
    }
}

/// A `channels × height × width` raster stored channel-major.
#[derive(Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    range: Range,
}

impl fmt::Debug for ImageTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageTensor")
            .field("channels", &self.channels)
            .field("height", &self.height)
            .field("width", &self.width)
            .field("range", &self.range)
            .finish_non_exhaustive()
    }
}

impl ImageTensor {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        range: Range,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(
                format!("{} values", channels * height * width),
                format!("{} values", data.len()),
            ));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "image contains non-finite value {v}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            range,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64, range: Range) -> Self {
        Self::new(
            channels,
            height,
            width,
            vec![value; channels * height * width],
            range,
        )
        .expect("filled image with positive dimensions")
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        range: Range,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data, range)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn range(&self) -> Range {
        self.range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Same dimensions and range, new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.channels, self.height, self.width, data, self.range)
    }

    pub fn same_dims(&self, other: &ImageTensor) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn ensure_same_dims(&self, other: &ImageTensor) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::shape(dims_str(self.dims()), dims_str(other.dims())))
        }
    }

    /// Clamps every value into the bounds of the range tag.
    pub fn clamped(&self) -> Self {
        let (lo, hi) = self.range.bounds();
        Self {
            data: self.data.iter().map(|v| v.clamp(lo, hi)).collect(),
            ..self.clone()
        }
    }

    /// Unit to signed: `v ↦ 2v − 1`.
    pub fn to_signed(&self) -> Result<Self> {
        self.expect_range(Range::Unit)?;
        Ok(Self {
            data: self.data.iter().map(|v| 2.0 * v - 1.0).collect(),
            range: Range::Signed,
            ..self.clone()
        })
    }

    /// Signed to unit: `v ↦ (v + 1) / 2`.
    pub fn to_unit(&self) -> Result<Self> {
        self.expect_range(Range::Signed)?;
        Ok(Self {
            data: self.data.iter().map(|v| (v + 1.0) * 0.5).collect(),
            range: Range::Unit,
            ..self.clone()
        })
    }

    /// Converts to unit range whatever the current tag.
    pub fn as_unit(&self) -> Self {
        match self.range {
            Range::Unit => self.clone(),
            Range::Signed => self.to_unit().expect("signed image"),
        }
    }

    pub(crate) fn expect_range(&self, range: Range) -> Result<()> {
        if self.range == range {
            Ok(())
        } else {
            Err(Error::RangeMismatch {
                expected: range.name(),
                found: self.range.name(),
            })
        }
    }

    /// 8-bit quantization used for PNG output: unit range, clamp, `round(v·255)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let unit = self.as_unit();
        let (c, h, w) = self.dims();
        let mut out = vec![0u8; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = unit.get(ch, y, x).clamp(0.0, 1.0);
                    out[(y * w + x) * c + ch] = (v * 255.0).round() as u8;
                }
            }
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes) for interleaved 8-bit pixels.
    pub fn from_bytes(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != channels * height * width {
            return Err(Error::shape(
                format!("{} bytes", channels * height * width),
                format!("{} bytes", bytes.len()),
            ));
        }
        Self::from_fn(channels, height, width, Range::Unit, |c, y, x| {
            f64::from(bytes[(y * width + x) * channels + c]) / 255.0
        })
    }

    /// Crops a `height × width` window with top-left corner `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {height}x{width}@({top},{left}) outside {}x{}",
                self.height, self.width
            )));
        }
        Self::from_fn(self.channels, height, width, self.range, |c, y, x| {
            self.get(c, top + y, left + x)
        })
    }
}

pub(crate) fn dims_str((c, h, w): (usize, usize, usize)) -> String {
    format!("{c}x{h}x{w}")
}

/// Loads an 8-bit grayscale or RGB PNG into the unit range.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png).map_err(
        |e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
    )?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        image::DynamicImage::ImageLuma8(buf) => ImageTensor::from_bytes(1, h, w, buf.as_raw()),
        image::DynamicImage::ImageRgb8(buf) => ImageTensor::from_bytes(3, h, w, buf.as_raw()),
        other => Err(Error::Image {
            path: path.to_path_buf(),
            message: format!(
                "unsupported pixel format {:?}; expected 8-bit gray or RGB",
                other.color()
            ),
        }),
    }
}

/// Encodes an image as 8-bit PNG bytes (see [`ImageTensor::to_bytes`]).
pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>> {
    let color = match img.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => {
            return Err(Error::InvalidArgument(format!(
                "PNG output supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        encoder,
        &img.to_bytes(),
        img.width() as u32,
        img.height() as u32,
        color,
    )
    .map_err(|e| Error::Image {
        path: "<memory>".into(),
        message: e.to_string(),
    })?;
    Ok(out)
}

pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Catmull-Rom cubic convolution kernel (`a = -0.5`).
#[inline]
pub fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Four source taps and weights for each output coordinate along one axis,
/// with half-pixel centers and edge clamping.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<([usize; 4], [f64; 4])> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut wts = [0.0; 4];
            for k in 0..4 {
                let pos = base as isize + k as isize - 1;
                idx[k] = pos.clamp(0, in_len as isize - 1) as usize;
                wts[k] = cubic_weight(frac - (k as f64 - 1.0));
            }
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic resampling; output clamped to the input's range bounds.
pub fn bicubic_resize(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    let (c, h, w) = img.dims();
    let x_taps = axis_taps(w, out_w);
    let y_taps = axis_taps(h, out_h);
    let (lo, hi) = img.range().bounds();

    let mut rows = vec![0.0; c * h * out_w];
    for ch in 0..c {
        for y in 0..h {
            let src = &img.data()[(ch * h + y) * w..][..w];
            let dst = &mut rows[(ch * h + y) * out_w..][..out_w];
            for (d, (idx, wts)) in dst.iter_mut().zip(&x_taps) {
                *d = (0..4).map(|k| wts[k] * src[idx[k]]).sum();
            }
        }
    }
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        for (oy, (idx, wts)) in y_taps.iter().enumerate() {
            let dst = &mut out[(ch * out_h + oy) * out_w..][..out_w];
            for (ox, d) in dst.iter_mut().enumerate() {
                let v: f64 = (0..4)
                    .map(|k| wts[k] * rows[(ch * h + idx[k]) * out_w + ox])
                    .sum();
                *d = v.clamp(lo, hi);
            }
        }
    }
    ImageTensor::new(c, out_h, out_w, out, img.range())
}

/// Row-major sliding-window crops of size `patch × patch`.
pub fn extract_patches(img: &ImageTensor, patch: usize, stride: usize) -> Result<Vec<ImageTensor>> {
    if patch == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "patch size and stride must be positive".into(),
        ));
    }
    if patch > img.height() || patch > img.width() {
        return Err(Error::InvalidArgument(format!(
            "patch {patch} larger than image {}x{}",
            img.height(),
            img.width()
        )));
    }
    let rows = (img.height() - patch) / stride + 1;
    let cols = (img.width() - patch) / stride + 1;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            out.push(img.crop(r * stride, c * stride, patch, patch)?);
        }
    }
    Ok(out)
}

/// An aligned high/low resolution training pair.
#[derive(Debug, Clone)]
pub struct PatchPair {
    pub id: String,
    pub hr: ImageTensor,
    pub lr: ImageTensor,
    pub scale: usize,
}

impl PatchPair {
    pub fn new(id: impl Into<String>, hr: ImageTensor, lr: ImageTensor, scale: usize) -> Result<Self> {
        if scale < 2 {
            return Err(Error::InvalidArgument(format!("scale must be >= 2, got {scale}")));
        }
        if hr.channels() != lr.channels()
            || hr.height() != scale * lr.height()
            || hr.width() != scale * lr.width()
        {
            return Err(Error::shape(
                format!(
                    "HR {} for LR {} at x{scale}",
                    dims_str((lr.channels(), scale * lr.height(), scale * lr.width())),
                    dims_str(lr.dims())
                ),
                dims_str(hr.dims()),
            ));
        }
        Ok(Self {
            id: id.into(),
            hr,
            lr,
            scale,
        })
    }

    /// Synthesizes the LR half by bicubic downscaling.
    pub fn from_hr(id: impl Into<String>, hr: ImageTensor, scale: usize) -> Result<Self> {
        if scale < 2 || hr.height() % scale != 0 || hr.width() % scale != 0 {
            return Err(Error::InvalidArgument(format!(
                "HR size {}x{} not divisible by scale {scale}",
                hr.height(),
                hr.width()
            )));
        }
        let lr = bicubic_resize(&hr, hr.height() / scale, hr.width() / scale)?;
        Self::new(id, hr, lr, scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(1, h, w, Range::Unit, |_, y, x| {
            (y * w + x) as f64 / (h * w - 1) as f64
        })
        .unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(ImageTensor::new(1, 2, 2, vec![0.0; 3], Range::Unit).is_err());
        assert!(ImageTensor::new(0, 2, 2, vec![], Range::Unit).is_err());
        assert!(ImageTensor::new(1, 1, 1, vec![f64::NAN], Range::Unit).is_err());
    }

    #[test]
    fn range_maps() {
        let img = ImageTensor::new(1, 1, 3, vec![0.0, 0.5, 1.0], Range::Unit).unwrap();
        let s = img.to_signed().unwrap();
        assert_eq!(s.data(), &[-1.0, 0.0, 1.0]);
        assert_eq!(s.range(), Range::Signed);
        assert!(img.to_unit().is_err());
        assert!(s.to_signed().is_err());
        assert_eq!(s.to_unit().unwrap(), img);
    }

    #[test]
    fn quantization_examples() {
        let s = ImageTensor::new(1, 1, 2, vec![-1.0, 1.0], Range::Signed).unwrap();
        assert_eq!(s.to_bytes(), vec![0, 255]);
        let u = ImageTensor::new(1, 1, 3, vec![0.5, -0.2, 1.7], Range::Unit).unwrap();
        assert_eq!(u.to_bytes(), vec![128, 0, 255]);
        let back = ImageTensor::from_bytes(1, 1, 3, &[255, 0, 128]).unwrap();
        assert_eq!(back.data()[0], 1.0);
        assert_eq!(back.data()[1], 0.0);
        assert!((back.data()[2] - 128.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn png_roundtrip_is_byte_exact() {
        let dir = tempfile::tempdir().unwrap();
        let bytes: Vec<u8> = (0..3 * 5 * 7).map(|i| (i * 37 % 256) as u8).collect();
        let img = ImageTensor::from_bytes(3, 5, 7, &bytes).unwrap();
        let p = dir.path().join("a.png");
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back, img);

        let gray = ImageTensor::from_bytes(1, 4, 4, &[7u8; 16]).unwrap();
        save_image(&gray, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), gray);
    }

    #[test]
    fn load_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("missing.png");
        let err = load_image(&p).unwrap_err();
        assert!(err.to_string().contains("missing.png"));
        let bad = dir.path().join("bad.png");
        std::fs::write(&bad, b"not a png").unwrap();
        let err = load_image(&bad).unwrap_err();
        assert!(matches!(err, Error::Image { .. }));
        assert!(err.to_string().contains("bad.png"));
    }

    #[test]
    fn rejects_sixteen_bit_png() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.png");
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_pixel(3, 3, image::Luma([1000u16]));
        buf.save(&p).unwrap();
        assert!(matches!(load_image(&p), Err(Error::Image { .. })));
    }

    #[test]
    fn kernel_partition_of_unity() {
        for i in 0..=100 {
            let f = i as f64 / 100.0;
            let s: f64 = (0..4).map(|k| cubic_weight(f - (k as f64 - 1.0))).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert_eq!(cubic_weight(0.0), 1.0);
        assert_eq!(cubic_weight(1.0), 0.0);
        assert_eq!(cubic_weight(2.0), 0.0);
    }

    #[test]
    fn identity_resize() {
        let img = ramp(5, 7);
        assert_eq!(bicubic_resize(&img, 5, 7).unwrap(), img);
    }

    /// Direct 16-tap evaluation at each output site.
    fn bicubic_oracle(img: &ImageTensor, oh: usize, ow: usize) -> Vec<f64> {
        let (c, h, w) = img.dims();
        let mut out = Vec::new();
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let sy = (oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5;
                    let sx = (ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5;
                    let (fy, fx) = (sy.floor(), sx.floor());
                    let mut acc = 0.0;
                    for j in -1..=2i64 {
                        for i in -1..=2i64 {
                            let yy = (fy as i64 + j).clamp(0, h as i64 - 1) as usize;
                            let xx = (fx as i64 + i).clamp(0, w as i64 - 1) as usize;
                            let wy = cubic_weight(sy - (fy + j as f64));
                            let wx = cubic_weight(sx - (fx + i as f64));
                            acc += wy * wx * img.get(ch, yy, xx);
                        }
                    }
                    out.push(acc.clamp(0.0, 1.0));
                }
            }
        }
        out
    }

    #[test]
    fn ramp_downscale_matches_direct_evaluation() {
        let img = ramp(4, 4);
        let got = bicubic_resize(&img, 2, 2).unwrap();
        let want = bicubic_oracle(&img, 2, 2);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        // Downscale by 2: sample sites at 0.5 and 2.5, taps symmetric about
        // the site, so the linear ramp is reproduced except at the clamped edges.
        let interior = (got.get(0, 1, 1) - got.get(0, 0, 0)).abs();
        assert!(interior > 0.0);
    }

    #[test]
    fn upscale_matches_direct_evaluation() {
        let img = ImageTensor::from_fn(3, 8, 8, Range::Unit, |c, y, x| {
            ((c + 1) as f64 * (y as f64 * 0.7 + x as f64 * 1.3)).sin() * 0.5 + 0.5
        })
        .unwrap();
        let got = bicubic_resize(&img, 32, 32).unwrap();
        let want = bicubic_oracle(&img, 32, 32);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_zero_target() {
        assert!(bicubic_resize(&ramp(4, 4), 0, 3).is_err());
    }

    #[test]
    fn patch_counts() {
        let img = ramp(32, 32);
        let p = extract_patches(&img, 32, 32).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0], img);

        let img = ramp(64, 64);
        let p = extract_patches(&img, 32, 32).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p[1].get(0, 0, 0), img.get(0, 0, 32));
        assert_eq!(p[2].get(0, 0, 0), img.get(0, 32, 0));

        let img = ramp(48, 48);
        assert_eq!(extract_patches(&img, 32, 16).unwrap().len(), 4);
        assert!(extract_patches(&img, 49, 1).is_err());
    }

    #[test]
    fn patch_pair_validates_scale() {
        let hr = ramp(8, 8);
        let lr = ramp(4, 4);
        assert!(PatchPair::new("a", hr.clone(), lr.clone(), 2).is_ok());
        assert!(PatchPair::new("a", hr.clone(), lr, 4).is_err());
        let pair = PatchPair::from_hr("b", hr, 4).unwrap();
        assert_eq!(pair.lr.dims(), (1, 2, 2));
    }

    proptest! {
        #[test]
        fn range_maps_invert(v in proptest::collection::vec(0.0f64..=1.0, 1..64)) {
            let n = v.len();
            let img = ImageTensor::new(1, 1, n, v, Range::Unit).unwrap();
            let back = img.to_signed().unwrap().to_unit().unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= 1e-7);
            }
            let s = img.to_signed().unwrap();
            let again = s.to_unit().unwrap().to_signed().unwrap();
            for (a, b) in s.data().iter().zip(again.data()) {
                prop_assert!((a - b).abs() <= 1e-7);
            }
        }

        #[test]
        fn constant_stays_constant(c in 0.0f64..=1.0, h in 1usize..12, w in 1usize..12,
                                   oh in 1usize..40, ow in 1usize..40) {
            let img = ImageTensor::filled(3, h, w, c, Range::Unit);
            let out = bicubic_resize(&img, oh, ow).unwrap();
            prop_assert_eq!(out.dims(), (3, oh, ow));
            for v in out.data() {
                prop_assert!((v - c).abs() < 1e-12);
            }
        }
    }
}
