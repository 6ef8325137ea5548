//! PSNR / SSIM and the evaluation report.
//!
//! Protocol: images are compared in unit range. The color space is either
//! RGB (all channels, unquantized) or Y (BT.601 full-range luma
//! `0.299 R + 0.587 G + 0.114 B` computed on 8-bit-quantized RGB). A border
//! of `border` pixels is cropped from each side before either metric.
//! PSNR uses a peak of 1.0; SSIM is single-scale with an 11×11 Gaussian
//! window (σ = 1.5), `K1 = 0.01`, `K2 = 0.03`, averaged over valid window
//! positions and then over channels.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Y,
}

impl FromStr for ColorSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" => Ok(ColorSpace::Rgb),
            "y" => Ok(ColorSpace::Y),
            other => Err(Error::InvalidArgument(format!("unknown color space '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub color: ColorSpace,
    pub border: usize,
}

impl Protocol {
    /// Default for a given upscaling factor: RGB, `scale` pixels cropped.
    pub fn for_scale(scale: usize) -> Self {
        Self {
            color: ColorSpace::Rgb,
            border: scale,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let color = match self.color {
            ColorSpace::Rgb => "rgb",
            ColorSpace::Y => "y",
        };
        write!(f, "color={color} border={}", self.border)
    }
}

/// Channel planes after color transform and border crop.
struct Planes {
    h: usize,
    w: usize,
    planes: Vec<Vec<f64>>,
}

fn prepare(img: &ImageTensor, protocol: &Protocol) -> Result<Planes> {
    let img = img.as_unit();
    let (c, h, w) = img.dims();
    let b = protocol.border;
    if 2 * b >= h || 2 * b >= w {
        return Err(Error::InvalidArgument(format!(
            "border {b} leaves nothing of a {h}x{w} image"
        )));
    }
    let (ch, cw) = (h - 2 * b, w - 2 * b);
    let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round();
    let planes = match protocol.color {
        ColorSpace::Rgb => (0..c)
            .map(|k| {
                (0..ch)
                    .flat_map(|y| (0..cw).map(move |x| (y, x)))
                    .map(|(y, x)| img.get(k, y + b, x + b))
                    .collect()
            })
            .collect(),
        ColorSpace::Y => {
            let luma = |y: usize, x: usize| {
                if c == 3 {
                    (0.299 * quant(img.get(0, y, x))
                        + 0.587 * quant(img.get(1, y, x))
                        + 0.114 * quant(img.get(2, y, x)))
                        / 255.0
                } else {
                    quant(img.get(0, y, x)) / 255.0
                }
            };
            vec![(0..ch)
                .flat_map(|y| (0..cw).map(move |x| (y, x)))
                .map(|(y, x)| luma(y + b, x + b))
                .collect()]
        }
    };
    Ok(Planes { h: ch, w: cw, planes })
}

fn prepare_pair(a: &ImageTensor, b: &ImageTensor, protocol: &Protocol) -> Result<(Planes, Planes)> {
    a.ensure_same_dims(b)?;
    Ok((prepare(a, protocol)?, prepare(b, protocol)?))
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical inputs.
pub fn psnr(a: &ImageTensor, b: &ImageTensor, protocol: &Protocol) -> Result<f64> {
    let (pa, pb) = prepare_pair(a, b, protocol)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in pa.planes.iter().zip(&pb.planes) {
        for (u, v) in x.iter().zip(y) {
            sum += (u - v) * (u - v);
        }
        n += x.len();
    }
    let mse = sum / n as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Valid-mode separable filtering.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|i| taps[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| taps[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let taps = gaussian_taps();
    let c1 = (K1 * 1.0) * (K1 * 1.0);
    let c2 = (K2 * 1.0) * (K2 * 1.0);
    let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| u * v).collect() };
    let mu_a = filter_valid(a, h, w, &taps);
    let mu_b = filter_valid(b, h, w, &taps);
    let e_aa = filter_valid(&prod(a, a), h, w, &taps);
    let e_bb = filter_valid(&prod(b, b), h, w, &taps);
    let e_ab = filter_valid(&prod(a, b), h, w, &taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    total / n as f64
}

/// Mean structural similarity; exactly 1 for identical inputs.
pub fn ssim(a: &ImageTensor, b: &ImageTensor, protocol: &Protocol) -> Result<f64> {
    let (pa, pb) = prepare_pair(a, b, protocol)?;
    if pa.h < SSIM_WINDOW || pa.w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels after cropping, got {}x{}",
            pa.h, pa.w
        )));
    }
    let per_channel: f64 = pa
        .planes
        .iter()
        .zip(&pb.planes)
        .map(|(x, y)| ssim_plane(x, y, pa.h, pa.w))
        .sum();
    Ok(per_channel / pa.planes.len() as f64)
}

/// Optional perceptual metric computed by an external program.
///
/// The program is run once per pair as `program [args...] <sr.png> <hr.png>`
/// and must print a single floating-point number on stdout and exit 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalMetric {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl ExternalMetric {
    pub fn run(&self, sr: &Path, hr: &Path) -> Result<f64> {
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(sr)
            .arg(hr)
            .output()
            .map_err(|e| Error::ExternalMetric(format!("{}: {e}", self.program.display())))?;
        if !out.status.success() {
            return Err(Error::ExternalMetric(format!(
                "{} exited with {} on {}",
                self.program.display(),
                out.status,
                sr.display()
            )));
        }
        let text = String::from_utf8_lossy(&out.stdout);
        text.trim()
            .parse::<f64>()
            .map_err(|_| Error::ExternalMetric(format!("unparseable output '{}'", text.trim())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub records: Vec<EvalRecord>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_lpips: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn format_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.6}")
    }
}

impl EvalReport {
    pub fn new(protocol: Protocol, records: Vec<EvalRecord>) -> Self {
        let has_lpips = !records.is_empty() && records.iter().all(|r| r.lpips.is_some());
        Self {
            protocol,
            mean_psnr: mean(records.iter().map(|r| r.psnr)),
            mean_ssim: mean(records.iter().map(|r| r.ssim)),
            mean_lpips: has_lpips.then(|| mean(records.iter().filter_map(|r| r.lpips))),
            records,
        }
    }

    /// Tab-separated machine report: a protocol header line, one line per
    /// image `id psnr ssim [lpips]`, and a trailing `MEAN` line.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("# protocol {}\n", self.protocol);
        let row = |id: &str, p: f64, q: f64, l: Option<f64>| {
            let mut line = format!("{id}\t{}\t{}", format_value(p), format_value(q));
            if let Some(l) = l {
                line.push('\t');
                line.push_str(&format_value(l));
            }
            line.push('\n');
            line
        };
        for r in &self.records {
            s.push_str(&row(&r.id, r.psnr, r.ssim, r.lpips));
        }
        s.push_str(&row("MEAN", self.mean_psnr, self.mean_ssim, self.mean_lpips));
        s
    }

    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        let width = self
            .records
            .iter()
            .map(|r| r.id.len())
            .chain(std::iter::once(4))
            .max()
            .unwrap_or(4);
        let mut s = format!("protocol: {}\n", self.protocol);
        s.push_str(&format!("{:<width$}  {:>12}  {:>10}", "image", "PSNR (dB)", "SSIM"));
        if self.mean_lpips.is_some() {
            s.push_str(&format!("  {:>10}", "LPIPS"));
        }
        s.push('\n');
        let mut line = |id: &str, p: f64, q: f64, l: Option<f64>| {
            s.push_str(&format!("{id:<width$}  {:>12}  {:>10}", fmt2(p, 4), fmt2(q, 4)));
            if let Some(l) = l {
                s.push_str(&format!("  {:>10}", fmt2(l, 4)));
            }
            s.push('\n');
        };
        for r in &self.records {
            line(&r.id, r.psnr, r.ssim, r.lpips.filter(|_| self.mean_lpips.is_some()));
        }
        line("MEAN", self.mean_psnr, self.mean_ssim, self.mean_lpips);
        s
    }

    /// Writes `report.tsv` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tsv = dir.join("report.tsv");
        fs::write(&tsv, self.to_tsv()).map_err(|e| Error::io(&tsv, e))?;
        let txt = dir.join("report.txt");
        fs::write(&txt, self.to_table()).map_err(|e| Error::io(&txt, e))
    }
}

fn fmt2(v: f64, digits: usize) -> String {
    if v.is_finite() {
        format!("{v:.digits$}")
    } else {
        format_value(v)
    }
}

/// PNG files in `dir` keyed by file stem, sorted.
pub fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Scores every SR image against the HR image with the same file stem.
pub fn evaluate(
    sr_dir: &Path,
    hr_dir: &Path,
    protocol: &Protocol,
    lpips: Option<&ExternalMetric>,
) -> Result<EvalReport> {
    let sr = png_stems(sr_dir)?;
    let hr = png_stems(hr_dir)?;
    let hr_map: std::collections::BTreeMap<_, _> = hr.iter().cloned().collect();
    let sr_map: std::collections::BTreeMap<_, _> = sr.iter().cloned().collect();
    let mut unpaired: Vec<String> = sr
        .iter()
        .filter(|(s, _)| !hr_map.contains_key(s))
        .map(|(_, p)| p.display().to_string())
        .collect();
    unpaired.extend(
        hr.iter()
            .filter(|(s, _)| !sr_map.contains_key(s))
            .map(|(_, p)| p.display().to_string()),
    );
    if !unpaired.is_empty() {
        return Err(Error::UnpairedFiles(unpaired));
    }
    if sr.is_empty() {
        log::warn!("no images found in {} and {}", sr_dir.display(), hr_dir.display());
    }
    let records = sr
        .par_iter()
        .map(|(id, sr_path)| {
            let hr_path = &hr_map[id];
            let a = load_image(sr_path)?;
            let b = load_image(hr_path)?;
            Ok(EvalRecord {
                id: id.clone(),
                psnr: psnr(&a, &b, protocol)?,
                ssim: ssim(&a, &b, protocol)?,
                lpips: lpips.map(|m| m.run(sr_path, hr_path)).transpose()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new(*protocol, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Range;
    use crate::rng;

    const NO_CROP: Protocol = Protocol {
        color: ColorSpace::Rgb,
        border: 0,
    };

    fn random_unit(seed: u64, c: usize, h: usize, w: usize) -> ImageTensor {
        let mut r = rng::stream_rng(seed, 3);
        ImageTensor::from_fn(c, h, w, Range::Unit, |_, _, _| rng::open_unit(&mut r)).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let zero = ImageTensor::filled(3, 16, 16, 0.0, Range::Unit);
        let one = ImageTensor::filled(3, 16, 16, 1.0, Range::Unit);
        let half = ImageTensor::filled(3, 16, 16, 0.5, Range::Unit);
        assert_eq!(psnr(&zero, &zero, &NO_CROP).unwrap(), f64::INFINITY);
        assert!((psnr(&zero, &one, &NO_CROP).unwrap() - 0.0).abs() < 1e-9);
        let want = 10.0 * 4f64.log10();
        assert!((psnr(&zero, &half, &NO_CROP).unwrap() - want).abs() < 1e-9);
        assert!((want - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn psnr_rejects_mismatch() {
        let a = random_unit(1, 3, 16, 16);
        let b = random_unit(2, 3, 16, 15);
        assert!(psnr(&a, &b, &NO_CROP).is_err());
        assert!(ssim(&a, &b, &NO_CROP).is_err());
    }

    #[test]
    fn border_crop_ignores_edges() {
        let a = ImageTensor::filled(1, 16, 16, 0.5, Range::Unit);
        let b = ImageTensor::from_fn(1, 16, 16, Range::Unit, |_, y, x| {
            if y < 2 || x < 2 || y >= 14 || x >= 14 { 0.0 } else { 0.5 }
        })
        .unwrap();
        let p = Protocol { color: ColorSpace::Rgb, border: 2 };
        assert_eq!(psnr(&a, &b, &p).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b, &NO_CROP).unwrap().is_finite());
    }

    #[test]
    fn luma_uses_quantized_rgb() {
        let a = ImageTensor::from_fn(3, 12, 12, Range::Unit, |c, _, _| [1.0, 0.0, 0.0][c]).unwrap();
        let p = prepare(&a, &Protocol { color: ColorSpace::Y, border: 0 }).unwrap();
        assert_eq!(p.planes.len(), 1);
        assert!((p.planes[0][0] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = random_unit(1, 3, 16, 16);
        assert_eq!(ssim(&a, &a, &NO_CROP).unwrap(), 1.0);
        let c = ImageTensor::filled(1, 12, 12, 0.3, Range::Unit);
        assert_eq!(ssim(&c, &c, &NO_CROP).unwrap(), 1.0);
        let small = random_unit(1, 1, 10, 16);
        assert!(ssim(&small, &small, &NO_CROP).is_err());
    }

    /// Direct double-loop SSIM over every valid window position.
    fn ssim_naive(a: &ImageTensor, b: &ImageTensor) -> f64 {
        let g = gaussian_taps();
        let (c, h, w) = a.dims();
        let mut total = 0.0;
        for ch in 0..c {
            let mut acc = 0.0;
            let mut count = 0;
            for y0 in 0..=(h - 11) {
                for x0 in 0..=(w - 11) {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let wt = g[i] * g[j];
                            let u = a.get(ch, y0 + i, x0 + j);
                            let v = b.get(ch, y0 + i, x0 + j);
                            ma += wt * u;
                            mb += wt * v;
                            saa += wt * u * u;
                            sbb += wt * v * v;
                            sab += wt * u * v;
                        }
                    }
                    let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                    let (c1, c2) = (1e-4, 9e-4);
                    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / c as f64
    }

    #[test]
    fn ssim_matches_direct_summation() {
        for seed in 0..5 {
            let a = random_unit(seed, 3, 16, 16);
            let b = random_unit(seed + 50, 3, 16, 16);
            let got = ssim(&a, &b, &NO_CROP).unwrap();
            assert!((got - ssim_naive(&a, &b)).abs() < 1e-6);
            assert!((got - ssim(&b, &a, &NO_CROP).unwrap()).abs() < 1e-9);
            assert!((-1.0..=1.0).contains(&got));
        }
    }

    #[test]
    fn psnr_symmetric_and_monotone_in_noise() {
        let a = random_unit(1, 3, 16, 16);
        let noise = random_unit(9, 3, 16, 16);
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let b = a
                .with_data(a.data().iter().zip(noise.data()).map(|(v, n)| v + amp * (n - 0.5)).collect())
                .unwrap();
            let p = psnr(&a, &b, &NO_CROP).unwrap();
            assert_eq!(p, psnr(&b, &a, &NO_CROP).unwrap());
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn report_means_and_format() {
        let p = Protocol::for_scale(4);
        let report = EvalReport::new(
            p,
            vec![
                EvalRecord { id: "a".into(), psnr: 30.0, ssim: 0.9, lpips: None },
                EvalRecord { id: "b".into(), psnr: 20.0, ssim: 0.5, lpips: None },
            ],
        );
        assert_eq!(report.mean_psnr, 25.0);
        assert!((report.mean_ssim - 0.7).abs() < 1e-15);
        assert_eq!(
            report.to_tsv(),
            "# protocol color=rgb border=4\na\t30.000000\t0.900000\nb\t20.000000\t0.500000\nMEAN\t25.000000\t0.700000\n"
        );
        assert!(report.to_table().contains("MEAN"));
        let empty = EvalReport::new(p, vec![]);
        assert!(empty.to_tsv().ends_with("MEAN\tnan\tnan\n"));
    }
}
