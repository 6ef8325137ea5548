//! Paired patch datasets.
//!
//! A dataset is a directory holding `hr/` and `lr/` PNGs plus a manifest:
//! one UTF-8 line per pair, `hr_path<TAB>lr_path<TAB>scale`. Relative paths
//! resolve against the manifest's directory. Blank lines and lines starting
//! with `#` are ignored. A pair's id is the file stem of its LR path.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{bicubic_resize, extract_patches, load_image, save_image, PatchPair};
use crate::metrics::png_stems;

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
    pub scale: usize,
}

impl ManifestEntry {
    pub fn id(&self) -> String {
        self.lr_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }

    pub fn load(&self) -> Result<PatchPair> {
        PatchPair::new(self.id(), load_image(&self.hr_path)?, load_image(&self.lr_path)?, self.scale)
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let bad = |line: usize, message: String| Error::Manifest {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(i + 1, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let scale = fields[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| bad(i + 1, format!("bad scale '{}'", fields[2])))?;
        out.push(ManifestEntry {
            hr_path: base.join(fields[0]),
            lr_path: base.join(fields[1]),
            scale,
        });
    }
    Ok(out)
}

/// Writes a manifest, storing paths relative to its directory when possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let rel = |p: &Path| {
        p.strip_prefix(base)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    };
    let mut text = String::new();
    for e in entries {
        text.push_str(&format!("{}\t{}\t{}\n", rel(&e.hr_path), rel(&e.lr_path), e.scale));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_pairs(entries: &[ManifestEntry]) -> Result<Vec<PatchPair>> {
    entries.iter().map(ManifestEntry::load).collect()
}

/// Crops every HR PNG in `hr_dir` into `patch × patch` tiles, synthesizes
/// each LR tile by bicubic downscaling, and writes the pairs plus a manifest
/// to `out_dir`. Returns the manifest path.
pub fn make_dataset(
    hr_dir: &Path,
    scale: usize,
    patch: usize,
    stride: usize,
    out_dir: &Path,
) -> Result<PathBuf> {
    if scale < 2 || patch == 0 || patch % scale != 0 {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch} must be a positive multiple of scale {scale} (scale >= 2)"
        )));
    }
    let sources = png_stems(hr_dir)?;
    let mut images = Vec::with_capacity(sources.len());
    let mut unreadable = Vec::new();
    for (stem, path) in &sources {
        match load_image(path) {
            Ok(img) => images.push((stem.clone(), img)),
            Err(e) => unreadable.push(format!("{} ({e})", path.display())),
        }
    }
    if !unreadable.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "unreadable inputs: {}",
            unreadable.join("; ")
        )));
    }
    let hr_out = out_dir.join("hr");
    let lr_out = out_dir.join("lr");
    for d in [&hr_out, &lr_out] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut entries = Vec::new();
    for (stem, img) in &images {
        if img.height() < patch || img.width() < patch {
            log::warn!("{stem}: {}x{} smaller than patch {patch}, skipped", img.height(), img.width());
            continue;
        }
        for (k, hr) in extract_patches(img, patch, stride)?.into_iter().enumerate() {
            let name = format!("{stem}_{k:04}.png");
            let lr = bicubic_resize(&hr, patch / scale, patch / scale)?;
            let (hr_path, lr_path) = (hr_out.join(&name), lr_out.join(&name));
            save_image(&hr, &hr_path)?;
            save_image(&lr, &lr_path)?;
            entries.push(ManifestEntry { hr_path, lr_path, scale });
        }
    }
    if entries.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no patches produced from {}",
            hr_dir.display()
        )));
    }
    let manifest = out_dir.join(MANIFEST_NAME);
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{ImageTensor, Range};

    #[test]
    fn manifest_roundtrip_with_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        let entries = vec![ManifestEntry {
            hr_path: dir.path().join("hr/a.png"),
            lr_path: dir.path().join("lr/a.png"),
            scale: 4,
        }];
        write_manifest(&path, &entries).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "hr/a.png\tlr/a.png\t4\n");
        assert_eq!(read_manifest(&path).unwrap(), entries);
        assert_eq!(entries[0].id(), "a");
    }

    #[test]
    fn malformed_manifest_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        fs::write(&path, "# comment\n\na.png\tb.png\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Manifest { .. })));
        fs::write(&path, "a.png\tb.png\tfour\n").unwrap();
        assert!(read_manifest(&path).is_err());
    }

    #[test]
    fn single_image_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let hr_dir = dir.path().join("src");
        fs::create_dir(&hr_dir).unwrap();
        let img = ImageTensor::from_fn(3, 64, 64, Range::Unit, |c, y, x| {
            ((c * 31 + y * 7 + x * 3) % 255) as f64 / 255.0
        })
        .unwrap();
        save_image(&img, hr_dir.join("pic.png")).unwrap();
        let out = dir.path().join("ds");
        let manifest = make_dataset(&hr_dir, 4, 64, 64, &out).unwrap();
        let entries = read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 1);
        let pair = entries[0].load().unwrap();
        assert_eq!(pair.hr.dims(), (3, 64, 64));
        assert_eq!(pair.lr.dims(), (3, 16, 16));
        assert_eq!(pair.hr, img);
    }

    #[test]
    fn empty_output_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let hr_dir = dir.path().join("src");
        fs::create_dir(&hr_dir).unwrap();
        assert!(make_dataset(&hr_dir, 4, 32, 32, &dir.path().join("o")).is_err());
        save_image(&ImageTensor::filled(1, 8, 8, 0.5, Range::Unit), hr_dir.join("tiny.png")).unwrap();
        assert!(make_dataset(&hr_dir, 4, 32, 32, &dir.path().join("o")).is_err());
        assert!(make_dataset(&hr_dir, 4, 30, 30, &dir.path().join("o")).is_err());
    }

    #[test]
    fn unreadable_inputs_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("broken.png"), b"nope").unwrap();
        let err = make_dataset(dir.path(), 2, 4, 4, &dir.path().join("o")).unwrap_err();
        assert!(err.to_string().contains("broken.png"));
    }
}
