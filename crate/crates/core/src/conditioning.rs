//! Condition images: the upscaled guide concatenated with the latent.
//!
//! A condition is either the bicubic upscale of the LR input or an image
//! produced elsewhere (for instance by a pretrained super-resolution network)
//! and read from disk. External files are matched to LR images by file stem;
//! a mapping file (`id<TAB>path` lines) overrides the stem rule.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::dataset::ManifestEntry;
use crate::error::{Error, Result};
use crate::image::{bicubic_resize, dims_str, encode_png, load_image, ImageTensor};

pub const CONDITION_MANIFEST_NAME: &str = "conditions.tsv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionSource {
    Bicubic,
    External {
        dir: PathBuf,
        mapping: BTreeMap<String, PathBuf>,
    },
}

impl ConditionSource {
    pub fn external(dir: impl Into<PathBuf>) -> Self {
        ConditionSource::External {
            dir: dir.into(),
            mapping: BTreeMap::new(),
        }
    }

    /// Adds the `id<TAB>path` overrides from a mapping file; relative paths
    /// resolve against the mapping file's directory.
    pub fn with_mapping_file(self, path: &Path) -> Result<Self> {
        match self {
            ConditionSource::Bicubic => Err(Error::InvalidArgument(
                "a mapping file only applies to external conditions".into(),
            )),
            ConditionSource::External { dir, mut mapping } => {
                mapping.extend(read_condition_manifest(path)?);
                Ok(ConditionSource::External { dir, mapping })
            }
        }
    }

    fn external_path(&self, id: &str) -> Option<PathBuf> {
        match self {
            ConditionSource::Bicubic => None,
            ConditionSource::External { dir, mapping } => Some(
                mapping
                    .get(id)
                    .cloned()
                    .unwrap_or_else(|| dir.join(format!("{id}.png"))),
            ),
        }
    }
}

impl fmt::Display for ConditionSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionSource::Bicubic => write!(f, "bicubic"),
            ConditionSource::External { dir, .. } => write!(f, "external:{}", dir.display()),
        }
    }
}

impl FromStr for ConditionSource {
    type Err = Error;

    /// `bicubic` or `external:<dir>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "bicubic" {
            Ok(ConditionSource::Bicubic)
        } else if let Some(dir) = s.strip_prefix("external:") {
            Ok(ConditionSource::external(dir))
        } else {
            Err(Error::InvalidArgument(format!(
                "condition source must be 'bicubic' or 'external:<dir>', got '{s}'"
            )))
        }
    }
}

/// Condition image for one LR input, in signed range, `scale ×` its size.
pub fn condition_for(source: &ConditionSource, lr: &ImageTensor, scale: usize, id: &str) -> Result<ImageTensor> {
    if scale < 2 {
        return Err(Error::InvalidArgument(format!("scale must be >= 2, got {scale}")));
    }
    let (c, h, w) = lr.dims();
    let expected = (c, scale * h, scale * w);
    let img = match source.external_path(id) {
        None => bicubic_resize(&lr.as_unit(), expected.1, expected.2)?,
        Some(path) => {
            if !path.is_file() {
                return Err(Error::MissingCondition(format!("{id} (looked for {})", path.display())));
            }
            let img = load_image(&path)?;
            if img.dims() != expected {
                return Err(Error::shape(
                    format!("{} for condition '{id}'", dims_str(expected)),
                    dims_str(img.dims()),
                ));
            }
            img
        }
    };
    img.to_signed()
}

pub fn read_condition_manifest(path: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, p) = line.split_once('\t').ok_or_else(|| Error::Manifest {
            path: path.to_path_buf(),
            message: format!("line {}: expected 'id<TAB>path'", i + 1),
        })?;
        out.insert(id.to_string(), base.join(p));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheOutcome {
    pub manifest: PathBuf,
    pub written: usize,
    pub unchanged: usize,
}

fn digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Materializes the condition of every manifest entry as `<out_dir>/<id>.png`
/// and writes `conditions.tsv`. Files whose content hash already matches are
/// left untouched.
pub fn cache_conditions(source: &ConditionSource, entries: &[ManifestEntry], out_dir: &Path) -> Result<CacheOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = 0;
    let mut unchanged = 0;
    let mut listing = String::new();
    for entry in entries {
        let id = entry.id();
        let lr = load_image(&entry.lr_path)?;
        let cond = condition_for(source, &lr, entry.scale, &id)?;
        let bytes = encode_png(&cond)?;
        let name = format!("{id}.png");
        let path = out_dir.join(&name);
        let same = fs::read(&path).map(|old| digest(&old) == digest(&bytes)).unwrap_or(false);
        if same {
            unchanged += 1;
        } else {
            fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
            written += 1;
        }
        listing.push_str(&format!("{id}\t{name}\n"));
    }
    let manifest = out_dir.join(CONDITION_MANIFEST_NAME);
    let same = fs::read_to_string(&manifest).map(|old| old == listing).unwrap_or(false);
    if !same {
        fs::write(&manifest, &listing).map_err(|e| Error::io(&manifest, e))?;
    }
    Ok(CacheOutcome {
        manifest,
        written,
        unchanged,
    })
}
