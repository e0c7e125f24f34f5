//! Pre-extracted spatial image features.
//!
//! A feature store is a directory holding one tensor container per image,
//! `<image-key>.mnt`, plus `manifest.txt` with one `key L D` line per image.
//! Every image in a store shares the same `(L, D)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, IoContext, Result};
use crate::tensor::io::{load_tensor, save_tensor};
use crate::tensor::ops::l2_normalize_slice;
use crate::tensor::{Rng, Tensor};

pub const MANIFEST: &str = "manifest.txt";
pub const FEATURE_EXT: &str = "mnt";

/// Spatial annotations `a_1 … a_L` of one image, an `L × D` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageAnnotations {
    annotations: Tensor,
    normalized: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureNorm {
    None,
    /// Each spatial row scaled to unit ℓ2 norm.
    Row,
    /// The whole tensor scaled to unit ℓ2 norm.
    Tensor,
}

impl FromStr for FeatureNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FeatureNorm::None),
            "row" => Ok(FeatureNorm::Row),
            "tensor" => Ok(FeatureNorm::Tensor),
            _ => Err(Error::Config(format!("unknown feature normalization {s:?}"))),
        }
    }
}

impl FeatureNorm {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureNorm::None => "none",
            FeatureNorm::Row => "row",
            FeatureNorm::Tensor => "tensor",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureStyle {
    Dense,
    /// About 90% of entries zero.
    Sparse,
}

impl ImageAnnotations {
    pub fn new(annotations: Tensor) -> Result<Self> {
        if annotations.rank() != 2 {
            return Err(Error::format(format!(
                "image annotations must be [L, D], got {:?}",
                annotations.shape()
            )));
        }
        for l in 0..annotations.rows() {
            if annotations.row(l).iter().any(|v| !v.is_finite()) {
                return Err(Error::data(format!(
                    "non-finite value in image feature row {l}"
                )));
            }
        }
        Ok(ImageAnnotations {
            annotations,
            normalized: false,
        })
    }

    pub fn positions(&self) -> usize {
        self.annotations.rows()
    }

    pub fn depth(&self) -> usize {
        self.annotations.cols()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.annotations
    }

    pub fn row(&self, l: usize) -> &[f64] {
        self.annotations.row(l)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Reads a rank-3 `(H, W, D)` or rank-2 `(L, D)` container. Rank-3 inputs are
/// flattened row-major into `H·W` positions.
pub fn load_features(path: &Path) -> Result<ImageAnnotations> {
    let t = load_tensor(path)?;
    let t = match *t.shape() {
        [h, w, d] => t.reshape(&[h * w, d])?,
        [_, _] => t,
        ref s => {
            return Err(Error::format(format!(
                "{}: features must be rank 2 or 3, got shape {s:?}",
                path.display()
            )))
        }
    };
    ImageAnnotations::new(t).map_err(|e| match e {
        Error::Data(m) => Error::data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn normalize_features(feats: &ImageAnnotations, norm: FeatureNorm) -> ImageAnnotations {
    let mut t = feats.annotations.clone();
    match norm {
        FeatureNorm::None => return feats.clone(),
        FeatureNorm::Row => {
            for l in 0..t.rows() {
                l2_normalize_slice(t.row_mut(l));
            }
        }
        FeatureNorm::Tensor => l2_normalize_slice(t.data_mut()),
    }
    ImageAnnotations {
        annotations: t,
        normalized: true,
    }
}

/// Deterministic pseudo-random non-negative features.
pub fn synth_features(seed: u64, positions: usize, depth: usize, style: FeatureStyle) -> Result<ImageAnnotations> {
    let mut rng = Rng::new(seed);
    let mut t = Tensor::zeros(&[positions, depth])?;
    for v in t.data_mut() {
        let keep = match style {
            FeatureStyle::Dense => true,
            FeatureStyle::Sparse => rng.bernoulli(0.1),
        };
        let x = rng.normal().abs();
        if keep {
            *v = x;
        }
    }
    ImageAnnotations::new(t)
}

/// Images keyed by name, all sharing one `(L, D)`.
#[derive(Clone, Debug)]
pub struct FeatureStore {
    positions: usize,
    depth: usize,
    images: BTreeMap<String, ImageAnnotations>,
}

impl FeatureStore {
    pub fn from_images(images: BTreeMap<String, ImageAnnotations>) -> Result<Self> {
        let mut dims = None;
        for (k, img) in &images {
            let d = (img.positions(), img.depth());
            match dims {
                None => dims = Some(d),
                Some(expected) if expected != d => {
                    return Err(Error::data(format!(
                        "image {k} has shape {d:?}, store uses {expected:?}"
                    )))
                }
                _ => {}
            }
        }
        let (positions, depth) =
            dims.ok_or_else(|| Error::data("feature store contains no images"))?;
        Ok(FeatureStore {
            positions,
            depth,
            images,
        })
    }

    /// Loads every image listed in the manifest, checking the declared shapes.
    pub fn open(dir: &Path, norm: FeatureNorm) -> Result<Self> {
        let manifest = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&manifest).with_path(&manifest)?;
        let mut declared: Option<(usize, usize)> = None;
        let mut images = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| -> Result<usize> {
                s.parse()
                    .map_err(|_| Error::parse(&manifest, i + 1, format!("bad size {s:?}")))
            };
            if f.len() != 3 {
                return Err(Error::parse(&manifest, i + 1, "expected `key L D`"));
            }
            let dims = (parse(f[1])?, parse(f[2])?);
            match declared {
                None => declared = Some(dims),
                Some(d) if d != dims => {
                    return Err(Error::data(format!(
                        "{}: line {} declares {dims:?}, earlier entries {d:?}",
                        manifest.display(),
                        i + 1
                    )))
                }
                _ => {}
            }
            let path = dir.join(format!("{}.{FEATURE_EXT}", f[0]));
            let img = load_features(&path)?;
            if (img.positions(), img.depth()) != dims {
                return Err(Error::data(format!(
                    "{}: shape ({}, {}) differs from manifest {dims:?}",
                    path.display(),
                    img.positions(),
                    img.depth()
                )));
            }
            images.insert(f[0].to_string(), normalize_features(&img, norm));
        }
        FeatureStore::from_images(images)
    }

    /// Writes one container per image plus the manifest.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_path(dir)?;
        let mut manifest = String::new();
        for (k, img) in &self.images {
            save_tensor(&dir.join(format!("{k}.{FEATURE_EXT}")), img.tensor())?;
            let _ = writeln!(manifest, "{k} {} {}", self.positions, self.depth);
        }
        let path = dir.join(MANIFEST);
        std::fs::write(&path, manifest).with_path(&path)
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, key: &str) -> Result<&ImageAnnotations> {
        self.images
            .get(key)
            .ok_or_else(|| Error::data(format!("image key {key:?} not in feature store")))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.images.contains_key(key)
    }
}
