//! Dataset ingestion and the bundled synthetic-shapes corpus.
//!
//! Two directory layouts are recognized: a flat `images/` + `labels/` pair
//! and a Cityscapes-style tree (`leftImg8bit/<split>/<city>/` mirrored by
//! `gtFine/` with `_gtFine_labelIds` suffixes). Ingestion never fails on a
//! bad file; it records a skip reason and keeps going.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::segmenter::ColorRuleSegmenter;
use crate::error::{Result, SpicError};
use crate::io::{read_image, read_labels, write_image, write_labels};
use crate::types::{Image, SegmentationMap, DOWNSCALE_FACTOR};

/// One validated (image, annotation) pair. `split` is the directory split
/// tag in the Cityscapes layout and "all" in the flat layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub labels: PathBuf,
    pub split: String,
}

/// A candidate pair that failed validation, with the reason it was skipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

/// Validated dataset: uniform dimensions, labels all below `n_classes`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub skipped: Vec<SkippedFile>,
    /// (height, width) shared by every entry; None when the manifest is empty.
    pub dims: Option<(usize, usize)>,
    /// Smallest class count covering every label seen, i.e. max label + 1.
    pub n_classes: u8,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reloads one entry from disk, revalidating label range.
    pub fn load_entry(&self, index: usize) -> Result<(Image, SegmentationMap)> {
        let e = &self.entries[index];
        let img = read_image(&e.image)?;
        let ssm = read_labels(&e.labels, Some(self.n_classes))?;
        Ok((img, ssm))
    }

    /// Loads every entry, in manifest order.
    pub fn load_all(&self) -> Result<Vec<(String, Image, SegmentationMap)>> {
        (0..self.len())
            .map(|i| {
                let (img, ssm) = self.load_entry(i)?;
                Ok((self.entries[i].id.clone(), img, ssm))
            })
            .collect()
    }
}

/// Directory conventions ingestion understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// `root/images/<id>.png` paired with `root/labels/<id>.png`.
    Flat,
    /// `root/leftImg8bit/<split>/<city>/<stem>_leftImg8bit.png` paired with
    /// `root/gtFine/<split>/<city>/<stem>_gtFine_labelIds.png`.
    CityscapesLike,
}

/// (image path, expected annotation path, id, split) before validation.
struct Candidate {
    image: PathBuf,
    labels: PathBuf,
    id: String,
    split: String,
}

fn dataset_err(path: &Path, reason: impl Into<String>) -> SpicError {
    SpicError::Dataset {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Lists `.png` files directly inside `dir`, sorted by file name.
fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let iter = fs::read_dir(dir).map_err(|e| dataset_err(dir, e.to_string()))?;
    for entry in iter {
        let entry = entry.map_err(|e| dataset_err(dir, e.to_string()))?;
        let p = entry.path();
        if p.is_file() && p.extension().is_some_and(|x| x == "png") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Subdirectories of `dir`, sorted by name. Missing dir is an empty list.
fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let iter = fs::read_dir(dir).map_err(|e| dataset_err(dir, e.to_string()))?;
    for entry in iter {
        let entry = entry.map_err(|e| dataset_err(dir, e.to_string()))?;
        let p = entry.path();
        if p.is_dir() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn flat_candidates(root: &Path) -> Result<Vec<Candidate>> {
    let images_dir = root.join("images");
    if !images_dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for image in png_files(&images_dir)? {
        let stem = image
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| dataset_err(&image, "non-UTF-8 file name"))?
            .to_string();
        out.push(Candidate {
            labels: root.join("labels").join(format!("{stem}.png")),
            image,
            id: stem,
            split: "all".into(),
        });
    }
    Ok(out)
}

fn cityscapes_candidates(root: &Path) -> Result<Vec<Candidate>> {
    const IMG_SUFFIX: &str = "_leftImg8bit";
    const LBL_SUFFIX: &str = "_gtFine_labelIds";
    let mut out = Vec::new();
    for split_dir in subdirs(&root.join("leftImg8bit"))? {
        let split = split_dir.file_name().unwrap().to_string_lossy().to_string();
        for city_dir in subdirs(&split_dir)? {
            let city = city_dir.file_name().unwrap().to_string_lossy().to_string();
            for image in png_files(&city_dir)? {
                let stem = image
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| dataset_err(&image, "non-UTF-8 file name"))?;
                let Some(base) = stem.strip_suffix(IMG_SUFFIX) else {
                    continue;
                };
                let labels = root
                    .join("gtFine")
                    .join(&split)
                    .join(&city)
                    .join(format!("{base}{LBL_SUFFIX}.png"));
                let id = format!("{split}/{city}/{base}");
                out.push(Candidate {
                    labels,
                    image,
                    id,
                    split: split.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Scans `root` under the given layout and validates every candidate pair.
/// A pair enters the manifest only if both files decode, dimensions agree
/// and are divisible by the downscale factor, and match the corpus-wide
/// dimensions set by the first accepted pair. Everything else lands in
/// `skipped` with a reason.
pub fn ingest(root: &Path, layout: Layout) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(dataset_err(root, "not a directory"));
    }
    let candidates = match layout {
        Layout::Flat => flat_candidates(root)?,
        Layout::CityscapesLike => cityscapes_candidates(root)?,
    };

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut max_label = 0u8;
    for cand in candidates {
        if !cand.labels.is_file() {
            skipped.push(SkippedFile {
                path: cand.image,
                reason: format!("missing annotation {}", cand.labels.display()),
            });
            continue;
        }
        let img = match read_image(&cand.image) {
            Ok(x) => x,
            Err(e) => {
                skipped.push(SkippedFile {
                    path: cand.image,
                    reason: format!("unreadable image: {e}"),
                });
                continue;
            }
        };
        let ssm = match read_labels(&cand.labels, None) {
            Ok(s) => s,
            Err(e) => {
                skipped.push(SkippedFile {
                    path: cand.labels,
                    reason: format!("unreadable annotation: {e}"),
                });
                continue;
            }
        };
        let (h, w) = (img.height(), img.width());
        if (ssm.height(), ssm.width()) != (h, w) {
            skipped.push(SkippedFile {
                path: cand.labels,
                reason: format!(
                    "annotation {}x{} does not match image {}x{}",
                    ssm.height(),
                    ssm.width(),
                    h,
                    w
                ),
            });
            continue;
        }
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                skipped.push(SkippedFile {
                    path: cand.image,
                    reason: format!(
                        "dimensions {h}x{w} differ from corpus {}x{}",
                        d.0, d.1
                    ),
                });
                continue;
            }
            Some(_) => {}
        }
        let entry_max = ssm.labels().iter().copied().max().unwrap_or(0);
        if entry_max == u8::MAX {
            skipped.push(SkippedFile {
                path: cand.labels,
                reason: "label 255 leaves no room for a class count".into(),
            });
            continue;
        }
        max_label = max_label.max(entry_max);
        entries.push(ManifestEntry {
            id: cand.id,
            image: cand.image,
            labels: cand.labels,
            split: cand.split,
        });
    }

    entries.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        entries,
        skipped,
        dims,
        n_classes: max_label + 1,
    })
}

/// Class count of the synthetic corpus: background plus three shape classes.
pub const SYNTHETIC_CLASSES: u8 = 4;

/// Anchor colors the synthetic corpus is painted from. Generated pixels stay
/// close enough to their anchor that nearest-color classification recovers
/// the ground-truth labels exactly, even after the 8-bit PNG round trip.
pub fn synthetic_palette() -> Vec<[f64; 3]> {
    vec![
        [0.20, 0.30, 0.20],
        [0.80, 0.20, 0.20],
        [0.20, 0.30, 0.80],
        [0.85, 0.80, 0.20],
    ]
}

/// The rule segmenter that is exact on the synthetic corpus.
pub fn synthetic_segmenter() -> ColorRuleSegmenter {
    ColorRuleSegmenter::new(synthetic_palette()).expect("fixed palette is valid")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            count: 8,
            height: 64,
            width: 128,
            seed: 7,
        }
    }
}

// Painting amplitudes. Worst-case deviation from the class anchor is
// background 0.05 + 0.03 = 0.08 and shapes 0.02 + 0.02 = 0.04, both far
// below half the minimum anchor separation, so classification stays exact.
const BG_WAVE: f64 = 0.05;
const BG_NOISE: f64 = 0.03;
const SHAPE_JITTER: f64 = 0.02;
const SHAPE_NOISE: f64 = 0.02;

fn paint(rng: &mut ChaCha12Rng, anchor: [f64; 3], jitter: [f64; 3], noise: f64) -> [f64; 3] {
    let mut px = [0.0; 3];
    for c in 0..3 {
        let v = anchor[c] + jitter[c] + rng.gen_range(-noise..=noise);
        px[c] = v.clamp(0.0, 1.0);
    }
    px
}

/// Stamps `class` over every in-bounds pixel the shape covers. Shape kind is
/// tied to the class: 1 rectangle, 2 disk, 3 right triangle.
fn stamp_shape(
    labels: &mut ndarray::Array2<u8>,
    rng: &mut ChaCha12Rng,
    class: u8,
    size: usize,
) {
    let (h, w) = labels.dim();
    let y0 = rng.gen_range(0..h.saturating_sub(size).max(1));
    let x0 = rng.gen_range(0..w.saturating_sub(size).max(1));
    for dy in 0..size {
        for dx in 0..size {
            let inside = match class {
                1 => true,
                2 => {
                    let r = size as f64 / 2.0;
                    let cy = dy as f64 + 0.5 - r;
                    let cx = dx as f64 + 0.5 - r;
                    cy * cy + cx * cx <= r * r
                }
                _ => dx + dy < size,
            };
            let (y, x) = (y0 + dy, x0 + dx);
            if inside && y < h && x < w {
                labels[[y, x]] = class;
            }
        }
    }
}

/// Generates one synthetic image and its exact ground-truth labels:
/// textured background, a few large shapes, and a few 2-3 px shapes small
/// enough that 4x average downscaling erases them.
pub fn synthetic_pair(cfg: &SyntheticConfig, index: usize) -> Result<(Image, SegmentationMap)> {
    let (h, w) = (cfg.height, cfg.width);
    if h % DOWNSCALE_FACTOR != 0 || w % DOWNSCALE_FACTOR != 0 || h < 16 || w < 16 {
        return Err(SpicError::InvalidConfig(format!(
            "synthetic dimensions {h}x{w} must be >= 16 and divisible by {DOWNSCALE_FACTOR}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(
        cfg.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    let palette = synthetic_palette();

    let mut labels = ndarray::Array2::<u8>::zeros((h, w));
    for large in [true, false] {
        let n = rng.gen_range(2..=3);
        for _ in 0..n {
            let class = rng.gen_range(1..=3) as u8;
            let size = if large {
                rng.gen_range(10..=22.min(h))
            } else {
                rng.gen_range(2..=3)
            };
            stamp_shape(&mut labels, &mut rng, class, size);
        }
    }

    // Per-image jitter is shared by all pixels of a class so each shape is a
    // near-flat patch of its anchor color.
    let mut jitter = [[0.0f64; 3]; 4];
    for row in jitter.iter_mut().skip(1) {
        for v in row.iter_mut() {
            *v = rng.gen_range(-SHAPE_JITTER..=SHAPE_JITTER);
        }
    }
    let phase: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];

    let mut data = ndarray::Array3::<f64>::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let k = labels[[y, x]] as usize;
            let px = if k == 0 {
                let mut wave = [0.0; 3];
                for c in 0..3 {
                    wave[c] = BG_WAVE
                        * (std::f64::consts::TAU * (x as f64 / w as f64 + phase[c])).sin();
                }
                paint(&mut rng, palette[0], wave, BG_NOISE)
            } else {
                paint(&mut rng, palette[k], jitter[k], SHAPE_NOISE)
            };
            for c in 0..3 {
                data[[c, y, x]] = px[c];
            }
        }
    }
    let img = Image::new(data)?;
    let ssm = SegmentationMap::new(labels, SYNTHETIC_CLASSES)?;
    Ok((img, ssm))
}

/// Writes a `count`-image synthetic corpus under `root` in the flat layout
/// and returns the manifest from ingesting it back.
pub fn generate_synthetic(root: &Path, cfg: &SyntheticConfig) -> Result<DatasetManifest> {
    if cfg.count == 0 {
        return Err(SpicError::InvalidConfig("count must be >= 1".into()));
    }
    let images_dir = root.join("images");
    let labels_dir = root.join("labels");
    fs::create_dir_all(&images_dir).map_err(|e| dataset_err(&images_dir, e.to_string()))?;
    fs::create_dir_all(&labels_dir).map_err(|e| dataset_err(&labels_dir, e.to_string()))?;
    for i in 0..cfg.count {
        let (img, ssm) = synthetic_pair(cfg, i)?;
        let name = format!("synthetic_{i:04}.png");
        write_image(&images_dir.join(&name), &img)?;
        write_labels(&labels_dir.join(&name), &ssm)?;
    }
    ingest(root, Layout::Flat)
}
