//! Image/mask/covariate corpora: directory layout, loading, resizing,
//! train/test splitting, and a synthetic stand-in corpus.
//!
//! A dataset directory holds
//!
//! ```text
//! manifest.csv     id,image_path,mask_path      (paths relative to the directory)
//! covariates.csv   id,pitch,roll,yaw,occlusion,gender,ethnicity   (optional)
//! split.csv        id,split                     (optional; split is train|test)
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evaluation::read_csv_rows;
use crate::mask::LabelMask;
use crate::tensor::{Scalar, Shape, Tensor};

pub const DEFAULT_WIDTH: usize = 480;
pub const DEFAULT_HEIGHT: usize = 360;

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const COVARIATES_FILE: &str = "covariates.csv";
pub const SPLIT_FILE: &str = "split.csv";

pub const COVARIATE_FACTORS: [&str; 6] = ["pitch", "roll", "yaw", "occlusion", "gender", "ethnicity"];
pub const UNKNOWN: &str = "unknown";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("split must be train or test, got `{other}`"))),
        }
    }
}

/// Categorical annotation labels; the vocabulary is open and every factor
/// may be `unknown`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Covariates {
    labels: [String; 6],
}

impl Default for Covariates {
    fn default() -> Self {
        Covariates {
            labels: std::array::from_fn(|_| UNKNOWN.to_string()),
        }
    }
}

impl Covariates {
    /// Labels in [`COVARIATE_FACTORS`] order.
    pub fn new(labels: [String; 6]) -> Self {
        Covariates { labels }
    }

    pub fn get(&self, factor: &str) -> Option<&str> {
        COVARIATE_FACTORS
            .iter()
            .position(|f| *f == factor)
            .map(|i| self.labels[i].as_str())
    }

    pub fn labels(&self) -> &[String; 6] {
        &self.labels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    pub image: RgbImage,
    pub mask: LabelMask,
    pub covariates: Covariates,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub covariates: Option<PathBuf>,
    pub split: Option<PathBuf>,
}

impl DatasetManifest {
    /// Reads `manifest.csv` under `root` and notes which optional files exist.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest = root.join(MANIFEST_FILE);
        if !manifest.is_file() {
            return Err(Error::DatasetNotFound(root));
        }
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (_, f) in read_csv_rows(&manifest, &["id", "image_path", "mask_path"])? {
            if !seen.insert(f[0].clone()) {
                return Err(Error::DuplicateId(f[0].clone()));
            }
            entries.push(ManifestEntry {
                id: f[0].clone(),
                image: PathBuf::from(&f[1]),
                mask: PathBuf::from(&f[2]),
            });
        }
        let opt = |name: &str| Some(root.join(name)).filter(|p| p.is_file());
        Ok(DatasetManifest {
            covariates: opt(COVARIATES_FILE),
            split: opt(SPLIT_FILE),
            root,
            entries,
        })
    }

    pub fn write(&self) -> Result<()> {
        let mut wr = csv::Writer::from_path(self.root.join(MANIFEST_FILE))?;
        wr.write_record(["id", "image_path", "mask_path"])?;
        for e in &self.entries {
            wr.write_record([e.id.as_str(), &e.image.to_string_lossy(), &e.mask.to_string_lossy()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn read_covariates_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, Covariates>> {
    let mut header = vec!["id"];
    header.extend(COVARIATE_FACTORS);
    let mut out = BTreeMap::new();
    for (_, f) in read_csv_rows(path.as_ref(), &header)? {
        let labels = std::array::from_fn(|i| {
            let v = f[i + 1].trim();
            if v.is_empty() {
                UNKNOWN.to_string()
            } else {
                v.to_string()
            }
        });
        if out.insert(f[0].clone(), Covariates::new(labels)).is_some() {
            return Err(Error::DuplicateId(f[0].clone()));
        }
    }
    Ok(out)
}

pub fn write_covariates_csv<'a>(
    path: impl AsRef<Path>,
    rows: impl IntoIterator<Item = (&'a str, &'a Covariates)>,
) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    let mut header = vec!["id"];
    header.extend(COVARIATE_FACTORS);
    wr.write_record(&header)?;
    for (id, c) in rows {
        let mut row = vec![id];
        row.extend(c.labels().iter().map(String::as_str));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_split_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, Split>> {
    let path = path.as_ref();
    let mut out = BTreeMap::new();
    for (line, f) in read_csv_rows(path, &["id", "split"])? {
        let split = f[1].parse().map_err(|_| Error::Malformed {
            path: path.to_path_buf(),
            line,
            msg: format!("bad split `{}`", f[1]),
        })?;
        if out.insert(f[0].clone(), split).is_some() {
            return Err(Error::DuplicateId(f[0].clone()));
        }
    }
    Ok(out)
}

pub fn write_split_csv<'a>(path: impl AsRef<Path>, rows: impl IntoIterator<Item = (&'a str, Split)>) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    wr.write_record(["id", "split"])?;
    for (id, s) in rows {
        wr.write_record([id, &s.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

fn decode(id: &str, path: &Path) -> Result<image::DynamicImage> {
    if !path.is_file() {
        return Err(Error::MissingFile {
            id: id.to_string(),
            path: path.to_path_buf(),
        });
    }
    image::open(path).map_err(|source| Error::Decode {
        id: id.to_string(),
        path: path.to_path_buf(),
        source,
    })
}

/// Decodes every sample, binarizes masks (nonzero → ear) and joins
/// covariates and split assignments by id.
pub fn load(manifest: &DatasetManifest) -> Result<Vec<SampleRecord>> {
    let covariates = manifest.covariates.as_ref().map(read_covariates_csv).transpose()?;
    let splits = manifest.split.as_ref().map(read_split_csv).transpose()?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        if !seen.insert(e.id.as_str()) {
            return Err(Error::DuplicateId(e.id.clone()));
        }
        let image = decode(&e.id, &manifest.root.join(&e.image))?.to_rgb8();
        let mask = LabelMask::from_luma(&decode(&e.id, &manifest.root.join(&e.mask))?.to_luma8());
        if (image.width() as usize, image.height() as usize) != (mask.width(), mask.height()) {
            return Err(Error::SizeMismatch {
                id: e.id.clone(),
                image: image.dimensions(),
                mask: (mask.width() as u32, mask.height() as u32),
            });
        }
        out.push(SampleRecord {
            covariates: covariates
                .as_ref()
                .and_then(|c| c.get(&e.id).cloned())
                .unwrap_or_default(),
            split: splits.as_ref().and_then(|s| s.get(&e.id).copied()),
            id: e.id.clone(),
            image,
            mask,
        });
    }
    Ok(out)
}

/// Writes records as PNG files plus manifest, covariate and (when every
/// record has one) split files under `root`.
pub fn save(records: &[SampleRecord], root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref().to_path_buf();
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("masks"))?;
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let image = PathBuf::from("images").join(format!("{}.png", r.id));
        let mask = PathBuf::from("masks").join(format!("{}.png", r.id));
        r.image.save_with_format(root.join(&image), image::ImageFormat::Png)?;
        r.mask.write_png(root.join(&mask))?;
        entries.push(ManifestEntry {
            id: r.id.clone(),
            image,
            mask,
        });
    }
    let covariates = root.join(COVARIATES_FILE);
    write_covariates_csv(&covariates, records.iter().map(|r| (r.id.as_str(), &r.covariates)))?;
    let split = if records.iter().all(|r| r.split.is_some()) {
        let p = root.join(SPLIT_FILE);
        write_split_csv(&p, records.iter().map(|r| (r.id.as_str(), r.split.unwrap())))?;
        Some(p)
    } else {
        None
    };
    let manifest = DatasetManifest {
        root,
        entries,
        covariates: Some(covariates),
        split,
    };
    manifest.write()?;
    Ok(manifest)
}

/// Nearest-neighbor resampling with pixel-center alignment.
pub fn resize_mask(mask: &LabelMask, width: usize, height: usize) -> LabelMask {
    let (sw, sh) = (mask.width(), mask.height());
    LabelMask::from_fn(width, height, |x, y| {
        let sx = (((x as f64 + 0.5) * sw as f64 / width as f64) as usize).min(sw - 1);
        let sy = (((y as f64 + 0.5) * sh as f64 / height as f64) as usize).min(sh - 1);
        mask.is_ear(sx, sy)
    })
}

/// Bilinear (triangle filter) for the image, nearest-neighbor for the mask.
pub fn resize(record: &SampleRecord, width: usize, height: usize) -> SampleRecord {
    assert!(width > 0 && height > 0, "resize target must be non-empty");
    if (record.image.width() as usize, record.image.height() as usize) == (width, height)
        && (record.mask.width(), record.mask.height()) == (width, height)
    {
        return record.clone();
    }
    SampleRecord {
        image: imageops::resize(&record.image, width as u32, height as u32, FilterType::Triangle),
        mask: resize_mask(&record.mask, width, height),
        ..record.clone()
    }
}

/// Train count used when none is configured: three quarters of the corpus.
pub fn default_train_count(total: usize) -> usize {
    (total * 3).div_ceil(4)
}

/// Seeded random partition of `ids` into `train_count` train and the rest
/// test, returned in input order.
pub fn split(ids: &[String], train_count: usize, seed: u64) -> Result<Vec<(String, Split)>> {
    if train_count > ids.len() {
        return Err(Error::InvalidConfig(format!(
            "train count {train_count} exceeds {} records",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![Split::Test; ids.len()];
    for &i in &order[..train_count] {
        assignment[i] = Split::Train;
    }
    Ok(ids.iter().cloned().zip(assignment).collect())
}

pub fn apply_split(records: &mut [SampleRecord], train_count: usize, seed: u64) -> Result<()> {
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    for (r, (_, s)) in records.iter_mut().zip(split(&ids, train_count, seed)?) {
        r.split = Some(s);
    }
    Ok(())
}

/// Stacks RGB images into an `(n, 3, h, w)` tensor scaled to [-0.5, 0.5].
pub fn images_to_tensor<T: Scalar>(images: &[&RgbImage]) -> Result<Tensor<T>> {
    let Some(first) = images.first() else {
        return Err(Error::EmptyDataset);
    };
    let (w, h) = (first.width() as usize, first.height() as usize);
    if let Some(bad) = images.iter().find(|i| (i.width() as usize, i.height() as usize) != (w, h)) {
        return Err(Error::Dimensions(format!(
            "batch mixes {w}×{h} and {}×{} images",
            bad.width(),
            bad.height()
        )));
    }
    let shape = Shape::new(images.len(), 3, h, w);
    let scale = T::lit(1.0 / 255.0);
    let half = T::lit(0.5);
    Ok(Tensor::from_fn(shape, |n, c, y, x| {
        T::from_u8(images[n].get_pixel(x as u32, y as u32)[c]).unwrap() * scale - half
    }))
}

// ---------------------------------------------------------------------------
// synthetic corpus

const PITCH: [&str; 3] = ["up", "neutral", "down"];
const ROLL: [&str; 3] = ["to-left", "neutral", "to-right"];
const YAW: [&str; 4] = ["frontal", "middle-left", "middle-right", "profile"];
const OCCLUSION: [&str; 3] = ["none", "mild", "severe"];
const GENDER: [&str; 2] = ["female", "male"];
const ETHNICITY: [&str; 4] = ["asian", "black", "caucasian", "hispanic"];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Range of the ear-pixel fraction of a single blob.
    pub blob_fraction: (f64, f64),
    /// Probability that an image carries a second blob.
    pub two_blob_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 100,
            width: 64,
            height: 48,
            seed: 0,
            blob_fraction: (0.008, 0.016),
            two_blob_probability: 0.3,
        }
    }
}

impl SynthConfig {
    /// Expected corpus-wide ear-pixel fraction.
    pub fn expected_fraction(&self) -> f64 {
        let per_blob = 0.5 * (self.blob_fraction.0 + self.blob_fraction.1);
        per_blob * (1.0 + self.two_blob_probability)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.blob_fraction;
        if self.width < 32 || self.height < 32 {
            return Err(Error::InvalidConfig(format!(
                "synthetic images must be at least 32×32, got {}×{}",
                self.width, self.height
            )));
        }
        if !(lo > 0.0 && lo <= hi && hi < 0.2) {
            return Err(Error::InvalidConfig(format!("blob fraction range ({lo}, {hi}) must satisfy 0 < lo ≤ hi < 0.2")));
        }
        if !(0.0..=1.0).contains(&self.two_blob_probability) {
            return Err(Error::InvalidConfig("two-blob probability must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 + 0.5 - self.cx, y as f64 + 0.5 - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }

    /// Radius of the enclosing circle.
    fn reach(&self) -> f64 {
        self.a.max(self.b)
    }
}

fn random_ellipse(rng: &mut ChaCha8Rng, area: f64, width: usize, height: usize) -> Ellipse {
    // upright-ish, taller than wide
    let aspect = rng.gen_range(1.3..1.9);
    let minor = (area / (std::f64::consts::PI * aspect)).sqrt().max(1.5);
    let major = minor * aspect;
    // major axis within ±0.5 rad of vertical
    let theta = rng.gen_range(-0.5..0.5) + std::f64::consts::FRAC_PI_2;
    let margin = major + 1.0;
    Ellipse {
        cx: rng.gen_range(margin..width as f64 - margin),
        cy: rng.gen_range(margin..height as f64 - margin),
        a: major,
        b: minor,
        cos: theta.cos(),
        sin: theta.sin(),
    }
}

fn synth_background(rng: &mut ChaCha8Rng, width: usize, height: usize) -> RgbImage {
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(20.0..90.0));
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.05..0.6),
                rng.gen_range(0.05..0.6),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(5.0..15.0),
            )
        })
        .collect();
    let mut img = RgbImage::new(width as u32, height as u32);
    for y in 0..height {
        for x in 0..width {
            let t: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * (fx * x as f64 + fy * y as f64 + ph).sin())
                .sum();
            let px = std::array::from_fn(|c| (base[c] + t + rng.gen_range(-8.0..8.0)).clamp(0.0, 255.0) as u8);
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

/// Corpus of textured backgrounds carrying one or two bright elliptical
/// "ear" blobs with exact masks and random covariate labels.
///
/// The masks have at most two connected components: blobs are placed so
/// their bounding circles stay more than two pixels apart.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<SampleRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (w, h) = (config.width, config.height);
    let digits = config.count.max(1).to_string().len().max(4);
    let mut out = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let mut image = synth_background(&mut rng, w, h);
        let blobs = if rng.gen_bool(config.two_blob_probability) { 2 } else { 1 };
        let mut placed: Vec<Ellipse> = Vec::with_capacity(blobs);
        while placed.len() < blobs {
            let area = rng.gen_range(config.blob_fraction.0..=config.blob_fraction.1) * (w * h) as f64;
            let e = random_ellipse(&mut rng, area, w, h);
            let clear = placed
                .iter()
                .all(|p| ((p.cx - e.cx).powi(2) + (p.cy - e.cy).powi(2)).sqrt() > p.reach() + e.reach() + 2.0);
            if clear {
                placed.push(e);
            }
        }
        let mask = LabelMask::from_fn(w, h, |x, y| placed.iter().any(|e| e.contains(x, y)));
        let tone: [f64; 3] = [
            rng.gen_range(200.0..245.0),
            rng.gen_range(150.0..190.0),
            rng.gen_range(120.0..160.0),
        ];
        for y in 0..h {
            for x in 0..w {
                if mask.is_ear(x, y) {
                    let px = std::array::from_fn(|c| (tone[c] + rng.gen_range(-8.0..8.0)).clamp(0.0, 255.0) as u8);
                    image.put_pixel(x as u32, y as u32, Rgb(px));
                }
            }
        }
        let pick = |rng: &mut ChaCha8Rng, vocab: &[&str]| vocab[rng.gen_range(0..vocab.len())].to_string();
        let covariates = Covariates::new([
            pick(&mut rng, &PITCH),
            pick(&mut rng, &ROLL),
            pick(&mut rng, &YAW),
            pick(&mut rng, &OCCLUSION),
            pick(&mut rng, &GENDER),
            pick(&mut rng, &ETHNICITY),
        ]);
        out.push(SampleRecord {
            id: format!("synth{:0digits$}", i),
            image,
            mask,
            covariates,
            split: None,
        });
    }
    Ok(out)
}
