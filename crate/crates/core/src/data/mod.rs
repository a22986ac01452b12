//! Image sets, IDX ingestion and the sampling used to build training,
//! test and exposure sets.

pub mod idx;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::seed;

pub use idx::{load_idx, IdxError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Fashion,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 2] = [DatasetKind::Mnist, DatasetKind::Fashion];

    /// The unrelated dataset used as an outlier pool.
    pub fn opposite(self) -> Self {
        match self {
            DatasetKind::Mnist => DatasetKind::Fashion,
            DatasetKind::Fashion => DatasetKind::Mnist,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Fashion => "fashion",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mnist" => Ok(DatasetKind::Mnist),
            "fashion" | "fashion-mnist" | "fashion_mnist" => Ok(DatasetKind::Fashion),
            other => Err(DataError::UnknownDataset(other.to_string())),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown dataset `{0}` (expected mnist or fashion)")]
    UnknownDataset(String),
    #[error("class {0} is not present in the set")]
    ClassAbsent(u8),
    #[error("class {class}: need {needed} samples, only {available} available (short by {})", needed - available)]
    Insufficient { class: u8, needed: usize, available: usize },
    #[error("noise factor must be a non-negative number, got {0}")]
    NegativeEpsilon(f64),
    #[error("blend ratio must lie in [0, 1], got {0}")]
    BadRatio(f64),
    #[error("outlier pool is empty")]
    EmptyPool,
    #[error("inconsistent image set: {0}")]
    Inconsistent(String),
}

/// Labelled grayscale images stored contiguously, row-major per image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pixels: Vec<f32>,
    rows: usize,
    cols: usize,
    labels: Vec<u8>,
    pub source: DatasetKind,
    /// Set once pixels may leave [0, 1] (noise augmentation is not clipped).
    pub noisy: bool,
}

impl ImageSet {
    pub fn from_parts(pixels: Vec<f32>, rows: usize, cols: usize, labels: Vec<u8>, source: DatasetKind) -> Result<Self, DataError> {
        if rows == 0 || cols == 0 || pixels.len() != rows * cols * labels.len() {
            return Err(DataError::Inconsistent(format!(
                "{} pixels for {} images of {rows}x{cols}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 9) {
            return Err(DataError::Inconsistent(format!("label {l} outside 0..=9")));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DataError::Inconsistent("pixel outside [0, 1]".into()));
        }
        Ok(Self {
            pixels,
            rows,
            cols,
            labels,
            source,
            noisy: false,
        })
    }

    /// Reads `{prefix}-images-idx3-ubyte[.gz]` and `{prefix}-labels-idx1-ubyte[.gz]`.
    pub fn load_dir(dir: &Path, prefix: &str, source: DatasetKind) -> Result<Self, DataError> {
        let images = read_either(dir, &format!("{prefix}-images-idx3-ubyte"))?;
        let labels = read_either(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
        Ok(load_idx(&images, &labels, source)?)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.pixels_per_image();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn indices_of(&self, class: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let n = self.pixels_per_image();
        let mut pixels = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        Self {
            pixels,
            rows: self.rows,
            cols: self.cols,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            source: self.source,
            noisy: self.noisy,
        }
    }

    /// Appends `other` (same image size) after `self`.
    pub fn concat(&self, other: &ImageSet) -> Result<Self, DataError> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(DataError::Inconsistent("image sizes differ".into()));
        }
        let mut out = self.clone();
        out.pixels.extend_from_slice(&other.pixels);
        out.labels.extend_from_slice(&other.labels);
        out.noisy |= other.noisy;
        Ok(out)
    }

    /// `[n, 1, rows, cols]` tensor of the selected images.
    pub fn batch(&self, indices: &[usize]) -> Tensor<f32> {
        let n = self.pixels_per_image();
        let mut values = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            values.extend_from_slice(self.image(i));
        }
        Tensor::new(&[indices.len(), 1, self.rows, self.cols], values).expect("non-empty batch")
    }
}

fn read_either(dir: &Path, name: &str) -> Result<Vec<u8>, DataError> {
    let plain = dir.join(name);
    let gz = dir.join(format!("{name}.gz"));
    let path = if plain.exists() || !gz.exists() { plain } else { gz };
    std::fs::read(&path).map_err(|source| DataError::Io { path, source })
}

/// Environment variable that overrides the dataset root directory.
pub const DATA_DIR_ENV: &str = "KDAD_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// File name prefix used by the distributed IDX files.
    pub fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Dataset root: `$KDAD_DATA_DIR` if set, else `fallback`.
pub fn data_root(fallback: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => fallback.to_path_buf(),
    }
}

/// Loads `<root>/<dataset>/<prefix>-{images-idx3,labels-idx1}-ubyte[.gz]`.
pub fn load_split(root: &Path, kind: DatasetKind, split: Split) -> Result<ImageSet, DataError> {
    ImageSet::load_dir(&root.join(kind.name()), split.prefix(), kind)
}

/// How a single inlier class is split into train and test material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub inlier_class: u8,
    pub train_count: usize,
    pub test_inlier_count: usize,
    pub test_anomaly_count: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(inlier_class: u8, seed: u64) -> Self {
        Self {
            inlier_class,
            train_count: 6000,
            test_inlier_count: 1000,
            test_anomaly_count: 1000,
            seed,
        }
    }
}

/// Seeded split of the inlier-class indices into `(chosen, rest)`, where
/// `chosen` holds `min(train_count, available)` entries.
pub fn inlier_indices(set: &ImageSet, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    let mut idx = set.indices_of(spec.inlier_class);
    if idx.is_empty() {
        return Err(DataError::ClassAbsent(spec.inlier_class));
    }
    idx.shuffle(&mut seed::rng(spec.seed, "select-inliers", &[u64::from(spec.inlier_class)]));
    let rest = idx.split_off(spec.train_count.min(idx.len()));
    Ok((idx, rest))
}

/// Shuffled training set of the inlier class only.
pub fn select_inliers(set: &ImageSet, spec: &SplitSpec) -> Result<ImageSet, DataError> {
    let (chosen, _) = inlier_indices(set, spec)?;
    Ok(set.subset(&chosen))
}

/// Balanced test set: `test_inlier_count` inliers (label 0) and
/// `test_anomaly_count` anomalies (label 1) split as evenly as possible over
/// the nine other classes. Returns the images (with their class labels) and
/// the binary anomaly labels, in shuffled order.
pub fn make_test_set(full_test: &ImageSet, spec: &SplitSpec) -> Result<(ImageSet, Vec<u8>), DataError> {
    let mut rng = seed::rng(spec.seed, "test-set", &[u64::from(spec.inlier_class)]);
    let mut picked: Vec<(usize, u8)> = Vec::with_capacity(spec.test_inlier_count + spec.test_anomaly_count);

    let mut inliers = full_test.indices_of(spec.inlier_class);
    if inliers.len() < spec.test_inlier_count {
        return Err(DataError::Insufficient {
            class: spec.inlier_class,
            needed: spec.test_inlier_count,
            available: inliers.len(),
        });
    }
    inliers.shuffle(&mut rng);
    picked.extend(inliers[..spec.test_inlier_count].iter().map(|&i| (i, 0)));

    let mut others: Vec<u8> = (0..10).filter(|&c| c != spec.inlier_class).collect();
    // remainder goes to a seeded choice of classes
    others.shuffle(&mut rng);
    let base = spec.test_anomaly_count / others.len();
    let extra = spec.test_anomaly_count % others.len();
    for (k, &class) in others.iter().enumerate() {
        let want = base + usize::from(k < extra);
        if want == 0 {
            continue;
        }
        let mut idx = full_test.indices_of(class);
        if idx.len() < want {
            return Err(DataError::Insufficient {
                class,
                needed: want,
                available: idx.len(),
            });
        }
        idx.shuffle(&mut rng);
        picked.extend(idx[..want].iter().map(|&i| (i, 1)));
    }

    picked.shuffle(&mut rng);
    let indices: Vec<usize> = picked.iter().map(|p| p.0).collect();
    let labels = picked.iter().map(|p| p.1).collect();
    Ok((full_test.subset(&indices), labels))
}

/// Adds `epsilon · N(0, 1)` to every pixel; results are not clipped.
pub fn add_noise(set: &ImageSet, epsilon: f64, seed: u64) -> Result<ImageSet, DataError> {
    if epsilon.is_nan() || epsilon < 0.0 {
        return Err(DataError::NegativeEpsilon(epsilon));
    }
    if epsilon == 0.0 {
        return Ok(set.clone());
    }
    let mut out = set.clone();
    perturb(&mut out.pixels, epsilon, &mut seed::rng(seed, "noise", &[]));
    out.noisy = true;
    Ok(out)
}

/// In-place `v += epsilon · z` with `z ~ N(0, 1)` drawn per value.
pub fn perturb<R: Rng + ?Sized>(values: &mut [f32], epsilon: f64, rng: &mut R) {
    for v in values {
        let z: f64 = rng.sample(StandardNormal);
        *v = (f64::from(*v) + epsilon * z) as f32;
    }
}

/// `floor(n_inliers · rho)` pool indices drawn uniformly with replacement.
pub fn draw_outliers<R: Rng + ?Sized>(n_inliers: usize, pool_len: usize, rho: f64, rng: &mut R) -> Result<Vec<usize>, DataError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(DataError::BadRatio(rho));
    }
    if rho > 0.0 && pool_len == 0 {
        return Err(DataError::EmptyPool);
    }
    let count = (n_inliers as f64 * rho).floor() as usize;
    Ok((0..count).map(|_| rng.random_range(0..pool_len)).collect())
}

/// Inliers plus `floor(|inliers| · rho)` pool samples, shuffled together.
pub fn blend_outliers(inliers: &ImageSet, outlier_pool: &ImageSet, rho: f64, seed: u64) -> Result<ImageSet, DataError> {
    let mut rng = seed::rng(seed, "blend", &[]);
    let draws = draw_outliers(inliers.len(), outlier_pool.len(), rho, &mut rng)?;
    let mut blended = if draws.is_empty() {
        inliers.clone()
    } else {
        inliers.concat(&outlier_pool.subset(&draws))?
    };
    let mut order: Vec<usize> = (0..blended.len()).collect();
    order.shuffle(&mut rng);
    blended = blended.subset(&order);
    Ok(blended)
}

/// Deterministic 28×28 stand-in data: class `c` is a bright bar whose
/// position and orientation depend on `c`, plus faint noise. Used by smoke
/// tests and demos that must run without the real datasets.
pub fn synthetic_set(kind: DatasetKind, per_class: usize, seed: u64) -> ImageSet {
    let mut rng = seed::rng(seed, "synthetic", &[kind as u64]);
    let (rows, cols) = (28, 28);
    let mut pixels = Vec::with_capacity(per_class * 10 * rows * cols);
    let mut labels = Vec::with_capacity(per_class * 10);
    for i in 0..per_class * 10 {
        let class = (i % 10) as u8;
        let c = usize::from(class);
        let jitter = rng.random_range(0..3usize);
        let at = 3 + 2 * c + jitter;
        let vertical = (c + kind as usize).is_multiple_of(2);
        for y in 0..rows {
            for x in 0..cols {
                let on = if vertical { x >= at && x < at + 3 } else { y >= at && y < at + 3 };
                let base: f32 = if on { 0.9 } else { 0.05 };
                pixels.push((base + rng.random_range(0.0..0.1f32)).min(1.0));
            }
        }
        labels.push(class);
    }
    ImageSet::from_parts(pixels, rows, cols, labels, kind).expect("synthetic set is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `per_class[c]` images of class `c`; image `i` has all pixels `(i mod 1000)/1000`.
    fn synthetic(per_class: &[usize]) -> ImageSet {
        let mut labels = Vec::new();
        for (c, &n) in per_class.iter().enumerate() {
            labels.extend(std::iter::repeat_n(c as u8, n));
        }
        let pixels = (0..labels.len()).flat_map(|i| std::iter::repeat_n((i % 1000) as f32 / 1000.0, 4)).collect();
        ImageSet::from_parts(pixels, 2, 2, labels, DatasetKind::Mnist).unwrap()
    }

    fn spec(class: u8, train: usize, tin: usize, tan: usize) -> SplitSpec {
        SplitSpec {
            inlier_class: class,
            train_count: train,
            test_inlier_count: tin,
            test_anomaly_count: tan,
            seed: 11,
        }
    }

    #[test]
    fn select_whole_single_class_set() {
        let mut counts = [0; 10];
        counts[3] = 7;
        let set = synthetic(&counts);
        let got = select_inliers(&set, &spec(3, 6000, 0, 0)).unwrap();
        assert_eq!(got.len(), 7);
        let mut a: Vec<_> = got.pixels().to_vec();
        let mut b: Vec<_> = set.pixels().to_vec();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        assert_eq!(a, b);
    }

    #[test]
    fn select_absent_class_fails() {
        let set = synthetic(&[3, 3]);
        assert!(matches!(select_inliers(&set, &spec(9, 10, 0, 0)), Err(DataError::ClassAbsent(9))));
    }

    #[test]
    fn select_mixed_truncates() {
        let set = synthetic(&[20, 20, 20]);
        let got = select_inliers(&set, &spec(0, 10, 0, 0)).unwrap();
        assert_eq!(got.len(), 10);
        assert!(got.labels().iter().all(|&l| l == 0));
        assert_eq!(select_inliers(&set, &spec(0, 10, 0, 0)).unwrap(), got);
    }

    #[test]
    fn test_set_labels_exact() {
        let set = synthetic(&[5; 10]);
        let (imgs, labels) = make_test_set(&set, &spec(4, 0, 5, 5)).unwrap();
        assert_eq!(imgs.len(), 10);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 5);
        for (class, bin) in imgs.labels().iter().zip(&labels) {
            assert_eq!(*bin == 1, *class != 4, "class {class} labelled {bin}");
        }
        let (_, labels) = make_test_set(&set, &spec(4, 0, 3, 0)).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn test_set_reports_shortfall() {
        let set = synthetic(&[3; 10]);
        let err = make_test_set(&set, &spec(4, 0, 5, 0)).unwrap_err();
        assert!(matches!(err, DataError::Insufficient { class: 4, needed: 5, available: 3 }));
        assert!(err.to_string().contains("short by 2"));
        assert!(make_test_set(&set, &spec(4, 0, 1, 40)).is_err());
    }

    #[test]
    fn noise_statistics() {
        let set = synthetic(&[2500, 0]);
        assert_eq!(add_noise(&set, 0.0, 1).unwrap(), set);
        let noisy = add_noise(&set, 0.1, 1).unwrap();
        assert!(noisy.noisy);
        assert_eq!(noisy, add_noise(&set, 0.1, 1).unwrap());
        let mad: f64 = noisy
            .pixels()
            .iter()
            .zip(set.pixels())
            .map(|(a, b)| f64::from(a - b).abs())
            .sum::<f64>()
            / set.pixels().len() as f64;
        let expected = 0.1 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mad - expected).abs() / expected < 0.05, "{mad} vs {expected}");
        assert!(add_noise(&set, -0.1, 1).is_err());
        assert!(add_noise(&set, f64::NAN, 1).is_err());
    }

    #[test]
    fn blend_counts() {
        let inl = synthetic(&[100]);
        let pool = synthetic(&[0, 10]);
        let same = blend_outliers(&inl, &pool, 0.0, 3).unwrap();
        assert_eq!(same.len(), 100);
        assert!(same.labels().iter().all(|&l| l == 0));
        let b = blend_outliers(&inl, &pool, 0.5, 3).unwrap();
        assert_eq!(b.len(), 150);
        assert_eq!(b.labels().iter().filter(|&&l| l == 1).count(), 50);
        let b = blend_outliers(&inl, &pool, 1.0, 3).unwrap();
        assert_eq!(b.labels().iter().filter(|&&l| l == 1).count(), 100);
        let empty = synthetic(&[0]);
        assert!(matches!(blend_outliers(&inl, &empty, 0.5, 3), Err(DataError::EmptyPool)));
        assert!(blend_outliers(&inl, &pool, 1.5, 3).is_err());
    }
}
