//! Datasets: synthetic Gaussian blobs, IDX and CSV ingestion, and seeded
//! mini-batch sampling.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Rng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic at offset {offset}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        offset: usize,
        expected: u32,
        found: u32,
    },
    #[error(
        "truncated file: needed {needed} bytes at offset {offset}, only {available} available"
    )]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("image count {images} does not match label count {labels} (header offset 4)")]
    CountMismatch { images: usize, labels: usize },
    #[error("csv row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Row-major feature matrix with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        classes: usize,
    ) -> Result<Self, DataError> {
        let n = labels.len();
        if n == 0 {
            return Err(DataError::Invalid(
                "dataset must have at least one sample".into(),
            ));
        }
        if dim == 0 || features.len() != n * dim {
            return Err(DataError::Invalid(format!(
                "feature buffer of length {} does not hold {n} rows of width {dim}",
                features.len()
            )));
        }
        if let Some(i) = features.iter().position(|x| !x.is_finite()) {
            return Err(DataError::Invalid(format!(
                "non-finite feature in sample {} column {}",
                i / dim,
                i % dim
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y >= classes) {
            return Err(DataError::Invalid(format!(
                "label {} of sample {i} is outside [0, {classes})",
                labels[i]
            )));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            dim,
            classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Gaussian clusters with unit covariance.
///
/// With `classes <= dim` the class means sit at `separation / sqrt(2)` along
/// distinct coordinate axes, so every pair of means is exactly `separation`
/// apart. Otherwise they are spaced `separation` apart along the first axis.
/// Sample `i` belongs to class `i % classes`.
pub fn gen_blobs(
    n: usize,
    dim: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if classes < 2 || n < classes {
        return Err(DataError::Invalid(format!(
            "blobs need n >= classes >= 2, got n={n}, classes={classes}"
        )));
    }
    if dim == 0 {
        return Err(DataError::Invalid("blobs need dim >= 1".into()));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(DataError::Invalid(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let mean = |class: usize, axis: usize| -> f64 {
        if classes <= dim {
            if axis == class {
                separation / std::f64::consts::SQRT_2
            } else {
                0.0
            }
        } else if axis == 0 {
            separation * class as f64
        } else {
            0.0
        }
    };
    let mut rng = Rng::new(seed);
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        for axis in 0..dim {
            features.push(mean(class, axis) + rng.normal());
        }
        labels.push(class);
    }
    Dataset::new(
        format!("blobs(n={n},d={dim},c={classes},sep={separation},seed={seed})"),
        features,
        labels,
        dim,
        classes,
    )
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    let slice = bytes.get(offset..offset + 4).ok_or(DataError::Truncated {
        offset,
        needed: 4,
        available: bytes.len().saturating_sub(offset),
    })?;
    Ok(u32::from_be_bytes(slice.try_into().expect("four bytes")))
}

fn expect_magic(bytes: &[u8], expected: u32) -> Result<(), DataError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(DataError::BadMagic {
            offset: 0,
            expected,
            found,
        });
    }
    Ok(())
}

/// Loads an IDX image/label pair. Pixels are scaled to `[0, 1]`.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    limit: Option<usize>,
) -> Result<Dataset, DataError> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".to_string());
    parse_idx(&name, &images, &labels, limit)
}

/// Decodes an in-memory IDX image/label pair.
pub fn parse_idx(
    name: &str,
    images: &[u8],
    labels: &[u8],
    limit: Option<usize>,
) -> Result<Dataset, DataError> {
    if limit == Some(0) {
        return Err(DataError::Invalid("limit must be at least 1".into()));
    }
    expect_magic(images, IDX_IMAGES_MAGIC)?;
    expect_magic(labels, IDX_LABELS_MAGIC)?;
    let n_images = read_u32(images, 4)? as usize;
    let rows = read_u32(images, 8)? as usize;
    let cols = read_u32(images, 12)? as usize;
    let n_labels = read_u32(labels, 4)? as usize;
    if n_images != n_labels {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let dim = rows * cols;
    if dim == 0 {
        return Err(DataError::Invalid(format!(
            "image shape {rows}x{cols} is empty"
        )));
    }
    let n = limit.map_or(n_images, |l| l.min(n_images));
    if n == 0 {
        return Err(DataError::Invalid("IDX files contain no samples".into()));
    }

    let pixel_offset = 16;
    let pixel_bytes = n * dim;
    let pixels =
        images
            .get(pixel_offset..pixel_offset + pixel_bytes)
            .ok_or(DataError::Truncated {
                offset: pixel_offset,
                needed: pixel_bytes,
                available: images.len().saturating_sub(pixel_offset),
            })?;
    let label_offset = 8;
    let label_bytes = labels
        .get(label_offset..label_offset + n)
        .ok_or(DataError::Truncated {
            offset: label_offset,
            needed: n,
            available: labels.len().saturating_sub(label_offset),
        })?;

    let features = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&y| usize::from(y)).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(name, features, labels, dim, classes)
}

/// Encodes a dataset as an IDX image/label pair.
///
/// Features are quantized to bytes as `round(255 x)`, so only datasets whose
/// features are multiples of `1/255` in `[0, 1]` survive a round trip exactly.
pub fn encode_idx(
    dataset: &Dataset,
    rows: usize,
    cols: usize,
) -> Result<(Vec<u8>, Vec<u8>), DataError> {
    if rows * cols != dataset.dim() {
        return Err(DataError::Invalid(format!(
            "shape {rows}x{cols} does not match feature width {}",
            dataset.dim()
        )));
    }
    if dataset.classes() > 256 {
        return Err(DataError::Invalid(
            "IDX labels hold at most 256 classes".into(),
        ));
    }
    if let Some(x) = dataset
        .features()
        .iter()
        .find(|x| !(0.0..=1.0).contains(*x))
    {
        return Err(DataError::Invalid(format!("feature {x} is outside [0, 1]")));
    }
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.features().len());
    images.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend(n.to_be_bytes());
    images.extend((rows as u32).to_be_bytes());
    images.extend((cols as u32).to_be_bytes());
    images.extend(dataset.features().iter().map(|x| (x * 255.0).round() as u8));

    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend(IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend(n.to_be_bytes());
    labels.extend(dataset.labels().iter().map(|&y| y as u8));
    Ok((images, labels))
}

pub fn write_idx(
    dataset: &Dataset,
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
) -> Result<(), DataError> {
    let (images, labels) = encode_idx(dataset, rows, cols)?;
    for (path, bytes) in [(images_path, images), (labels_path, labels)] {
        fs::write(path, bytes).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    Ok(())
}

/// Loads a headed, comma-separated numeric table. Every column except
/// `label_column` becomes a feature.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset, DataError> {
    let file = fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    read_csv(&name, file, label_column)
}

pub fn read_csv(
    name: &str,
    reader: impl std::io::Read,
    label_column: &str,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Csv {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::Csv {
            row: 0,
            message: format!("no column named {label_column:?} in header"),
        })?;
    let width = headers.len();
    let dim = width - 1;
    if dim == 0 {
        return Err(DataError::Csv {
            row: 0,
            message: "no feature columns besides the label".into(),
        });
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DataError::Csv {
            row,
            message: e.to_string(),
        })?;
        if record.len() != width {
            return Err(DataError::Csv {
                row,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            if col == label_idx {
                let y: usize = cell.parse().map_err(|_| DataError::Csv {
                    row,
                    message: format!("label {cell:?} is not a non-negative integer"),
                })?;
                labels.push(y);
            } else {
                let x: f64 = cell.parse().map_err(|_| DataError::Csv {
                    row,
                    message: format!("cell {cell:?} in column {:?} is not numeric", &headers[col]),
                })?;
                if !x.is_finite() {
                    return Err(DataError::Csv {
                        row,
                        message: format!("cell {cell:?} is not finite"),
                    });
                }
                features.push(x);
            }
        }
    }
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(name, features, labels, dim, classes)
}

/// Samples selected for one objective evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Batch {
    /// Every sample.
    Full,
    Indices(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// A fresh permutation every epoch; the last batch of an epoch may be short.
    #[default]
    ShuffleEachEpoch,
    /// Walks `0..n` in order, wrapping around.
    SequentialWrap,
}

#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    batch_size: usize,
    strategy: SamplingStrategy,
    seed: u64,
    epoch: u64,
    cursor: usize,
    order: Vec<usize>,
}

impl BatchSampler {
    pub fn new(
        n: usize,
        batch_size: usize,
        strategy: SamplingStrategy,
        seed: u64,
    ) -> Result<Self, DataError> {
        if n == 0 {
            return Err(DataError::Invalid(
                "cannot sample from an empty dataset".into(),
            ));
        }
        if batch_size == 0 {
            return Err(DataError::Invalid("batch size must be at least 1".into()));
        }
        let mut sampler = Self {
            n,
            batch_size,
            strategy,
            seed,
            epoch: 0,
            cursor: 0,
            order: Vec::new(),
        };
        sampler.start_epoch();
        Ok(sampler)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn start_epoch(&mut self) {
        if self.strategy == SamplingStrategy::ShuffleEachEpoch {
            self.order = (0..self.n).collect();
            Rng::derive(self.seed, self.epoch).shuffle(&mut self.order);
        }
    }

    pub fn next_batch(&mut self) -> Batch {
        match self.strategy {
            SamplingStrategy::ShuffleEachEpoch => {
                let end = (self.cursor + self.batch_size).min(self.n);
                let batch = self.order[self.cursor..end].to_vec();
                self.cursor = end;
                if self.cursor == self.n {
                    self.cursor = 0;
                    self.epoch += 1;
                    self.start_epoch();
                }
                Batch::Indices(batch)
            }
            SamplingStrategy::SequentialWrap => {
                let batch = (0..self.batch_size)
                    .map(|k| (self.cursor + k) % self.n)
                    .collect();
                let next = self.cursor + self.batch_size;
                self.epoch += (next / self.n) as u64;
                self.cursor = next % self.n;
                Batch::Indices(batch)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn indices(b: Batch) -> Vec<usize> {
        match b {
            Batch::Indices(v) => v,
            Batch::Full => panic!("expected indices"),
        }
    }

    #[test]
    fn blobs_are_deterministic() {
        let a = gen_blobs(50, 3, 2, 6.0, 7).unwrap();
        let b = gen_blobs(50, 3, 2, 6.0, 7).unwrap();
        let same_bits = a
            .features()
            .iter()
            .zip(b.features())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same_bits);
        assert_eq!(a.labels(), b.labels());
        assert_ne!(a, gen_blobs(50, 3, 2, 6.0, 8).unwrap());
    }

    #[test]
    fn minimal_blobs_have_one_sample_per_cluster() {
        let ds = gen_blobs(2, 2, 2, 6.0, 1).unwrap();
        assert_eq!(ds.labels(), &[0, 1]);
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn blob_means_are_separated() {
        let ds = gen_blobs(4000, 2, 2, 6.0, 3).unwrap();
        let mut sums = [[0.0; 2]; 2];
        for i in 0..ds.len() {
            for (sum, x) in sums[ds.label(i)].iter_mut().zip(ds.row(i)) {
                *sum += x / 2000.0;
            }
        }
        let dist = ((sums[0][0] - sums[1][0]).powi(2) + (sums[0][1] - sums[1][1]).powi(2)).sqrt();
        assert!((dist - 6.0).abs() < 0.15, "{dist}");
    }

    #[test]
    fn blobs_reject_bad_arguments() {
        assert!(gen_blobs(1, 2, 2, 1.0, 0).is_err());
        assert!(gen_blobs(10, 2, 1, 1.0, 0).is_err());
        assert!(gen_blobs(10, 2, 2, 0.0, 0).is_err());
    }

    fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 10, 0, 0, 0, 28, 0, 0, 0, 28];
        for s in 0..10u8 {
            images.extend((0..784u32).map(|p| ((p as u8).wrapping_mul(s + 1)) ^ s));
        }
        let mut labels = vec![0, 0, 8, 1, 0, 0, 0, 10];
        labels.extend([5, 0, 4, 1, 9, 2, 1, 3, 1, 4]);
        (images, labels)
    }

    #[test]
    fn idx_fixture_loads() {
        let (images, labels) = idx_fixture();
        let ds = parse_idx("fixture", &images, &labels, None).unwrap();
        assert_eq!(ds.len(), 10);
        assert_eq!(ds.dim(), 784);
        assert_eq!(ds.labels(), &[5, 0, 4, 1, 9, 2, 1, 3, 1, 4]);
        assert!(ds.labels().iter().all(|&y| y < 10));
        assert!(ds.features().iter().all(|x| (0.0..=1.0).contains(x)));
        // first pixel of sample 3: (0 * 4) ^ 3 = 3
        assert_eq!(ds.row(3)[0], 3.0 / 255.0);
        assert_eq!(ds.row(0)[1], 1.0 / 255.0);

        let limited = parse_idx("fixture", &images, &labels, Some(4)).unwrap();
        assert_eq!(limited.len(), 4);
        assert_eq!(limited.row(3), ds.row(3));
    }

    #[test]
    fn idx_errors() {
        let (mut images, labels) = idx_fixture();
        let err = parse_idx("x", &images, &labels, Some(0)).unwrap_err();
        assert!(matches!(err, DataError::Invalid(_)));

        let mut bad_labels = labels.clone();
        bad_labels[3] = 3;
        let err = parse_idx("x", &images, &bad_labels, None).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
        assert!(err.to_string().contains("offset 0"));

        let mut short_labels = labels.clone();
        short_labels[7] = 9;
        let err = parse_idx("x", &images, &short_labels, None).unwrap_err();
        assert!(matches!(
            err,
            DataError::CountMismatch {
                images: 10,
                labels: 9
            }
        ));

        images.truncate(16 + 784 * 5);
        let err = parse_idx("x", &images, &labels, None).unwrap_err();
        assert!(
            matches!(err, DataError::Truncated { offset: 16, .. }),
            "{err}"
        );
        assert!(parse_idx("x", &images[..6], &labels, None).is_err());
    }

    #[test]
    fn idx_round_trip() {
        let mut rng = Rng::new(11);
        let dim = 12;
        let features: Vec<f64> = (0..30 * dim)
            .map(|_| rng.index(256) as f64 / 255.0)
            .collect();
        let labels: Vec<usize> = (0..30).map(|i| i % 7).collect();
        let ds = Dataset::new("synthetic", features, labels, dim, 7).unwrap();
        let (images, labels) = encode_idx(&ds, 3, 4).unwrap();
        let back = parse_idx("synthetic", &images, &labels, None).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_loading() {
        let text = "a,label,b\n1.0,0,2.0\n3.5,1,-4\n0,2,1e-3\n";
        let ds = read_csv("t", text.as_bytes(), "label").unwrap();
        assert_eq!((ds.len(), ds.dim(), ds.classes()), (3, 2, 3));
        assert_eq!(ds.row(1), &[3.5, -4.0]);

        let one = read_csv("t", "x,y\n1,0\n".as_bytes(), "y").unwrap();
        assert_eq!(one.len(), 1);

        let err = read_csv("t", text.as_bytes(), "class").unwrap_err();
        assert!(err.to_string().contains("class"));

        let err = read_csv("t", "a,y\n1,0\n2\n".as_bytes(), "y").unwrap_err();
        assert!(matches!(err, DataError::Csv { row: 2, .. }), "{err}");

        let err = read_csv("t", "a,y\n1,0\n2,1\nfoo,1\n".as_bytes(), "y").unwrap_err();
        assert!(matches!(err, DataError::Csv { row: 3, .. }), "{err}");
        assert!(read_csv("t", "a,y\n".as_bytes(), "y").is_err());
    }

    #[test]
    fn shuffle_partitions_each_epoch() {
        let mut s = BatchSampler::new(5, 2, SamplingStrategy::ShuffleEachEpoch, 3).unwrap();
        for epoch in 0..4 {
            let batches: Vec<Vec<usize>> = (0..3).map(|_| indices(s.next_batch())).collect();
            let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
            assert_eq!(sizes, vec![2, 2, 1]);
            let mut all: Vec<usize> = batches.concat();
            all.sort_unstable();
            assert_eq!(all, vec![0, 1, 2, 3, 4]);
            assert_eq!(s.epoch(), epoch + 1);
        }
    }

    #[test]
    fn sequential_wrap() {
        let mut s = BatchSampler::new(4, 3, SamplingStrategy::SequentialWrap, 0).unwrap();
        assert_eq!(indices(s.next_batch()), vec![0, 1, 2]);
        assert_eq!(indices(s.next_batch()), vec![3, 0, 1]);
        assert_eq!(indices(s.next_batch()), vec![2, 3, 0]);
    }

    #[test]
    fn sampler_is_deterministic() {
        let run = |seed| {
            let mut s = BatchSampler::new(37, 8, SamplingStrategy::ShuffleEachEpoch, seed).unwrap();
            (0..20).map(|_| indices(s.next_batch())).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
        assert!(BatchSampler::new(0, 1, SamplingStrategy::SequentialWrap, 0).is_err());
        assert!(BatchSampler::new(3, 0, SamplingStrategy::SequentialWrap, 0).is_err());
    }
}
