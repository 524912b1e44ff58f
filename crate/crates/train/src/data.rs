//! Datasets: MNIST in IDX format and spike-function regression.

use std::fs;
use std::path::{Path, PathBuf};

use densecap_core::bounds::SpikeTarget;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const MNIST_CLASSES: usize = 10;
/// Pixel mean and standard deviation of the MNIST training set, on the `[0, 1]` scale.
pub const MNIST_MEAN: f64 = 0.1307;
pub const MNIST_STD: f64 = 0.3081;

/// Environment variable naming the MNIST directory.
pub const DATA_ENV: &str = "DENSECAP_DATA";

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    Values(Vec<f64>),
}

/// Inputs as rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, targets: Targets) -> Result<Self> {
        let n = match &targets {
            Targets::Classes { labels, classes } => {
                if let Some(&bad) = labels.iter().find(|&&l| l >= *classes) {
                    return Err(Error::Config(format!("label {bad} outside 0..{classes}")));
                }
                labels.len()
            }
            Targets::Values(v) => v.len(),
        };
        if n != inputs.nrows() {
            return Err(Error::Config(format!("{} inputs but {n} targets", inputs.nrows())));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Network output width: class count, or 1 for regression.
    pub fn output_dim(&self) -> usize {
        match &self.targets {
            Targets::Classes { classes, .. } => *classes,
            Targets::Values(_) => 1,
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        let targets = match &self.targets {
            Targets::Classes { labels, classes } => {
                Targets::Classes { labels: rows.iter().map(|&i| labels[i]).collect(), classes: *classes }
            }
            Targets::Values(v) => Targets::Values(rows.iter().map(|&i| v[i]).collect()),
        };
        Self { inputs: self.inputs.select(Axis(0), rows), targets }
    }

    /// `n` rows chosen by a seeded shuffle, kept in their original order.
    pub fn subset(&self, n: usize, seed: u64) -> Result<Self> {
        if n > self.len() {
            return Err(Error::Config(format!("subset of {n} from {} rows", self.len())));
        }
        let mut rows: Vec<usize> = (0..self.len()).collect();
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        rows.truncate(n);
        rows.sort_unstable();
        Ok(self.select(&rows))
    }
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Dataset,
    pub test: Dataset,
}

impl Split {
    /// Applies `(x - mean) / std` to every input of both sets.
    pub fn standardize(&mut self, mean: f64, std: f64) {
        for d in [&mut self.train, &mut self.test] {
            d.inputs.mapv_inplace(|x| (x - mean) / std);
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format { path: path.to_path_buf(), offset, message: "truncated header".into() })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("magic number {magic}, expected {expected}"),
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], needed: usize, path: &Path) -> Result<()> {
    if bytes.len() < needed {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len(),
            message: format!("truncated payload, expected {needed} bytes"),
        });
    }
    Ok(())
}

/// Images as rows of pixels scaled to `[0, 1]`.
pub fn read_idx_images(path: &Path) -> Result<Array2<f64>> {
    let bytes = read(path)?;
    check_magic(&bytes, IMAGE_MAGIC, path)?;
    let count = be_u32(&bytes, 4, path)? as usize;
    let pixels = be_u32(&bytes, 8, path)? as usize * be_u32(&bytes, 12, path)? as usize;
    check_len(&bytes, 16 + count * pixels, path)?;
    let data = bytes[16..16 + count * pixels].iter().map(|&p| p as f64 / 255.0).collect();
    Ok(Array2::from_shape_vec((count, pixels), data).expect("length checked"))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read(path)?;
    check_magic(&bytes, LABEL_MAGIC, path)?;
    let count = be_u32(&bytes, 4, path)? as usize;
    check_len(&bytes, 8 + count, path)?;
    Ok(bytes[8..8 + count].iter().map(|&l| l as usize).collect())
}

fn load_pair(dir: &Path, prefix: &str) -> Result<Dataset> {
    let images = read_idx_images(&dir.join(format!("{prefix}-images-idx3-ubyte")))?;
    let labels = read_idx_labels(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
    Dataset::new(images, Targets::Classes { labels, classes: MNIST_CLASSES })
}

pub fn load_mnist(dir: &Path) -> Result<Split> {
    Ok(Split { train: load_pair(dir, "train")?, test: load_pair(dir, "t10k")? })
}

/// `DENSECAP_DATA` if set, otherwise `data/mnist`.
pub fn default_mnist_dir() -> PathBuf {
    std::env::var_os(DATA_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// Spike regression task: labels `y_m = z_m / (2N)` with random bits `z_m`.
#[derive(Clone, Debug)]
pub struct SpikeData {
    pub target: SpikeTarget,
    pub split: Split,
}

fn spike_rows<R: Rng + ?Sized>(target: &SpikeTarget, rng: &mut R, samples: usize) -> Result<Dataset> {
    let d0 = target.input_dim();
    let inputs = Array2::from_shape_simple_fn((samples, d0), || rng.random::<f64>());
    let values = inputs.outer_iter().map(|x| target.eval(x.as_slice().expect("standard layout"))).collect();
    Dataset::new(inputs, Targets::Values(values))
}

/// `samples` uniform training inputs and `samples / 4` (at least 1) test inputs.
pub fn make_spike_dataset(d0: usize, n: usize, seed: u64, samples: usize) -> Result<SpikeData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = u32::try_from(d0).ok().and_then(|e| n.checked_pow(e)).unwrap_or(usize::MAX);
    if count > 1 << 24 {
        return Err(Error::Config(format!("spike grid {n}^{d0} is too large")));
    }
    let height = 1.0 / (2 * n.max(1)) as f64;
    let labels = (0..count).map(|_| if rng.random_bool(0.5) { height } else { 0.0 }).collect();
    let target = SpikeTarget::new(d0, n, labels)?;
    let split = spike_split(&target, &mut rng, samples)?;
    Ok(SpikeData { target, split })
}

/// Uniform samples of a given spike function.
pub fn spike_split<R: Rng + ?Sized>(target: &SpikeTarget, rng: &mut R, samples: usize) -> Result<Split> {
    let train = spike_rows(target, rng, samples)?;
    let test = spike_rows(target, rng, (samples / 4).max(1))?;
    Ok(Split { train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_idx(dir: &Path, name: &str, header: &[u32], payload: &[u8]) -> PathBuf {
        let mut bytes: Vec<u8> = header.iter().flat_map(|h| h.to_be_bytes()).collect();
        bytes.extend_from_slice(payload);
        let path = dir.join(name);
        fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn parses_small_idx() {
        let dir = tempfile::tempdir().unwrap();
        let images = write_idx(dir.path(), "img", &[IMAGE_MAGIC, 2, 1, 2], &[0, 255, 51, 102]);
        let labels = write_idx(dir.path(), "lab", &[LABEL_MAGIC, 2], &[3, 9]);
        let x = read_idx_images(&images).unwrap();
        assert_eq!(x, ndarray::array![[0.0, 1.0], [0.2, 0.4]]);
        assert_eq!(read_idx_labels(&labels).unwrap(), vec![3, 9]);
    }

    #[test]
    fn bad_magic_names_expected_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_idx(dir.path(), "img", &[2049, 1, 1, 1], &[0]);
        let err = read_idx_images(&path).unwrap_err().to_string();
        assert!(err.contains("expected 2051") && err.contains("offset 0"), "{err}");
    }

    #[test]
    fn truncation_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_idx(dir.path(), "lab", &[LABEL_MAGIC, 5], &[1, 2]);
        let err = read_idx_labels(&path).unwrap_err().to_string();
        assert!(err.contains("offset 10"), "{err}");
        let short = write_idx(dir.path(), "short", &[IMAGE_MAGIC], &[]);
        assert!(read_idx_images(&short).unwrap_err().to_string().contains("offset 4"));
    }

    #[test]
    fn subset_is_deterministic() {
        let inputs = Array2::from_shape_fn((50, 2), |(i, j)| (i * 2 + j) as f64);
        let data = Dataset::new(inputs, Targets::Values((0..50).map(|i| i as f64).collect())).unwrap();
        let a = data.subset(10, 4).unwrap();
        assert_eq!(a, data.subset(10, 4).unwrap());
        assert_ne!(a, data.subset(10, 5).unwrap());
        assert!(data.subset(51, 0).is_err());
    }

    #[test]
    fn spike_targets_are_in_range() {
        let s = make_spike_dataset(2, 4, 1, 2000).unwrap();
        let Targets::Values(v) = &s.split.train.targets else { panic!() };
        assert!(v.iter().all(|&t| (0.0..=0.125).contains(&t)));
        for (m, &y) in s.target.labels().iter().enumerate() {
            assert_eq!(s.target.eval(&s.target.grid_point(m)), y);
        }
    }
}
