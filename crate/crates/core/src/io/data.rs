//! Example sets: synthetic Gaussian blobs and IDX image files.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Blobs,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub radius: f64,
    pub noise_std: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Applied after scaling pixels to [0, 1]: `(v - pixel_mean) / pixel_std`.
    pub pixel_mean: f64,
    pub pixel_std: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            kind: DatasetKind::Blobs,
            classes: 4,
            dim: 32,
            per_class: 400,
            radius: 5.0,
            noise_std: 1.0,
            train_frac: 0.6,
            val_frac: 0.2,
            test_frac: 0.2,
            seed: 7,
            images: None,
            labels: None,
            pixel_mean: 0.0,
            pixel_std: 1.0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) || (fracs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must be in [0, 1] and sum to 1, got {fracs:?}")));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        match self.kind {
            DatasetKind::Blobs => {
                if self.dim == 0 || self.per_class == 0 {
                    return Err(Error::Config("blobs need dim >= 1 and per_class >= 1".into()));
                }
                if !(self.radius >= 0.0) || !(self.noise_std >= 0.0) {
                    return Err(Error::Config("blob radius and noise_std must be non-negative".into()));
                }
            }
            DatasetKind::Idx => {
                if self.images.is_none() || self.labels.is_none() {
                    return Err(Error::Config("idx datasets need both `images` and `labels` paths".into()));
                }
                if !(self.pixel_std > 0.0) {
                    return Err(Error::Config("pixel_std must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Feature rows with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<usize>, classes: usize) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::CountMismatch {
                images: x.rows(),
                labels: y.len(),
            });
        }
        if let Some(&label) = y.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(Dataset { x, y, classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Blobs plus their generating class means (row `c` is the mean of class `c`).
#[derive(Debug, Clone, PartialEq)]
pub struct Blobs {
    pub splits: Splits,
    pub means: Matrix,
}

pub fn make_blobs<R: Rng + ?Sized>(spec: &DatasetSpec, rng: &mut R) -> Result<Blobs> {
    spec.validate()?;
    if spec.kind != DatasetKind::Blobs {
        return Err(Error::Config("make_blobs called with a non-blob spec".into()));
    }
    let (c, dim) = (spec.classes, spec.dim);
    let mut means = Matrix::zeros(c, dim);
    for k in 0..c {
        // uniform direction: normalised isotropic Gaussian
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        dir.iter_mut().for_each(|v| *v *= spec.radius / norm);
        means.row_mut(k).copy_from_slice(&dir);
    }
    let n = c * spec.per_class;
    let mut x = Matrix::zeros(n, dim);
    let mut y = Vec::with_capacity(n);
    for k in 0..c {
        for j in 0..spec.per_class {
            let r = k * spec.per_class + j;
            for (v, &m) in x.row_mut(r).iter_mut().zip(means.row(k)) {
                let z: f64 = rng.sample(StandardNormal);
                *v = m + spec.noise_std * z;
            }
            y.push(k);
        }
    }
    let all = Dataset::new(x, y, c)?;
    Ok(Blobs {
        splits: split(&all, spec, rng)?,
        means,
    })
}

/// Shuffles and partitions by the spec's fractions. Splits are disjoint.
pub fn split<R: Rng + ?Sized>(all: &Dataset, spec: &DatasetSpec, rng: &mut R) -> Result<Splits> {
    let n = all.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = (spec.train_frac * n as f64).round() as usize;
    let n_val = ((spec.val_frac * n as f64).round() as usize).min(n - n_train);
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    if train.is_empty() {
        return Err(Error::Config(format!("training split is empty ({n} examples)")));
    }
    Ok(Splits {
        train: all.subset(train),
        val: all.subset(val),
        test: all.subset(test),
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], path: &Path, expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

/// Raw IDX image tensor: `count` images of `rows * cols` unsigned bytes.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, path, IDX_IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: need,
            found: bytes.len(),
        });
    }
    Ok((count, rows, cols, bytes[16..need].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, path, IDX_LABEL_MAGIC)?;
    let count = be_u32(bytes, 4, path)? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: need,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..need].to_vec())
}

/// Reads an IDX image/label pair. Pixels are scaled to [0, 1].
pub fn load_idx(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(&read_file(images)?, images)?;
    let labels = parse_idx_labels(&read_file(labels)?, labels)?;
    if labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    let data = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let x = Matrix::from_vec(count, rows * cols, data)?;
    Dataset::new(x, labels.into_iter().map(usize::from).collect(), classes)
}

/// Builds train/val/test splits for any spec kind.
pub fn load_splits(spec: &DatasetSpec) -> Result<Splits> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        DatasetKind::Blobs => Ok(make_blobs(spec, &mut rng)?.splits),
        DatasetKind::Idx => {
            let (Some(images), Some(labels)) = (&spec.images, &spec.labels) else {
                unreachable!("validated above");
            };
            let mut all = load_idx(images, labels, spec.classes)?;
            for v in all.x.as_mut_slice() {
                *v = (*v - spec.pixel_mean) / spec.pixel_std;
            }
            split(&all, spec, &mut rng)
        }
    }
}

/// Writes an IDX pair; used by fixtures and tests.
pub fn write_idx(images: &Path, labels: &Path, rows: usize, cols: usize, pixels: &[u8], label_bytes: &[u8]) -> Result<()> {
    let count = label_bytes.len();
    if pixels.len() != count * rows * cols {
        return Err(Error::CountMismatch {
            images: pixels.len() / (rows * cols).max(1),
            labels: count,
        });
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    for v in [count, rows, cols] {
        img.extend_from_slice(&(v as u32).to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + count);
    lab.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(count as u32).to_be_bytes());
    lab.extend_from_slice(label_bytes);
    std::fs::write(images, img).map_err(|e| Error::io(images, e))?;
    std::fs::write(labels, lab).map_err(|e| Error::io(labels, e))
}

/// Batch index lists covering `0..n` in the given order. A trailing batch
/// of a single example is merged into its predecessor, since the
/// wrong-image stream needs at least two examples.
pub fn batch_indices(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().unwrap_or_default();
        if let Some(prev) = batches.last_mut() {
            prev.extend(tail);
        }
    }
    batches
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob_spec() -> DatasetSpec {
        DatasetSpec {
            per_class: 50,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn blobs_deterministic_and_disjoint() {
        let spec = blob_spec();
        let a = load_splits(&spec).unwrap();
        let b = load_splits(&spec).unwrap();
        assert_eq!(a, b);
        let n = a.train.len() + a.val.len() + a.test.len();
        assert_eq!(n, 200);
        assert_eq!(a.train.len(), 120);
        // rows are continuous draws, so disjoint splits share no row
        for i in 0..a.test.len() {
            for j in 0..a.train.len() {
                assert_ne!(a.test.x.row(i), a.train.x.row(j));
            }
        }
    }

    #[test]
    fn blob_means_on_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let blobs = make_blobs(&blob_spec(), &mut rng).unwrap();
        for k in 0..4 {
            let r: f64 = blobs.means.row(k).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noiseless_blobs_nearest_mean_is_perfect() {
        let spec = DatasetSpec {
            noise_std: 0.0,
            ..blob_spec()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let blobs = make_blobs(&spec, &mut rng).unwrap();
        let train = &blobs.splits.train;
        for i in 0..train.len() {
            let best = (0..4)
                .map(|k| {
                    let d: f64 = train.x.row(i).iter().zip(blobs.means.row(k)).map(|(a, b)| (a - b).powi(2)).sum();
                    (d, k)
                })
                .fold((f64::INFINITY, 0), |acc, v| if v.0 < acc.0 { v } else { acc });
            assert_eq!(best.1, train.y[i]);
        }
    }

    #[test]
    fn bad_fractions_rejected() {
        let spec = DatasetSpec {
            train_frac: 0.7,
            ..blob_spec()
        };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn idx_hand_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&ip, &lp, 2, 2, &[0, 51, 255, 102], &[3]).unwrap();
        let raw = std::fs::read(&ip).unwrap();
        assert_eq!(&raw[..16], &[0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2]);
        let ds = load_idx(&ip, &lp, 10).unwrap();
        assert_eq!(ds.x.as_slice(), &[0.0, 0.2, 1.0, 0.4]);
        assert_eq!(ds.y, vec![3]);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx(&ip, &lp, 2, 2, &[1, 2, 3, 4, 5, 6, 7, 8], &[0, 1]).unwrap();

        // labels file handed in as images
        assert!(matches!(load_idx(&lp, &lp, 10), Err(Error::BadMagic { found: 0x801, .. })));

        let mut raw = std::fs::read(&ip).unwrap();
        raw.truncate(raw.len() - 1);
        let short = dir.path().join("short");
        std::fs::write(&short, &raw).unwrap();
        assert!(matches!(load_idx(&short, &lp, 10), Err(Error::Truncated { expected: 24, found: 23, .. })));

        let (ip1, lp1) = (dir.path().join("i1"), dir.path().join("l1"));
        write_idx(&ip1, &lp1, 2, 2, &[1, 2, 3, 4], &[0]).unwrap();
        assert!(matches!(load_idx(&ip, &lp1, 10), Err(Error::CountMismatch { images: 2, labels: 1 })));
        assert!(matches!(load_idx(&ip, &dir.path().join("missing"), 10), Err(Error::Io { .. })));
    }

    #[test]
    fn batches_never_leave_a_singleton() {
        let order: Vec<usize> = (0..9).collect();
        let b = batch_indices(&order, 4);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let b = batch_indices(&order, 3);
        assert_eq!(b.len(), 3);
    }
}
