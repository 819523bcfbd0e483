//! Dataset ingestion (IDX), deterministic splitting and synthetic blobs.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, Rng};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const SPLIT_STREAM: u64 = 0x5eed_0001;
const BLOBS_STREAM: u64 = 0x5eed_0002;

/// Feature matrix (one sample per row, values in `[0, 1]`) with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::dim(
                "Dataset::new",
                format!("{} feature rows, {} labels", features.rows(), labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::param(format!("label {bad} >= n_classes {n_classes}")));
        }
        Ok(Dataset {
            features,
            labels,
            n_classes,
        })
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Samples at `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Debug dump with header `label,f0,...,f{N-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = std::iter::once("label".to_string())
            .chain((0..self.n_features()).map(|j| format!("f{j}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, label) in self.labels.iter().enumerate() {
            write!(w, "{label}")?;
            for v in self.features.row(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Train / validation / test partition together with the source indices of
/// every part.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub train_idx: Vec<usize>,
    pub validation_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Load an IDX image file and its label file. Pixels are scaled by 1/255 and
/// each image is flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Decode in-memory IDX image and label buffers.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let mut img = ByteCursor::new(images);
    let magic = img.u32()?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let pixels = rows * cols;
    let body = img.bytes(count * pixels)?;

    let mut lab = ByteCursor::new(labels);
    let magic = lab.u32()?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let label_count = lab.u32()? as usize;
    if label_count != count {
        return Err(Error::Format {
            offset: 4,
            message: format!("{label_count} labels for {count} images"),
        });
    }
    let label_bytes = lab.bytes(count)?;

    let features = DenseMatrix::from_vec(
        count,
        pixels,
        body.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )?;
    let labels: Vec<usize> = label_bytes.iter().map(|&b| usize::from(b)).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(features, labels, n_classes)
}

struct ByteCursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteCursor { buf, pos: 0 }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Format {
                offset: self.buf.len() as u64,
                message: format!(
                    "truncated: need {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Shuffle with `seed`, then cut into train, test and validation parts.
pub fn split(ds: &Dataset, train_n: usize, test_n: usize, val_n: usize, seed: u64) -> Result<Split> {
    let need = train_n + test_n + val_n;
    if need > ds.len() {
        return Err(Error::param(format!(
            "split sizes {train_n}+{test_n}+{val_n} exceed dataset size {}",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    Rng::new(seed, SPLIT_STREAM).shuffle(&mut order);
    let train_idx = order[..train_n].to_vec();
    let test_idx = order[train_n..train_n + test_n].to_vec();
    let validation_idx = order[train_n + test_n..need].to_vec();
    Ok(Split {
        train: ds.subset(&train_idx),
        validation: ds.subset(&validation_idx),
        test: ds.subset(&test_idx),
        train_idx,
        validation_idx,
        test_idx,
    })
}

/// Gaussian clusters with unit variance whose means are `separation` apart,
/// min-max rescaled into `[0, 1]` with one global affine map.
///
/// With `n_classes <= n_features` the means sit on scaled basis vectors
/// (pairwise distance exactly `separation`); otherwise they are spaced along
/// the first axis.
pub fn synth_blobs(
    n_samples: usize,
    n_features: usize,
    n_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_samples == 0 || n_features == 0 || n_classes == 0 {
        return Err(Error::param("synth_blobs counts must be positive"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::param(format!("separation {separation} must be > 0")));
    }
    let mut rng = Rng::new(seed, BLOBS_STREAM);
    let center = |c: usize, j: usize| -> f64 {
        if n_classes <= n_features {
            if j == c {
                separation / std::f64::consts::SQRT_2
            } else {
                0.0
            }
        } else if j == 0 {
            c as f64 * separation
        } else {
            0.0
        }
    };
    let mut labels = Vec::with_capacity(n_samples);
    let mut raw = Vec::with_capacity(n_samples * n_features);
    for i in 0..n_samples {
        let c = i % n_classes;
        labels.push(c);
        for j in 0..n_features {
            raw.push(center(c, j) + rng.gauss());
        }
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    raw.iter_mut().for_each(|v| *v = (*v - lo) / span);
    Dataset::new(DenseMatrix::from_vec(n_samples, n_features, raw)?, labels, n_classes)
}
