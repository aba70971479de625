//! Sparse regression datasets and LIBSVM text I/O.
//!
//! LIBSVM lines look like `label idx:val idx:val ...` with 1-based, strictly
//! increasing indices. Indices are stored 0-based in memory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use flate2::read::GzDecoder;
use rand::seq::{index, SliceRandom};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    /// 0-based, strictly increasing.
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                got: values.len(),
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("sparse indices must be strictly increasing"));
        }
        Ok(Self { indices, values })
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let (indices, values) = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i as u32, *v))
            .unzip();
        Self { indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// One past the largest index, 0 when empty.
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&i| i as usize + 1)
    }

    pub fn dot(&self, w: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, v)| v * w[i as usize])
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// `out += alpha * self`
    pub fn scatter_add(&self, alpha: f64, out: &mut [f64]) {
        for (&i, v) in self.indices.iter().zip(&self.values) {
            out[i as usize] += alpha * v;
        }
    }
}

/// Feature-label pairs. Features sit behind an `Arc` so relabelled copies share them.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Arc<Vec<SparseVector>>,
    pub labels: Vec<f64>,
    pub dim: usize,
    pub provenance: String,
}

impl Dataset {
    pub fn new(
        features: Vec<SparseVector>,
        labels: Vec<f64>,
        dim: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                got: labels.len(),
            });
        }
        if let Some(x) = features.iter().find(|x| x.min_dim() > dim) {
            return Err(Error::param(format!(
                "feature index {} outside dim {dim}",
                x.min_dim()
            )));
        }
        if labels.iter().any(|y| !y.is_finite())
            || features.iter().any(|x| x.values.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::param("dataset contains non-finite values"));
        }
        Ok(Self {
            features: Arc::new(features),
            labels,
            dim,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Same features, new labels and provenance.
    pub fn relabel(&self, labels: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: labels.len(),
            });
        }
        Ok(Self {
            features: Arc::clone(&self.features),
            labels,
            dim: self.dim,
            provenance: provenance.into(),
        })
    }

    /// Copy of the rows at `rows`, with its own feature storage.
    pub fn subset(&self, rows: &[usize], provenance: impl Into<String>) -> Self {
        Self {
            features: Arc::new(rows.iter().map(|&i| self.features[i].clone()).collect()),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            provenance: provenance.into(),
        }
    }

    /// Widens `dim`, e.g. to align a test file with a training file.
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        let needed = self.features.iter().map(SparseVector::min_dim).max().unwrap_or(0);
        if dim < needed {
            return Err(Error::param(format!("dim {dim} below largest index {needed}")));
        }
        self.dim = dim;
        Ok(self)
    }
}

/// Reads a LIBSVM file; `.gz` files are decompressed on the fly.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    parse_libsvm(BufReader::new(reader), path.display().to_string())
}

pub fn parse_libsvm(reader: impl BufRead, provenance: impl Into<String>) -> Result<Dataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: lineno, msg };

        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().unwrap_or_default();
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("malformed label {label_tok:?}")))?;
        if !label.is_finite() {
            return Err(err(format!("non-finite label {label_tok:?}")));
        }

        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut last = 0u64;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("malformed feature {tok:?}")))?;
            let idx: u64 = idx
                .parse()
                .map_err(|_| err(format!("malformed index {idx:?}")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| err(format!("malformed value {val:?}")))?;
            if idx == 0 || idx > u32::MAX as u64 {
                return Err(err(format!("index {idx} out of range")));
            }
            if idx <= last {
                return Err(err(format!("index {idx} not strictly increasing")));
            }
            if !val.is_finite() {
                return Err(err(format!("non-finite value at index {idx}")));
            }
            last = idx;
            indices.push((idx - 1) as u32);
            values.push(val);
        }
        dim = dim.max(last as usize);
        features.push(SparseVector { indices, values });
        labels.push(label);
    }

    Dataset::new(features, labels, dim, provenance)
}

pub fn write_libsvm(data: &Dataset, mut out: impl Write) -> Result<()> {
    for (x, y) in data.features.iter().zip(&data.labels) {
        write!(out, "{y}")?;
        for (i, v) in x.indices.iter().zip(&x.values) {
            write!(out, " {}:{v}", i + 1)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_libsvm(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_libsvm(data, BufWriter::new(File::create(path)?))
}

/// Shuffles with `rng` and moves the first `round(fraction * n)` rows
/// (half-up, kept within `[1, n-1]`) to the validation set.
pub fn split_validation(
    data: &Dataset,
    fraction: f64,
    rng: &mut dyn RngCore,
) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::param(format!("validation fraction must lie in (0, 1), got {fraction}")));
    }
    let n = data.len();
    if n < 2 {
        return Err(Error::EmptyData("need at least two examples to split".into()));
    }
    let n_valid = ((fraction * n as f64 + 0.5).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (valid, train) = order.split_at(n_valid);
    Ok((
        data.subset(train, format!("{}#train", data.provenance)),
        data.subset(valid, format!("{}#valid", data.provenance)),
    ))
}

/// Shape of a generated linear regression problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionOptions {
    pub examples: usize,
    pub dim: usize,
    /// Probability that a feature is nonzero.
    pub density: f64,
    /// Number of nonzero coefficients in the true model.
    pub support: usize,
    /// Standard deviation of Gaussian label noise.
    pub label_sigma: f64,
}

impl RegressionOptions {
    pub fn new(examples: usize, dim: usize) -> Self {
        Self {
            examples,
            dim,
            density: 0.2,
            support: dim.div_ceil(5),
            label_sigma: 0.1,
        }
    }
}

/// Sparse Gaussian features scaled so `E‖x‖² = 1`, labels `xᵀw* + noise`
/// with `w*` standard normal on a random support. Returns the data and `w*`.
pub fn make_regression(opts: RegressionOptions, rng: &mut dyn RngCore) -> Result<(Dataset, Vec<f64>)> {
    let RegressionOptions {
        examples,
        dim,
        density,
        support,
        label_sigma,
    } = opts;
    if examples == 0 || dim == 0 {
        return Err(Error::param("examples and dim must be >= 1"));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::param(format!("density must lie in (0, 1], got {density}")));
    }
    if support == 0 || support > dim {
        return Err(Error::param(format!("support must lie in [1, {dim}], got {support}")));
    }
    if !(label_sigma >= 0.0 && label_sigma.is_finite()) {
        return Err(Error::param(format!("label_sigma must be finite and >= 0, got {label_sigma}")));
    }
    let mut w_true = vec![0.0; dim];
    for i in index::sample(rng, dim, support) {
        w_true[i] = StandardNormal.sample(rng);
    }
    let scale = 1.0 / (density * dim as f64).sqrt();
    let mut features = Vec::with_capacity(examples);
    let mut labels = Vec::with_capacity(examples);
    for _ in 0..examples {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for j in 0..dim {
            if rng.random::<f64>() < density {
                indices.push(j as u32);
                let v: f64 = StandardNormal.sample(rng);
                values.push(scale * v);
            }
        }
        let x = SparseVector { indices, values };
        let noise: f64 = StandardNormal.sample(rng);
        labels.push(x.dot(&w_true) + label_sigma * noise);
        features.push(x);
    }
    Ok((Dataset::new(features, labels, dim, "regression")?, w_true))
}
