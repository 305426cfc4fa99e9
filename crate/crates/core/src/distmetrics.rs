//! Fréchet distance and kernel MMD between sets of precomputed embeddings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DistError {
    #[error("embedding set needs dim > 0 and count > 0")]
    EmptySet,
    #[error("row data has {got} values, expected {dim} x {count}")]
    BadLength { dim: usize, count: usize, got: usize },
    #[error("non-finite embedding value at row {row}")]
    NonFinite { row: usize },
    #[error("dimension mismatch: {0} vs {1}")]
    Shape(usize, usize),
    #[error("need at least 2 rows, got {0}")]
    InsufficientData(usize),
    #[error("non-finite value while computing {0}")]
    Numerical(&'static str),
    #[error("bandwidth and output_scale must be positive")]
    BadKernel,
    #[error("unsupported embedding header: {0}")]
    Header(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub dim: usize,
    pub count: usize,
    /// Row-major `count x dim`.
    pub rows: Vec<f32>,
    pub feature_space: Option<String>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, rows: Vec<f32>) -> Result<Self, DistError> {
        if dim == 0 || rows.is_empty() {
            return Err(DistError::EmptySet);
        }
        if rows.len() % dim != 0 {
            return Err(DistError::BadLength { dim, count: rows.len() / dim, got: rows.len() });
        }
        if let Some(i) = rows.iter().position(|v| !v.is_finite()) {
            return Err(DistError::NonFinite { row: i / dim });
        }
        Ok(Self { dim, count: rows.len() / dim, rows, feature_space: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DistError> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if let Some(r) = rows.iter().find(|r| r.len() != dim) {
            return Err(DistError::Shape(dim, r.len()));
        }
        Self::new(dim, rows.iter().flatten().map(|v| *v as f32).collect())
    }

    pub fn with_feature_space(mut self, name: impl Into<String>) -> Self {
        self.feature_space = Some(name.into());
        self
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Sample mean and covariance with divisor `count - 1`.
pub fn moments(e: &EmbeddingSet) -> Result<GaussianMoments, DistError> {
    if e.count < 2 {
        return Err(DistError::InsufficientData(e.count));
    }
    let x = DMatrix::from_row_iterator(e.count, e.dim, e.rows.iter().map(|v| *v as f64));
    let mean = DVector::from_iterator(e.dim, x.column_iter().map(|c| c.sum() / e.count as f64));
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (e.count - 1) as f64;
    let covariance = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianMoments { mean, covariance })
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits, from moments.
pub fn frechet_from_moments(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64, DistError> {
    if a.mean.len() != b.mean.len() {
        return Err(DistError::Shape(a.mean.len(), b.mean.len()));
    }
    let sa = psd_sqrt(&a.covariance);
    if sa.iter().any(|v| !v.is_finite()) {
        return Err(DistError::Numerical("covariance square root"));
    }
    let inner = &sa * &b.covariance * &sa;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    if !tr_sqrt.is_finite() {
        return Err(DistError::Numerical("product eigenvalues"));
    }
    let diff = &a.mean - &b.mean;
    let d = diff.norm_squared() + a.covariance.trace() + b.covariance.trace() - 2.0 * tr_sqrt;
    if !d.is_finite() {
        return Err(DistError::Numerical("distance"));
    }
    Ok(d.max(0.0))
}

pub fn frechet_distance(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<f64, DistError> {
    if a.dim != b.dim {
        return Err(DistError::Shape(a.dim, b.dim));
    }
    frechet_from_moments(&moments(a)?, &moments(b)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KernelKind {
    #[default]
    GaussianRbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Estimator {
    Biased,
    #[default]
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    #[serde(default)]
    pub kind: KernelKind,
    pub bandwidth: f64,
    #[serde(default)]
    pub estimator: Estimator,
    pub output_scale: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { kind: KernelKind::GaussianRbf, bandwidth: 10.0, estimator: Estimator::Unbiased, output_scale: 1000.0 }
    }
}

/// Sum of `k(a_i, b_j)` over all pairs, optionally skipping `i == j`.
/// Row sums are collected in order and then added sequentially, so the
/// result does not depend on the thread count.
fn kernel_sum(a: &EmbeddingSet, b: &EmbeddingSet, skip_diagonal: bool, gamma: f64) -> f64 {
    let row_sums: Vec<f64> = (0..a.count)
        .into_par_iter()
        .map(|i| {
            let x = a.row(i);
            let mut s = 0.0;
            for j in 0..b.count {
                if skip_diagonal && i == j {
                    continue;
                }
                let d2: f64 = x.iter().zip(b.row(j)).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum();
                s += (-gamma * d2).exp();
            }
            s
        })
        .collect();
    row_sums.iter().sum()
}

/// Squared MMD with a Gaussian RBF kernel, times `output_scale`.
pub fn mmd(a: &EmbeddingSet, b: &EmbeddingSet, k: &KernelConfig) -> Result<f64, DistError> {
    if a.dim != b.dim {
        return Err(DistError::Shape(a.dim, b.dim));
    }
    if !(k.bandwidth > 0.0 && k.output_scale > 0.0) {
        return Err(DistError::BadKernel);
    }
    let gamma = 1.0 / (2.0 * k.bandwidth * k.bandwidth);
    let (n, m) = (a.count as f64, b.count as f64);
    let value = match k.estimator {
        Estimator::Biased => {
            kernel_sum(a, a, false, gamma) / (n * n) + kernel_sum(b, b, false, gamma) / (m * m)
                - 2.0 * kernel_sum(a, b, false, gamma) / (n * m)
        }
        Estimator::Unbiased => {
            if a.count < 2 || b.count < 2 {
                return Err(DistError::InsufficientData(a.count.min(b.count)));
            }
            kernel_sum(a, a, true, gamma) / (n * (n - 1.0)) + kernel_sum(b, b, true, gamma) / (m * (m - 1.0))
                - 2.0 * kernel_sum(a, b, false, gamma) / (n * m)
        }
    };
    if !value.is_finite() {
        return Err(DistError::Numerical("kernel sums"));
    }
    Ok(value * k.output_scale)
}

/// JSON sidecar describing a raw little-endian f32 payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub dim: usize,
    pub count: usize,
    pub dtype: String,
    pub layout: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_space: Option<String>,
    /// Payload file relative to the header; defaults to the header path with
    /// a `.bin` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

fn payload_path(header_path: &Path, header: &EmbeddingHeader) -> PathBuf {
    match &header.payload {
        Some(p) => header_path.parent().unwrap_or(Path::new(".")).join(p),
        None => header_path.with_extension("bin"),
    }
}

pub fn read_embeddings(header_path: &Path) -> Result<EmbeddingSet, DistError> {
    let text = std::fs::read_to_string(header_path).map_err(|source| DistError::Io { path: header_path.to_path_buf(), source })?;
    let header: EmbeddingHeader =
        serde_json::from_str(&text).map_err(|source| DistError::Json { path: header_path.to_path_buf(), source })?;
    if header.dtype != "f32" {
        return Err(DistError::Header(format!("dtype {}", header.dtype)));
    }
    if header.layout != "row-major" {
        return Err(DistError::Header(format!("layout {}", header.layout)));
    }
    let bin = payload_path(header_path, &header);
    let bytes = std::fs::read(&bin).map_err(|source| DistError::Io { path: bin.clone(), source })?;
    if bytes.len() != header.dim * header.count * 4 {
        return Err(DistError::BadLength { dim: header.dim, count: header.count, got: bytes.len() / 4 });
    }
    let rows = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let mut set = EmbeddingSet::new(header.dim, rows)?;
    set.feature_space = header.feature_space;
    Ok(set)
}

/// Writes the header to `header_path` and the payload next to it.
pub fn write_embeddings(header_path: &Path, set: &EmbeddingSet) -> Result<(), DistError> {
    let header = EmbeddingHeader {
        dim: set.dim,
        count: set.count,
        dtype: "f32".into(),
        layout: "row-major".into(),
        feature_space: set.feature_space.clone(),
        payload: None,
    };
    let bytes: Vec<u8> = set.rows.iter().flat_map(|v| v.to_le_bytes()).collect();
    let bin = payload_path(header_path, &header);
    std::fs::write(&bin, bytes).map_err(|source| DistError::Io { path: bin.clone(), source })?;
    let mut text = serde_json::to_string_pretty(&header).expect("header serializes");
    text.push('\n');
    std::fs::write(header_path, text).map_err(|source| DistError::Io { path: header_path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricKind {
    Frechet,
    Mmd {
        #[serde(default)]
        kernel: KernelConfig,
    },
}

/// One column of the distance table: a metric, its reference set and one
/// embedding file per model, all in the same feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricJob {
    pub name: String,
    #[serde(flatten)]
    pub kind: MetricKind,
    pub reference: String,
    pub models: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistManifest {
    pub metrics: Vec<MetricJob>,
}

/// Model by metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistMetricsTable {
    pub metrics: Vec<String>,
    #[serde(default)]
    pub feature_spaces: BTreeMap<String, String>,
    pub table: BTreeMap<String, BTreeMap<String, f64>>,
}

/// Evaluates every job of `manifest`, resolving paths against `base`.
pub fn run_manifest(manifest: &DistManifest, base: &Path) -> Result<DistMetricsTable, DistError> {
    let mut out = DistMetricsTable { metrics: Vec::new(), feature_spaces: BTreeMap::new(), table: BTreeMap::new() };
    for job in &manifest.metrics {
        let reference = read_embeddings(&base.join(&job.reference))?;
        out.metrics.push(job.name.clone());
        if let Some(fs) = &reference.feature_space {
            out.feature_spaces.insert(job.name.clone(), fs.clone());
        }
        for (model, path) in &job.models {
            let set = read_embeddings(&base.join(path))?;
            let v = match &job.kind {
                MetricKind::Frechet => frechet_distance(&set, &reference)?,
                MetricKind::Mmd { kernel } => mmd(&set, &reference, kernel)?,
            };
            out.table.entry(model.clone()).or_default().insert(job.name.clone(), v);
        }
    }
    Ok(out)
}
