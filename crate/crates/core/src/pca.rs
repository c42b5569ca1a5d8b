//! Principal component analysis by thin SVD of the centered data.
//!
//! The `M × M` covariance is never formed. Rows are put in a canonical
//! order before centering and decomposition, so the fitted model is
//! bit-identical for any row permutation of the input. Each component is
//! signed so that its largest-magnitude entry is positive (the lowest index
//! wins ties), which makes refits reproducible.
//!
//! Eigenvalues use the unbiased `N − 1` denominator.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::svd::{self, ComputeSvdVectors};
use faer::{Mat, Par};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::dataset::{read_block, write_block, DatasetError};
use crate::linalg::canonical_row_order;

#[derive(Debug, thiserror::Error)]
pub enum PcaError {
    #[error("PCA needs at least 2 rows, found {0}")]
    TooFewRows(usize),
    #[error("zero-variance data: all rows are identical")]
    ZeroVariance,
    #[error("requested {requested} components but at most {max} are computable")]
    TooManyComponents { requested: usize, max: usize },
    #[error("expected {expected} columns, found {found}")]
    ColumnMismatch { expected: usize, found: usize },
    #[error("variance ratio vector is empty")]
    EmptyVarianceRatio,
    #[error("threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("singular value decomposition did not converge")]
    NoConvergence,
    #[error("malformed PCA model file: {0}")]
    Malformed(&'static str),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// How many leading components to keep when fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Components {
    All,
    Max(usize),
}

/// A fitted PCA projection `x ∈ R^M ↔ y ∈ R^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Array1<f64>,
    /// D × M, rows orthonormal.
    components: Array2<f64>,
    eigenvalues: Array1<f64>,
    variance_ratio: Array1<f64>,
    total_variance: f64,
    n_fit: usize,
}

/// Result of [`select_components`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentSelection {
    pub d: usize,
    /// False when the threshold was never reached and `d` is the full length.
    pub reached: bool,
}

/// Slack on the cumulative sum so that ratios summing to the threshold up to
/// rounding still count as reaching it.
const CUMULATIVE_SLACK: f64 = 1e-12;

/// Smallest `d` whose leading `variance_ratio` entries sum to at least
/// `threshold`.
pub fn select_components(variance_ratio: &[f64], threshold: f64) -> Result<ComponentSelection, PcaError> {
    if variance_ratio.is_empty() {
        return Err(PcaError::EmptyVarianceRatio);
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(PcaError::BadThreshold(threshold));
    }
    let mut cumulative = 0.0;
    for (i, r) in variance_ratio.iter().enumerate() {
        cumulative += r;
        if cumulative >= threshold - CUMULATIVE_SLACK {
            return Ok(ComponentSelection { d: i + 1, reached: true });
        }
    }
    Ok(ComponentSelection {
        d: variance_ratio.len(),
        reached: false,
    })
}

impl PcaModel {
    pub fn fit(x: ArrayView2<f64>, keep: Components) -> Result<Self, PcaError> {
        let (n, m) = x.dim();
        if n < 2 {
            return Err(PcaError::TooFewRows(n));
        }
        let first = x.row(0);
        if x.rows().into_iter().all(|r| r == first) {
            return Err(PcaError::ZeroVariance);
        }
        let computable = (n - 1).min(m);
        let d = match keep {
            Components::All => computable,
            Components::Max(k) if k == 0 || k > computable => {
                return Err(PcaError::TooManyComponents {
                    requested: k,
                    max: computable,
                })
            }
            Components::Max(k) => k,
        };

        let order = canonical_row_order(x);
        let mut mean = Array1::<f64>::zeros(m);
        for &i in &order {
            mean += &x.row(i);
        }
        mean /= n as f64;

        let centered = Mat::<f64>::from_fn(n, m, |i, j| x[(order[i], j)] - mean[j]);
        let mut sum_sq = 0.0;
        for j in 0..m {
            for i in 0..n {
                let v = centered[(i, j)];
                sum_sq += v * v;
            }
        }
        let total_variance = sum_sq / (n - 1) as f64;
        if !(total_variance > 0.0) {
            return Err(PcaError::ZeroVariance);
        }

        let (singular, right) = thin_svd_right(&centered)?;
        let mut idx: Vec<usize> = (0..singular.len()).collect();
        idx.sort_by(|&a, &b| singular[b].total_cmp(&singular[a]));

        let mut components = Array2::<f64>::zeros((d, m));
        let mut eigenvalues = Array1::<f64>::zeros(d);
        for (row, &c) in idx.iter().take(d).enumerate() {
            let s = singular[c];
            eigenvalues[row] = s * s / (n - 1) as f64;
            let mut target = components.row_mut(row);
            for j in 0..m {
                target[j] = right[(j, c)];
            }
        }
        for mut row in components.axis_iter_mut(Axis(0)) {
            apply_sign_convention(row.as_slice_mut().expect("row-major"));
        }
        let variance_ratio = eigenvalues.mapv(|e| e / total_variance);

        Ok(Self {
            mean,
            components,
            eigenvalues,
            variance_ratio,
            total_variance,
            n_fit: n,
        })
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn components(&self) -> &Array2<f64> {
        &self.components
    }

    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    pub fn variance_ratio(&self) -> &Array1<f64> {
        &self.variance_ratio
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn n_fit(&self) -> usize {
        self.n_fit
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    /// Assemble a model from known parts. Components must be orthonormal
    /// rows and eigenvalues nonincreasing.
    pub fn from_parts(
        mean: Array1<f64>,
        components: Array2<f64>,
        eigenvalues: Vec<f64>,
        total_variance: f64,
        n_fit: usize,
    ) -> Result<Self, PcaError> {
        let (d, m) = components.dim();
        if mean.len() != m {
            return Err(PcaError::ColumnMismatch {
                expected: m,
                found: mean.len(),
            });
        }
        if eigenvalues.len() != d || !(total_variance > 0.0) {
            return Err(PcaError::Malformed("spectrum"));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) || eigenvalues.iter().any(|e| *e < 0.0) {
            return Err(PcaError::Malformed("eigenvalues must be nonnegative and nonincreasing"));
        }
        let gram = components.dot(&components.t());
        if (gram - Array2::<f64>::eye(d)).iter().any(|v| v.abs() > 1e-8) {
            return Err(PcaError::Malformed("components are not orthonormal"));
        }
        let eigenvalues = Array1::from(eigenvalues);
        Ok(Self {
            variance_ratio: eigenvalues.mapv(|e| e / total_variance),
            mean,
            components,
            eigenvalues,
            total_variance,
            n_fit,
        })
    }

    /// Keep the leading `d` components. Variance ratios stay relative to
    /// the total variance of the fitted data.
    pub fn truncated(&self, d: usize) -> Result<Self, PcaError> {
        if d == 0 || d > self.n_components() {
            return Err(PcaError::TooManyComponents {
                requested: d,
                max: self.n_components(),
            });
        }
        Ok(Self {
            mean: self.mean.clone(),
            components: self.components.slice(ndarray::s![..d, ..]).to_owned(),
            eigenvalues: self.eigenvalues.slice(ndarray::s![..d]).to_owned(),
            variance_ratio: self.variance_ratio.slice(ndarray::s![..d]).to_owned(),
            total_variance: self.total_variance,
            n_fit: self.n_fit,
        })
    }

    /// `(x − mean) · componentsᵀ`
    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, PcaError> {
        if x.ncols() != self.n_features() {
            return Err(PcaError::ColumnMismatch {
                expected: self.n_features(),
                found: x.ncols(),
            });
        }
        let centered = &x - &self.mean;
        Ok(centered.dot(&self.components.t()))
    }

    /// `y · components + mean`
    pub fn inverse_transform(&self, y: ArrayView2<f64>) -> Result<Array2<f64>, PcaError> {
        if y.ncols() != self.n_components() {
            return Err(PcaError::ColumnMismatch {
                expected: self.n_components(),
                found: y.ncols(),
            });
        }
        Ok(y.dot(&self.components) + &self.mean)
    }

    /// Write as four concatenated PCM1 blocks: `mean` (1×M), `components`
    /// (D×M, ids `pc0..`), `spectrum` (D×2: eigenvalue, variance ratio) and
    /// `meta` (1×2: total variance, fitted row count).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PcaError> {
        let path = path.as_ref();
        let io_err = |source| {
            PcaError::Dataset(DatasetError::Io {
                path: path.to_path_buf(),
                source,
            })
        };
        let d = self.n_components();
        let pcs: Vec<String> = (0..d).map(|i| format!("pc{i}")).collect();
        let mut spectrum = Array2::<f64>::zeros((d, 2));
        spectrum.column_mut(0).assign(&self.eigenvalues);
        spectrum.column_mut(1).assign(&self.variance_ratio);
        let meta = Array2::from_shape_vec((1, 2), vec![self.total_variance, self.n_fit as f64])
            .expect("1x2");
        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        write_block(&mut w, &["mean".to_string()], &self.mean.clone().insert_axis(Axis(0)))
            .map_err(io_err)?;
        write_block(&mut w, &pcs, &self.components).map_err(io_err)?;
        write_block(&mut w, &pcs, &spectrum).map_err(io_err)?;
        write_block(&mut w, &["meta".to_string()], &meta).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PcaError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut r = BufReader::new(file);
        let (_, mean) = read_block(&mut r)?;
        let (_, components) = read_block(&mut r)?;
        let (_, spectrum) = read_block(&mut r)?;
        let (_, meta) = read_block(&mut r)?;
        if mean.nrows() != 1 || components.ncols() != mean.ncols() {
            return Err(PcaError::Malformed("mean/components shape"));
        }
        if spectrum.dim() != (components.nrows(), 2) || meta.dim() != (1, 2) {
            return Err(PcaError::Malformed("spectrum/meta shape"));
        }
        Ok(Self {
            mean: mean.row(0).to_owned(),
            eigenvalues: spectrum.column(0).to_owned(),
            variance_ratio: spectrum.column(1).to_owned(),
            components,
            total_variance: meta[(0, 0)],
            n_fit: meta[(0, 1)] as usize,
        })
    }
}

fn apply_sign_convention(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Singular values and thin right singular vectors (M × min(N, M)),
/// computed sequentially so results do not depend on the thread count.
fn thin_svd_right(a: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>), PcaError> {
    let (n, m) = (a.nrows(), a.ncols());
    let r = n.min(m);
    let mut s = faer::diag::Diag::<f64>::zeros(r);
    let mut v = Mat::<f64>::zeros(m, r);
    let par = Par::Seq;
    let mut mem = MemBuffer::new(svd::svd_scratch::<f64>(
        n,
        m,
        ComputeSvdVectors::No,
        ComputeSvdVectors::Thin,
        par,
        Default::default(),
    ));
    svd::svd(
        a.as_ref(),
        s.as_mut(),
        None,
        Some(v.as_mut()),
        par,
        MemStack::new(&mut mem),
        Default::default(),
    )
    .map_err(|_| PcaError::NoConvergence)?;
    let values = (0..r).map(|i| s[i]).collect();
    Ok((values, v))
}
