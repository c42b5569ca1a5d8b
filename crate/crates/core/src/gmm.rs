//! Full-covariance Gaussian mixtures fitted by expectation-maximization.
//!
//! Density over an embedding `y ∈ R^D`:
//!
//! ```text
//! p(y) = Σ_c π_c N(y; μ_c, Σ_c)
//! ```
//!
//! Initialization: means are seeded by greedy k-means++ (first point
//! uniform, each later point the best of a few candidates drawn with
//! probability proportional to squared distance from the nearest chosen
//! mean), every covariance starts at the global MLE
//! covariance plus `reg_covar·I`, and weights start uniform. Every M-step
//! adds `reg_covar` to the covariance diagonal; components that capture
//! fewer than `D + 1` points survive on that ridge and are never deleted.
//!
//! EM runs on the rows in canonical order, so a fit depends only on the set
//! of rows, the seed, and the options.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{canonical_row_order, chol_log_det, chol_mahalanobis, cholesky_in_place};
use crate::seed::rng_from;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GmmError {
    #[error("need more rows than components: N = {n}, K = {k}")]
    TooFewRows { n: usize, k: usize },
    #[error("K must be at least 1")]
    ZeroComponents,
    #[error("embedding has no columns")]
    NoColumns,
    #[error("non-finite value in embedding at row {row}")]
    NonFinite { row: usize },
    #[error("covariance of component {component} is not positive definite despite regularization")]
    CovarianceCollapse { component: usize },
    #[error("dimension mismatch: parameters have D = {expected}, data has {found} columns")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("inconsistent mixture parameters: {0}")]
    BadParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub max_iter: usize,
    /// Convergence threshold on the change in mean per-sample log-likelihood.
    pub tol: f64,
    pub reg_covar: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-4,
            reg_covar: 1e-6,
        }
    }
}

/// Mixture parameters: weights π (simplex), means μ (K × D), and one
/// symmetric D × D covariance per component.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    weights: Vec<f64>,
    means: Array2<f64>,
    covariances: Vec<Array2<f64>>,
}

impl GmmParams {
    pub fn new(
        weights: Vec<f64>,
        means: Array2<f64>,
        covariances: Vec<Array2<f64>>,
    ) -> Result<Self, GmmError> {
        let (k, d) = means.dim();
        if k == 0 {
            return Err(GmmError::ZeroComponents);
        }
        if weights.len() != k || covariances.len() != k {
            return Err(GmmError::BadParams(format!(
                "{} weights and {} covariances for {k} means",
                weights.len(),
                covariances.len()
            )));
        }
        if covariances.iter().any(|c| c.dim() != (d, d)) {
            return Err(GmmError::BadParams("covariance shape".into()));
        }
        for (c, cov) in covariances.iter().enumerate() {
            if cov.iter().zip(cov.t().iter()).any(|(a, b)| (a - b).abs() > 1e-10) {
                return Err(GmmError::BadParams(format!("covariance {c} is not symmetric")));
            }
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(GmmError::BadParams("weights are not a simplex point".into()));
        }
        Ok(Self {
            weights,
            means,
            covariances,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn covariances(&self) -> &[Array2<f64>] {
        &self.covariances
    }

    /// Lower Cholesky factors and log-determinants, ready for density
    /// evaluation.
    fn factorize(&self) -> Result<Factorized, GmmError> {
        let d = self.d();
        let mut chol = Vec::with_capacity(self.k());
        let mut log_det = Vec::with_capacity(self.k());
        for (c, cov) in self.covariances.iter().enumerate() {
            let mut l: Vec<f64> = cov.iter().copied().collect();
            if !cholesky_in_place(&mut l, d) {
                return Err(GmmError::CovarianceCollapse { component: c });
            }
            log_det.push(chol_log_det(&l, d));
            chol.push(l);
        }
        Ok(Factorized { chol, log_det })
    }
}

struct Factorized {
    chol: Vec<Vec<f64>>,
    log_det: Vec<f64>,
}

/// One EM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmFitRecord", into = "GmmFitRecord")]
pub struct GmmFit {
    pub params: GmmParams,
    /// Total data log-likelihood under `params`.
    pub log_likelihood: f64,
    /// Number of M-steps performed.
    pub n_iter: usize,
    pub converged: bool,
    pub seed: u64,
    /// Mean per-sample log-likelihood before the first M-step and after
    /// each one; length `n_iter + 1`.
    pub mean_ll_trace: Vec<f64>,
    pub options: GmmOptions,
}

impl GmmFit {
    pub fn bic(&self, n: usize) -> f64 {
        bic_value(self.log_likelihood, self.params.k(), self.params.d(), n)
    }
}

/// Serialized form of a [`GmmFit`]. Covariances are flattened row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GmmFitRecord {
    k: usize,
    d: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<f64>>,
    log_likelihood: f64,
    n_iter: usize,
    converged: bool,
    seed: u64,
    mean_ll_trace: Vec<f64>,
    options: GmmOptions,
}

impl From<GmmFit> for GmmFitRecord {
    fn from(f: GmmFit) -> Self {
        Self {
            k: f.params.k(),
            d: f.params.d(),
            means: f.params.means.rows().into_iter().map(|r| r.to_vec()).collect(),
            covariances: f
                .params
                .covariances
                .iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
            weights: f.params.weights,
            log_likelihood: f.log_likelihood,
            n_iter: f.n_iter,
            converged: f.converged,
            seed: f.seed,
            mean_ll_trace: f.mean_ll_trace,
            options: f.options,
        }
    }
}

impl TryFrom<GmmFitRecord> for GmmFit {
    type Error = GmmError;

    fn try_from(r: GmmFitRecord) -> Result<Self, Self::Error> {
        let (k, d) = (r.k, r.d);
        if r.means.len() != k || r.means.iter().any(|m| m.len() != d) {
            return Err(GmmError::BadParams("means shape".into()));
        }
        let means = Array2::from_shape_vec((k, d), r.means.concat())
            .map_err(|e| GmmError::BadParams(e.to_string()))?;
        let covariances = r
            .covariances
            .into_iter()
            .map(|c| Array2::from_shape_vec((d, d), c).map_err(|e| GmmError::BadParams(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            params: GmmParams::new(r.weights, means, covariances)?,
            log_likelihood: r.log_likelihood,
            n_iter: r.n_iter,
            converged: r.converged,
            seed: r.seed,
            mean_ll_trace: r.mean_ll_trace,
            options: r.options,
        })
    }
}

/// N × K responsibilities; row `n` is the posterior over components for
/// trial `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    resp: Array2<f64>,
}

impl Posterior {
    /// Wrap an existing matrix, checking that rows are probability vectors.
    pub fn from_matrix(resp: Array2<f64>) -> Result<Self, GmmError> {
        for (i, row) in resp.rows().into_iter().enumerate() {
            let s: f64 = row.sum();
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (s - 1.0).abs() > 1e-10 {
                return Err(GmmError::BadParams(format!("posterior row {i} is not normalized")));
            }
        }
        Ok(Self { resp })
    }

    pub fn resp(&self) -> &Array2<f64> {
        &self.resp
    }

    pub fn n(&self) -> usize {
        self.resp.nrows()
    }

    pub fn k(&self) -> usize {
        self.resp.ncols()
    }
}

fn check_data(y: ArrayView2<f64>) -> Result<(), GmmError> {
    if y.ncols() == 0 {
        return Err(GmmError::NoColumns);
    }
    for (row, r) in y.rows().into_iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::NonFinite { row });
        }
    }
    Ok(())
}

/// `log π_c + log N(y_n; μ_c, Σ_c)` for every row and component.
fn weighted_log_prob(params: &GmmParams, fac: &Factorized, y: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = y.dim();
    let k = params.k();
    let mut out = Array2::<f64>::zeros((n, k));
    let mut diff = vec![0.0; d];
    let mut scratch = vec![0.0; d];
    for c in 0..k {
        let mean = params.means.row(c);
        let log_w = params.weights[c].ln();
        let base = -0.5 * (d as f64 * LN_2PI + fac.log_det[c]);
        for (i, row) in y.rows().into_iter().enumerate() {
            for ((dj, yj), mj) in diff.iter_mut().zip(row.iter()).zip(mean.iter()) {
                *dj = yj - mj;
            }
            let maha = chol_mahalanobis(&fac.chol[c], d, &diff, &mut scratch);
            out[(i, c)] = log_w + base - 0.5 * maha;
        }
    }
    out
}

fn log_sum_exp(row: ndarray::ArrayView1<f64>) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalize log-probabilities row-wise into responsibilities, in place;
/// returns the total log-likelihood.
fn normalize_in_place(lp: &mut Array2<f64>) -> f64 {
    let mut total = 0.0;
    for mut row in lp.rows_mut() {
        let lse = log_sum_exp(row.view());
        total += lse;
        row.mapv_inplace(|v| (v - lse).exp());
    }
    total
}

fn check_dims(params: &GmmParams, y: ArrayView2<f64>) -> Result<(), GmmError> {
    if y.ncols() != params.d() {
        return Err(GmmError::DimensionMismatch {
            expected: params.d(),
            found: y.ncols(),
        });
    }
    Ok(())
}

/// `Σ_n log Σ_c π_c N(y_n; μ_c, Σ_c)`, accumulated with log-sum-exp.
pub fn log_likelihood(params: &GmmParams, y: ArrayView2<f64>) -> Result<f64, GmmError> {
    check_dims(params, y)?;
    let fac = params.factorize()?;
    let lp = weighted_log_prob(params, &fac, y);
    Ok(lp.rows().into_iter().map(log_sum_exp).sum())
}

/// Posterior component probabilities for each row, computed in the log
/// domain.
pub fn responsibilities(params: &GmmParams, y: ArrayView2<f64>) -> Result<Posterior, GmmError> {
    check_dims(params, y)?;
    let fac = params.factorize()?;
    let mut lp = weighted_log_prob(params, &fac, y);
    normalize_in_place(&mut lp);
    Ok(Posterior { resp: lp })
}

/// Free parameters of a full-covariance mixture:
/// `(K − 1) + K·D + K·D(D + 1)/2`.
pub fn n_free_parameters(k: usize, d: usize) -> usize {
    (k - 1) + k * d + k * d * (d + 1) / 2
}

/// `p·ln N − 2·log L`; lower is better.
pub fn bic_value(log_likelihood: f64, k: usize, d: usize, n: usize) -> f64 {
    n_free_parameters(k, d) as f64 * (n as f64).ln() - 2.0 * log_likelihood
}

pub fn bic(fit: &GmmFit, n: usize) -> f64 {
    fit.bic(n)
}

/// Argmax of each posterior row; ties go to the lowest component index.
pub fn hard_assign(post: &Posterior) -> Vec<usize> {
    post.resp
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index drawn with probability proportional to `weights`, or uniformly
/// when every weight is zero.
fn draw_weighted(weights: &[f64], total: f64, rng: &mut impl Rng) -> usize {
    if !(total > 0.0) {
        return rng.random_range(0..weights.len());
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if w > 0.0 && acc > target {
            return i;
        }
    }
    // Rounding can leave `acc` a hair short of `target`.
    weights.iter().rposition(|&w| w > 0.0).expect("total > 0")
}

/// Greedy k-means++: each new mean is the best of `2 + ⌊ln K⌋` candidates
/// drawn with probability proportional to squared distance from the
/// nearest chosen mean, scored by the resulting total squared distance.
fn seed_means(y: ArrayView2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let (n, d) = y.dim();
    let n_candidates = 2 + (k as f64).ln() as usize;
    let mut means = Array2::<f64>::zeros((k, d));
    means.row_mut(0).assign(&y.row(rng.random_range(0..n)));
    let mut nearest: Vec<f64> = y.rows().into_iter().map(|r| sq_dist(r, means.row(0))).collect();
    let mut scratch = vec![0.0; n];
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..n_candidates {
            let cand = draw_weighted(&nearest, total, rng);
            let mut potential = 0.0;
            for (i, row) in y.rows().into_iter().enumerate() {
                scratch[i] = nearest[i].min(sq_dist(row, y.row(cand)));
                potential += scratch[i];
            }
            if best.as_ref().is_none_or(|b| potential < b.0) {
                best = Some((potential, cand, scratch.clone()));
            }
        }
        let (_, pick, updated) = best.expect("at least one candidate");
        means.row_mut(c).assign(&y.row(pick));
        nearest = updated;
    }
    means
}

/// `Σ_n w_n (y_n − μ)(y_n − μ)ᵀ / Σ_n w_n + reg·I`, exactly symmetric.
fn weighted_covariance(
    y: ArrayView2<f64>,
    weights: Option<ndarray::ArrayView1<f64>>,
    mean: ndarray::ArrayView1<f64>,
    total_weight: f64,
    reg: f64,
) -> Array2<f64> {
    let d = y.ncols();
    let mut cov = Array2::<f64>::zeros((d, d));
    let mut diff = vec![0.0; d];
    {
        let acc = cov.as_slice_mut().expect("standard layout");
        for (i, row) in y.rows().into_iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            for ((dj, yj), mj) in diff.iter_mut().zip(row.iter()).zip(mean.iter()) {
                *dj = yj - mj;
            }
            for a in 0..d {
                let wa = w * diff[a];
                let dst = &mut acc[a * d + a..a * d + d];
                for (x, db) in dst.iter_mut().zip(&diff[a..]) {
                    *x += wa * db;
                }
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / total_weight;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
        cov[(a, a)] += reg;
    }
    cov
}

fn m_step(
    y: ArrayView2<f64>,
    resp: &Array2<f64>,
    previous: &GmmParams,
    reg: f64,
) -> GmmParams {
    let (n, d) = y.dim();
    let k = resp.ncols();
    let mut weights = vec![0.0; k];
    let mut means = previous.means.clone();
    let mut covariances = previous.covariances.clone();
    for c in 0..k {
        let r = resp.column(c);
        let nk: f64 = r.sum();
        weights[c] = nk / n as f64;
        if nk <= 0.0 {
            // Component owns no mass; keep its shape, weight stays 0.
            continue;
        }
        let mut mean = ndarray::Array1::<f64>::zeros(d);
        for (i, row) in y.rows().into_iter().enumerate() {
            let w = r[i];
            if w != 0.0 {
                mean.scaled_add(w, &row);
            }
        }
        mean /= nk;
        covariances[c] = weighted_covariance(y, Some(r), mean.view(), nk, reg);
        means.row_mut(c).assign(&mean);
    }
    GmmParams {
        weights,
        means,
        covariances,
    }
}

/// Fit a `k`-component mixture to the rows of `y`.
pub fn em_fit(y: ArrayView2<f64>, k: usize, seed: u64, opts: &GmmOptions) -> Result<GmmFit, GmmError> {
    let (n, d) = y.dim();
    if k == 0 {
        return Err(GmmError::ZeroComponents);
    }
    check_data(y)?;
    if k >= n {
        return Err(GmmError::TooFewRows { n, k });
    }

    let order = canonical_row_order(y);
    let y = y.select(Axis(0), &order);
    let y = y.view();

    let mut rng = rng_from(seed);
    let means = seed_means(y, k, &mut rng);
    let global_mean = y.mean_axis(Axis(0)).expect("n > 0");
    let global_cov = weighted_covariance(y, None, global_mean.view(), n as f64, opts.reg_covar);
    let mut params = GmmParams {
        weights: vec![1.0 / k as f64; k],
        means,
        covariances: vec![global_cov; k],
    };
    let _ = d;

    let mut lp = weighted_log_prob(&params, &params.factorize()?, y);
    let mut total = normalize_in_place(&mut lp);
    let mut trace = vec![total / n as f64];
    let mut converged = false;
    let mut n_iter = 0;
    for it in 1..=opts.max_iter {
        params = m_step(y, &lp, &params, opts.reg_covar);
        n_iter = it;
        lp = weighted_log_prob(&params, &params.factorize()?, y);
        total = normalize_in_place(&mut lp);
        let mean_ll = total / n as f64;
        let change = mean_ll - trace[trace.len() - 1];
        trace.push(mean_ll);
        if change.abs() < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(GmmFit {
        params,
        log_likelihood: total,
        n_iter,
        converged,
        seed,
        mean_ll_trace: trace,
        options: *opts,
    })
}
