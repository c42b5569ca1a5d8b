//! Cluster interpretation: trial overlap between clusterings, information
//! shared with rating columns, similarity of cluster means in feature
//! space, and top-rated-label histograms.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::gmm::{hard_assign, GmmParams, Posterior};
use crate::pca::PcaModel;

pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-8;
pub const OVERLAP_THRESHOLDS: [f64; 4] = [20.0, 40.0, 60.0, 80.0];
pub const COSINE_THRESHOLDS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterpretError {
    #[error("percent overlap of an empty cluster is undefined")]
    EmptySet,
    #[error("length mismatch: {what} has {found} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("no clusterings given")]
    NoClusterings,
    #[error("subject {subject} does not cover the same trials as subject {reference}")]
    UniverseMismatch { subject: String, reference: String },
    #[error("subject {subject}: mixture has D = {fit_d} but PCA has D = {pca_d}")]
    DimensionMismatch {
        subject: String,
        fit_d: usize,
        pca_d: usize,
    },
    #[error("mask index {index} out of range for M = {m}")]
    MaskOutOfRange { index: usize, m: usize },
    #[error("feature count differs between subjects: {0} vs {1}")]
    FeatureCountMismatch(usize, usize),
    #[error("label {label} out of range for K = {k}")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("variance floor must be positive, got {0}")]
    BadFloor(f64),
}

/// Hard clustering of one subject's trials.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    subject_id: String,
    trial_ids: Vec<String>,
    labels: Vec<usize>,
    posterior: Posterior,
}

impl Clustering {
    pub fn new(
        subject_id: impl Into<String>,
        trial_ids: Vec<String>,
        posterior: Posterior,
    ) -> Result<Self, InterpretError> {
        if trial_ids.len() != posterior.n() {
            return Err(InterpretError::LengthMismatch {
                what: "trial ids",
                expected: posterior.n(),
                found: trial_ids.len(),
            });
        }
        Ok(Self {
            subject_id: subject_id.into(),
            labels: hard_assign(&posterior),
            trial_ids,
            posterior,
        })
    }

    /// Build from hard labels alone; the posterior is one-hot.
    pub fn from_labels(
        subject_id: impl Into<String>,
        trial_ids: Vec<String>,
        labels: Vec<usize>,
        k: usize,
    ) -> Result<Self, InterpretError> {
        if let Some(&label) = labels.iter().find(|&&l| l >= k) {
            return Err(InterpretError::LabelOutOfRange { label, k });
        }
        let mut resp = Array2::<f64>::zeros((labels.len(), k));
        for (i, &l) in labels.iter().enumerate() {
            resp[(i, l)] = 1.0;
        }
        let posterior = Posterior::from_matrix(resp).expect("one-hot rows");
        Self::new(subject_id, trial_ids, posterior)
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn trial_ids(&self) -> &[String] {
        &self.trial_ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    pub fn k(&self) -> usize {
        self.posterior.k()
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k()];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

/// `2·|A ∩ B| / (|A| + |B|) · 100`.
pub fn percent_overlap<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Result<f64, InterpretError> {
    if a.is_empty() || b.is_empty() {
        return Err(InterpretError::EmptySet);
    }
    let shared = a.intersection(b).count();
    Ok(overlap_from_counts(shared, a.len(), b.len()))
}

fn overlap_from_counts(shared: usize, a: usize, b: usize) -> f64 {
    (2 * shared) as f64 / (a + b) as f64 * 100.0
}

/// Mean and population standard deviation; `None` for an empty slice.
pub fn mean_and_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdCount {
    pub threshold: f64,
    pub count: usize,
    pub fraction: f64,
}

fn threshold_counts(values: &[f64], thresholds: &[f64]) -> Vec<ThresholdCount> {
    thresholds
        .iter()
        .map(|&t| {
            let count = values.iter().filter(|&&v| v >= t).count();
            ThresholdCount {
                threshold: t,
                count,
                fraction: if values.is_empty() { 0.0 } else { count as f64 / values.len() as f64 },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapSummary {
    /// Distinct cluster pairs drawn from different subjects.
    pub n_across: usize,
    pub across_mean: Option<f64>,
    /// Population standard deviation.
    pub across_sd: Option<f64>,
    /// Largest within-subject entry off the diagonal; 0 for hard clusterings.
    pub within_max: f64,
    pub thresholds: Vec<ThresholdCount>,
}

/// Percent overlap between every pair of nonempty clusters across all
/// subjects. Rows and columns share the key order `(subject, cluster)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapMatrix {
    pub keys: Vec<(String, usize)>,
    pub sizes: Vec<usize>,
    pub values: Array2<f64>,
}

impl OverlapMatrix {
    pub fn summary(&self) -> OverlapSummary {
        let n = self.keys.len();
        let mut across = Vec::new();
        let mut within_max: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let v = self.values[(i, j)];
                if self.keys[i].0 == self.keys[j].0 {
                    within_max = within_max.max(v);
                } else {
                    across.push(v);
                }
            }
        }
        let stats = mean_and_sd(&across);
        OverlapSummary {
            n_across: across.len(),
            across_mean: stats.map(|s| s.0),
            across_sd: stats.map(|s| s.1),
            within_max,
            thresholds: threshold_counts(&across, &OVERLAP_THRESHOLDS),
        }
    }
}

pub fn overlap_matrix(clusterings: &[Clustering]) -> Result<OverlapMatrix, InterpretError> {
    let reference = clusterings.first().ok_or(InterpretError::NoClusterings)?;
    let index: HashMap<&str, usize> = reference
        .trial_ids
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let n = reference.n();

    // Labels of every clustering laid out in the reference trial order.
    let mut aligned: Vec<Vec<usize>> = Vec::with_capacity(clusterings.len());
    for c in clusterings {
        let mismatch = || InterpretError::UniverseMismatch {
            subject: c.subject_id.clone(),
            reference: reference.subject_id.clone(),
        };
        if c.n() != n {
            return Err(mismatch());
        }
        let mut labels = vec![usize::MAX; n];
        for (t, &l) in c.trial_ids.iter().zip(&c.labels) {
            let &pos = index.get(t.as_str()).ok_or_else(mismatch)?;
            labels[pos] = l;
        }
        aligned.push(labels);
    }

    let mut keys = Vec::new();
    let mut sizes = Vec::new();
    let mut owner = Vec::new();
    for (s, c) in clusterings.iter().enumerate() {
        for (cl, size) in c.sizes().into_iter().enumerate() {
            if size > 0 {
                keys.push((c.subject_id.clone(), cl));
                sizes.push(size);
                owner.push((s, cl));
            }
        }
    }

    let m = keys.len();
    let mut values = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in i..m {
            let ((si, ci), (sj, cj)) = (owner[i], owner[j]);
            let shared = aligned[si]
                .iter()
                .zip(&aligned[sj])
                .filter(|&(&a, &b)| a == ci && b == cj)
                .count();
            let v = overlap_from_counts(shared, sizes[i], sizes[j]);
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(OverlapMatrix { keys, sizes, values })
}

/// `KL(N(μ₁, σ₁²) ‖ N(μ₀, σ₀²)) = ln(σ₀/σ₁) + (σ₁² + (μ₁ − μ₀)²)/(2σ₀²) − 1/2`.
pub fn kl_gaussian_univariate(mu1: f64, var1: f64, mu0: f64, var0: f64) -> f64 {
    let d = mu1 - mu0;
    0.5 * (var0 / var1).ln() + (var1 + d * d) / (2.0 * var0) - 0.5
}

fn mle_moments(values: impl Iterator<Item = f64> + Clone) -> (usize, f64, f64) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (n, mean, var)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterKl {
    pub cluster: usize,
    pub size: usize,
    pub mean: f64,
    /// MLE variance after flooring.
    pub variance: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianNmi {
    pub nmi: f64,
    pub mi: f64,
    pub cluster_entropy: f64,
    /// Set when the raw ratio fell outside [0, 1] and was clipped.
    pub clipped: bool,
    /// Nonempty clusters only, in label order.
    pub clusters: Vec<ClusterKl>,
}

/// Information a clustering carries about one continuous rating column
/// under Gaussian marginal and per-cluster models:
///
/// ```text
/// MI  = Σ_c (n_c/N) · KL(N(μ_c, σ_c²) ‖ N(μ, σ²))
/// NMI = MI / H(Y),  H(Y) = −Σ_c (n_c/N) ln(n_c/N)
/// ```
///
/// Variances are MLE estimates raised to at least `variance_floor`.
/// Fewer than two nonempty clusters give NMI = 0.
pub fn gaussian_nmi(
    rating: &[f64],
    labels: &[usize],
    variance_floor: f64,
) -> Result<GaussianNmi, InterpretError> {
    if rating.len() != labels.len() {
        return Err(InterpretError::LengthMismatch {
            what: "rating column",
            expected: labels.len(),
            found: rating.len(),
        });
    }
    if !(variance_floor > 0.0) {
        return Err(InterpretError::BadFloor(variance_floor));
    }
    let n = rating.len() as f64;
    let (_, mu0, var0) = mle_moments(rating.iter().copied());
    let var0 = var0.max(variance_floor);

    let present: BTreeSet<usize> = labels.iter().copied().collect();
    let mut clusters = Vec::with_capacity(present.len());
    let (mut mi, mut h) = (0.0, 0.0);
    for &c in &present {
        let members = rating.iter().zip(labels).filter(|&(_, &l)| l == c).map(|(&r, _)| r);
        let (size, mean, var) = mle_moments(members);
        let variance = var.max(variance_floor);
        let kl = kl_gaussian_univariate(mean, variance, mu0, var0).max(0.0);
        let p = size as f64 / n;
        mi += p * kl;
        h -= p * p.ln();
        clusters.push(ClusterKl {
            cluster: c,
            size,
            mean,
            variance,
            kl,
        });
    }
    if clusters.len() < 2 {
        return Ok(GaussianNmi {
            nmi: 0.0,
            mi,
            cluster_entropy: 0.0,
            clipped: false,
            clusters,
        });
    }
    let raw = mi / h;
    let nmi = raw.clamp(0.0, 1.0);
    Ok(GaussianNmi {
        nmi,
        mi,
        cluster_entropy: h,
        clipped: nmi != raw,
        clusters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NmiNormalization {
    /// Divide by `(H(a) + H(b)) / 2`.
    #[default]
    ArithmeticMean,
    /// Divide by the entropy of the clustering (the first argument).
    ClusteringEntropy,
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information of two discrete labelings from their contingency
/// table, normalized per `mode` and clipped to [0, 1]. A zero normalizer
/// yields 0.
pub fn discrete_nmi<A: Ord, B: Ord>(
    clustering: &[A],
    other: &[B],
    mode: NmiNormalization,
) -> Result<f64, InterpretError> {
    if clustering.len() != other.len() {
        return Err(InterpretError::LengthMismatch {
            what: "labels",
            expected: clustering.len(),
            found: other.len(),
        });
    }
    if clustering.is_empty() {
        return Ok(0.0);
    }
    let n = clustering.len() as f64;
    // Ordered maps keep the floating-point summation order fixed.
    let mut joint: BTreeMap<(&A, &B), usize> = BTreeMap::new();
    let mut ma: BTreeMap<&A, usize> = BTreeMap::new();
    let mut mb: BTreeMap<&B, usize> = BTreeMap::new();
    for (a, b) in clustering.iter().zip(other) {
        *joint.entry((a, b)).or_default() += 1;
        *ma.entry(a).or_default() += 1;
        *mb.entry(b).or_default() += 1;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(a, b), &c)| {
            let pab = c as f64 / n;
            pab * (c as f64 * n / (ma[a] as f64 * mb[b] as f64)).ln()
        })
        .sum();
    let ha = entropy(ma.values().copied(), n);
    let hb = entropy(mb.values().copied(), n);
    let norm = match mode {
        NmiNormalization::ArithmeticMean => 0.5 * (ha + hb),
        NmiNormalization::ClusteringEntropy => ha,
    };
    if norm <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / norm).clamp(0.0, 1.0))
}

/// Cluster means mapped back to feature space: `μ_c · components + mean`.
pub fn back_project_means(params: &GmmParams, pca: &PcaModel) -> Array2<f64> {
    pca.inverse_transform(params.means().view())
        .expect("caller checks dimensions")
}

/// One subject's inputs to [`cluster_means_cosine`].
#[derive(Debug, Clone, Copy)]
pub struct SubjectMeans<'a> {
    pub subject_id: &'a str,
    pub params: &'a GmmParams,
    pub pca: &'a PcaModel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CosineSummary {
    pub n_within: usize,
    pub n_between: usize,
    pub within_mean: Option<f64>,
    pub between_mean: Option<f64>,
    pub n_undefined: usize,
    pub within_thresholds: Vec<ThresholdCount>,
    pub between_thresholds: Vec<ThresholdCount>,
}

/// Pairwise cosine similarity of back-projected cluster means. Undefined
/// entries (a zero-norm mean) hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineMatrix {
    pub keys: Vec<(String, usize)>,
    pub values: Array2<Option<f64>>,
}

impl CosineMatrix {
    pub fn summary(&self) -> CosineSummary {
        let n = self.keys.len();
        let (mut within, mut between) = (Vec::new(), Vec::new());
        let mut n_undefined = 0;
        for i in 0..n {
            for j in i + 1..n {
                match self.values[(i, j)] {
                    None => n_undefined += 1,
                    Some(v) if self.keys[i].0 == self.keys[j].0 => within.push(v),
                    Some(v) => between.push(v),
                }
            }
        }
        CosineSummary {
            n_within: within.len(),
            n_between: between.len(),
            within_mean: mean_and_sd(&within).map(|s| s.0),
            between_mean: mean_and_sd(&between).map(|s| s.0),
            n_undefined,
            within_thresholds: threshold_counts(&within, &COSINE_THRESHOLDS),
            between_thresholds: threshold_counts(&between, &COSINE_THRESHOLDS),
        }
    }
}

/// Cosine similarity between every pair of back-projected cluster means,
/// over all features or over the `mask` subset.
pub fn cluster_means_cosine(
    subjects: &[SubjectMeans<'_>],
    mask: Option<&[usize]>,
) -> Result<CosineMatrix, InterpretError> {
    let mut keys = Vec::new();
    let mut vectors: Vec<Vec<f64>> = Vec::new();
    let mut m_seen = None;
    for s in subjects {
        let (fit_d, pca_d) = (s.params.d(), s.pca.n_components());
        if fit_d != pca_d {
            return Err(InterpretError::DimensionMismatch {
                subject: s.subject_id.to_string(),
                fit_d,
                pca_d,
            });
        }
        let m = s.pca.n_features();
        match m_seen {
            Some(prev) if prev != m => return Err(InterpretError::FeatureCountMismatch(prev, m)),
            _ => m_seen = Some(m),
        }
        if let Some(&index) = mask.and_then(|mk| mk.iter().find(|&&i| i >= m)) {
            return Err(InterpretError::MaskOutOfRange { index, m });
        }
        let x = back_project_means(s.params, s.pca);
        for (c, row) in x.rows().into_iter().enumerate() {
            keys.push((s.subject_id.to_string(), c));
            vectors.push(match mask {
                Some(mk) => mk.iter().map(|&i| row[i]).collect(),
                None => row.to_vec(),
            });
        }
    }
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().map(|a| a * a).sum::<f64>().sqrt())
        .collect();
    let n = vectors.len();
    let mut values = Array2::from_elem((n, n), None);
    for i in 0..n {
        for j in i..n {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
            let v = if i == j { 1.0 } else { (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0) };
            values[(i, j)] = Some(v);
            values[(j, i)] = Some(v);
        }
    }
    Ok(CosineMatrix { keys, values })
}

/// Index of the highest-rated column per row; ties go to the lowest index.
pub fn top_labels(ratings: ArrayView2<f64>) -> Vec<usize> {
    ratings
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelDistribution {
    /// `counts[c][j]`: trials in cluster `c` whose top-rated column is `j`.
    pub counts: Vec<Vec<usize>>,
    /// Columns that are top-rated for no trial.
    pub never_top: Vec<usize>,
}

pub fn top_label_distribution(
    ratings: ArrayView2<f64>,
    labels: &[usize],
    k: usize,
) -> Result<LabelDistribution, InterpretError> {
    if ratings.nrows() != labels.len() {
        return Err(InterpretError::LengthMismatch {
            what: "ratings",
            expected: labels.len(),
            found: ratings.nrows(),
        });
    }
    let r = ratings.ncols();
    let mut counts = vec![vec![0usize; r]; k];
    let mut seen = vec![false; r];
    for (top, &c) in top_labels(ratings).into_iter().zip(labels) {
        if c >= k {
            return Err(InterpretError::LabelOutOfRange { label: c, k });
        }
        counts[c][top] += 1;
        seen[top] = true;
    }
    let never_top = (0..r).filter(|&j| !seen[j]).collect();
    Ok(LabelDistribution { counts, never_top })
}
