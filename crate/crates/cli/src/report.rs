//! `report.json`: a summary of one pipeline run. Every number in it can be
//! recomputed from the CSVs written alongside.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::stages::{InterpretSummary, MeanSd, PcaSummary, StabilitySummary, TruthComparison};

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub name: &'static str,
    pub version: &'static str,
}

impl Artifact {
    pub fn current() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PcaReport {
    pub variance_threshold: f64,
    pub shared_d_mode: &'static str,
    /// Present in `max-over-subjects` mode.
    pub shared_d: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalFit {
    pub sweep_init: usize,
    pub seed: u64,
    pub log_likelihood: f64,
    pub bic: f64,
    pub converged: bool,
    pub n_iter: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubjectReport {
    pub id: String,
    pub seed: u64,
    pub n_trials: usize,
    pub n_features: usize,
    pub pca: PcaSummary,
    pub chosen_k: usize,
    pub k_grid: Vec<usize>,
    pub mean_bic: Vec<f64>,
    pub bic_curve: String,
    pub final_fit: FinalFit,
    pub cluster_sizes: Vec<usize>,
    pub stability: StabilitySummary,
    pub truth: Option<TruthComparison>,
    pub diagnostics: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct KRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OverlapHeadline {
    pub mean_percent: Option<f64>,
    pub sd_percent: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CosineHeadline {
    pub within_mean: Option<f64>,
    pub between_mean: Option<f64>,
}

/// The handful of numbers a run is usually summarized by.
#[derive(Debug, Clone, Serialize)]
pub struct Headline {
    pub chosen_k: KRange,
    /// Mean over subjects of each subject's mean pairwise refit Rand index.
    pub mean_rand: f64,
    /// Across-subject pairs only.
    pub overlap: OverlapHeadline,
    /// Per ratings table, pooled over subjects and columns.
    pub nmi: BTreeMap<String, MeanSd>,
    /// Per discrete column, across subjects.
    pub nmi_discrete_columns: BTreeMap<String, BTreeMap<String, MeanSd>>,
    /// Per mask; `all` uses every feature.
    pub cosine: BTreeMap<String, CosineHeadline>,
    pub shared_d: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub artifact: Artifact,
    /// The only field that differs between reruns of one config.
    pub generated_at_unix: u64,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub pca: PcaReport,
    pub subjects: Vec<SubjectReport>,
    pub cross_subject: InterpretSummary,
    pub headline: Headline,
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Headline {
    pub fn build(subjects: &[SubjectReport], cross: &InterpretSummary, shared_d: Option<usize>) -> Self {
        let ks = subjects.iter().map(|s| s.chosen_k);
        let mean_rand = subjects.iter().map(|s| s.stability.mean_rand).sum::<f64>() / subjects.len() as f64;
        let nmi = cross
            .nmi
            .iter()
            .map(|t| (t.ratings.clone(), t.nmi.clone()))
            .collect();
        let nmi_discrete_columns = cross
            .nmi
            .iter()
            .filter(|t| t.columns.iter().any(|c| c.kind == "discrete"))
            .map(|t| {
                let cols = t
                    .columns
                    .iter()
                    .filter(|c| c.kind == "discrete")
                    .map(|c| (c.column.clone(), c.nmi.clone()))
                    .collect();
                (t.ratings.clone(), cols)
            })
            .collect();
        let cosine = cross
            .cosine
            .iter()
            .map(|(k, c)| {
                (
                    k.clone(),
                    CosineHeadline {
                        within_mean: c.within_mean,
                        between_mean: c.between_mean,
                    },
                )
            })
            .collect();
        Self {
            chosen_k: KRange {
                min: ks.clone().min().unwrap_or(0),
                max: ks.max().unwrap_or(0),
            },
            mean_rand,
            overlap: OverlapHeadline {
                mean_percent: cross.overlap.across_mean,
                sd_percent: cross.overlap.across_sd,
            },
            nmi,
            nmi_discrete_columns,
            cosine,
            shared_d,
        }
    }
}
