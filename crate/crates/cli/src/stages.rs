//! One function per pipeline stage. Each computes, writes its own files into
//! the staging directory, and returns what later stages and the report need.
//!
//! CSV column orders are fixed here and documented in `docs/outputs.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use popcluster_core::dataset::{AlignmentPlan, ColumnKind};
use popcluster_core::diagnostics::{
    eigenvalue_spread, eigenvector_consistency, reconstruction_loss_curve, DRule, DiagnosticsConfig,
};
use popcluster_core::gmm::{em_fit, responsibilities, GmmFit, GmmOptions, Posterior};
use popcluster_core::interpret::{
    cluster_means_cosine, discrete_nmi, gaussian_nmi, mean_and_sd, overlap_matrix, top_label_distribution,
    Clustering, CosineSummary, NmiNormalization, OverlapSummary, SubjectMeans,
};
use popcluster_core::pca::{select_components, Components, PcaModel};
use popcluster_core::seed::{derive_seed, tag_of};
use popcluster_core::selection::{
    adjusted_rand_index, bic_sweep, rand_index, stability, stability_seeds, InitResult, StabilityResult,
    SweepConfig, SweepResult,
};
use popcluster_core::{RatingsTable, TrialMatrix};

use crate::config::SharedDMode;
use crate::error::CliError;
use crate::output::{fmt_f64, fmt_opt, Staging};

/// Base seed of one subject's sweep, stability refits and diagnostics.
pub fn subject_seed(run_seed: u64, subject: &str) -> u64 {
    derive_seed(run_seed, &[tag_of("subject"), tag_of(subject)])
}

pub fn pca_path(id: &str) -> String {
    format!("{id}/pca.pcm1")
}
pub fn bic_curve_path(id: &str) -> String {
    format!("{id}/sweep/bic_curve.csv")
}
pub fn fit_path(id: &str) -> String {
    format!("{id}/fit.json")
}

/// Artifact written by an earlier stage, or an error naming it.
pub fn upstream(out: &Path, rel: &str, stage: &'static str) -> Result<std::path::PathBuf, CliError> {
    let p = out.join(rel);
    if p.is_file() {
        Ok(p)
    } else {
        Err(CliError::MissingArtifact { path: p, stage })
    }
}

// ---------------------------------------------------------------- PCA

#[derive(Debug, Clone, Serialize)]
pub struct PcaSummary {
    /// Smallest D reaching the variance threshold for this subject alone.
    pub d_threshold: usize,
    pub threshold_reached: bool,
    pub d_used: usize,
    pub variance_explained: f64,
}

/// Fit PCA per subject, settle D, and write `pca.pcm1` (truncated to the D
/// used) and `pca_spectrum.csv` (full spectrum).
pub fn pca_stage(
    subjects: &[(&str, &TrialMatrix)],
    threshold: f64,
    mode: SharedDMode,
    st: &Staging,
) -> Result<(Vec<(PcaModel, PcaSummary)>, Option<usize>), CliError> {
    let mut fitted = Vec::new();
    for &(id, m) in subjects {
        log::info!("[{id}] PCA on {} × {}", m.n_trials(), m.n_features());
        let fail = |e| CliError::stage("pca", id, 0, e);
        let model = PcaModel::fit(m.values(), Components::All).map_err(fail)?;
        let sel = select_components(model.variance_ratio().as_slice().expect("contiguous"), threshold).map_err(fail)?;
        if !sel.reached {
            log::warn!("[{id}] variance threshold {threshold} not reached; keeping all {} components", sel.d);
        }
        let mut cumulative = 0.0;
        let rows = model
            .eigenvalues()
            .iter()
            .zip(model.variance_ratio())
            .enumerate()
            .map(|(i, (&ev, &r))| {
                cumulative += r;
                vec![(i + 1).to_string(), fmt_f64(ev), fmt_f64(r), fmt_f64(cumulative)]
            });
        st.write_csv(
            &format!("{id}/pca_spectrum.csv"),
            &["component", "eigenvalue", "variance_ratio", "cumulative_ratio"],
            rows,
        )?;
        fitted.push((id, model, sel));
    }
    let shared = match mode {
        SharedDMode::MaxOverSubjects => fitted.iter().map(|(_, _, s)| s.d).max(),
        SharedDMode::PerSubject => None,
    };
    let mut out = Vec::new();
    for (id, model, sel) in fitted {
        let mut d = shared.unwrap_or(sel.d);
        if d > model.n_components() {
            log::warn!("[{id}] only {} components computable; using them instead of {d}", model.n_components());
            d = model.n_components();
        }
        let model = model.truncated(d).map_err(|e| CliError::stage("pca", id, 0, e))?;
        let path = st.file_path(&pca_path(id))?;
        model.save(&path).map_err(|e| CliError::stage("pca", id, 0, e))?;
        let variance_explained = model.variance_ratio().sum();
        out.push((
            model,
            PcaSummary {
                d_threshold: sel.d,
                threshold_reached: sel.reached,
                d_used: d,
                variance_explained,
            },
        ));
    }
    Ok((out, shared))
}

pub fn project(id: &str, pca: &PcaModel, m: &TrialMatrix) -> Result<Array2<f64>, CliError> {
    pca.transform(m.values()).map_err(|e| CliError::stage("pca", id, 0, e))
}

// ---------------------------------------------------------------- sweep

const BIC_CURVE_HEADER: [&str; 7] = ["k", "init", "seed", "bic", "loglik", "converged", "n_iter"];

pub fn sweep_stage(
    id: &str,
    seed: u64,
    y: ArrayView2<f64>,
    cfg: &SweepConfig,
    st: &Staging,
) -> Result<SweepResult, CliError> {
    log::info!(
        "[{id}] BIC sweep K = {}..={} × {} inits, D = {}",
        cfg.k_min,
        cfg.k_max,
        cfg.n_init,
        y.ncols()
    );
    let sweep = bic_sweep(y, seed, cfg).map_err(|e| CliError::stage("sweep", id, seed, e))?;
    let rows = sweep.per_k.iter().flat_map(|kr| {
        kr.inits.iter().map(move |r| {
            vec![
                kr.k.to_string(),
                r.init.to_string(),
                r.seed.to_string(),
                fmt_f64(r.bic),
                fmt_f64(r.log_likelihood),
                r.converged.to_string(),
                r.n_iter.to_string(),
            ]
        })
    });
    st.write_csv(&bic_curve_path(id), &BIC_CURVE_HEADER, rows)?;
    let mean_rows = sweep.per_k.iter().map(|kr| {
        vec![
            kr.k.to_string(),
            fmt_f64(kr.mean_bic),
            (kr.k == sweep.chosen_k).to_string(),
        ]
    });
    st.write_csv(&format!("{id}/sweep/mean_bic.csv"), &["k", "mean_bic", "chosen"], mean_rows)?;
    log::info!("[{id}] chosen K = {}", sweep.chosen_k);
    Ok(sweep)
}

/// Rebuild a sweep from its `bic_curve.csv`.
pub fn read_sweep(path: &Path, n: usize, d: usize) -> Result<SweepResult, CliError> {
    let bad = |msg: String| CliError::input(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(BIC_CURVE_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    let mut results = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let p = |i: usize| -> Result<f64, CliError> { rec[i].parse().map_err(|_| bad(format!("bad number {:?}", &rec[i]))) };
        let u = |i: usize| -> Result<u64, CliError> { rec[i].parse().map_err(|_| bad(format!("bad integer {:?}", &rec[i]))) };
        results.push((
            u(0)? as usize,
            InitResult {
                init: u(1)? as usize,
                seed: u(2)?,
                bic: p(3)?,
                log_likelihood: p(4)?,
                converged: &rec[5] == "true",
                n_iter: u(6)? as usize,
            },
        ));
    }
    SweepResult::from_init_results(n, d, results).ok_or_else(|| bad("no rows".into()))
}

// ---------------------------------------------------------------- fit

/// Contents of `fit.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub subject: String,
    pub chosen_k: usize,
    /// Sweep initialization whose seed produced this fit.
    pub sweep_init: usize,
    pub bic: f64,
    pub cluster_sizes: Vec<usize>,
    pub fit: GmmFit,
}

/// Refit the chosen K from the best-likelihood sweep seed and write
/// `fit.json` and `labels.csv`.
pub fn fit_stage(
    id: &str,
    y: ArrayView2<f64>,
    trial_ids: &[String],
    sweep: &SweepResult,
    opts: &GmmOptions,
    st: &Staging,
) -> Result<(FitRecord, Clustering), CliError> {
    let chosen = sweep.chosen();
    let best = chosen.best_init();
    let fail = |e: &dyn std::fmt::Display| CliError::stage("fit", id, best.seed, e);
    let fit = em_fit(y, chosen.k, best.seed, opts).map_err(|e| fail(&e))?;
    let clustering = cluster(id, y, trial_ids, &fit).map_err(|e| fail(&e))?;
    let record = FitRecord {
        subject: id.to_string(),
        chosen_k: chosen.k,
        sweep_init: best.init,
        bic: fit.bic(y.nrows()),
        cluster_sizes: clustering.sizes(),
        fit,
    };
    st.write_json(&fit_path(id), &record)?;
    write_labels(id, &clustering, st)?;
    Ok((record, clustering))
}

fn write_labels(id: &str, c: &Clustering, st: &Staging) -> Result<(), CliError> {
    let resp = c.posterior().resp();
    let rows = c.trial_ids().iter().zip(c.labels()).enumerate().map(|(i, (t, &l))| {
        vec![t.clone(), l.to_string(), fmt_f64(resp[(i, l)])]
    });
    st.write_csv(&format!("{id}/labels.csv"), &["trial_id", "label", "responsibility"], rows)
}

pub fn cluster(id: &str, y: ArrayView2<f64>, trial_ids: &[String], fit: &GmmFit) -> Result<Clustering, CliError> {
    let post: Posterior = responsibilities(&fit.params, y).map_err(|e| CliError::stage("fit", id, fit.seed, e))?;
    Clustering::new(id, trial_ids.to_vec(), post).map_err(|e| CliError::stage("fit", id, fit.seed, e))
}

pub fn read_fit(path: &Path) -> Result<FitRecord, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- stability

#[derive(Debug, Clone, Serialize)]
pub struct StabilitySummary {
    pub n_refit: usize,
    pub mean_rand: f64,
    pub mean_adjusted_rand: f64,
}

pub fn stability_stage(
    id: &str,
    seed: u64,
    y: ArrayView2<f64>,
    k: usize,
    n_refit: usize,
    opts: &GmmOptions,
    st: &Staging,
) -> Result<StabilitySummary, CliError> {
    log::info!("[{id}] stability: {n_refit} refits at K = {k}");
    let seeds = stability_seeds(seed, n_refit);
    let res: StabilityResult = stability(y, k, &seeds, opts).map_err(|e| CliError::stage("stability", id, seed, e))?;
    let mut rows = Vec::new();
    for a in 0..n_refit {
        for b in a + 1..n_refit {
            let ari = adjusted_rand_index(&res.labelings[a], &res.labelings[b])
                .map_err(|e| CliError::stage("stability", id, seed, e))?;
            rows.push(vec![
                a.to_string(),
                b.to_string(),
                res.seeds[a].to_string(),
                res.seeds[b].to_string(),
                fmt_f64(res.rand_matrix[(a, b)]),
                fmt_f64(ari),
            ]);
        }
    }
    st.write_csv(
        &format!("{id}/stability.csv"),
        &["refit_a", "refit_b", "seed_a", "seed_b", "rand", "adjusted_rand"],
        rows,
    )?;
    Ok(StabilitySummary {
        n_refit,
        mean_rand: res.mean_rand,
        mean_adjusted_rand: res.mean_adjusted_rand,
    })
}

// ---------------------------------------------------------------- truth

#[derive(Debug, Clone, Serialize)]
pub struct TruthComparison {
    pub n_compared: usize,
    pub n_true_classes: usize,
    pub rand_vs_truth: f64,
    pub adjusted_rand_vs_truth: f64,
}

pub fn compare_truth(id: &str, c: &Clustering, truth: &[(String, usize)]) -> Result<TruthComparison, CliError> {
    let truth_ids: Vec<String> = truth.iter().map(|(t, _)| t.clone()).collect();
    let plan = AlignmentPlan::between(c.trial_ids(), &truth_ids)
        .map_err(|e| CliError::input(format!("truth labels for {id}: {e}")))?;
    if !plan.left_only.is_empty() {
        log::warn!("[{id}] {} trial(s) have no truth label", plan.left_only.len());
    }
    let ours: Vec<usize> = plan.left_rows.iter().map(|&i| c.labels()[i]).collect();
    let theirs: Vec<usize> = plan.right_rows.iter().map(|&j| truth[j].1).collect();
    let fail = |e| CliError::stage("fit", id, 0, e);
    Ok(TruthComparison {
        n_compared: ours.len(),
        n_true_classes: theirs.iter().collect::<BTreeSet<_>>().len(),
        rand_vs_truth: rand_index(&ours, &theirs).map_err(fail)?,
        adjusted_rand_vs_truth: adjusted_rand_index(&ours, &theirs).map_err(fail)?,
    })
}

// ---------------------------------------------------------------- diagnostics

pub fn diagnostics_stage(
    id: &str,
    x: ArrayView2<f64>,
    cfg: &DiagnosticsConfig,
    rule: DRule,
    st: &Staging,
) -> Result<Vec<String>, CliError> {
    let fail = |e| CliError::stage("diagnose", id, cfg.seed, e);
    log::info!("[{id}] diagnostics: eigenvalue spread");
    let scree = eigenvalue_spread(x, cfg).map_err(fail)?;
    let files = [
        format!("{id}/diagnostics/eigenvalue_spread.csv"),
        format!("{id}/diagnostics/eigvec_consistency.csv"),
        format!("{id}/diagnostics/reconstruction_loss.csv"),
    ];
    let rows = scree.iter().flat_map(|c| {
        c.eigenvalues
            .iter()
            .zip(&c.variance_ratio)
            .enumerate()
            .map(move |(i, (&ev, &r))| vec![c.size.to_string(), (i + 1).to_string(), fmt_f64(ev), fmt_f64(r)])
    });
    st.write_csv(&files[0], &["size", "rank", "eigenvalue", "variance_ratio"], rows)?;

    log::info!("[{id}] diagnostics: eigenvector consistency");
    let cmp = eigenvector_consistency(x, cfg).map_err(fail)?;
    let rows = cmp.iter().map(|c| {
        vec![
            c.kind.as_str().to_string(),
            c.size_a.to_string(),
            c.size_b.to_string(),
            c.rank.to_string(),
            c.iter_a.to_string(),
            c.iter_b.to_string(),
            fmt_f64(c.abs_cos),
        ]
    });
    st.write_csv(
        &files[1],
        &["kind", "size_a", "size_b", "rank", "iter_a", "iter_b", "abs_cos"],
        rows,
    )?;

    log::info!("[{id}] diagnostics: reconstruction loss");
    let loss = reconstruction_loss_curve(x, cfg, rule).map_err(fail)?;
    let rows = loss
        .iter()
        .map(|p| vec![p.train_size.to_string(), p.d.to_string(), fmt_f64(p.loss)]);
    st.write_csv(&files[2], &["train_size", "d", "loss"], rows)?;
    Ok(files.to_vec())
}

// ---------------------------------------------------------------- interpret

/// What the cross-subject stage needs from one subject.
pub struct InterpretInput<'a> {
    pub clustering: Clustering,
    pub fit: &'a GmmFit,
    pub pca: &'a PcaModel,
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanSd {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl MeanSd {
    fn of(values: &[f64]) -> Self {
        let s = mean_and_sd(values);
        Self {
            mean: s.map(|s| s.0),
            sd: s.map(|s| s.1),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NmiColumnSummary {
    pub column: String,
    pub kind: &'static str,
    /// Across subjects.
    pub nmi: MeanSd,
}

#[derive(Debug, Clone, Serialize)]
pub struct NmiTableSummary {
    pub ratings: String,
    /// Pooled over every (subject, column) value: Gaussian NMI for
    /// continuous columns, arithmetic-mean-normalized NMI for discrete ones.
    pub nmi: MeanSd,
    pub n_values: usize,
    pub n_clipped: usize,
    pub columns: Vec<NmiColumnSummary>,
    pub file: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct LabelDistributionSummary {
    pub ratings: String,
    pub never_top: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InterpretSummary {
    pub overlap: OverlapSummary,
    pub nmi: Vec<NmiTableSummary>,
    /// Keyed by mask name; `all` uses every feature.
    pub cosine: BTreeMap<String, CosineSummary>,
    pub label_distribution: Vec<LabelDistributionSummary>,
}

fn kind_str(k: ColumnKind) -> &'static str {
    if k.is_discrete() {
        "discrete"
    } else {
        "continuous"
    }
}

/// Rows of one (subject, ratings table) job.
struct NmiJob {
    nmi_rows: Vec<Vec<String>>,
    kl_rows: Vec<Vec<String>>,
    /// `(column, headline NMI, clipped)`.
    values: Vec<(usize, f64, bool)>,
    label_counts: Option<Vec<Vec<usize>>>,
}

fn nmi_job(c: &Clustering, table: &RatingsTable, floor: f64) -> Result<NmiJob, CliError> {
    let id = c.subject_id();
    let fail = |e| CliError::stage("interpret", id, 0, e);
    let plan = AlignmentPlan::between(c.trial_ids(), table.trial_ids())
        .map_err(|e| CliError::input(format!("subject {id}: {e}")))?;
    if !plan.left_only.is_empty() {
        log::warn!("[{id}] {} trial(s) without ratings dropped", plan.left_only.len());
    }
    let labels: Vec<usize> = plan.left_rows.iter().map(|&i| c.labels()[i]).collect();
    let values = table.values().select(Axis(0), &plan.right_rows);
    let mut job = NmiJob {
        nmi_rows: Vec::new(),
        kl_rows: Vec::new(),
        values: Vec::new(),
        label_counts: None,
    };
    for (j, name) in table.column_names().iter().enumerate() {
        let col = values.column(j);
        match table.kinds()[j] {
            ColumnKind::Discrete => {
                let codes: Vec<u64> = col.iter().map(|&v| v as u64).collect();
                for mode in [NmiNormalization::ArithmeticMean, NmiNormalization::ClusteringEntropy] {
                    let v = discrete_nmi(&labels, &codes, mode).map_err(fail)?;
                    let mode_name = match mode {
                        NmiNormalization::ArithmeticMean => "arithmetic-mean",
                        NmiNormalization::ClusteringEntropy => "clustering-entropy",
                    };
                    job.nmi_rows.push(vec![
                        id.to_string(),
                        name.clone(),
                        "discrete".into(),
                        mode_name.into(),
                        fmt_f64(v),
                        String::new(),
                        String::new(),
                        String::new(),
                    ]);
                    if mode == NmiNormalization::ArithmeticMean {
                        job.values.push((j, v, false));
                    }
                }
            }
            ColumnKind::Continuous { .. } => {
                let r = gaussian_nmi(&col.to_vec(), &labels, floor).map_err(fail)?;
                job.nmi_rows.push(vec![
                    id.to_string(),
                    name.clone(),
                    "continuous".into(),
                    "clustering-entropy".into(),
                    fmt_f64(r.nmi),
                    fmt_f64(r.mi),
                    fmt_f64(r.cluster_entropy),
                    r.clipped.to_string(),
                ]);
                for ck in &r.clusters {
                    job.kl_rows.push(vec![
                        id.to_string(),
                        name.clone(),
                        ck.cluster.to_string(),
                        ck.size.to_string(),
                        fmt_f64(ck.mean),
                        fmt_f64(ck.variance),
                        fmt_f64(ck.kl),
                    ]);
                }
                job.values.push((j, r.nmi, r.clipped));
            }
        }
    }
    if table.n_columns() >= 2 && table.kinds().iter().all(|k| !k.is_discrete()) {
        let dist = top_label_distribution(values.view(), &labels, c.k()).map_err(fail)?;
        job.label_counts = Some(dist.counts);
    }
    Ok(job)
}

pub fn interpret_stage(
    subjects: &[InterpretInput<'_>],
    ratings: &[(String, RatingsTable)],
    masks: &[(String, Vec<usize>)],
    floor: f64,
    st: &Staging,
) -> Result<InterpretSummary, CliError> {
    let clusterings: Vec<Clustering> = subjects.iter().map(|s| s.clustering.clone()).collect();
    let fail = |e| CliError::stage("interpret", "*", 0, e);

    log::info!("interpret: trial overlap");
    let om = overlap_matrix(&clusterings).map_err(fail)?;
    let n = om.keys.len();
    let mut rows = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            rows.push(vec![
                om.keys[i].0.clone(),
                om.keys[i].1.to_string(),
                om.sizes[i].to_string(),
                om.keys[j].0.clone(),
                om.keys[j].1.to_string(),
                om.sizes[j].to_string(),
                fmt_f64(om.values[(i, j)]),
            ]);
        }
    }
    st.write_csv(
        "interpret/overlap_matrix.csv",
        &["subject_a", "cluster_a", "size_a", "subject_b", "cluster_b", "size_b", "percent_overlap"],
        rows,
    )?;
    let overlap = om.summary();
    let rows = overlap
        .thresholds
        .iter()
        .map(|t| vec![fmt_f64(t.threshold), t.count.to_string(), fmt_f64(t.fraction)]);
    st.write_csv("interpret/overlap_thresholds.csv", &["threshold", "count", "fraction"], rows)?;

    log::info!("interpret: rating NMI");
    let jobs: Vec<(usize, usize)> = (0..ratings.len())
        .flat_map(|t| (0..clusterings.len()).map(move |s| (t, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(t, s)| nmi_job(&clusterings[s], &ratings[t].1, floor))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut nmi = Vec::new();
    let mut label_distribution = Vec::new();
    let mut label_rows = Vec::new();
    for (t, (name, table)) in ratings.iter().enumerate() {
        let table_jobs: Vec<&NmiJob> = jobs
            .iter()
            .zip(&results)
            .filter(|((jt, _), _)| *jt == t)
            .map(|(_, r)| r)
            .collect();
        let file = format!("interpret/nmi_{name}.csv");
        st.write_csv(
            &file,
            &["subject", "column", "kind", "normalization", "nmi", "mi", "cluster_entropy", "clipped"],
            table_jobs.iter().flat_map(|j| j.nmi_rows.clone()),
        )?;
        if table.kinds().iter().any(|k| !k.is_discrete()) {
            st.write_csv(
                &format!("interpret/kl_{name}.csv"),
                &["subject", "column", "cluster", "size", "mean", "variance", "kl"],
                table_jobs.iter().flat_map(|j| j.kl_rows.clone()),
            )?;
        }
        let all: Vec<f64> = table_jobs.iter().flat_map(|j| j.values.iter().map(|v| v.1)).collect();
        let columns = table
            .column_names()
            .iter()
            .enumerate()
            .map(|(c, col)| {
                let vals: Vec<f64> = table_jobs
                    .iter()
                    .flat_map(|j| j.values.iter().filter(|v| v.0 == c).map(|v| v.1))
                    .collect();
                NmiColumnSummary {
                    column: col.clone(),
                    kind: kind_str(table.kinds()[c]),
                    nmi: MeanSd::of(&vals),
                }
            })
            .collect();
        nmi.push(NmiTableSummary {
            ratings: name.clone(),
            nmi: MeanSd::of(&all),
            n_values: all.len(),
            n_clipped: table_jobs.iter().flat_map(|j| &j.values).filter(|v| v.2).count(),
            columns,
            file,
        });

        if table_jobs.iter().all(|j| j.label_counts.is_some()) && !table_jobs.is_empty() {
            let mut total = vec![0usize; table.n_columns()];
            for (j, job) in table_jobs.iter().enumerate() {
                let subject = clusterings[j].subject_id();
                for (cl, counts) in job.label_counts.as_ref().expect("checked").iter().enumerate() {
                    for (col, &count) in counts.iter().enumerate() {
                        total[col] += count;
                        label_rows.push(vec![
                            name.clone(),
                            subject.to_string(),
                            cl.to_string(),
                            table.column_names()[col].clone(),
                            count.to_string(),
                        ]);
                    }
                }
            }
            label_distribution.push(LabelDistributionSummary {
                ratings: name.clone(),
                never_top: total
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c == 0)
                    .map(|(i, _)| table.column_names()[i].clone())
                    .collect(),
            });
        }
    }
    st.write_csv(
        "interpret/label_distribution.csv",
        &["ratings", "subject", "cluster", "column", "count"],
        label_rows,
    )?;

    log::info!("interpret: cosine similarity of cluster means");
    let means: Vec<SubjectMeans<'_>> = subjects
        .iter()
        .map(|s| SubjectMeans {
            subject_id: s.clustering.subject_id(),
            params: &s.fit.params,
            pca: s.pca,
        })
        .collect();
    let mut cosine = BTreeMap::new();
    let mut rows = Vec::new();
    let all_masks = std::iter::once(("all", None)).chain(masks.iter().map(|(n, m)| (n.as_str(), Some(m.as_slice()))));
    for (mask_name, mask) in all_masks {
        let cm = cluster_means_cosine(&means, mask).map_err(fail)?;
        let n = cm.keys.len();
        for i in 0..n {
            for j in i + 1..n {
                rows.push(vec![
                    mask_name.to_string(),
                    cm.keys[i].0.clone(),
                    cm.keys[i].1.to_string(),
                    cm.keys[j].0.clone(),
                    cm.keys[j].1.to_string(),
                    fmt_opt(cm.values[(i, j)]),
                ]);
            }
        }
        cosine.insert(mask_name.to_string(), cm.summary());
    }
    st.write_csv(
        "interpret/cosine_means.csv",
        &["mask", "subject_a", "cluster_a", "subject_b", "cluster_b", "cosine"],
        rows,
    )?;

    Ok(InterpretSummary {
        overlap,
        nmi,
        cosine,
        label_distribution,
    })
}
