//! Subcommand entry points. Each validates its config and inputs, then runs
//! inside a staged output directory on its own thread pool.

use std::path::Path;

use popcluster_core::pca::PcaModel;
use popcluster_core::seed::{derive_seed, tag_of};
use popcluster_core::TrialMatrix;

use crate::config::{Overrides, RawConfig, RunConfig, SharedDMode};
use crate::error::CliError;
use crate::inputs::{diagnostics_for, Checks, Inputs};
use crate::output::{staged, Staging};
use crate::report::{now_unix, Artifact, FinalFit, Headline, PcaReport, RunReport, SubjectReport};
use crate::stages::{self, *};

struct Prepared {
    cfg: RunConfig,
    inputs: Inputs,
    pool: rayon::ThreadPool,
}

fn prepare(config: &Path, ov: &Overrides, checks: impl FnOnce(&RunConfig) -> Checks) -> Result<Prepared, CliError> {
    let raw = RawConfig::load(config)?;
    let cfg = RunConfig::from_raw(&raw, ov)?;
    let inputs = Inputs::load(&cfg)?;
    inputs.validate(&cfg, checks(&cfg))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::config(format!("cannot start {} worker threads: {e}", cfg.threads)))?;
    log::info!("{} subject(s), {} thread(s), seed {}", inputs.subjects.len(), cfg.threads, cfg.seed);
    Ok(Prepared { cfg, inputs, pool })
}

fn matrices(inputs: &Inputs) -> Vec<(&str, &TrialMatrix)> {
    inputs.subjects.iter().map(|s| (s.id.as_str(), &s.matrix)).collect()
}

fn d_mode_name(m: SharedDMode) -> &'static str {
    match m {
        SharedDMode::MaxOverSubjects => "max-over-subjects",
        SharedDMode::PerSubject => "per-subject",
    }
}

fn diagnostics_seed(subject_seed: u64) -> u64 {
    derive_seed(subject_seed, &[tag_of("diagnostics")])
}

/// Every stage for every subject, then the cross-subject comparison and
/// `report.json`.
pub fn cmd_pipeline(config: &Path, ov: &Overrides) -> Result<RunReport, CliError> {
    let p = prepare(config, ov, |cfg| Checks {
        sweep: true,
        interpret: true,
        diagnostics: cfg.diagnostics_enabled,
    })?;
    let (cfg, inputs) = (&p.cfg, &p.inputs);
    staged(&cfg.output_dir, |st| p.pool.install(|| run_pipeline(cfg, inputs, st)))
}

fn run_pipeline(cfg: &RunConfig, inputs: &Inputs, st: &Staging) -> Result<RunReport, CliError> {
    let (pcas, shared_d) = pca_stage(&matrices(inputs), cfg.variance_threshold, cfg.shared_d_mode, st)?;
    let mut reports = Vec::new();
    let mut finished = Vec::new();
    for (s, (pca, pca_summary)) in inputs.subjects.iter().zip(&pcas) {
        let id = s.id.as_str();
        let seed = subject_seed(cfg.seed, id);
        let y = project(id, pca, &s.matrix)?;
        let sweep = sweep_stage(id, seed, y.view(), &cfg.sweep, st)?;
        let (record, clustering) = fit_stage(id, y.view(), s.matrix.trial_ids(), &sweep, &cfg.sweep.options, st)?;
        let stability = stability_stage(id, seed, y.view(), record.chosen_k, cfg.n_refit, &cfg.sweep.options, st)?;
        let truth = s
            .truth
            .as_deref()
            .map(|t| compare_truth(id, &clustering, t))
            .transpose()?;
        if let Some(t) = &truth {
            log::info!("[{id}] Rand vs truth {:.4}", t.rand_vs_truth);
        }
        let diagnostics = if cfg.diagnostics_enabled {
            let n = s.matrix.n_trials();
            let dcfg = diagnostics_for(cfg, n, diagnostics_seed(seed));
            Some(diagnostics_stage(id, s.matrix.values(), &dcfg, cfg.d_rule, st)?)
        } else {
            None
        };
        reports.push(SubjectReport {
            id: id.to_string(),
            seed,
            n_trials: s.matrix.n_trials(),
            n_features: s.matrix.n_features(),
            pca: pca_summary.clone(),
            chosen_k: record.chosen_k,
            k_grid: sweep.k_grid(),
            mean_bic: sweep.per_k.iter().map(|k| k.mean_bic).collect(),
            bic_curve: bic_curve_path(id),
            final_fit: FinalFit {
                sweep_init: record.sweep_init,
                seed: record.fit.seed,
                log_likelihood: record.fit.log_likelihood,
                bic: record.bic,
                converged: record.fit.converged,
                n_iter: record.fit.n_iter,
            },
            cluster_sizes: record.cluster_sizes.clone(),
            stability,
            truth,
            diagnostics,
        });
        finished.push((record, clustering));
    }

    let interpret_inputs: Vec<InterpretInput<'_>> = finished
        .iter()
        .zip(&pcas)
        .map(|((record, clustering), (pca, _))| InterpretInput {
            clustering: clustering.clone(),
            fit: &record.fit,
            pca,
        })
        .collect();
    let cross = interpret_stage(&interpret_inputs, &inputs.ratings, &inputs.masks, cfg.variance_floor, st)?;

    let headline = Headline::build(&reports, &cross, shared_d);
    let report = RunReport {
        artifact: Artifact::current(),
        generated_at_unix: now_unix(),
        seed: cfg.seed,
        config: cfg.echo.clone(),
        pca: PcaReport {
            variance_threshold: cfg.variance_threshold,
            shared_d_mode: d_mode_name(cfg.shared_d_mode),
            shared_d,
        },
        subjects: reports,
        cross_subject: cross,
        headline,
    };
    st.write_json("report.json", &report)?;
    Ok(report)
}

/// PCA per subject, then the BIC sweep.
pub fn cmd_sweep(config: &Path, ov: &Overrides) -> Result<(), CliError> {
    let p = prepare(config, ov, |_| Checks { sweep: true, ..Checks::default() })?;
    let (cfg, inputs) = (&p.cfg, &p.inputs);
    staged(&cfg.output_dir, |st| {
        p.pool.install(|| {
            let (pcas, _) = pca_stage(&matrices(inputs), cfg.variance_threshold, cfg.shared_d_mode, st)?;
            for (s, (pca, _)) in inputs.subjects.iter().zip(&pcas) {
                let y = project(&s.id, pca, &s.matrix)?;
                sweep_stage(&s.id, subject_seed(cfg.seed, &s.id), y.view(), &cfg.sweep, st)?;
            }
            Ok(())
        })
    })
}

/// Paths of the named upstream artifacts for every subject, checked before
/// anything is computed.
fn require(cfg: &RunConfig, inputs: &Inputs, wanted: &[(fn(&str) -> String, &'static str)]) -> Result<Vec<Vec<std::path::PathBuf>>, CliError> {
    inputs
        .subjects
        .iter()
        .map(|s| {
            wanted
                .iter()
                .map(|(rel, stage)| upstream(&cfg.output_dir, &rel(&s.id), stage))
                .collect()
        })
        .collect()
}

fn load_pca(id: &str, path: &Path) -> Result<PcaModel, CliError> {
    PcaModel::load(path).map_err(|e| CliError::input(format!("subject {id}: {}: {e}", path.display())))
}

/// Final fit at the K chosen by an earlier sweep.
pub fn cmd_fit(config: &Path, ov: &Overrides) -> Result<(), CliError> {
    let p = prepare(config, ov, |_| Checks::default())?;
    let (cfg, inputs) = (&p.cfg, &p.inputs);
    let paths = require(cfg, inputs, &[(pca_path, "sweep"), (bic_curve_path, "sweep")])?;
    staged(&cfg.output_dir, |st| {
        p.pool.install(|| {
            for (s, paths) in inputs.subjects.iter().zip(&paths) {
                let pca = load_pca(&s.id, &paths[0])?;
                let y = project(&s.id, &pca, &s.matrix)?;
                let sweep = read_sweep(&paths[1], y.nrows(), y.ncols())?;
                fit_stage(&s.id, y.view(), s.matrix.trial_ids(), &sweep, &cfg.sweep.options, st)?;
            }
            Ok(())
        })
    })
}

/// Refit stability at each subject's fitted K.
pub fn cmd_stability(config: &Path, ov: &Overrides) -> Result<(), CliError> {
    let p = prepare(config, ov, |_| Checks::default())?;
    let (cfg, inputs) = (&p.cfg, &p.inputs);
    let paths = require(cfg, inputs, &[(pca_path, "sweep"), (fit_path, "fit")])?;
    staged(&cfg.output_dir, |st| {
        p.pool.install(|| {
            for (s, paths) in inputs.subjects.iter().zip(&paths) {
                let pca = load_pca(&s.id, &paths[0])?;
                let y = project(&s.id, &pca, &s.matrix)?;
                let record = read_fit(&paths[1])?;
                let seed = subject_seed(cfg.seed, &s.id);
                stability_stage(&s.id, seed, y.view(), record.chosen_k, cfg.n_refit, &cfg.sweep.options, st)?;
            }
            Ok(())
        })
    })
}

/// Cross-subject comparison of the fitted clusterings.
pub fn cmd_interpret(config: &Path, ov: &Overrides) -> Result<(), CliError> {
    let p = prepare(config, ov, |_| Checks { interpret: true, ..Checks::default() })?;
    let (cfg, inputs) = (&p.cfg, &p.inputs);
    let paths = require(cfg, inputs, &[(pca_path, "sweep"), (fit_path, "fit")])?;
    staged(&cfg.output_dir, |st| {
        p.pool.install(|| {
            let mut loaded = Vec::new();
            for (s, paths) in inputs.subjects.iter().zip(&paths) {
                let pca = load_pca(&s.id, &paths[0])?;
                let record = read_fit(&paths[1])?;
                let y = project(&s.id, &pca, &s.matrix)?;
                let clustering = cluster(&s.id, y.view(), s.matrix.trial_ids(), &record.fit)?;
                loaded.push((pca, record, clustering));
            }
            let subjects: Vec<InterpretInput<'_>> = loaded
                .iter()
                .map(|(pca, record, clustering)| InterpretInput {
                    clustering: clustering.clone(),
                    fit: &record.fit,
                    pca,
                })
                .collect();
            stages::interpret_stage(&subjects, &inputs.ratings, &inputs.masks, cfg.variance_floor, st)?;
            Ok(())
        })
    })
}

/// PCA diagnostics on each raw matrix, whatever `diagnostics.enabled` says.
pub fn cmd_diagnose(config: &Path, ov: &Overrides) -> Result<(), CliError> {
    let p = prepare(config, ov, |_| Checks { diagnostics: true, ..Checks::default() })?;
    let (cfg, inputs) = (&p.cfg, &p.inputs);
    staged(&cfg.output_dir, |st| {
        p.pool.install(|| {
            for s in &inputs.subjects {
                let seed = diagnostics_seed(subject_seed(cfg.seed, &s.id));
                let dcfg = diagnostics_for(cfg, s.matrix.n_trials(), seed);
                diagnostics_stage(&s.id, s.matrix.values(), &dcfg, cfg.d_rule, st)?;
            }
            Ok(())
        })
    })
}

pub use crate::synth_cmd::cmd_synth;
