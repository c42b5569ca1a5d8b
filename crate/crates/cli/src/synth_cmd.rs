//! `popcluster synth`: planted-cluster matrices plus a ready-to-run
//! pipeline config.
//!
//! Output layout:
//!
//! ```text
//! <out>/S<i>/matrix.pcm1      one matrix per subject, shared trial ids
//! <out>/S<i>/truth.csv        trial_id,label
//! <out>/ratings/*.csv         cluster-independent ratings (optional)
//! <out>/masks/*.txt           two feature-index masks (optional)
//! <out>/synth_spec.conf       the resolved generator settings
//! <out>/pipeline.conf         a config for `popcluster pipeline`
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use popcluster_core::dataset::save_matrix_binary;
use popcluster_core::seed::{derive_seed, rng_from, tag_of};
use popcluster_core::synth::{generate, SynthSpec};

use crate::config::{Overrides, RawConfig, SynthConfig};
use crate::error::CliError;
use crate::output::{fmt_f64, staged, Staging};

/// Trials per session and per run in the synthetic design table.
const SESSIONS: usize = 4;
const RUNS_PER_SESSION: usize = 5;

/// Continuous rating tables: name, column prefix, column count, range.
const RATING_TABLES: &[(&str, &str, usize, (f64, f64))] = &[
    ("emotion", "category", 8, (0.0, 100.0)),
    ("affective", "feature", 4, (1.0, 9.0)),
    ("semantic", "feature", 6, (0.0, 1.0)),
];

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub subjects: Vec<String>,
    pub pipeline_config: std::path::PathBuf,
}

fn subject_spec(cfg: &SynthConfig, i: usize) -> SynthSpec {
    SynthSpec {
        seed: derive_seed(cfg.seed, &[tag_of("synth"), i as u64]),
        ..cfg.spec.clone()
    }
}

fn spec_echo(cfg: &SynthConfig) -> String {
    let s = &cfg.spec;
    let mut out = String::from("# Settings used by `popcluster synth`; usable as its --config.\n");
    let _ = writeln!(out, "seed = {}", cfg.seed);
    let _ = writeln!(out, "synth.subjects = {}", cfg.n_subjects);
    let _ = writeln!(out, "synth.k_true = {}", s.k_true);
    let _ = writeln!(out, "synth.n = {}", s.n);
    let _ = writeln!(out, "synth.d_low = {}", s.d_low);
    let _ = writeln!(out, "synth.m = {}", s.m);
    let _ = writeln!(out, "synth.separation = {}", fmt_f64(s.separation));
    let _ = writeln!(out, "synth.within_sd = {}", fmt_f64(s.within_sd));
    let _ = writeln!(out, "synth.noise_sd = {}", fmt_f64(s.noise_sd));
    if let Some(w) = &s.weights {
        let w: Vec<String> = w.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(out, "synth.weights = {}", w.join(", "));
    }
    let _ = writeln!(out, "synth.ratings = {}", cfg.ratings);
    out
}

fn pipeline_conf(cfg: &SynthConfig, ids: &[String]) -> String {
    let k_max = (cfg.spec.k_true + 5).min(cfg.spec.n - 1);
    let mut out = String::from("# Pipeline config for the generated data; paths are relative to this file.\n");
    let _ = writeln!(out, "seed = {}", cfg.seed);
    let _ = writeln!(out, "output_dir = results");
    for id in ids {
        let _ = writeln!(out, "subject.{id} = {id}/matrix.pcm1");
        let _ = writeln!(out, "truth.{id} = {id}/truth.csv");
    }
    let _ = writeln!(out, "sweep.k_min = 1");
    let _ = writeln!(out, "sweep.k_max = {k_max}");
    let _ = writeln!(out, "sweep.n_init = 20");
    let _ = writeln!(out, "stability.n_refit = 10");
    if cfg.ratings {
        for &(name, _, _, (lo, hi)) in RATING_TABLES {
            let _ = writeln!(out, "ratings.{name}.path = ratings/{name}.csv");
            let _ = writeln!(out, "ratings.{name}.range = {lo}, {hi}");
        }
        let _ = writeln!(out, "ratings.design.path = ratings/design.csv");
        let _ = writeln!(out, "ratings.design.kind = discrete");
        for (name, _) in mask_ranges(cfg.spec.m) {
            let _ = writeln!(out, "interpret.mask.{name} = masks/{name}.txt");
        }
    }
    out
}

/// Two disjoint feature blocks, each a tenth of the features (at least one).
fn mask_ranges(m: usize) -> [(&'static str, std::ops::Range<usize>); 2] {
    let w = (m / 10).max(1);
    let b = (m / 2).min(m - w);
    [("V1", 0..w), ("vmPFC", b..b + w)]
}

fn write_ratings(cfg: &SynthConfig, trial_ids: &[String], st: &Staging) -> Result<(), CliError> {
    let mut rng = rng_from(derive_seed(cfg.seed, &[tag_of("ratings")]));
    for &(name, prefix, cols, (lo, hi)) in RATING_TABLES {
        let mut header = vec!["trial_id".to_string()];
        header.extend((0..cols).map(|j| format!("{prefix}_{j:02}")));
        let rows: Vec<Vec<String>> = trial_ids
            .iter()
            .map(|t| {
                let mut row = vec![t.clone()];
                row.extend((0..cols).map(|_| fmt_f64(rng.random_range(lo..=hi))));
                row
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        st.write_csv(&format!("ratings/{name}.csv"), &header, rows)?;
    }
    let n = trial_ids.len();
    let rows = trial_ids.iter().enumerate().map(|(i, t)| {
        let block = i * SESSIONS * RUNS_PER_SESSION / n;
        vec![
            t.clone(),
            (block / RUNS_PER_SESSION).to_string(),
            (block % RUNS_PER_SESSION).to_string(),
        ]
    });
    st.write_csv("ratings/design.csv", &["trial_id", "session", "run"], rows)?;
    for (name, range) in mask_ranges(cfg.spec.m) {
        let body: String = range.map(|i| format!("{i}\n")).collect();
        st.write_text(&format!("masks/{name}.txt"), &body)?;
    }
    Ok(())
}

pub fn cmd_synth(config: &Path, ov: &Overrides) -> Result<SynthSummary, CliError> {
    let raw = RawConfig::load(config)?;
    let cfg = SynthConfig::from_raw(&raw, ov)?;
    let out = cfg.output_dir.clone();
    let subjects = staged(&out, |st| {
        let mut ids = Vec::new();
        let mut trial_ids = Vec::new();
        for i in 1..=cfg.n_subjects {
            let id = format!("S{i}");
            let spec = subject_spec(&cfg, i);
            log::info!("generating {id} (seed {})", spec.seed);
            let data = generate(&spec).map_err(|e| CliError::stage("synth", &id, spec.seed, e))?;
            let path = st.file_path(&format!("{id}/matrix.pcm1"))?;
            save_matrix_binary(&data.x, &path).map_err(|e| CliError::stage("synth", &id, spec.seed, e))?;
            let rows = data
                .x
                .trial_ids()
                .iter()
                .zip(&data.true_labels)
                .map(|(t, l)| vec![t.clone(), l.to_string()]);
            st.write_csv(&format!("{id}/truth.csv"), &["trial_id", "label"], rows)?;
            trial_ids = data.x.trial_ids().to_vec();
            ids.push(id);
        }
        if cfg.ratings {
            write_ratings(&cfg, &trial_ids, st)?;
        }
        st.write_text("synth_spec.conf", &spec_echo(&cfg))?;
        st.write_text("pipeline.conf", &pipeline_conf(&cfg, &ids))?;
        Ok(ids)
    })?;
    Ok(SynthSummary {
        subjects,
        pipeline_config: out.join("pipeline.conf"),
    })
}
