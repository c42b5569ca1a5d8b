//! Loading and cross-checking everything a run reads, before any compute.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use popcluster_core::dataset::{load_matrix_binary, load_matrix_csv, load_ratings_csv, MAGIC};
use popcluster_core::diagnostics::DiagnosticsConfig;
use popcluster_core::{RatingsTable, TrialMatrix};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{QUARANTINE_DIR, STAGING_DIR};

/// Directory names a subject id may not take.
const RESERVED_IDS: &[&str] = &["interpret", QUARANTINE_DIR, STAGING_DIR];

/// Read a matrix as PCM1 if the file starts with the magic bytes, else as
/// CSV.
pub fn load_matrix(path: &Path) -> Result<TrialMatrix, CliError> {
    let mut head = [0u8; 4];
    let is_binary = File::open(path)
        .and_then(|mut f| f.read_exact(&mut head))
        .map(|_| &head == MAGIC)
        .unwrap_or(false);
    let loaded = if is_binary {
        load_matrix_binary(path)
    } else {
        load_matrix_csv(path)
    };
    loaded.map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// `trial_id,label` CSV.
pub fn load_labels(path: &Path) -> Result<Vec<(String, usize)>, CliError> {
    let bad = |msg: String| CliError::input(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() != 2 || &header[0] != "trial_id" || &header[1] != "label" {
        return Err(bad("expected header `trial_id,label`".into()));
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let label = rec[1]
            .parse()
            .map_err(|_| bad(format!("row {}: label {:?} is not a nonnegative integer", i + 1, &rec[1])))?;
        if !seen.insert(rec[0].to_string()) {
            return Err(bad(format!("duplicate trial id {}", &rec[0])));
        }
        out.push((rec[0].to_string(), label));
    }
    Ok(out)
}

/// Feature indices separated by commas or whitespace; lines starting with
/// `#` are comments. Sorted and deduplicated.
pub fn load_mask(path: &Path) -> Result<Vec<usize>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut idx = BTreeSet::new();
    for line in text.lines().filter(|l| !l.trim_start().starts_with('#')) {
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let i: usize = tok
                .parse()
                .map_err(|_| CliError::input(format!("{}: bad feature index {tok:?}", path.display())))?;
            idx.insert(i);
        }
    }
    if idx.is_empty() {
        return Err(CliError::input(format!("{}: mask selects no features", path.display())));
    }
    Ok(idx.into_iter().collect())
}

#[derive(Debug)]
pub struct SubjectInput {
    pub id: String,
    pub matrix: TrialMatrix,
    pub truth: Option<Vec<(String, usize)>>,
}

/// Which data-dependent checks a command needs.
#[derive(Debug, Clone, Copy, Default)]
pub struct Checks {
    pub sweep: bool,
    pub interpret: bool,
    pub diagnostics: bool,
}

#[derive(Debug)]
pub struct Inputs {
    pub subjects: Vec<SubjectInput>,
    pub ratings: Vec<(String, RatingsTable)>,
    pub masks: Vec<(String, Vec<usize>)>,
}

/// Diagnostics settings for a matrix with `n` rows. Default size grids are
/// clipped to what the matrix supports; explicit ones are left alone and
/// fail validation if too large.
pub fn diagnostics_for(cfg: &RunConfig, n: usize, seed: u64) -> DiagnosticsConfig {
    let mut d = cfg.diagnostics.clone();
    d.seed = seed;
    if !cfg.sample_sizes_explicit {
        clip("sample_sizes", &mut d.sample_sizes, n);
    }
    if !cfg.train_sizes_explicit {
        clip("train_sizes", &mut d.train_sizes, n.saturating_sub(d.test_n));
    }
    d
}

fn clip(what: &str, sizes: &mut Vec<usize>, limit: usize) {
    let before = sizes.len();
    sizes.retain(|&t| t <= limit);
    if sizes.len() < before {
        log::warn!("default diagnostics.{what} clipped to sizes ≤ {limit}");
    }
}

impl Inputs {
    /// Load every matrix, ratings table and mask named in the config.
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let mut subjects = Vec::new();
        for s in &cfg.subjects {
            if RESERVED_IDS.contains(&s.id.as_str()) {
                return Err(CliError::config(format!("subject id {:?} is reserved", s.id)));
            }
            log::info!("loading subject {} from {}", s.id, s.matrix.display());
            let matrix = load_matrix(&s.matrix)?;
            let truth = s.truth.as_deref().map(load_labels).transpose()?;
            subjects.push(SubjectInput {
                id: s.id.clone(),
                matrix,
                truth,
            });
        }
        let ratings = cfg
            .ratings
            .iter()
            .map(|r| {
                load_ratings_csv(&r.path, &r.kinds)
                    .map(|t| (r.name.clone(), t))
                    .map_err(|e| CliError::input(format!("ratings {}: {e}", r.name)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let masks = cfg
            .masks
            .iter()
            .map(|(name, p)| load_mask(p).map(|m| (name.clone(), m)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            subjects,
            ratings,
            masks,
        })
    }

    /// Checks that depend on the data shapes, run before any compute.
    pub fn validate(&self, cfg: &RunConfig, checks: Checks) -> Result<(), CliError> {
        for s in &self.subjects {
            let n = s.matrix.n_trials();
            if checks.sweep {
                cfg.sweep
                    .validate(n)
                    .map_err(|e| CliError::config(format!("subject {}: {e}", s.id)))?;
            }
            if checks.diagnostics {
                diagnostics_for(cfg, n, 0)
                    .validate(n)
                    .map_err(|e| CliError::config(format!("subject {} diagnostics: {e}", s.id)))?;
            }
        }
        if !checks.interpret {
            return Ok(());
        }
        let first = &self.subjects[0];
        let universe: BTreeSet<&String> = first.matrix.trial_ids().iter().collect();
        for s in &self.subjects[1..] {
            let other: BTreeSet<&String> = s.matrix.trial_ids().iter().collect();
            if other != universe {
                return Err(CliError::input(format!(
                    "subjects {} and {} cover different trials; cross-subject comparison needs one trial set",
                    first.id, s.id
                )));
            }
        }
        let m = first.matrix.n_features();
        if let Some(s) = self.subjects.iter().find(|s| s.matrix.n_features() != m) {
            return Err(CliError::input(format!(
                "subject {} has {} features, subject {} has {m}",
                s.id,
                s.matrix.n_features(),
                first.id
            )));
        }
        for (name, mask) in &self.masks {
            if let Some(&i) = mask.iter().find(|&&i| i >= m) {
                return Err(CliError::input(format!("mask {name}: index {i} outside 0..{m}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        std::fs::write(&p, "# region\n3, 1\n2 3\n").unwrap();
        assert_eq!(load_mask(&p).unwrap(), vec![1, 2, 3]);
        std::fs::write(&p, "1, x\n").unwrap();
        assert!(load_mask(&p).is_err());
    }

    #[test]
    fn labels_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "trial_id,label\na,0\nb,2\n").unwrap();
        assert_eq!(load_labels(&p).unwrap(), vec![("a".into(), 0), ("b".into(), 2)]);
        std::fs::write(&p, "trial_id,label\na,0\na,1\n").unwrap();
        assert!(load_labels(&p).is_err());
        std::fs::write(&p, "id,label\na,0\n").unwrap();
        assert!(load_labels(&p).is_err());
    }
}
