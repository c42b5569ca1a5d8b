//! Run configuration: a flat `key = value` text file.
//!
//! Grammar (see `docs/config.md` for the key reference):
//!
//! ```text
//! file    := line*
//! line    := blank | comment | entry
//! comment := ws* '#' any*
//! entry   := ws* key ws* '=' ws* value ws*
//! key     := segment ('.' segment)*
//! segment := [A-Za-z0-9_-]+
//! value   := any+ | '"' any* '"'
//! ```
//!
//! A `#` only starts a comment at the beginning of a line, so values may
//! contain it. Surrounding double quotes are stripped. Duplicate and unknown
//! keys are errors. Relative paths resolve against the config file's
//! directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use popcluster_core::dataset::{ColumnKind, KindDeclarations};
use popcluster_core::diagnostics::{DRule, DiagnosticsConfig};
use popcluster_core::gmm::GmmOptions;
use popcluster_core::selection::SweepConfig;
use popcluster_core::synth::SynthSpec;

use crate::error::CliError;

/// Parsed key/value pairs in file order, plus where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RawConfig {
    pub entries: Vec<(String, String)>,
    pub base_dir: PathBuf,
}

fn valid_segment(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl RawConfig {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, CliError> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {lineno}: expected `key = value`")))?;
            let key = key.trim();
            if !key.split('.').all(valid_segment) {
                return Err(CliError::config(format!("line {lineno}: malformed key {key:?}")));
            }
            let mut value = value.trim();
            if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
                value = &value[1..value.len() - 1];
            }
            if value.is_empty() {
                return Err(CliError::config(format!("line {lineno}: empty value for {key}")));
            }
            if entries.iter().any(|(k, _)| k == key) {
                return Err(CliError::config(format!("line {lineno}: duplicate key {key}")));
            }
            entries.push((key.to_string(), value.to_string()));
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Set or replace a key (command-line overrides).
    pub fn set(&mut self, key: &str, value: String) {
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn path(&self, value: &str) -> PathBuf {
        let p = Path::new(value);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Entries sorted by key, for the report's config echo.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.entries.iter().cloned().collect()
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn parse_range(key: &str, v: &str) -> Result<(f64, f64), CliError> {
    let r: Vec<f64> = parse_list(key, v)?;
    match r[..] {
        [lo, hi] if lo <= hi => Ok((lo, hi)),
        _ => Err(CliError::config(format!("{key}: expected `lo, hi` with lo ≤ hi"))),
    }
}

fn parse_kind(key: &str, kind: &str, range: Option<(f64, f64)>) -> Result<ColumnKind, CliError> {
    match kind {
        "continuous" => Ok(ColumnKind::Continuous { range }),
        "discrete" if range.is_none() => Ok(ColumnKind::Discrete),
        "discrete" => Err(CliError::config(format!("{key}: a range only applies to continuous columns"))),
        _ => Err(CliError::config(format!("{key}: expected continuous or discrete, got {kind:?}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SharedDMode {
    /// Every subject uses the largest per-subject D.
    MaxOverSubjects,
    PerSubject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectEntry {
    pub id: String,
    pub matrix: PathBuf,
    /// Optional `trial_id,label` CSV of known labels, compared by Rand index.
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingsEntry {
    pub name: String,
    pub path: PathBuf,
    pub kinds: KindDeclarations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub threads: usize,
    pub subjects: Vec<SubjectEntry>,
    pub ratings: Vec<RatingsEntry>,
    pub variance_threshold: f64,
    pub shared_d_mode: SharedDMode,
    pub sweep: SweepConfig,
    pub n_refit: usize,
    pub diagnostics_enabled: bool,
    pub diagnostics: DiagnosticsConfig,
    /// Whether `diagnostics.sample_sizes` / `diagnostics.train_sizes` were
    /// given; default grids are clipped to what each matrix supports.
    pub sample_sizes_explicit: bool,
    pub train_sizes_explicit: bool,
    pub d_rule: DRule,
    pub variance_floor: f64,
    pub masks: Vec<(String, PathBuf)>,
    pub echo: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub n_subjects: usize,
    pub spec: SynthSpec,
    pub ratings: bool,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Thread count: `POPCLUSTER_THREADS` beats the config key, which beats the
/// number of available cores.
fn resolve_threads(raw: &RawConfig) -> Result<usize, CliError> {
    let from_env = std::env::var("POPCLUSTER_THREADS").ok();
    let (key, v) = match (&from_env, raw.get("threads")) {
        (Some(v), _) => ("POPCLUSTER_THREADS", v.as_str()),
        (None, Some(v)) => ("threads", v),
        (None, None) => return Ok(default_threads()),
    };
    let t: usize = parse_num(key, v)?;
    if t == 0 {
        return Err(CliError::config(format!("{key} must be at least 1")));
    }
    Ok(t)
}

fn common(raw: &RawConfig, ov: &Overrides) -> Result<(u64, PathBuf), CliError> {
    let seed = match (ov.seed, raw.get("seed")) {
        (Some(s), _) => s,
        (None, Some(v)) => parse_num("seed", v)?,
        (None, None) => return Err(CliError::config("seed is required (config key `seed` or --seed)")),
    };
    let output_dir = match (&ov.output_dir, raw.get("output_dir")) {
        (Some(p), _) => p.clone(),
        (None, Some(v)) => raw.path(v),
        (None, None) => {
            return Err(CliError::config(
                "output directory is required (config key `output_dir` or --output-dir)",
            ))
        }
    };
    Ok((seed, output_dir))
}

const RUN_KEYS: &[&str] = &[
    "seed",
    "output_dir",
    "threads",
    "pca.variance_threshold",
    "pca.shared_d_mode",
    "sweep.k_min",
    "sweep.k_max",
    "sweep.n_init",
    "stability.n_refit",
    "gmm.max_iter",
    "gmm.tol",
    "gmm.reg_covar",
    "diagnostics.enabled",
    "diagnostics.sample_sizes",
    "diagnostics.n_iter",
    "diagnostics.top_vectors",
    "diagnostics.test_n",
    "diagnostics.train_sizes",
    "diagnostics.d_rule",
    "interpret.variance_floor",
];

const SYNTH_KEYS: &[&str] = &[
    "synth.subjects",
    "synth.k_true",
    "synth.n",
    "synth.d_low",
    "synth.m",
    "synth.separation",
    "synth.within_sd",
    "synth.noise_sd",
    "synth.weights",
    "synth.ratings",
];

fn is_known(key: &str) -> bool {
    if RUN_KEYS.contains(&key) || SYNTH_KEYS.contains(&key) {
        return true;
    }
    let parts: Vec<&str> = key.split('.').collect();
    matches!(
        parts[..],
        ["subject", _]
            | ["truth", _]
            | ["interpret", "mask", _]
            | ["ratings", _, "path" | "kind" | "range"]
            | ["ratings", _, "column", _, "kind" | "range"]
    )
}

fn check_keys(raw: &RawConfig) -> Result<(), CliError> {
    match raw.entries.iter().find(|(k, _)| !is_known(k)) {
        Some((k, _)) => Err(CliError::config(format!("unknown config key {k}"))),
        None => Ok(()),
    }
}

fn require_file(what: &str, p: &Path) -> Result<(), CliError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::config(format!("{what}: file not found: {}", p.display())))
    }
}

fn parse_d_rule(v: &str, threshold: f64) -> Result<DRule, CliError> {
    let key = "diagnostics.d_rule";
    match v.split_once(':') {
        None if v == "variance" => Ok(DRule::VarianceThreshold(threshold)),
        Some(("variance", t)) => Ok(DRule::VarianceThreshold(parse_num(key, t)?)),
        Some(("fixed", d)) => Ok(DRule::Fixed(parse_num(key, d)?)),
        _ => Err(CliError::config(format!(
            "{key}: expected `variance`, `variance:<ratio>` or `fixed:<D>`, got {v:?}"
        ))),
    }
}

fn ratings_entries(raw: &RawConfig) -> Result<Vec<RatingsEntry>, CliError> {
    let mut names: Vec<&str> = Vec::new();
    for (k, _) in &raw.entries {
        let parts: Vec<&str> = k.split('.').collect();
        if parts[0] == "ratings" && !names.contains(&parts[1]) {
            names.push(parts[1]);
        }
    }
    let mut out = Vec::new();
    for name in names {
        let key = |s: &str| format!("ratings.{name}.{s}");
        let path_key = key("path");
        let path = raw
            .get(&path_key)
            .map(|v| raw.path(v))
            .ok_or_else(|| CliError::config(format!("{path_key} is required")))?;
        require_file(&path_key, &path)?;
        let range = raw.get(&key("range")).map(|v| parse_range(&key("range"), v)).transpose()?;
        let default = parse_kind(&key("kind"), raw.get(&key("kind")).unwrap_or("continuous"), range)?;
        let prefix = key("column.");
        let mut overrides = BTreeMap::new();
        for (k, _) in &raw.entries {
            let Some(rest) = k.strip_prefix(&prefix) else { continue };
            let col = rest.rsplit_once('.').map(|(c, _)| c).unwrap_or(rest);
            if overrides.contains_key(col) {
                continue;
            }
            let ck = format!("{prefix}{col}.kind");
            let cr = format!("{prefix}{col}.range");
            let crange = raw.get(&cr).map(|v| parse_range(&cr, v)).transpose()?;
            let ckind = raw.get(&ck).unwrap_or("continuous");
            overrides.insert(col.to_string(), parse_kind(&ck, ckind, crange)?);
        }
        out.push(RatingsEntry {
            name: name.to_string(),
            path,
            kinds: KindDeclarations { default, overrides },
        });
    }
    Ok(out)
}

impl RunConfig {
    /// Validate everything that can be checked without reading the data.
    pub fn from_raw(raw: &RawConfig, ov: &Overrides) -> Result<Self, CliError> {
        check_keys(raw)?;
        let (seed, output_dir) = common(raw, ov)?;
        let get = |k: &str| raw.get(k);

        let mut subjects = Vec::new();
        for (k, v) in &raw.entries {
            if let Some(id) = k.strip_prefix("subject.") {
                let matrix = raw.path(v);
                require_file(k, &matrix)?;
                let truth = match get(&format!("truth.{id}")) {
                    Some(t) => {
                        let p = raw.path(t);
                        require_file(&format!("truth.{id}"), &p)?;
                        Some(p)
                    }
                    None => None,
                };
                subjects.push(SubjectEntry {
                    id: id.to_string(),
                    matrix,
                    truth,
                });
            }
        }
        if subjects.is_empty() {
            return Err(CliError::config("no subjects: add at least one `subject.<id> = <path>`"));
        }
        for (k, _) in &raw.entries {
            if let Some(id) = k.strip_prefix("truth.") {
                if !subjects.iter().any(|s| s.id == id) {
                    return Err(CliError::config(format!("{k} names no configured subject")));
                }
            }
        }

        let variance_threshold = get("pca.variance_threshold")
            .map(|v| parse_num("pca.variance_threshold", v))
            .transpose()?
            .unwrap_or(0.95);
        if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
            return Err(CliError::config("pca.variance_threshold must lie in (0, 1]"));
        }
        let shared_d_mode = match get("pca.shared_d_mode").unwrap_or("max-over-subjects") {
            "max-over-subjects" => SharedDMode::MaxOverSubjects,
            "per-subject" => SharedDMode::PerSubject,
            other => {
                return Err(CliError::config(format!(
                    "pca.shared_d_mode: expected max-over-subjects or per-subject, got {other:?}"
                )))
            }
        };

        let defaults = GmmOptions::default();
        let options = GmmOptions {
            max_iter: get("gmm.max_iter").map(|v| parse_num("gmm.max_iter", v)).transpose()?.unwrap_or(defaults.max_iter),
            tol: get("gmm.tol").map(|v| parse_num("gmm.tol", v)).transpose()?.unwrap_or(defaults.tol),
            reg_covar: get("gmm.reg_covar").map(|v| parse_num("gmm.reg_covar", v)).transpose()?.unwrap_or(defaults.reg_covar),
        };
        if options.max_iter == 0 || !(options.tol > 0.0) || !(options.reg_covar >= 0.0) {
            return Err(CliError::config("gmm: need max_iter ≥ 1, tol > 0 and reg_covar ≥ 0"));
        }
        let sd = SweepConfig::default();
        let sweep = SweepConfig {
            k_min: get("sweep.k_min").map(|v| parse_num("sweep.k_min", v)).transpose()?.unwrap_or(sd.k_min),
            k_max: get("sweep.k_max").map(|v| parse_num("sweep.k_max", v)).transpose()?.unwrap_or(sd.k_max),
            n_init: get("sweep.n_init").map(|v| parse_num("sweep.n_init", v)).transpose()?.unwrap_or(sd.n_init),
            options,
        };
        let n_refit = get("stability.n_refit").map(|v| parse_num("stability.n_refit", v)).transpose()?.unwrap_or(10);
        if n_refit < 2 {
            return Err(CliError::config("stability.n_refit must be at least 2"));
        }

        let dd = DiagnosticsConfig::default();
        let sample_sizes_explicit = get("diagnostics.sample_sizes").is_some();
        let train_sizes_explicit = get("diagnostics.train_sizes").is_some();
        let diagnostics = DiagnosticsConfig {
            sample_sizes: get("diagnostics.sample_sizes").map(|v| parse_list("diagnostics.sample_sizes", v)).transpose()?.unwrap_or(dd.sample_sizes),
            n_iter: get("diagnostics.n_iter").map(|v| parse_num("diagnostics.n_iter", v)).transpose()?.unwrap_or(dd.n_iter),
            top_vectors: get("diagnostics.top_vectors").map(|v| parse_num("diagnostics.top_vectors", v)).transpose()?.unwrap_or(dd.top_vectors),
            test_n: get("diagnostics.test_n").map(|v| parse_num("diagnostics.test_n", v)).transpose()?.unwrap_or(dd.test_n),
            train_sizes: get("diagnostics.train_sizes").map(|v| parse_list("diagnostics.train_sizes", v)).transpose()?.unwrap_or(dd.train_sizes),
            seed: 0,
        };
        let d_rule = get("diagnostics.d_rule")
            .map(|v| parse_d_rule(v, variance_threshold))
            .transpose()?
            .unwrap_or(DRule::VarianceThreshold(variance_threshold));
        let diagnostics_enabled = get("diagnostics.enabled").map(|v| parse_bool("diagnostics.enabled", v)).transpose()?.unwrap_or(false);

        let variance_floor = get("interpret.variance_floor")
            .map(|v| parse_num("interpret.variance_floor", v))
            .transpose()?
            .unwrap_or(popcluster_core::interpret::DEFAULT_VARIANCE_FLOOR);
        if !(variance_floor > 0.0) {
            return Err(CliError::config("interpret.variance_floor must be positive"));
        }
        let mut masks = Vec::new();
        for (k, v) in &raw.entries {
            if let Some(name) = k.strip_prefix("interpret.mask.") {
                let p = raw.path(v);
                require_file(k, &p)?;
                masks.push((name.to_string(), p));
            }
        }
        if masks.iter().any(|(n, _)| n == "all") {
            return Err(CliError::config("interpret.mask.all is reserved for the unmasked comparison"));
        }

        let mut echo = raw.echo();
        echo.insert("seed".into(), seed.to_string());
        echo.insert("output_dir".into(), output_dir.display().to_string());

        Ok(Self {
            seed,
            output_dir,
            threads: resolve_threads(raw)?,
            subjects,
            ratings: ratings_entries(raw)?,
            variance_threshold,
            shared_d_mode,
            sweep,
            n_refit,
            diagnostics_enabled,
            diagnostics,
            sample_sizes_explicit,
            train_sizes_explicit,
            d_rule,
            variance_floor,
            masks,
            echo,
        })
    }
}

impl SynthConfig {
    pub fn from_raw(raw: &RawConfig, ov: &Overrides) -> Result<Self, CliError> {
        check_keys(raw)?;
        let (seed, output_dir) = common(raw, ov)?;
        let get = |k: &str| raw.get(k);
        let base = SynthSpec::three_clusters(seed);
        let weights = get("synth.weights").map(|v| parse_list("synth.weights", v)).transpose()?;
        let spec = SynthSpec {
            k_true: get("synth.k_true").map(|v| parse_num("synth.k_true", v)).transpose()?.unwrap_or(base.k_true),
            n: get("synth.n").map(|v| parse_num("synth.n", v)).transpose()?.unwrap_or(base.n),
            d_low: get("synth.d_low").map(|v| parse_num("synth.d_low", v)).transpose()?.unwrap_or(base.d_low),
            m: get("synth.m").map(|v| parse_num("synth.m", v)).transpose()?.unwrap_or(base.m),
            separation: get("synth.separation").map(|v| parse_num("synth.separation", v)).transpose()?.unwrap_or(base.separation),
            within_sd: get("synth.within_sd").map(|v| parse_num("synth.within_sd", v)).transpose()?.unwrap_or(base.within_sd),
            noise_sd: get("synth.noise_sd").map(|v| parse_num("synth.noise_sd", v)).transpose()?.unwrap_or(base.noise_sd),
            weights,
            seed,
        };
        spec.validate().map_err(|e| CliError::config(e.to_string()))?;
        let n_subjects = get("synth.subjects").map(|v| parse_num("synth.subjects", v)).transpose()?.unwrap_or(1);
        if n_subjects == 0 {
            return Err(CliError::config("synth.subjects must be at least 1"));
        }
        let ratings = get("synth.ratings").map(|v| parse_bool("synth.ratings", v)).transpose()?.unwrap_or(true);
        Ok(Self {
            seed,
            output_dir,
            n_subjects,
            spec,
            ratings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar_basics() {
        let raw = RawConfig::parse(
            "# header\n\n  seed = 7\nsubject.S1 = \"a b.csv\"\nnote_key = x # not a comment\n",
            "/base",
        )
        .unwrap();
        assert_eq!(raw.get("seed"), Some("7"));
        assert_eq!(raw.get("subject.S1"), Some("a b.csv"));
        assert_eq!(raw.get("note_key"), Some("x # not a comment"));
        assert_eq!(raw.path("a.csv"), PathBuf::from("/base/a.csv"));
        assert_eq!(raw.path("/abs.csv"), PathBuf::from("/abs.csv"));
    }

    #[test]
    fn grammar_errors() {
        for bad in ["seed 7", "seed =", "se ed = 1", "a..b = 1", "seed = 1\nseed = 2"] {
            assert!(RawConfig::parse(bad, ".").is_err(), "{bad:?} should fail");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let raw = RawConfig::parse("seed = 1\noutput_dir = o\nsweep.kmax = 3\n", ".").unwrap();
        let err = RunConfig::from_raw(&raw, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("sweep.kmax"));
    }

    #[test]
    fn seed_is_mandatory() {
        let raw = RawConfig::parse("output_dir = o\n", ".").unwrap();
        let err = SynthConfig::from_raw(&raw, &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("seed"));
        let ok = SynthConfig::from_raw(&raw, &Overrides { seed: Some(3), output_dir: None }).unwrap();
        assert_eq!(ok.seed, 3);
    }

    #[test]
    fn d_rule_forms() {
        assert_eq!(parse_d_rule("variance", 0.9).unwrap(), DRule::VarianceThreshold(0.9));
        assert_eq!(parse_d_rule("variance:0.5", 0.9).unwrap(), DRule::VarianceThreshold(0.5));
        assert_eq!(parse_d_rule("fixed:4", 0.9).unwrap(), DRule::Fixed(4));
        assert!(parse_d_rule("fixed", 0.9).is_err());
    }

    #[test]
    fn ratings_declarations() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("r.csv"), "trial_id,a\nt,1\n").unwrap();
        let raw = RawConfig::parse(
            "ratings.emo.path = r.csv\nratings.emo.range = 0, 100\n\
             ratings.emo.column.session.kind = discrete\n",
            dir.path(),
        )
        .unwrap();
        let r = ratings_entries(&raw).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].kinds.kind_of("a"), ColumnKind::Continuous { range: Some((0.0, 100.0)) });
        assert_eq!(r[0].kinds.kind_of("session"), ColumnKind::Discrete);
    }
}
