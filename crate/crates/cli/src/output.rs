//! Staged output directory and CSV/JSON writers.
//!
//! A command writes everything under `<out>/.inprogress/` and only moves
//! the files into `<out>/` once it has succeeded. On failure the staging
//! directory becomes `<out>/quarantine/`, replacing any earlier one.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

pub const STAGING_DIR: &str = ".inprogress";
pub const QUARANTINE_DIR: &str = "quarantine";

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug)]
pub struct Staging {
    out: PathBuf,
    dir: PathBuf,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(path, e)
}

impl Staging {
    pub fn begin(out: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out).map_err(io(out))?;
        let dir = out.join(STAGING_DIR);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        Ok(Self {
            out: out.to_path_buf(),
            dir,
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn create(&self, rel: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io(parent))?;
        }
        Ok(BufWriter::new(File::create(&path).map_err(io(&path))?))
    }

    /// Absolute path of `rel` inside the staging directory, with parent
    /// directories created.
    pub fn file_path(&self, rel: &str) -> Result<PathBuf, CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io(parent))?;
        }
        Ok(path)
    }

    pub fn write_csv<I>(&self, rel: &str, header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.dir.join(rel);
        let err = |e: csv::Error| CliError::io(&path, std::io::Error::other(e));
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(self.create(rel)?);
        w.write_record(header).map_err(err)?;
        for row in rows {
            debug_assert_eq!(row.len(), header.len());
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(io(&path))
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        let mut w = self.create(rel)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(&path, e.into()))?;
        w.write_all(b"\n").map_err(io(&path))?;
        w.flush().map_err(io(&path))
    }

    pub fn write_text(&self, rel: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        let mut w = self.create(rel)?;
        w.write_all(text.as_bytes()).map_err(io(&path))?;
        w.flush().map_err(io(&path))
    }

    /// Move every staged file into the output directory, replacing files of
    /// the same name and leaving unrelated ones alone.
    pub fn commit(self) -> Result<(), CliError> {
        merge_into(&self.dir, &self.out)?;
        fs::remove_dir_all(&self.dir).map_err(io(&self.dir))
    }

    /// Keep partial outputs for inspection. Returns the quarantine path.
    pub fn quarantine(self) -> Result<PathBuf, CliError> {
        let target = self.out.join(QUARANTINE_DIR);
        if target.exists() {
            fs::remove_dir_all(&target).map_err(io(&target))?;
        }
        fs::rename(&self.dir, &target).map_err(io(&target))?;
        Ok(target)
    }
}

/// Run `f` against a staging directory; commit on success, quarantine on
/// failure.
pub fn staged<T>(out: &Path, f: impl FnOnce(&Staging) -> Result<T, CliError>) -> Result<T, CliError> {
    let st = Staging::begin(out)?;
    match f(&st) {
        Ok(v) => {
            st.commit()?;
            Ok(v)
        }
        Err(e) => {
            match st.quarantine() {
                Ok(q) => log::error!("partial outputs moved to {}", q.display()),
                Err(qe) => log::error!("could not quarantine partial outputs: {qe}"),
            }
            Err(e)
        }
    }
}

fn merge_into(from: &Path, to: &Path) -> Result<(), CliError> {
    fs::create_dir_all(to).map_err(io(to))?;
    let mut entries: Vec<_> = fs::read_dir(from)
        .map_err(io(from))?
        .collect::<Result<_, _>>()
        .map_err(io(from))?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let src = entry.path();
        let dst = to.join(entry.file_name());
        if src.is_dir() {
            merge_into(&src, &dst)?;
        } else {
            if dst.is_dir() {
                fs::remove_dir_all(&dst).map_err(io(&dst))?;
            }
            fs::rename(&src, &dst).map_err(io(&dst))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commit_merges_and_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        fs::create_dir_all(out.join("S1")).unwrap();
        fs::write(out.join("S1/keep.txt"), "old").unwrap();
        fs::write(out.join("S1/fit.json"), "old").unwrap();
        let st = Staging::begin(out).unwrap();
        st.write_text("S1/fit.json", "new").unwrap();
        st.write_csv("S1/sweep/a.csv", &["x", "y"], vec![vec!["1".into(), "2".into()]])
            .unwrap();
        st.commit().unwrap();
        assert_eq!(fs::read_to_string(out.join("S1/keep.txt")).unwrap(), "old");
        assert_eq!(fs::read_to_string(out.join("S1/fit.json")).unwrap(), "new");
        assert_eq!(fs::read_to_string(out.join("S1/sweep/a.csv")).unwrap(), "x,y\n1,2\n");
        assert!(!out.join(STAGING_DIR).exists());
    }

    #[test]
    fn quarantine_replaces_previous() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        let st = Staging::begin(out).unwrap();
        st.write_text("a.txt", "1").unwrap();
        st.quarantine().unwrap();
        let st = Staging::begin(out).unwrap();
        st.write_text("b.txt", "2").unwrap();
        let q = st.quarantine().unwrap();
        assert!(q.join("b.txt").exists());
        assert!(!q.join("a.txt").exists());
    }

    #[test]
    fn floats_roundtrip() {
        for v in [0.1, -1e-300, 1.0 / 3.0, 292.99838, 12345678.9] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
