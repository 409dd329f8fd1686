// SPDX-License-Identifier: Apache-2.0

//! Atomic file output: CSV tables with `#` unit headers, JSONL, manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// A CSV table whose leading `#` lines describe the columns and their units.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub comments: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn comment(mut self, line: impl Into<String>) -> Self {
        self.comments.push(line.into());
        self
    }

    pub fn push<I, S>(&mut self, row: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        self.rows.push(row.into_iter().map(|s| s.to_string()).collect());
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for c in &self.comments {
            out.extend_from_slice(format!("# {c}\n").as_bytes());
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        atomic_write(path, &self.to_bytes())
    }

    /// Reads a table written by [`Table::write`].
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut comments = Vec::new();
        let mut body = String::new();
        for line in text.lines() {
            match line.strip_prefix("# ") {
                Some(c) if body.is_empty() => comments.push(c.to_string()),
                _ => {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
        let bad = |e: csv::Error| CliError::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e));
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let columns = r.headers().map_err(bad)?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .map_err(bad)?;
        Ok(Self {
            comments,
            columns,
            rows,
        })
    }
}

/// Key-value manifest of a run.
#[derive(Debug, Clone, Default)]
pub struct Manifest(pub Vec<(String, String)>);

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.push((key.to_string(), value.to_string()));
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .filter_map(|l| l.split_once(" = "))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        )
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// Output root: explicit flag, then `SINGLET_OUT`, then the config, then `singlet-out`.
pub fn resolve_out_dir(flag: Option<PathBuf>, config: Option<&PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("SINGLET_OUT").map(PathBuf::from))
        .or_else(|| config.cloned())
        .unwrap_or_else(|| PathBuf::from("singlet-out"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trips_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new(&["a", "b"]).comment("a: units of γp");
        t.push([1.5, 2.0]);
        t.push([0.1, 1e-300]);
        t.write(&path).unwrap();
        let back = Table::read(&path).unwrap();
        assert_eq!(back.comments, t.comments);
        assert_eq!(back.columns, t.columns);
        assert_eq!(back.rows, t.rows);
        assert!(!dir
            .path()
            .read_dir()
            .unwrap()
            .any(|e| e.unwrap().file_name().to_string_lossy().contains("tmp")));
    }

    #[test]
    fn manifest_parses_back() {
        let mut m = Manifest::default();
        m.set("seed", 7);
        m.set("config_sha256", "ab");
        let back = Manifest::parse(&m.to_text());
        assert_eq!(back.get("seed"), Some("7"));
        assert_eq!(back.get("config_sha256"), Some("ab"));
    }
}
