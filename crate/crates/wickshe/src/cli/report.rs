//! Output directory layout: one CSV per table plus report.toml with the
//! resolved config, file hashes and check verdicts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::commands::{Check, Outcome};
use super::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl From<&Check> for CheckEntry {
    fn from(c: &Check) -> Self {
        Self { name: c.name.clone(), passed: c.passed, detail: c.detail.clone() }
    }
}

#[derive(Debug, Serialize)]
pub struct Report<'a> {
    pub subcommand: &'a str,
    pub wall_time_seconds: f64,
    pub passed: bool,
    pub config: &'a RunConfig,
    pub files: Vec<FileEntry>,
    pub checks: Vec<CheckEntry>,
}

fn write(path: &Path, text: &str) -> std::io::Result<()> {
    fs::write(path, text).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Writes every table and report.toml; returns the report path.
pub fn write_outputs(
    subcommand: &str,
    cfg: &RunConfig,
    outcome: &Outcome,
    elapsed: Duration,
) -> std::io::Result<PathBuf> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for (name, table) in &outcome.tables {
        let text = table.render();
        write(&dir.join(name), &text)?;
        files.push(FileEntry { name: name.clone(), sha256: hex::encode(Sha256::digest(text.as_bytes())), bytes: text.len() });
    }
    let report = Report {
        subcommand,
        wall_time_seconds: elapsed.as_secs_f64(),
        passed: outcome.passed(),
        config: cfg,
        files,
        checks: outcome.checks.iter().map(CheckEntry::from).collect(),
    };
    let text = toml::to_string(&report).map_err(std::io::Error::other)?;
    let path = dir.join("report.toml");
    write(&path, &text)?;
    Ok(path)
}
