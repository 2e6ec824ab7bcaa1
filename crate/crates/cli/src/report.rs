use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "docdet";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Destination of the machine-readable result.
pub struct Output {
    path: Option<PathBuf>,
}

impl Output {
    pub fn new(path: Option<PathBuf>) -> Self {
        Output { path }
    }

    fn write(&self, text: &str) -> anyhow::Result<()> {
        match &self.path {
            Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(text.as_bytes())?;
                stdout.flush()?;
                Ok(())
            }
        }
    }

    pub fn json<T: Serialize>(&self, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(&text)
    }

    pub fn lines<T: Serialize>(&self, rows: &[T]) -> anyhow::Result<()> {
        self.write(&json_lines(rows)?)
    }
}

pub fn json_lines<T: Serialize>(rows: &[T]) -> anyhow::Result<String> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row)?);
        text.push('\n');
    }
    Ok(text)
}

pub fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Deterministic report: no paths, timestamps or scheduling-dependent order.
#[derive(Debug, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    /// SHA-256 of each input file, keyed by role.
    pub inputs: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub sections: BTreeMap<String, serde_json::Value>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_image: Vec<serde_json::Value>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(command: impl Into<String>, config: impl Serialize) -> anyhow::Result<Self> {
        Ok(Report {
            tool: TOOL,
            version: VERSION,
            command: command.into(),
            inputs: BTreeMap::new(),
            config: serde_json::to_value(config)?,
            sections: BTreeMap::new(),
            per_image: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn input(&mut self, role: &str, path: &Path) -> anyhow::Result<()> {
        self.inputs.insert(role.to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn section(&mut self, name: &str, value: impl Serialize) -> anyhow::Result<()> {
        self.sections.insert(name.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    /// Prints warnings to stderr after the summary line.
    pub fn summarize(&self, summary: &str) {
        eprintln!("{summary}");
        for w in &self.warnings {
            eprintln!("warning: {w}");
        }
    }
}
