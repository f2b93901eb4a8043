use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::args::Command;
use crate::CliError;

/// SHA-256 of the command's canonical JSON form.
pub fn config_hash(command: &Command) -> Result<String, CliError> {
    let text = serde_json::to_string(command)?;
    Ok(format!("{:x}", Sha256::digest(text.as_bytes())))
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool_version: &'a str,
    config_hash: &'a str,
    run: &'a Command,
}

/// Writes `run.json` into `dir` so the run can be repeated.
pub fn write_run_config(dir: &Path, command: &Command, hash: &str) -> Result<(), CliError> {
    let record = RunRecord {
        tool_version: env!("CARGO_PKG_VERSION"),
        config_hash: hash,
        run: command,
    };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&record)?)?;
    Ok(())
}

/// Fails with a usage error when an input path does not exist.
pub fn require(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

pub fn output_dir(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}

/// Segments as CSV rows of real sample values; `#` lines are comments.
pub fn read_segments(path: &Path, len: usize) -> Result<Vec<Vec<f64>>, CliError> {
    require(path, "segment file")?;
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Runtime(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if row.len() != len {
            return Err(CliError::Runtime(format!(
                "{} line {}: {} values, the model expects {len}",
                path.display(),
                i + 1,
                row.len()
            )));
        }
        out.push(row);
    }
    Ok(out)
}

pub fn write_segments<W: Write>(
    rows: &[Vec<f64>],
    comment: &str,
    mut out: W,
) -> Result<(), CliError> {
    writeln!(out, "# {comment}")?;
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn write_labels<W: Write>(labels: &[usize], comment: &str, mut out: W) -> Result<(), CliError> {
    writeln!(out, "# {comment}")?;
    writeln!(out, "segment,label")?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    Ok(())
}
