//! File plumbing: atomic writes and JSON-lines trajectories.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mdp::{Trajectory, TrajectoryRecord};

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn trajectories_to_jsonl(trajectories: &[Trajectory]) -> Result<String> {
    let mut out = String::new();
    for t in trajectories {
        out.push_str(&serde_json::to_string(&TrajectoryRecord::from(t))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_trajectories(path: impl AsRef<Path>, trajectories: &[Trajectory]) -> Result<()> {
    write_atomic(path, trajectories_to_jsonl(trajectories)?.as_bytes())
}

/// Reads one trajectory per non-blank line.
pub fn read_trajectories(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidTrajectory(format!("line {}: {e}", i + 1)))?;
        out.push(Trajectory::try_from(record)?);
    }
    Ok(out)
}

/// Formats a float so that parsing it back gives the same bits.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
