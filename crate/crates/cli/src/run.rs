//! Writing a run to disk and checking a stored run against a recomputation.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

use crate::report::FitResult;
use crate::tasks::{RunOutput, RESULT_FILE};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn run_dir(root: &Path, task: &str, seed: u64) -> PathBuf {
    root.join(format!("{task}-seed{seed}"))
}

/// Writes every artifact into a sibling temporary directory and renames it
/// over `dir`, so a run directory is never left half written.
pub fn write_run(dir: &Path, output: &RunOutput) -> Result<()> {
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let name = dir.file_name().context("run directory has no name")?.to_string_lossy();
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    for (file, content) in &output.files {
        fs::write(tmp.join(file), content).with_context(|| format!("writing {file}"))?;
    }
    if dir.exists() {
        fs::remove_dir_all(dir).with_context(|| format!("replacing {}", dir.display()))?;
    }
    fs::rename(&tmp, dir).with_context(|| format!("moving results into {}", dir.display()))?;
    Ok(())
}

/// Differences between a stored run directory and a fresh `output`: every
/// file hash recorded in the stored result must match the file on disk and
/// the recomputation, and the stored result itself must be reproduced.
/// Empty means the run reproduces byte for byte.
pub fn check_run(dir: &Path, output: &RunOutput) -> Result<Vec<String>> {
    let path = dir.join(RESULT_FILE);
    if !path.exists() {
        bail!("no {RESULT_FILE} in {}", dir.display());
    }
    let stored_text = fs::read_to_string(&path)?;
    let stored = FitResult::from_json(&stored_text).with_context(|| format!("parsing {}", path.display()))?;
    let mut problems = Vec::new();
    for (name, hash) in &stored.artifacts {
        match fs::read(dir.join(name)) {
            Ok(bytes) if sha256_hex(&bytes) == *hash => {}
            Ok(_) => problems.push(format!("{name}: file on disk does not match its recorded hash")),
            Err(e) => problems.push(format!("{name}: {e}")),
        }
        match output.result.artifacts.get(name) {
            Some(fresh) if fresh == hash => {}
            Some(_) => problems.push(format!("{name}: recomputed contents differ")),
            None => problems.push(format!("{name}: not produced by the recomputation")),
        }
    }
    for name in output.result.artifacts.keys() {
        if !stored.artifacts.contains_key(name) {
            problems.push(format!("{name}: produced by the recomputation but not recorded"));
        }
    }
    if output.file(RESULT_FILE) != Some(stored_text.as_str()) {
        problems.push(format!("{RESULT_FILE}: recomputed result differs"));
    }
    Ok(problems)
}
