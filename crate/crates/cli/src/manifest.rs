//! Output directories, the run summary and its verification.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Bumped whenever a summary field changes meaning or disappears.
pub const SCHEMA_VERSION: u32 = 1;

/// Suffix shared by every summary file, so `verify` can find them.
pub const SUMMARY_SUFFIX: &str = "summary.json";

/// Machine-readable record of one invocation. Holds no timestamps, so an
/// identical config and seed give a byte-identical summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub results: serde_json::Value,
    /// File name (relative to the output directory) to SHA-256 hex digest.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("bfc-cli".to_owned(), env!("CARGO_PKG_VERSION").to_owned()),
        ("bfc-core".to_owned(), bfc_core::VERSION.to_owned()),
        ("rng".to_owned(), bfc_core::synth::RNG_NAME.to_owned()),
    ])
}

/// Collects the files of one invocation. All writes go through `&mut self`,
/// so they are serialized per directory.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl OutputDir {
    /// Creates `dir` if needed and checks that it accepts writes.
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let probe = dir.join(".bfc-write-probe");
        fs::write(&probe, b"").map_err(|e| CliError::io(&probe, e))?;
        fs::remove_file(&probe).map_err(|e| CliError::io(&probe, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.insert(name.to_owned(), sha256_hex(contents.as_bytes()));
        Ok(path)
    }

    pub fn artifacts(&self) -> &BTreeMap<String, String> {
        &self.artifacts
    }

    /// Writes `<command>.summary.json`, or `summary.json` for `run`.
    pub fn finish(
        self,
        cfg: &RunConfig,
        command: &str,
        pipeline: Option<&str>,
        results: serde_json::Value,
    ) -> Result<PathBuf> {
        let summary = Summary {
            schema_version: SCHEMA_VERSION,
            command: command.to_owned(),
            pipeline: pipeline.map(str::to_owned),
            config_hash: cfg.hash.clone(),
            seed: cfg.seed,
            versions: versions(),
            results,
            artifacts: self.artifacts,
        };
        let name = summary_name(command);
        let path = self.dir.join(&name);
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

pub fn summary_name(command: &str) -> String {
    if command == "run" {
        SUMMARY_SUFFIX.to_owned()
    } else {
        format!("{command}.{SUMMARY_SUFFIX}")
    }
}

/// Outcome of checking one summary file.
#[derive(Debug, Clone, PartialEq)]
pub struct Verified {
    pub summary: PathBuf,
    pub artifacts: usize,
}

/// Re-checks every summary in `dir`: known schema, each listed file present
/// with a matching digest and naming the summary's config hash, and (when
/// given) the hash equal to `expected_hash`.
pub fn verify(dir: &Path, expected_hash: Option<&str>) -> Result<Vec<Verified>> {
    let mut summaries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(SUMMARY_SUFFIX))
        })
        .collect();
    summaries.sort();
    if summaries.is_empty() {
        return Err(CliError::Verify(format!("no *{SUMMARY_SUFFIX} in {}", dir.display())));
    }
    let mut problems = Vec::new();
    let mut out = Vec::new();
    for path in summaries {
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let summary: Summary = match serde_json::from_str(&text) {
            Ok(s) => s,
            Err(e) => {
                problems.push(format!("{}: not a summary: {e}", path.display()));
                continue;
            }
        };
        let label = path.display();
        if summary.schema_version != SCHEMA_VERSION {
            problems.push(format!(
                "{label}: schema_version {} (this build reads {SCHEMA_VERSION})",
                summary.schema_version
            ));
            continue;
        }
        if let Some(h) = expected_hash {
            if summary.config_hash != h {
                problems.push(format!(
                    "{label}: config hash {} differs from the config's {h}",
                    summary.config_hash
                ));
            }
        }
        for (name, digest) in &summary.artifacts {
            let file = dir.join(name);
            match fs::read(&file) {
                Err(e) => problems.push(format!("{label}: {name}: {e}")),
                Ok(bytes) => {
                    if sha256_hex(&bytes) != *digest {
                        problems.push(format!("{label}: {name}: digest mismatch"));
                    }
                    if !String::from_utf8_lossy(&bytes).contains(&summary.config_hash) {
                        problems.push(format!("{label}: {name}: does not name config hash"));
                    }
                }
            }
        }
        out.push(Verified {
            summary: path.clone(),
            artifacts: summary.artifacts.len(),
        });
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Verify(problems.join("; ")))
    }
}
