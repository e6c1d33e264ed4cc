//! Run directories: stage outputs plus a manifest of their hashes.
//!
//! A file recorded in the manifest is never overwritten with different
//! bytes. Re-running a finished stage with identical results is a no-op.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cotkt_core::io::{hash_file, sha256_hex, to_pretty_json, write_atomic};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const CACHE_FILE: &str = "cache/replies.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Path relative to the run directory → SHA-256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: String,
    pub config_hash: String,
    pub tool_version: String,
    pub stages: BTreeMap<String, StageRecord>,
}

/// Bytes a command wants to place in the run directory.
#[derive(Debug, Default)]
pub struct Outputs(pub Vec<(String, Vec<u8>)>);

impl Outputs {
    pub fn add(&mut self, rel: impl Into<String>, bytes: Vec<u8>) {
        self.0.push((rel.into(), bytes));
    }
}

pub struct RunDir {
    pub root: PathBuf,
    config_hash: String,
}

impl RunDir {
    pub fn new(root: PathBuf, config_hash: String) -> RunDir {
        RunDir { root, config_hash }
    }

    /// `{runs_dir}/{UTC timestamp}-{config hash prefix}`.
    pub fn fresh_name(runs_dir: &Path, config_hash: &str) -> PathBuf {
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
        runs_dir.join(format!("{stamp}-{}", &config_hash[..8]))
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn cache_path(&self) -> PathBuf {
        self.path(CACHE_FILE)
    }

    pub fn manifest(&self) -> Result<Option<RunManifest>> {
        let path = self.path(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(
            serde_json::from_slice(&bytes)
                .with_context(|| format!("parsing {}", path.display()))?,
        ))
    }

    fn check_config(&self, manifest: &RunManifest) -> Result<()> {
        if manifest.config_hash != self.config_hash {
            bail!(
                "run directory {} was created with a different config (hash {}, current {})",
                self.root.display(),
                manifest.config_hash,
                self.config_hash
            );
        }
        Ok(())
    }

    /// Requires a file produced by an earlier stage.
    pub fn input(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if !p.is_file() {
            bail!(
                "{} is missing; run the stage that produces it first",
                p.display()
            );
        }
        Ok(p)
    }

    /// Writes `outputs` and records them under `stage`.
    pub fn commit(&self, stage: &str, outputs: Outputs) -> Result<()> {
        let mut manifest = match self.manifest()? {
            Some(m) => {
                self.check_config(&m)?;
                m
            }
            None => RunManifest {
                run_id: self
                    .root
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                config_hash: self.config_hash.clone(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                stages: BTreeMap::new(),
            },
        };
        let hashed: Vec<(String, String, Vec<u8>)> = outputs
            .0
            .into_iter()
            .map(|(rel, b)| (rel, sha256_hex(&b), b))
            .collect();
        for (rel, hash, _) in &hashed {
            for (name, record) in &manifest.stages {
                if let Some(existing) = record.outputs.get(rel) {
                    if existing != hash {
                        bail!("{rel} was already recorded by stage {name} with different content; use a new run directory");
                    }
                }
            }
        }
        let record = manifest
            .stages
            .entry(stage.to_string())
            .or_insert_with(|| StageRecord {
                outputs: BTreeMap::new(),
            });
        for (rel, hash, bytes) in hashed {
            write_atomic(&self.path(&rel), &bytes)?;
            record.outputs.insert(rel, hash);
        }
        write_atomic(&self.path(MANIFEST_FILE), &to_pretty_json(&manifest))?;
        Ok(())
    }

    /// Checks every recorded file against its hash and `outputs` against the
    /// files on disk. Returns one line per problem.
    pub fn verify(&self, stage: &str, outputs: &Outputs) -> Result<Vec<String>> {
        let Some(manifest) = self.manifest()? else {
            bail!("{} has no {MANIFEST_FILE}", self.root.display());
        };
        let mut problems = Vec::new();
        if manifest.config_hash != self.config_hash {
            problems.push(format!(
                "config hash {} differs from recorded {}",
                self.config_hash, manifest.config_hash
            ));
        }
        for (name, record) in &manifest.stages {
            for (rel, hash) in &record.outputs {
                match hash_file(&self.path(rel)) {
                    Ok(h) if &h == hash => {}
                    Ok(_) => problems.push(format!(
                        "{rel} (stage {name}) does not match its recorded hash"
                    )),
                    Err(e) => problems.push(format!("{rel} (stage {name}): {e}")),
                }
            }
        }
        let recorded = manifest.stages.get(stage);
        for (rel, bytes) in &outputs.0 {
            let hash = sha256_hex(bytes);
            match recorded.and_then(|r| r.outputs.get(rel)) {
                Some(h) if *h == hash => {}
                Some(_) => problems.push(format!(
                    "{rel}: recomputed content differs from the recorded output"
                )),
                None => problems.push(format!("{rel}: not recorded for stage {stage}")),
            }
        }
        Ok(problems)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outputs(pairs: &[(&str, &str)]) -> Outputs {
        Outputs(
            pairs
                .iter()
                .map(|(r, b)| (r.to_string(), b.as_bytes().to_vec()))
                .collect(),
        )
    }

    #[test]
    fn commit_is_idempotent_and_immutable() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::new(dir.path().join("r1"), "h".repeat(64));
        run.commit("harvest", outputs(&[("a.jsonl", "1\n")]))
            .unwrap();
        run.commit("harvest", outputs(&[("a.jsonl", "1\n")]))
            .unwrap();
        assert!(run
            .commit("harvest", outputs(&[("a.jsonl", "2\n")]))
            .is_err());
        assert!(run.commit("other", outputs(&[("a.jsonl", "2\n")])).is_err());
        assert_eq!(std::fs::read_to_string(run.path("a.jsonl")).unwrap(), "1\n");

        assert!(run
            .verify("harvest", &outputs(&[("a.jsonl", "1\n")]))
            .unwrap()
            .is_empty());
        assert_eq!(
            run.verify("harvest", &outputs(&[("a.jsonl", "9\n")]))
                .unwrap()
                .len(),
            1
        );
        std::fs::write(run.path("a.jsonl"), "tampered").unwrap();
        assert_eq!(
            run.verify("harvest", &outputs(&[("a.jsonl", "1\n")]))
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn config_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        RunDir::new(dir.path().to_path_buf(), "a".repeat(64))
            .commit("s", outputs(&[("x", "1")]))
            .unwrap();
        let other = RunDir::new(dir.path().to_path_buf(), "b".repeat(64));
        assert!(other.commit("s", outputs(&[("y", "1")])).is_err());
    }
}
