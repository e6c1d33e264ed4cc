use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::Fingerprint;

#[derive(Serialize, Deserialize)]
struct CacheLine {
    fingerprint: Fingerprint,
    model_id: String,
    raw_text: String,
}

/// Append-only JSONL store of `fingerprint → reply text`.
///
/// Readers share an in-memory index; appends are serialized through one file
/// handle. A torn final line from an interrupted write is ignored on load.
pub struct ReplyCache {
    path: PathBuf,
    index: RwLock<HashMap<Fingerprint, String>>,
    writer: Mutex<File>,
}

impl ReplyCache {
    pub fn open(path: impl AsRef<Path>) -> io::Result<ReplyCache> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut index = HashMap::new();
        let mut torn = false;
        if path.exists() {
            for (i, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) => {
                        index.entry(entry.fingerprint).or_insert(entry.raw_text);
                    }
                    Err(e) => {
                        log::warn!(
                            "{}: ignoring unreadable cache line {}: {e}",
                            path.display(),
                            i + 1
                        );
                        torn = true;
                    }
                }
            }
        }
        let mut writer = OpenOptions::new().create(true).append(true).open(&path)?;
        if torn {
            // keep the next entry on its own line
            writer.write_all(b"\n")?;
        }
        Ok(ReplyCache {
            path,
            index: RwLock::new(index),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, fp: &Fingerprint) -> Option<String> {
        self.index
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(fp)
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends an entry unless the fingerprint is already stored.
    pub fn insert(&self, fp: &Fingerprint, model_id: &str, raw_text: &str) -> io::Result<()> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if self.get(fp).is_some() {
            return Ok(());
        }
        let mut line = serde_json::to_vec(&CacheLine {
            fingerprint: *fp,
            model_id: model_id.to_string(),
            raw_text: raw_text.to_string(),
        })?;
        line.push(b'\n');
        writer.write_all(&line)?;
        writer.flush()?;
        self.index
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(*fp, raw_text.to_string());
        Ok(())
    }
}
