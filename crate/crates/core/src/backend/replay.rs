use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, Fingerprint, Transport, TransportError};

/// One line of a replay fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub fingerprint: Fingerprint,
    pub raw_text: String,
}

/// Serves recorded replies by request fingerprint; unknown requests fail with
/// [`TransportError::ReplayMiss`].
#[derive(Debug, Clone, Default)]
pub struct ReplayTransport {
    replies: HashMap<Fingerprint, String>,
}

impl ReplayTransport {
    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> ReplayTransport {
        ReplayTransport {
            replies: entries
                .into_iter()
                .map(|e| (e.fingerprint, e.raw_text))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> io::Result<ReplayTransport> {
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(&line).map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{} line {}: {e}", path.display(), i + 1),
                )
            })?;
            entries.push(entry);
        }
        Ok(ReplayTransport::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }
}

pub fn write_fixture<W: Write>(mut out: W, entries: &[FixtureEntry]) -> io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

impl Transport for ReplayTransport {
    fn send(
        &self,
        _request: &CompletionRequest,
        fingerprint: &Fingerprint,
    ) -> Result<String, TransportError> {
        self.replies
            .get(fingerprint)
            .cloned()
            .ok_or(TransportError::ReplayMiss(*fingerprint))
    }
}
