//! Append-only JSON-lines record of provider exchanges.
//!
//! Each line is `{"digest": ..., "request": ..., "response": ...}`. Replay
//! serves recorded responses by request digest. Record serves hits the same
//! way and forwards misses to the inner provider, appending the result.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::provider::Provider;
use crate::request::{CompletionRequest, CompletionResult};
use crate::LlmError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CassetteMode {
    #[default]
    Replay,
    Record,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    digest: String,
    request: CompletionRequest,
    response: CompletionResult,
}

pub struct Cassette {
    path: PathBuf,
    mode: CassetteMode,
    inner: Option<Arc<dyn Provider>>,
    entries: Mutex<HashMap<String, CompletionResult>>,
}

impl Cassette {
    pub fn open(
        path: &Path,
        mode: CassetteMode,
        inner: Option<Arc<dyn Provider>>,
    ) -> Result<Self, LlmError> {
        if mode == CassetteMode::Record && inner.is_none() {
            return Err(LlmError::Config("cassette recording needs an inner provider".into()));
        }
        let io_err = |e: std::io::Error| LlmError::Cassette(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        match File::open(path) {
            Ok(file) => {
                for (n, line) in BufReader::new(file).lines().enumerate() {
                    let line = line.map_err(io_err)?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: Entry = serde_json::from_str(&line).map_err(|e| {
                        LlmError::Cassette(format!("{} line {}: {e}", path.display(), n + 1))
                    })?;
                    // First record wins so replays match the original run.
                    entries.entry(entry.digest).or_insert(entry.response);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && mode == CassetteMode::Record => {}
            Err(e) => return Err(io_err(e)),
        }
        Ok(Cassette {
            path: path.to_path_buf(),
            mode,
            inner,
            entries: Mutex::new(entries),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn append(&self, entry: &Entry) -> Result<(), LlmError> {
        let line = serde_json::to_string(entry).expect("entry serializes");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| LlmError::Cassette(format!("{}: {e}", self.path.display())))?;
        writeln!(file, "{line}").map_err(|e| LlmError::Cassette(format!("{}: {e}", self.path.display())))
    }
}

impl Provider for Cassette {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LlmError> {
        let digest = request.digest();
        if let Some(hit) = self.entries.lock().expect("lock").get(&digest) {
            return Ok(hit.clone());
        }
        let inner = match (self.mode, &self.inner) {
            (CassetteMode::Record, Some(inner)) => inner,
            _ => return Err(LlmError::CassetteMiss { digest }),
        };
        let response = inner.complete(request)?;
        let mut entries = self.entries.lock().expect("lock");
        if let Some(hit) = entries.get(&digest) {
            return Ok(hit.clone());
        }
        self.append(&Entry {
            digest: digest.clone(),
            request: request.clone(),
            response: response.clone(),
        })?;
        entries.insert(digest, response.clone());
        Ok(response)
    }

    fn name(&self) -> &str {
        match self.mode {
            CassetteMode::Replay => "cassette-replay",
            CassetteMode::Record => "cassette-record",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::ScriptedProvider;
    use crate::request::Stage;

    fn req(text: &str) -> CompletionRequest {
        CompletionRequest {
            stage: Stage::Describe,
            template_version: 1,
            system_text: "s".into(),
            user_text: text.into(),
            temperature: 1.0,
            max_output_tokens: 64,
            seed: Some(1),
        }
    }

    #[test]
    fn record_then_replay_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calls.jsonl");
        let scripted = Arc::new(ScriptedProvider::new(["first reply", "second reply"]));
        let rec = Cassette::open(&path, CassetteMode::Record, Some(scripted.clone())).unwrap();
        let a = rec.complete(&req("a")).unwrap();
        let b = rec.complete(&req("b")).unwrap();
        assert_eq!(rec.complete(&req("a")).unwrap(), a);
        assert_eq!(scripted.requests().len(), 2);

        let replay = Cassette::open(&path, CassetteMode::Replay, None).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.complete(&req("a")).unwrap(), a);
        assert_eq!(replay.complete(&req("b")).unwrap(), b);
    }

    #[test]
    fn replay_miss_names_digest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let replay = Cassette::open(&path, CassetteMode::Replay, None).unwrap();
        let err = replay.complete(&req("zzz")).unwrap_err();
        assert!(err.to_string().contains(&req("zzz").digest()));
        assert!(Cassette::open(&dir.path().join("missing.jsonl"), CassetteMode::Replay, None).is_err());
    }
}
