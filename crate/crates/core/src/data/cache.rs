use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DataError;
use crate::types::{Sample, ScoredSample};

const FORMAT: &str = "softscale-cache";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayloadKind {
    Sample,
    Scored,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub kind: PayloadKind,
    pub problem_id: String,
    pub model_name: String,
    pub params_digest: String,
    pub template_id: String,
    pub index: usize,
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:?}/{}/{}/{}/{}#{}",
            self.kind,
            self.problem_id,
            self.model_name,
            &self.params_digest[..self.params_digest.len().min(12)],
            self.template_id,
            self.index
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "kebab-case")]
pub enum CachePayload {
    Sample(Sample),
    Scored(ScoredSample),
}

impl CachePayload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            CachePayload::Sample(_) => PayloadKind::Sample,
            CachePayload::Scored(_) => PayloadKind::Scored,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: CacheKey,
    pub payload: CachePayload,
    pub created_at: String,
}

/// SHA-256 over the JSON encoding of `params` and the prompt text.
pub fn params_digest<P: Serialize>(params: &P, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(params).expect("params serialize"));
    h.update(b"\n");
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

/// Append-only JSONL store with an in-memory index. The first line is a
/// versioned header; every other line is one [`CacheRecord`].
#[derive(Debug)]
pub struct Cache {
    path: PathBuf,
    file: File,
    index: HashMap<CacheKey, CachePayload>,
    appended: usize,
}

impl Cache {
    /// Opens or creates the store. A torn final line left by an interrupted
    /// write is truncated away.
    pub fn open(path: &Path) -> Result<Self, DataError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let corrupt = |line: usize, message: String| DataError::CorruptCache {
            path: path.display().to_string(),
            line,
            message,
        };
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        if bytes.is_empty() {
            let header = serde_json::to_string(&Header {
                format: FORMAT.into(),
                version: VERSION,
            })
            .expect("header serializes");
            file.write_all(format!("{header}\n").as_bytes())?;
            file.sync_data()?;
            return Ok(Self {
                path: path.to_path_buf(),
                file,
                index: HashMap::new(),
                appended: 0,
            });
        }
        let complete = match bytes.iter().rposition(|&b| b == b'\n') {
            Some(pos) => pos + 1,
            None => 0,
        };
        if complete < bytes.len() {
            tracing::warn!(path = %path.display(), "dropping torn final cache line");
            file.set_len(complete as u64)?;
            file.seek(SeekFrom::End(0))?;
            bytes.truncate(complete);
        }
        let mut index = HashMap::new();
        for (i, line) in BufReader::new(&bytes[..]).lines().enumerate() {
            let line = line?;
            if i == 0 {
                let header: Header = serde_json::from_str(&line)
                    .map_err(|e| corrupt(1, format!("bad header: {e}")))?;
                if header.format != FORMAT || header.version != VERSION {
                    return Err(corrupt(
                        1,
                        format!("unsupported format {} v{}", header.format, header.version),
                    ));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let record: CacheRecord =
                serde_json::from_str(&line).map_err(|e| corrupt(i + 1, e.to_string()))?;
            index.insert(record.key, record.payload);
        }
        if complete == 0 {
            return Self::open(path);
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
            index,
            appended: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Records written by this handle.
    pub fn appended(&self) -> usize {
        self.appended
    }

    pub fn get(&self, key: &CacheKey) -> Option<&CachePayload> {
        self.index.get(key)
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.index.contains_key(key)
    }

    pub fn get_sample(&self, key: &CacheKey) -> Option<&Sample> {
        match self.index.get(key) {
            Some(CachePayload::Sample(s)) => Some(s),
            _ => None,
        }
    }

    pub fn get_scored(&self, key: &CacheKey) -> Option<&ScoredSample> {
        match self.index.get(key) {
            Some(CachePayload::Scored(s)) => Some(s),
            _ => None,
        }
    }

    /// Appends a record. Returns `false` when the identical payload is
    /// already stored under `key`.
    pub fn put(&mut self, key: CacheKey, payload: CachePayload) -> Result<bool, DataError> {
        if key.kind != payload.kind() {
            return Err(DataError::Conflict(format!(
                "{key} (payload kind mismatch)"
            )));
        }
        if let Some(existing) = self.index.get(&key) {
            return if *existing == payload {
                Ok(false)
            } else {
                Err(DataError::Conflict(key.to_string()))
            };
        }
        let record = CacheRecord {
            key: key.clone(),
            payload,
            created_at: chrono::Utc::now().to_rfc3339(),
        };
        let mut line = serde_json::to_string(&record).expect("record serializes");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        self.index.insert(key, record.payload);
        self.appended += 1;
        Ok(true)
    }

    pub fn sync(&self) -> Result<(), DataError> {
        self.file.sync_data()?;
        Ok(())
    }
}
