//! Dataset loading and the append-only generation cache.

mod cache;
mod dataset;

use thiserror::Error;

pub use cache::{params_digest, Cache, CacheKey, CachePayload, CacheRecord, PayloadKind};
pub use dataset::{load_dataset, parse_canonical_line, CanonicalRecord};

use crate::types::LabelError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Schema {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cache {path}:{line}: {message}")]
    CorruptCache {
        path: String,
        line: usize,
        message: String,
    },
    #[error("cache key {0} already holds a different payload")]
    Conflict(String),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
