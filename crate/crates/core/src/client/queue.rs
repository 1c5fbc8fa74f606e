use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::api::{OfflineEntry, OfflineOp};
use crate::jsonl::{self, JsonlError};
use crate::time::Timestamp;

const QUEUE_FILE: &str = "queue.jsonl";
const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, thiserror::Error)]
pub enum QueueError {
    #[error(transparent)]
    Storage(#[from] JsonlError),
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    flushed_through: u64,
}

/// Durable client-side queue of operations recorded while the service was
/// unreachable. Entries are never rewritten; a checkpoint records how far
/// the service has processed them.
pub struct OfflineQueue {
    dir: PathBuf,
    lock: Mutex<()>,
}

impl OfflineQueue {
    pub fn open(dir: &Path) -> Result<Self, QueueError> {
        std::fs::create_dir_all(dir).map_err(|e| QueueError::Io(dir.display().to_string(), e))?;
        Ok(OfflineQueue { dir: dir.to_owned(), lock: Mutex::new(()) })
    }

    fn entries(&self) -> Result<Vec<OfflineEntry>, QueueError> {
        Ok(jsonl::read_all(&self.dir.join(QUEUE_FILE))?)
    }

    fn flushed_through(&self) -> Result<u64, QueueError> {
        let path = self.dir.join(CHECKPOINT_FILE);
        if !path.exists() {
            return Ok(0);
        }
        Ok(jsonl::read_document::<Checkpoint>(&path)?.flushed_through)
    }

    /// Append an operation with the next sequence number.
    pub fn enqueue(&self, operation: OfflineOp, queued_at: Timestamp) -> Result<OfflineEntry, QueueError> {
        let _guard = self.lock.lock();
        let last = self.entries()?.last().map_or(0, |e| e.seq).max(self.flushed_through()?);
        let entry = OfflineEntry { seq: last + 1, queued_at, operation };
        jsonl::append(&self.dir.join(QUEUE_FILE), &entry)?;
        Ok(entry)
    }

    /// Entries the service has not yet processed, in sequence order.
    pub fn pending(&self) -> Result<Vec<OfflineEntry>, QueueError> {
        let _guard = self.lock.lock();
        let through = self.flushed_through()?;
        Ok(self.entries()?.into_iter().filter(|e| e.seq > through).collect())
    }

    pub fn checkpoint(&self, seq: u64) -> Result<(), QueueError> {
        let _guard = self.lock.lock();
        if seq > self.flushed_through()? {
            jsonl::write_document(&self.dir.join(CHECKPOINT_FILE), &Checkpoint { flushed_through: seq })?;
        }
        Ok(())
    }
}
