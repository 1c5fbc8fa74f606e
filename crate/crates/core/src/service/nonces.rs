use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;

use crate::credentials::NonceTracker;
use crate::crypto::Nonce128;
use crate::jsonl;
use crate::registry::Did;

/// One replay tracker per verifier DID, persisted so a restart does not
/// reopen used challenges.
pub(crate) struct NonceBook {
    dir: PathBuf,
    trackers: Mutex<HashMap<Did, Arc<NonceTracker>>>,
}

impl NonceBook {
    pub(crate) fn open(dir: &Path) -> Result<Self, String> {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        Ok(NonceBook { dir: dir.to_owned(), trackers: Mutex::default() })
    }

    fn path(&self, did: &Did) -> PathBuf {
        self.dir.join(format!("{did}.jsonl"))
    }

    pub(crate) fn tracker(&self, did: &Did) -> Arc<NonceTracker> {
        let mut map = self.trackers.lock();
        if let Some(t) = map.get(did) {
            return t.clone();
        }
        let tracker = Arc::new(NonceTracker::new());
        match jsonl::read_all::<Nonce128>(&self.path(did)) {
            Ok(used) => used.into_iter().for_each(|n| {
                tracker.claim(n);
            }),
            Err(e) => tracing::error!(verifier = %did, error = %e, "nonce log unreadable"),
        }
        map.insert(did.clone(), tracker.clone());
        tracker
    }

    pub(crate) fn record(&self, did: &Did, nonce: &Nonce128) -> Result<(), String> {
        jsonl::append(&self.path(did), nonce).map_err(|e| e.to_string())
    }
}
