use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::jsonl::{self, JsonlError};
use crate::registry::{Did, Registry};

use super::{AgentError, SecureMessage};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InboxItem {
    pub seq: u64,
    pub message: SecureMessage,
}

type Mailbox = Arc<Mutex<Vec<InboxItem>>>;

/// Store-and-forward mailboxes, one per recipient DID.
///
/// Messages are kept after delivery; readers page with a cursor so a crashed
/// client can fetch again without loss.
pub struct Inbox {
    dir: Option<PathBuf>,
    boxes: RwLock<BTreeMap<Did, Mailbox>>,
}

impl Inbox {
    pub fn in_memory() -> Self {
        Inbox { dir: None, boxes: RwLock::new(BTreeMap::new()) }
    }

    pub fn open(dir: &Path) -> Result<Self, JsonlError> {
        std::fs::create_dir_all(dir).map_err(|source| JsonlError::Io { path: dir.display().to_string(), source })?;
        let mut boxes = BTreeMap::new();
        let entries =
            std::fs::read_dir(dir).map_err(|source| JsonlError::Io { path: dir.display().to_string(), source })?;
        for entry in entries {
            let entry = entry.map_err(|source| JsonlError::Io { path: dir.display().to_string(), source })?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(stem) = name.strip_suffix(".jsonl") else { continue };
            let Ok(did) = stem.parse::<Did>() else { continue };
            let items: Vec<InboxItem> = jsonl::read_all(&entry.path())?;
            boxes.insert(did, Arc::new(Mutex::new(items)));
        }
        Ok(Inbox { dir: Some(dir.to_owned()), boxes: RwLock::new(boxes) })
    }

    fn mailbox(&self, did: &Did) -> Mailbox {
        if let Some(b) = self.boxes.read().get(did) {
            return b.clone();
        }
        self.boxes.write().entry(did.clone()).or_default().clone()
    }

    /// Accept a message whose recipient is registered and whose sender
    /// signature verifies. Returns its sequence number in the mailbox.
    pub fn deliver(&self, message: SecureMessage, registry: &Registry) -> Result<u64, AgentError> {
        registry
            .resolve_did(&message.recipient_did)
            .map_err(|_| AgentError::UnknownRecipient(message.recipient_did.to_string()))?;
        message.verify_sender(registry)?;
        let mailbox = self.mailbox(&message.recipient_did);
        let mut items = mailbox.lock();
        let seq = items.last().map_or(1, |i| i.seq + 1);
        let item = InboxItem { seq, message };
        if let Some(dir) = &self.dir {
            jsonl::append(&dir.join(format!("{}.jsonl", item.message.recipient_did)), &item)
                .map_err(|e| AgentError::Storage(e.to_string()))?;
        }
        items.push(item);
        Ok(seq)
    }

    /// Messages for `did` with sequence number greater than `after`.
    pub fn fetch(&self, did: &Did, after: u64) -> Vec<InboxItem> {
        let Some(mailbox) = self.boxes.read().get(did).cloned() else { return Vec::new() };
        let items = mailbox.lock();
        items.iter().filter(|i| i.seq > after).cloned().collect()
    }
}
