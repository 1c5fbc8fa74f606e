use std::collections::HashMap;

use parking_lot::Mutex;

use crate::api::AnyDraft;
use crate::registry::{Did, RevocationDraft};
use crate::time::Timestamp;

use super::auth::random_token;
use super::ApiError;

#[derive(Clone, Debug)]
pub(crate) enum Draft {
    Workflow(AnyDraft),
    Revocation(RevocationDraft),
}

struct Held {
    owner: Did,
    expires_at: Timestamp,
    draft: Draft,
}

/// Prepared drafts awaiting their owner's signatures. Each is single use.
pub(crate) struct Drafts {
    ttl: i64,
    held: Mutex<HashMap<String, Held>>,
}

impl Drafts {
    pub(crate) fn new(ttl_seconds: u32) -> Self {
        Drafts { ttl: i64::from(ttl_seconds), held: Mutex::default() }
    }

    pub(crate) fn put(&self, owner: &Did, draft: Draft, now: Timestamp) -> (String, Timestamp) {
        let id = random_token();
        let expires_at = now.plus_seconds(self.ttl);
        let mut held = self.held.lock();
        held.retain(|_, h| h.expires_at > now);
        held.insert(id.clone(), Held { owner: owner.clone(), expires_at, draft });
        (id, expires_at)
    }

    pub(crate) fn take(&self, id: &str, owner: &Did, now: Timestamp) -> Result<Draft, ApiError> {
        let mut held = self.held.lock();
        match held.get(id) {
            Some(h) if &h.owner == owner && h.expires_at > now => Ok(held.remove(id).expect("present").draft),
            Some(h) if h.expires_at <= now => {
                held.remove(id);
                Err(ApiError::new("UnknownDraft", "draft expired; prepare again"))
            }
            _ => Err(ApiError::new("UnknownDraft", format!("no draft {id} for this caller"))),
        }
    }
}
