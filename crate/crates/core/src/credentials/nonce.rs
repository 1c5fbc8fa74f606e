use std::collections::HashSet;

use parking_lot::Mutex;

use crate::crypto::Nonce128;

/// Challenge nonces a verifier has already accepted.
#[derive(Debug, Default)]
pub struct NonceTracker {
    used: Mutex<HashSet<Nonce128>>,
}

impl NonceTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_used(&self, nonce: &Nonce128) -> bool {
        self.used.lock().contains(nonce)
    }

    /// Atomically mark `nonce` used. Returns false if it already was.
    pub fn claim(&self, nonce: Nonce128) -> bool {
        self.used.lock().insert(nonce)
    }

    pub fn len(&self) -> usize {
        self.used.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
