//! Random identifier generation.

use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::crypto::Nonce128;

pub const MICRO_CREDENTIAL_PREFIX: &str = "urn:attest:mc:";
pub const AGGREGATE_CREDENTIAL_PREFIX: &str = "urn:attest:vc:";
pub const REQUEST_PREFIX: &str = "req-";

/// Produces 128-bit random identifiers. Seeded sources replay the same
/// sequence, which lets two nodes given identical inputs agree byte for byte.
pub struct IdSource {
    rng: Mutex<ChaCha20Rng>,
}

impl IdSource {
    pub fn from_entropy() -> Self {
        IdSource { rng: Mutex::new(ChaCha20Rng::from_entropy()) }
    }

    pub fn seeded(seed: u64) -> Self {
        IdSource { rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)) }
    }

    pub fn hex128(&self) -> String {
        let mut bytes = [0u8; 16];
        self.rng.lock().fill_bytes(&mut bytes);
        hex::encode(bytes)
    }

    pub fn micro_credential_id(&self) -> String {
        format!("{MICRO_CREDENTIAL_PREFIX}{}", self.hex128())
    }

    pub fn aggregate_credential_id(&self) -> String {
        format!("{AGGREGATE_CREDENTIAL_PREFIX}{}", self.hex128())
    }

    pub fn request_id(&self) -> String {
        format!("{REQUEST_PREFIX}{}", self.hex128())
    }

    pub fn nonce128(&self) -> Nonce128 {
        let mut bytes = [0u8; 16];
        self.rng.lock().fill_bytes(&mut bytes);
        Nonce128(bytes)
    }

    pub fn bytes32(&self) -> [u8; 32] {
        let mut bytes = [0u8; 32];
        self.rng.lock().fill_bytes(&mut bytes);
        bytes
    }
}

impl Default for IdSource {
    fn default() -> Self {
        Self::from_entropy()
    }
}
