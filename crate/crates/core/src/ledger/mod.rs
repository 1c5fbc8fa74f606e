//! Hash-linked attestation chains.
//!
//! Each block stores a whitelisted payload, the SHA-256 of its canonical
//! encoding, the previous block's hash and the attester's Ed25519 signature
//! over `index ‖ prev_hash ‖ payload_hash`. The block hash covers all of that
//! plus the signature.

mod block;
mod payload;
mod store;
mod verify;

pub use block::{compute_block_hash, signing_input, AttestationBlock, ChainId, UnsignedBlock};
pub use payload::{canonical_encode, BlockPayload, EventKind};
pub use store::{Ledger, CHAIN_FILE_SUFFIX};
pub use verify::{verify_chain, verify_chain_jsonl, ChainVerificationReport, FailureReason};

use crate::jsonl::JsonlError;

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("unknown chain {0}")]
    UnknownChain(String),
    #[error("chain {0} already exists")]
    ChainExists(String),
    #[error("signer {0} does not resolve in the registry")]
    UnresolvableSigner(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("order violation: {0}")]
    OrderViolation(String),
    #[error("attester signature does not verify")]
    BadSignature,
    #[error("chain tip moved since the block was prepared")]
    StaleDraft,
    #[error("corrupt ledger: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Storage(#[from] JsonlError),
}

impl LedgerError {
    pub fn code(&self) -> &'static str {
        match self {
            LedgerError::UnknownChain(_) => "UnknownChain",
            LedgerError::ChainExists(_) => "ChainExists",
            LedgerError::UnresolvableSigner(_) => "UnresolvableSigner",
            LedgerError::SchemaViolation(_) => "SchemaViolation",
            LedgerError::Encoding(_) => "EncodingError",
            LedgerError::OrderViolation(_) => "OrderViolation",
            LedgerError::BadSignature => "BadSignature",
            LedgerError::StaleDraft => "StaleDraft",
            LedgerError::Corrupt(_) => "CorruptLedger",
            LedgerError::Storage(_) => "StorageError",
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;

    use super::*;
    use crate::crypto::{Digest, Identity};
    use crate::registry::{create_did, Registry, Role};
    use crate::time::{ManualClock, Timestamp};

    struct Fixture {
        registry: Registry,
        ledger: Ledger,
        clock: Arc<ManualClock>,
        holder: Identity,
        gateway: Identity,
        attesters: Vec<Identity>,
    }

    fn fixture() -> Fixture {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        let registry = Registry::in_memory();
        let reg = |id: &Identity, role| {
            registry
                .register_did(
                    create_did(id.signing_public(), id.agreement_public(), role, None, Timestamp::from_unix(0))
                        .unwrap(),
                )
                .unwrap()
        };
        let holder = Identity::generate(&mut rng);
        let gateway = Identity::generate(&mut rng);
        let attesters: Vec<_> = (0..3).map(|_| Identity::generate(&mut rng)).collect();
        reg(&holder, Role::Holder);
        reg(&gateway, Role::CredentialIssuer);
        for a in &attesters {
            reg(a, Role::AttestingEntity);
        }
        let clock = Arc::new(ManualClock::new(Timestamp::from_unix(1_700_000_000)));
        let ledger = Ledger::in_memory(clock.clone());
        Fixture { registry, ledger, clock, holder, gateway, attesters }
    }

    fn open_chain(f: &Fixture, chain: &ChainId) -> AttestationBlock {
        let p = BlockPayload::request_opened("D-100", "AE", f.holder.did(), f.gateway.did(), vec![]);
        f.ledger.append_block(chain, p, &f.gateway, &f.registry).unwrap()
    }

    fn step(f: &Fixture, chain: &ChainId, phase: u32) -> Result<AttestationBlock, LedgerError> {
        let a = &f.attesters[(phase as usize - 1) % f.attesters.len()];
        let p = BlockPayload::step_completed(
            "D-100",
            &format!("urn:attest:mc:{phase:032x}"),
            phase,
            f.holder.did(),
            a.did(),
            vec![],
        );
        f.ledger.append_block(chain, p, a, &f.registry)
    }

    #[test]
    fn genesis_and_linking() {
        let f = fixture();
        let chain: ChainId = "req-1".parse().unwrap();
        let g = open_chain(&f, &chain);
        assert_eq!(g.index, 0);
        assert_eq!(g.prev_hash, Digest::ZERO);
        f.clock.advance(60);
        let b1 = step(&f, &chain, 1).unwrap();
        assert_eq!(b1.index, 1);
        assert_eq!(b1.prev_hash, g.block_hash);
        assert_eq!(b1.payload.timestamp, Timestamp::from_unix(1_700_000_060));
        assert!(verify_chain(&f.ledger.blocks(&chain).unwrap(), &f.registry).valid);
    }

    #[test]
    fn unregistered_signer_is_rejected() {
        let f = fixture();
        let chain: ChainId = "req-2".parse().unwrap();
        open_chain(&f, &chain);
        let stranger = Identity::generate(&mut rand_chacha::ChaCha20Rng::seed_from_u64(99));
        let p = BlockPayload::step_completed("D-100", "urn:attest:mc:1", 1, f.holder.did(), stranger.did(), vec![]);
        assert!(matches!(
            f.ledger.append_block(&chain, p, &stranger, &f.registry),
            Err(LedgerError::UnresolvableSigner(_))
        ));
    }

    #[test]
    fn unknown_chain_and_order_rules() {
        let f = fixture();
        let chain: ChainId = "req-3".parse().unwrap();
        assert!(matches!(step(&f, &chain, 1), Err(LedgerError::UnknownChain(_))));
        open_chain(&f, &chain);
        assert!(matches!(step(&f, &chain, 2), Err(LedgerError::OrderViolation(_))));
        step(&f, &chain, 1).unwrap();
        let p = BlockPayload::request_opened("D-100", "AE", f.holder.did(), f.gateway.did(), vec![]);
        assert!(matches!(
            f.ledger.append_block(&chain, p, &f.gateway, &f.registry),
            Err(LedgerError::ChainExists(_))
        ));
    }

    #[test]
    fn stale_draft_is_refused() {
        let f = fixture();
        let chain: ChainId = "req-4".parse().unwrap();
        open_chain(&f, &chain);
        let a = &f.attesters[0];
        let p = BlockPayload::step_completed("D-100", "urn:attest:mc:1", 1, f.holder.did(), a.did(), vec![]);
        let draft = f.ledger.prepare(&chain, p).unwrap();
        step(&f, &chain, 1).unwrap();
        let sig = draft.sign(a);
        assert!(matches!(f.ledger.commit(&chain, draft, sig, &f.registry), Err(LedgerError::StaleDraft)));
    }

    #[test]
    fn wrong_signature_on_commit() {
        let f = fixture();
        let chain: ChainId = "req-5".parse().unwrap();
        open_chain(&f, &chain);
        let a = &f.attesters[0];
        let p = BlockPayload::step_completed("D-100", "urn:attest:mc:1", 1, f.holder.did(), a.did(), vec![]);
        let draft = f.ledger.prepare(&chain, p).unwrap();
        let sig = draft.sign(&f.attesters[1]);
        assert!(matches!(f.ledger.commit(&chain, draft, sig, &f.registry), Err(LedgerError::BadSignature)));
    }

    #[test]
    fn documents_with_two_destinations() {
        let f = fixture();
        let ae: ChainId = "req-ae".parse().unwrap();
        let ca: ChainId = "req-ca".parse().unwrap();
        open_chain(&f, &ae);
        f.clock.advance(1);
        let p = BlockPayload::request_opened("D-100", "CA", f.holder.did(), f.gateway.did(), vec![]);
        f.ledger.append_block(&ca, p, &f.gateway, &f.registry).unwrap();
        step(&f, &ae, 1).unwrap();
        assert_eq!(f.ledger.chain_for_document("D-100", None).len(), 2);
        let only_ae = f.ledger.chain_for_document("D-100", Some("AE"));
        assert_eq!(only_ae.len(), 1);
        assert_eq!(only_ae[0].1.last().unwrap().payload.kind, EventKind::StepCompleted);
        assert!(f.ledger.chain_for_document("D-999", None).is_empty());
    }

    #[test]
    fn persisted_chain_reloads_and_verifies() {
        let f = fixture();
        let dir = tempfile::tempdir().unwrap();
        let ledger = Ledger::open(dir.path(), &f.registry, f.clock.clone()).unwrap();
        let chain: ChainId = "req-6".parse().unwrap();
        let p = BlockPayload::request_opened("D-100", "AE", f.holder.did(), f.gateway.did(), vec![]);
        ledger.append_block(&chain, p, &f.gateway, &f.registry).unwrap();
        let a = &f.attesters[0];
        let p = BlockPayload::step_completed("D-100", "urn:attest:mc:1", 1, f.holder.did(), a.did(), vec![]);
        ledger.append_block(&chain, p, a, &f.registry).unwrap();
        let path = ledger.chain_path(&chain).unwrap();
        assert!(path.ends_with("req-6.chain.jsonl"));
        let raw = std::fs::read(&path).unwrap();
        assert!(verify_chain_jsonl(&raw, &f.registry).valid);
        let again = Ledger::open(dir.path(), &f.registry, f.clock.clone()).unwrap();
        assert_eq!(again.blocks(&chain).unwrap(), ledger.blocks(&chain).unwrap());

        // A tampered file refuses to load.
        let text = String::from_utf8(raw).unwrap().replace("\"AE\"", "\"CA\"");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            Ledger::open(dir.path(), &f.registry, f.clock.clone()),
            Err(LedgerError::Corrupt(_))
        ));
    }

    #[test]
    fn empty_chain_is_vacuously_valid() {
        let f = fixture();
        assert_eq!(verify_chain(&[], &f.registry), ChainVerificationReport::ok());
        assert!(verify_chain_jsonl(b"", &f.registry).valid);
    }

    #[test]
    fn tampered_payload_is_a_hash_mismatch_at_its_index() {
        let f = fixture();
        let chain: ChainId = "req-7".parse().unwrap();
        open_chain(&f, &chain);
        for phase in 1..=3 {
            step(&f, &chain, phase).unwrap();
        }
        let mut blocks = f.ledger.blocks(&chain).unwrap();
        assert_eq!(blocks.len(), 4);
        // Flip one byte of block 2's payload.
        let id = blocks[2].payload.micro_credential_id.as_mut().unwrap();
        let mut bytes = id.clone().into_bytes();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        *id = String::from_utf8(bytes).unwrap();
        let report = verify_chain(&blocks, &f.registry);
        assert!(!report.valid);
        assert_eq!(report.first_invalid_index, Some(2));
        assert_eq!(report.failure_reason, Some(FailureReason::HashMismatch));
    }
}
