//! Verifiable data registry: DID documents and the revocation list.
//!
//! Both collections are append-only. Writes are serialized behind one mutex;
//! reads take a shared lock and never see a half-applied write.

mod did;
mod revocation;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};

use crate::crypto::{verify_signature, Identity};
use crate::jsonl::{self, JsonlError};
use crate::time::Timestamp;

pub use did::{create_did, Did, DidDocument, DidParseError, Role, DEFAULT_REVOCATION_REGISTRY, DID_PREFIX};
pub use revocation::{
    status_from, CredentialStatus, RevocationDraft, RevocationEntry, RevocationReason,
};

pub const DIDS_FILE: &str = "dids.jsonl";
pub const REVOCATIONS_FILE: &str = "revocations.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("malformed key: {0}")]
    MalformedKey(String),
    #[error("DID {0} is already registered")]
    DuplicateDid(Did),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    #[error("unknown DID {0}")]
    UnknownDid(String),
    #[error("credential {0} already has a revocation entry")]
    AlreadyRevoked(String),
    #[error("unauthorized issuer: {0}")]
    UnauthorizedIssuer(String),
    #[error("revocation entry signature does not verify")]
    BadSignature,
    #[error(transparent)]
    Storage(#[from] JsonlError),
}

impl RegistryError {
    pub fn code(&self) -> &'static str {
        match self {
            RegistryError::MalformedKey(_) => "MalformedKey",
            RegistryError::DuplicateDid(_) => "DuplicateDid",
            RegistryError::InvariantViolation(_) => "InvariantViolation",
            RegistryError::UnknownDid(_) => "UnknownDid",
            RegistryError::AlreadyRevoked(_) => "AlreadyRevoked",
            RegistryError::UnauthorizedIssuer(_) => "UnauthorizedIssuer",
            RegistryError::BadSignature => "BadSignature",
            RegistryError::Storage(_) => "StorageError",
        }
    }
}

#[derive(Default)]
pub struct Registry {
    dir: Option<PathBuf>,
    dids: RwLock<BTreeMap<Did, DidDocument>>,
    revocations: RwLock<BTreeMap<String, RevocationEntry>>,
    writer: Mutex<()>,
}

impl Registry {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (or create) a registry persisted under `dir`. Every stored
    /// record is re-validated on load.
    pub fn open(dir: &Path) -> Result<Self, RegistryError> {
        std::fs::create_dir_all(dir).map_err(|source| JsonlError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let docs: Vec<DidDocument> = jsonl::read_all(&dir.join(DIDS_FILE))?;
        let entries: Vec<RevocationEntry> = jsonl::read_all(&dir.join(REVOCATIONS_FILE))?;
        let registry = Registry::in_memory();
        for doc in docs {
            registry.insert_document(doc)?;
        }
        for entry in entries {
            registry.insert_revocation(entry)?;
        }
        Ok(Registry { dir: Some(dir.to_owned()), ..registry })
    }

    /// Build an in-memory registry from exported JSON-lines text.
    pub fn from_jsonl(dids: &str, revocations: &str) -> Result<Self, RegistryError> {
        let docs: Vec<DidDocument> = jsonl::read_lines(dids.as_bytes(), DIDS_FILE)?;
        let entries: Vec<RevocationEntry> =
            jsonl::read_lines(revocations.as_bytes(), REVOCATIONS_FILE)?;
        let registry = Registry::in_memory();
        for doc in docs {
            registry.insert_document(doc)?;
        }
        for entry in entries {
            registry.insert_revocation(entry)?;
        }
        Ok(registry)
    }

    pub fn register_did(&self, doc: DidDocument) -> Result<(), RegistryError> {
        let _w = self.writer.lock();
        if self.dids.read().contains_key(&doc.did) {
            return Err(RegistryError::DuplicateDid(doc.did));
        }
        doc.check_invariants()?;
        if let Some(dir) = &self.dir {
            jsonl::append(&dir.join(DIDS_FILE), &doc)?;
        }
        self.dids.write().insert(doc.did.clone(), doc);
        Ok(())
    }

    fn insert_document(&self, doc: DidDocument) -> Result<(), RegistryError> {
        doc.check_invariants()?;
        let mut dids = self.dids.write();
        if dids.contains_key(&doc.did) {
            return Err(RegistryError::DuplicateDid(doc.did));
        }
        dids.insert(doc.did.clone(), doc);
        Ok(())
    }

    pub fn resolve_did(&self, did: &Did) -> Result<DidDocument, RegistryError> {
        self.dids
            .read()
            .get(did)
            .cloned()
            .ok_or_else(|| RegistryError::UnknownDid(did.to_string()))
    }

    /// Resolve a DID given as a string; malformed strings are unknown.
    pub fn resolve_str(&self, did: &str) -> Result<DidDocument, RegistryError> {
        let parsed: Did = did.parse().map_err(|_| RegistryError::UnknownDid(did.to_owned()))?;
        self.resolve_did(&parsed)
    }

    pub fn documents(&self) -> Vec<DidDocument> {
        self.dids.read().values().cloned().collect()
    }

    pub fn revocation_entries(&self) -> Vec<RevocationEntry> {
        let mut entries: Vec<_> = self.revocations.read().values().cloned().collect();
        entries.sort_by(|a, b| (a.recorded_at, &a.credential_id).cmp(&(b.recorded_at, &b.credential_id)));
        entries
    }

    fn check_issuer(&self, issuer: &Did) -> Result<DidDocument, RegistryError> {
        let doc = self
            .resolve_did(issuer)
            .map_err(|_| RegistryError::UnauthorizedIssuer(format!("{issuer} is not registered")))?;
        if !doc.role.may_revoke() {
            return Err(RegistryError::UnauthorizedIssuer(format!(
                "{issuer} has role {:?}, which may not write revocation entries",
                doc.role
            )));
        }
        Ok(doc)
    }

    /// Validate a revocation request and return the entry to be signed.
    pub fn prepare_revocation(
        &self,
        credential_id: &str,
        reason: RevocationReason,
        issuer: &Did,
        now: Timestamp,
    ) -> Result<RevocationDraft, RegistryError> {
        self.check_issuer(issuer)?;
        if self.revocations.read().contains_key(credential_id) {
            return Err(RegistryError::AlreadyRevoked(credential_id.to_owned()));
        }
        Ok(RevocationDraft {
            credential_id: credential_id.to_owned(),
            reason,
            recorded_at: now,
            issuer_did: issuer.clone(),
        })
    }

    pub fn revoke_credential(
        &self,
        credential_id: &str,
        reason: RevocationReason,
        issuer: &Identity,
        now: Timestamp,
    ) -> Result<RevocationEntry, RegistryError> {
        let entry = self.prepare_revocation(credential_id, reason, issuer.did(), now)?.sign(issuer);
        self.record_revocation(entry.clone())?;
        Ok(entry)
    }

    /// Record an already-signed entry. First write wins.
    pub fn record_revocation(&self, entry: RevocationEntry) -> Result<(), RegistryError> {
        let _w = self.writer.lock();
        self.validate_entry(&entry)?;
        if self.revocations.read().contains_key(&entry.credential_id) {
            return Err(RegistryError::AlreadyRevoked(entry.credential_id));
        }
        if let Some(dir) = &self.dir {
            jsonl::append(&dir.join(REVOCATIONS_FILE), &entry)?;
        }
        self.revocations.write().insert(entry.credential_id.clone(), entry);
        Ok(())
    }

    fn validate_entry(&self, entry: &RevocationEntry) -> Result<(), RegistryError> {
        let doc = self.check_issuer(&entry.issuer_did)?;
        if !verify_signature(&doc.signing_key, &entry.signing_bytes(), &entry.issuer_signature) {
            return Err(RegistryError::BadSignature);
        }
        Ok(())
    }

    fn insert_revocation(&self, entry: RevocationEntry) -> Result<(), RegistryError> {
        self.validate_entry(&entry)?;
        let mut map = self.revocations.write();
        if map.contains_key(&entry.credential_id) {
            return Err(RegistryError::AlreadyRevoked(entry.credential_id));
        }
        map.insert(entry.credential_id.clone(), entry);
        Ok(())
    }

    pub fn revocation_entry(&self, credential_id: &str) -> Option<RevocationEntry> {
        self.revocations.read().get(credential_id).cloned()
    }

    pub fn credential_status(
        &self,
        credential_id: &str,
        now: Timestamp,
        expires_at: Option<Timestamp>,
    ) -> CredentialStatus {
        status_from(self.revocations.read().get(credential_id), now, expires_at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ident(seed: u64) -> Identity {
        Identity::generate(&mut rand_chacha::ChaCha20Rng::seed_from_u64(seed))
    }

    fn doc(id: &Identity, role: Role) -> DidDocument {
        create_did(id.signing_public(), id.agreement_public(), role, None, Timestamp::from_unix(100))
            .unwrap()
    }

    #[test]
    fn register_resolve_round_trip() {
        let reg = Registry::in_memory();
        let id = ident(1);
        let d = doc(&id, Role::Holder);
        reg.register_did(d.clone()).unwrap();
        assert_eq!(reg.resolve_did(id.did()).unwrap(), d);
        assert!(matches!(reg.register_did(d), Err(RegistryError::DuplicateDid(_))));
    }

    #[test]
    fn unregistered_did_is_unknown() {
        let reg = Registry::in_memory();
        assert!(matches!(reg.resolve_did(ident(2).did()), Err(RegistryError::UnknownDid(_))));
    }

    #[test]
    fn mismatched_did_is_an_invariant_violation() {
        let reg = Registry::in_memory();
        let mut d = doc(&ident(3), Role::Holder);
        d.did = ident(4).did().clone();
        assert!(matches!(reg.register_did(d), Err(RegistryError::InvariantViolation(_))));
    }

    #[test]
    fn resolved_key_verifies_credential_signature() {
        let reg = Registry::in_memory();
        let issuer = ident(5);
        reg.register_did(doc(&issuer, Role::AttestingEntity)).unwrap();
        let sig = issuer.sign(b"credential bytes");
        let resolved = reg.resolve_did(issuer.did()).unwrap();
        assert!(verify_signature(&resolved.signing_key, b"credential bytes", &sig));
    }

    #[test]
    fn revocation_rules() {
        let reg = Registry::in_memory();
        let issuer = ident(6);
        let holder = ident(7);
        reg.register_did(doc(&issuer, Role::AttestingEntity)).unwrap();
        reg.register_did(doc(&holder, Role::Holder)).unwrap();
        let t = Timestamp::from_unix(1_000);
        reg.revoke_credential("urn:attest:vc:1", RevocationReason::Revoked, &issuer, t).unwrap();
        assert_eq!(reg.credential_status("urn:attest:vc:1", t, None), CredentialStatus::Revoked);
        assert!(matches!(
            reg.revoke_credential("urn:attest:vc:1", RevocationReason::Revoked, &issuer, t),
            Err(RegistryError::AlreadyRevoked(_))
        ));
        assert!(matches!(
            reg.revoke_credential("urn:attest:vc:2", RevocationReason::Revoked, &holder, t),
            Err(RegistryError::UnauthorizedIssuer(_))
        ));
    }

    #[test]
    fn forged_entry_is_rejected() {
        let reg = Registry::in_memory();
        let issuer = ident(8);
        let other = ident(9);
        reg.register_did(doc(&issuer, Role::CredentialIssuer)).unwrap();
        let draft = reg
            .prepare_revocation("x", RevocationReason::Expired, issuer.did(), Timestamp::from_unix(1))
            .unwrap();
        let forged = draft.sign(&other);
        assert!(matches!(reg.record_revocation(forged), Err(RegistryError::BadSignature)));
    }

    #[test]
    fn status_precedence_and_boundaries() {
        let now = Timestamp::from_unix(10_000);
        assert_eq!(status_from(None, now, None), CredentialStatus::Active);
        assert_eq!(status_from(None, now, Some(now.plus_seconds(-1))), CredentialStatus::Expired);
        assert_eq!(status_from(None, now, Some(now)), CredentialStatus::Active);
        let entry = RevocationEntry {
            credential_id: "c".into(),
            reason: RevocationReason::Revoked,
            recorded_at: now.plus_seconds(-50),
            issuer_did: ident(1).did().clone(),
            issuer_signature: crate::crypto::Signature([0; 64]),
        };
        assert_eq!(
            status_from(Some(&entry), now, Some(now.plus_seconds(-100))),
            CredentialStatus::Revoked
        );
        // Before it was recorded the entry has no effect.
        assert_eq!(status_from(Some(&entry), now.plus_seconds(-60), None), CredentialStatus::Active);
    }

    #[test]
    fn persistence_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let issuer = ident(10);
        {
            let reg = Registry::open(dir.path()).unwrap();
            reg.register_did(doc(&issuer, Role::AttestingEntity)).unwrap();
            reg.revoke_credential("c1", RevocationReason::Expired, &issuer, Timestamp::from_unix(5))
                .unwrap();
        }
        let reg = Registry::open(dir.path()).unwrap();
        assert!(reg.resolve_did(issuer.did()).is_ok());
        assert_eq!(
            reg.credential_status("c1", Timestamp::from_unix(6), None),
            CredentialStatus::Expired
        );
        let dids = std::fs::read_to_string(dir.path().join(DIDS_FILE)).unwrap();
        let revs = std::fs::read_to_string(dir.path().join(REVOCATIONS_FILE)).unwrap();
        let copy = Registry::from_jsonl(&dids, &revs).unwrap();
        assert_eq!(copy.documents().len(), 1);
    }
}
