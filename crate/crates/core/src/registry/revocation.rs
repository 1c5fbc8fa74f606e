use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::crypto::{Identity, Signature};
use crate::registry::Did;
use crate::time::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RevocationReason {
    Revoked,
    Expired,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CredentialStatus {
    Active,
    Revoked,
    Expired,
}

/// A revocation entry before the issuer has signed it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevocationDraft {
    pub credential_id: String,
    pub reason: RevocationReason,
    pub recorded_at: Timestamp,
    pub issuer_did: Did,
}

#[derive(Serialize)]
struct SignedFields<'a> {
    credential_id: &'a str,
    reason: RevocationReason,
    recorded_at: Timestamp,
}

impl RevocationDraft {
    pub fn signing_bytes(&self) -> Vec<u8> {
        canonical::to_vec(&SignedFields {
            credential_id: &self.credential_id,
            reason: self.reason,
            recorded_at: self.recorded_at,
        })
        .expect("revocation fields are always encodable")
    }

    pub fn with_signature(self, issuer_signature: Signature) -> RevocationEntry {
        RevocationEntry {
            credential_id: self.credential_id,
            reason: self.reason,
            recorded_at: self.recorded_at,
            issuer_did: self.issuer_did,
            issuer_signature,
        }
    }

    pub fn sign(self, issuer: &Identity) -> RevocationEntry {
        let sig = issuer.sign(&self.signing_bytes());
        self.with_signature(sig)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevocationEntry {
    pub credential_id: String,
    pub reason: RevocationReason,
    pub recorded_at: Timestamp,
    pub issuer_did: Did,
    pub issuer_signature: Signature,
}

impl RevocationEntry {
    pub fn signing_bytes(&self) -> Vec<u8> {
        self.draft().signing_bytes()
    }

    pub fn draft(&self) -> RevocationDraft {
        RevocationDraft {
            credential_id: self.credential_id.clone(),
            reason: self.reason,
            recorded_at: self.recorded_at,
            issuer_did: self.issuer_did.clone(),
        }
    }
}

/// Status from an optional registry entry and an optional embedded expiry.
/// Revoked dominates Expired; entries take effect from `recorded_at` onward.
pub fn status_from(
    entry: Option<&RevocationEntry>,
    now: Timestamp,
    expires_at: Option<Timestamp>,
) -> CredentialStatus {
    let effective = entry.filter(|e| e.recorded_at <= now);
    match effective.map(|e| e.reason) {
        Some(RevocationReason::Revoked) => CredentialStatus::Revoked,
        Some(RevocationReason::Expired) => CredentialStatus::Expired,
        None if expires_at.is_some_and(|exp| exp < now) => CredentialStatus::Expired,
        None => CredentialStatus::Active,
    }
}
