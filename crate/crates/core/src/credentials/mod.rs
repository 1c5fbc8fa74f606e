//! Micro-credentials, the aggregate completion credential and holder
//! presentations.
//!
//! Credentials are canonical JSON documents in the familiar VC layout. A
//! proof's signature covers the canonical encoding of the whole document with
//! only `proof.proofValue` removed.

mod aggregate;
mod micro;
mod nonce;
mod presentation;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical;
use crate::crypto::Signature;
use crate::privacy::ClaimViolation;
use crate::registry::{CredentialStatus, Did};
use crate::time::Timestamp;

pub use aggregate::{
    issue_aggregate_credential, prepare_aggregate_credential, verify_aggregate_credential,
    AggregateCredential, AggregateRequest, AggregateSubject,
};
pub use micro::{
    issue_micro_credential, prepare_micro_credential, verify_micro_credential, MicroCredential,
    MicroCredentialRequest, MicroSubject,
};
pub use nonce::NonceTracker;
pub use presentation::{verify_presentation, PresentedCredential, Presentation};

pub const VC_CONTEXT: [&str; 2] =
    ["https://www.w3.org/2018/credentials/v1", "https://attestchain.example/contexts/v1"];
pub const PROOF_TYPE: &str = "Ed25519Signature2020";
pub const PROOF_PURPOSE: &str = "assertionMethod";
pub const STATUS_TYPE: &str = "AttestRevocationRegistry";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Proof {
    #[serde(rename = "type")]
    pub proof_type: String,
    pub created: Timestamp,
    #[serde(rename = "proofPurpose")]
    pub proof_purpose: String,
    #[serde(rename = "verificationMethod")]
    pub verification_method: String,
    #[serde(rename = "proofValue")]
    pub signature: Signature,
}

impl Proof {
    pub(crate) fn unsigned(issuer: &Did, created: Timestamp) -> Self {
        Proof {
            proof_type: PROOF_TYPE.to_owned(),
            created,
            proof_purpose: PROOF_PURPOSE.to_owned(),
            verification_method: issuer.signing_key_ref(),
            signature: Signature([0; 64]),
        }
    }

    pub(crate) fn is_well_formed_for(&self, issuer: &Did) -> bool {
        self.proof_type == PROOF_TYPE
            && self.proof_purpose == PROOF_PURPOSE
            && self.verification_method == issuer.signing_key_ref()
    }
}

/// Issuance-time status snapshot. The live registry is authoritative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StatusSnapshot {
    Valid,
    Invalid,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatusReference {
    pub registry: String,
    #[serde(rename = "type")]
    pub status_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<StatusSnapshot>,
}

/// Canonical bytes of a credential with `proof.proofValue` removed.
pub(crate) fn signing_bytes<T: Serialize>(credential: &T) -> Vec<u8> {
    let mut value = serde_json::to_value(credential).expect("credentials serialize");
    if let Some(Value::Object(proof)) = value.get_mut("proof") {
        proof.remove("proofValue");
    }
    canonical::value_to_vec(&value).expect("credentials contain no floats")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CredentialError {
    #[error("unauthorized issuer: {0}")]
    UnauthorizedIssuer(String),
    #[error(transparent)]
    ClaimWhitelistViolation(#[from] ClaimViolation),
    #[error("expiry must be strictly after issuance")]
    BadExpiry,
    #[error("malformed credential request: {0}")]
    Malformed(String),
    #[error("no micro-credentials supplied")]
    EmptyMicroSet,
    #[error("phases are not exactly 1..n: {0}")]
    PhaseGap(String),
    #[error("micro-credential {micro_id} does not verify: {reason}")]
    UnverifiedMicro { micro_id: String, reason: VerificationFailure },
    #[error("credential {0} is not held")]
    UnknownCredential(String),
}

impl CredentialError {
    pub fn code(&self) -> &'static str {
        match self {
            CredentialError::UnauthorizedIssuer(_) => "UnauthorizedIssuer",
            CredentialError::ClaimWhitelistViolation(_) => "ClaimWhitelistViolation",
            CredentialError::BadExpiry => "BadExpiry",
            CredentialError::Malformed(_) => "MalformedCredential",
            CredentialError::EmptyMicroSet => "EmptyMicroSet",
            CredentialError::PhaseGap(_) => "PhaseGap",
            CredentialError::UnverifiedMicro { .. } => "UnverifiedMicro",
            CredentialError::UnknownCredential(_) => "UnknownCredential",
        }
    }
}

/// Why a credential or presentation was not accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "code")]
pub enum VerificationFailure {
    #[error("signature does not verify")]
    BadSignature,
    #[error("issuer DID does not resolve")]
    UnknownIssuer,
    #[error("credential is revoked")]
    Revoked,
    #[error("credential is expired")]
    Expired,
    #[error("issuer role may not issue this credential")]
    WrongRole,
    #[error("malformed: {detail}")]
    Malformed { detail: String },
    #[error("phases are not exactly 1..n")]
    PhaseGap,
    #[error("listed micro-credential {micro_id} is not available")]
    MissingMicro { micro_id: String },
    #[error("micro-credential {micro_id}: {reason}")]
    MicroFailed { micro_id: String, reason: Box<VerificationFailure> },
    #[error("challenge nonce does not match")]
    NonceMismatch,
    #[error("challenge nonce was already used")]
    NonceReplayed,
    #[error("holder signature does not verify")]
    BadHolderSignature,
    #[error("holder DID does not resolve")]
    UnknownHolder,
    #[error("credential {credential_id} is not bound to the presenting holder")]
    HolderMismatch { credential_id: String },
    #[error("credential {credential_id}: {reason}")]
    CredentialFailed { credential_id: String, reason: Box<VerificationFailure> },
}

impl VerificationFailure {
    pub fn code(&self) -> &'static str {
        match self {
            VerificationFailure::BadSignature => "BadSignature",
            VerificationFailure::UnknownIssuer => "UnknownIssuer",
            VerificationFailure::Revoked => "Revoked",
            VerificationFailure::Expired => "Expired",
            VerificationFailure::WrongRole => "WrongRole",
            VerificationFailure::Malformed { .. } => "Malformed",
            VerificationFailure::PhaseGap => "PhaseGap",
            VerificationFailure::MissingMicro { .. } => "MissingMicro",
            VerificationFailure::MicroFailed { .. } => "MicroFailed",
            VerificationFailure::NonceMismatch => "NonceMismatch",
            VerificationFailure::NonceReplayed => "NonceReplayed",
            VerificationFailure::BadHolderSignature => "BadHolderSignature",
            VerificationFailure::UnknownHolder => "UnknownHolder",
            VerificationFailure::HolderMismatch { .. } => "HolderMismatch",
            VerificationFailure::CredentialFailed { .. } => "CredentialFailed",
        }
    }

    /// The innermost reason, following nested credential failures.
    pub fn root(&self) -> &VerificationFailure {
        match self {
            VerificationFailure::MicroFailed { reason, .. }
            | VerificationFailure::CredentialFailed { reason, .. } => reason.root(),
            other => other,
        }
    }
}

pub type Verification = Result<(), VerificationFailure>;

pub(crate) fn status_failure(status: CredentialStatus) -> Verification {
    match status {
        CredentialStatus::Active => Ok(()),
        CredentialStatus::Revoked => Err(VerificationFailure::Revoked),
        CredentialStatus::Expired => Err(VerificationFailure::Expired),
    }
}

/// Resolves micro-credential ids to documents during aggregate verification.
pub trait MicroLookup {
    fn micro(&self, id: &str) -> Option<MicroCredential>;
}

impl<F: Fn(&str) -> Option<MicroCredential>> MicroLookup for F {
    fn micro(&self, id: &str) -> Option<MicroCredential> {
        self(id)
    }
}

impl MicroLookup for std::collections::BTreeMap<String, MicroCredential> {
    fn micro(&self, id: &str) -> Option<MicroCredential> {
        self.get(id).cloned()
    }
}

impl MicroLookup for Vec<MicroCredential> {
    fn micro(&self, id: &str) -> Option<MicroCredential> {
        self.as_slice().micro(id)
    }
}

impl MicroLookup for [MicroCredential] {
    fn micro(&self, id: &str) -> Option<MicroCredential> {
        self.iter().find(|m| m.id == id).cloned()
    }
}
