//! Request and response bodies of the HTTP API, shared by the service and
//! its client so both sides agree on one schema.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::canonical;
use crate::credentials::{Presentation, VerificationFailure};
use crate::crypto::{Nonce128, Signature};
use crate::ledger::{AttestationBlock, ChainId};
use crate::registry::{Did, DidDocument, Role};
use crate::time::Timestamp;
use crate::workflow::{FinalizeDraft, RequestTimeline, RevokeDraft, RevokeSignatures, StepDraft, StepInput, StepSignatures};

/// Domain separator for the login challenge signature.
pub const AUTH_DOMAIN: &str = "attestchain/auth/v1";
/// Domain separator for proof of key possession at DID registration.
pub const REGISTER_DOMAIN: &str = "attestchain/register/v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChallengeRequest {
    pub did: Did,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeResponse {
    pub challenge: String,
    pub expires_at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyRequest {
    pub did: Did,
    pub challenge: String,
    pub signature: Signature,
}

#[derive(Serialize)]
struct AuthStatement<'a> {
    challenge: &'a str,
    did: &'a Did,
    domain: &'a str,
}

/// What a caller signs to answer a login challenge.
pub fn auth_signing_bytes(did: &Did, challenge: &str) -> Vec<u8> {
    canonical::to_vec(&AuthStatement { challenge, did, domain: AUTH_DOMAIN }).expect("strings always encode")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiSession {
    pub token: String,
    pub caller_did: Did,
    pub role: Role,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterDidRequest {
    pub document: DidDocument,
    /// By the document's signing key over [`register_signing_bytes`].
    pub signature: Signature,
}

#[derive(Serialize)]
struct RegisterStatement<'a> {
    document: &'a DidDocument,
    domain: &'a str,
}

pub fn register_signing_bytes(document: &DidDocument) -> Vec<u8> {
    canonical::to_vec(&RegisterStatement { document, domain: REGISTER_DOMAIN }).expect("documents always encode")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequestBody {
    pub document_id: String,
    pub destination_country: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
}

/// First or second half of a signed mutation. A body carrying `draft_id`
/// commits; anything else prepares.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum DraftCall<P, C> {
    Commit(C),
    Prepare(P),
}

impl<'de, P: DeserializeOwned, C: DeserializeOwned> Deserialize<'de> for DraftCall<P, C> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        let commit = value.get("draft_id").is_some();
        if commit {
            serde_json::from_value(value).map(DraftCall::Commit).map_err(serde::de::Error::custom)
        } else {
            serde_json::from_value(value).map(DraftCall::Prepare).map_err(serde::de::Error::custom)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Commit<S> {
    pub draft_id: String,
    pub signatures: S,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prepared<D> {
    pub draft_id: String,
    pub expires_at: Timestamp,
    pub draft: D,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalizeBody {}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevokeBody {
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryRevocationBody {
    pub credential_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevocationSignature {
    pub revocation: Signature,
}

pub type StepCall = DraftCall<StepInput, Commit<StepSignatures>>;
pub type FinalizeCall = DraftCall<FinalizeBody, Commit<StepSignatures>>;
pub type RevokeCall = DraftCall<RevokeBody, Commit<RevokeSignatures>>;
pub type RegistryRevocationCall = DraftCall<RegistryRevocationBody, Commit<RevocationSignature>>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboxPosted {
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InboxPage {
    pub items: Vec<crate::agents::InboxItem>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyPresentationBody {
    pub presentation: Presentation,
    pub expected_nonce: Nonce128,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PresentationVerdict {
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<VerificationFailure>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepResult {
    pub expired: Vec<ChainId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusResponse {
    pub document_id: String,
    pub requests: Vec<RequestTimeline>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub request_id: ChainId,
    pub destination_country: String,
    pub blocks: Vec<AttestationBlock>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainsResponse {
    pub document_id: String,
    pub chains: Vec<ChainRecord>,
}

/// An operation recorded while the service was unreachable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum OfflineOp {
    SubmitRequest {
        document_id: String,
        destination_country: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        template_id: Option<String>,
    },
    RecordStep {
        request_id: ChainId,
        phase_number: u32,
        #[serde(default)]
        claims: std::collections::BTreeMap<String, String>,
        #[serde(default)]
        policy_refs: Vec<String>,
    },
    Finalize {
        request_id: ChainId,
    },
    Revoke {
        request_id: ChainId,
        reason: String,
    },
}

impl OfflineOp {
    pub fn name(&self) -> &'static str {
        match self {
            OfflineOp::SubmitRequest { .. } => "submit_request",
            OfflineOp::RecordStep { .. } => "record_step",
            OfflineOp::Finalize { .. } => "finalize",
            OfflineOp::Revoke { .. } => "revoke",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineEntry {
    pub seq: u64,
    pub queued_at: Timestamp,
    pub operation: OfflineOp,
}

/// A draft the flush session needs signed before it can continue.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "draft", rename_all = "snake_case")]
pub enum AnyDraft {
    Step(StepDraft),
    Finalize(FinalizeDraft),
    Revoke(RevokeDraft),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnySignatures {
    Credential(StepSignatures),
    Revocation(RevokeSignatures),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingDraft {
    pub seq: u64,
    #[serde(flatten)]
    pub draft: AnyDraft,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlushStart {
    pub entries: Vec<OfflineEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlushContinue {
    pub session_id: String,
    pub signatures: AnySignatures,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlushCall {
    Continue(FlushContinue),
    Start(FlushStart),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlushResult {
    pub seq: u64,
    pub op: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorDetail>,
}

/// Results produced by this round of a flush session. `pending` is set when
/// the session is waiting for signatures; otherwise the batch is done.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlushProgress {
    pub session_id: String,
    pub results: Vec<FlushResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<PendingDraft>,
}

/// Re-derive a draft's signing inputs so a client never signs bytes it has
/// not checked. Returns a description of the first inconsistency.
pub fn check_draft_hashes(block: &crate::ledger::UnsignedBlock) -> Result<(), String> {
    let bytes = block.payload.canonical_bytes().map_err(|e| e.to_string())?;
    if crate::crypto::sha256(&bytes) != block.payload_hash {
        return Err("payload_hash does not match the payload".into());
    }
    Ok(())
}
