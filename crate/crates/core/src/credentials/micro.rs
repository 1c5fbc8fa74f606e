use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::{verify_signature, Identity, Signature};
use crate::ids::MICRO_CREDENTIAL_PREFIX;
use crate::privacy::{check_claims, is_identifier};
use crate::registry::{Did, Registry, Role, DEFAULT_REVOCATION_REGISTRY};
use crate::time::Timestamp;

use super::{
    signing_bytes, status_failure, CredentialError, Proof, StatusReference, Verification,
    VerificationFailure, STATUS_TYPE, VC_CONTEXT,
};

pub const MICRO_CREDENTIAL_TYPE: &str = "AttestationMicroCredential";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroSubject {
    #[serde(rename = "id")]
    pub subject_did: Did,
    #[serde(rename = "documentId")]
    pub document_id: String,
    #[serde(rename = "phaseNumber")]
    pub phase_number: u32,
    #[serde(rename = "phaseName")]
    pub phase_name: String,
    pub claims: BTreeMap<String, String>,
}

/// Proof that one attestation phase was completed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroCredential {
    #[serde(rename = "@context")]
    pub context: Vec<String>,
    pub id: String,
    #[serde(rename = "type")]
    pub types: Vec<String>,
    #[serde(rename = "issuer")]
    pub issuer_did: Did,
    #[serde(rename = "issuanceDate")]
    pub issued_at: Timestamp,
    #[serde(rename = "expirationDate", default, skip_serializing_if = "Option::is_none")]
    pub expires_at: Option<Timestamp>,
    #[serde(rename = "credentialSubject")]
    pub subject: MicroSubject,
    #[serde(rename = "credentialStatus")]
    pub status: StatusReference,
    pub proof: Proof,
}

impl MicroCredential {
    pub fn signing_bytes(&self) -> Vec<u8> {
        signing_bytes(self)
    }

    pub fn with_signature(mut self, signature: Signature) -> Self {
        self.proof.signature = signature;
        self
    }

    pub fn subject_did(&self) -> &Did {
        &self.subject.subject_did
    }

    pub fn phase_number(&self) -> u32 {
        self.subject.phase_number
    }

    fn check_shape(&self) -> Result<(), String> {
        if !self.id.starts_with(MICRO_CREDENTIAL_PREFIX) || !is_identifier(&self.id) {
            return Err(format!("id {:?} is not a micro-credential id", self.id));
        }
        if !is_identifier(&self.subject.document_id) {
            return Err("document id is not an opaque identifier".into());
        }
        if self.subject.phase_number == 0 {
            return Err("phase numbers start at 1".into());
        }
        if self.expires_at.is_some_and(|e| e <= self.issued_at) {
            return Err("expiry is not after issuance".into());
        }
        check_claims(&self.subject.claims).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug)]
pub struct MicroCredentialRequest {
    pub subject_did: Did,
    pub document_id: String,
    pub phase_number: u32,
    pub phase_name: String,
    pub claims: BTreeMap<String, String>,
    pub expires_at: Option<Timestamp>,
}

/// Validate an issuance request and build the credential with an empty proof.
pub fn prepare_micro_credential(
    issuer: &Did,
    registry: &Registry,
    request: MicroCredentialRequest,
    id: String,
    now: Timestamp,
) -> Result<MicroCredential, CredentialError> {
    let issuer_doc = registry
        .resolve_did(issuer)
        .map_err(|_| CredentialError::UnauthorizedIssuer(format!("{issuer} is not registered")))?;
    if issuer_doc.role != Role::AttestingEntity {
        return Err(CredentialError::UnauthorizedIssuer(format!(
            "{issuer} has role {:?}; micro-credentials are issued by attesting entities",
            issuer_doc.role
        )));
    }
    check_claims(&request.claims)?;
    if request.expires_at.is_some_and(|e| e <= now) {
        return Err(CredentialError::BadExpiry);
    }
    if request.phase_number == 0 {
        return Err(CredentialError::Malformed("phase numbers start at 1".into()));
    }
    if !is_identifier(&request.document_id) {
        return Err(CredentialError::Malformed("document id is not an opaque identifier".into()));
    }
    Ok(MicroCredential {
        context: VC_CONTEXT.iter().map(|s| s.to_string()).collect(),
        id,
        types: vec!["VerifiableCredential".into(), MICRO_CREDENTIAL_TYPE.into()],
        issuer_did: issuer.clone(),
        issued_at: now,
        expires_at: request.expires_at,
        subject: MicroSubject {
            subject_did: request.subject_did,
            document_id: request.document_id,
            phase_number: request.phase_number,
            phase_name: request.phase_name,
            claims: request.claims,
        },
        status: StatusReference {
            registry: issuer_doc
                .revocation_registry_ref
                .unwrap_or_else(|| DEFAULT_REVOCATION_REGISTRY.to_owned()),
            status_type: STATUS_TYPE.to_owned(),
            status: None,
        },
        proof: Proof::unsigned(issuer, now),
    })
}

pub fn issue_micro_credential(
    issuer: &Identity,
    registry: &Registry,
    request: MicroCredentialRequest,
    id: String,
    now: Timestamp,
) -> Result<MicroCredential, CredentialError> {
    let draft = prepare_micro_credential(issuer.did(), registry, request, id, now)?;
    let sig = issuer.sign(&draft.signing_bytes());
    Ok(draft.with_signature(sig))
}

/// Signature under the resolved issuer key, issuer role, then live status.
pub fn verify_micro_credential(cred: &MicroCredential, registry: &Registry, now: Timestamp) -> Verification {
    let issuer = registry
        .resolve_did(&cred.issuer_did)
        .map_err(|_| VerificationFailure::UnknownIssuer)?;
    if !cred.proof.is_well_formed_for(&cred.issuer_did)
        || !verify_signature(&issuer.signing_key, &cred.signing_bytes(), &cred.proof.signature)
    {
        return Err(VerificationFailure::BadSignature);
    }
    if issuer.role != Role::AttestingEntity {
        return Err(VerificationFailure::WrongRole);
    }
    cred.check_shape().map_err(|detail| VerificationFailure::Malformed { detail })?;
    status_failure(registry.credential_status(&cred.id, now, cred.expires_at))
}
