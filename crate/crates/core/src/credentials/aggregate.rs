use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::crypto::{verify_signature, Identity, PublicKey, Signature};
use crate::ids::AGGREGATE_CREDENTIAL_PREFIX;
use crate::privacy::is_identifier;
use crate::registry::{Did, Registry, Role, DEFAULT_REVOCATION_REGISTRY};
use crate::time::Timestamp;

use super::{
    signing_bytes, status_failure, verify_micro_credential, CredentialError, MicroCredential, MicroLookup, Proof,
    StatusReference, StatusSnapshot, Verification, VerificationFailure, STATUS_TYPE, VC_CONTEXT,
};

pub const AGGREGATE_CREDENTIAL_TYPE: &str = "AttestationCompletionCredential";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateSubject {
    #[serde(rename = "id")]
    pub holder_did: Did,
    #[serde(rename = "holderPublicKey")]
    pub holder_public_key: PublicKey,
    #[serde(rename = "microCredentials")]
    pub micro_credential_ids: Vec<String>,
}

/// Completion credential over the full, ordered set of phase credentials.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateCredential {
    #[serde(rename = "@context")]
    pub context: Vec<String>,
    pub id: String,
    #[serde(rename = "type")]
    pub types: Vec<String>,
    #[serde(rename = "issuer")]
    pub issuer_did: Did,
    #[serde(rename = "issuanceDate")]
    pub activation_date: Timestamp,
    #[serde(rename = "expirationDate", default, skip_serializing_if = "Option::is_none")]
    pub expires_at: Option<Timestamp>,
    #[serde(rename = "credentialSubject")]
    pub subject: AggregateSubject,
    #[serde(rename = "credentialStatus")]
    pub status: StatusReference,
    pub proof: Proof,
}

impl AggregateCredential {
    pub fn signing_bytes(&self) -> Vec<u8> {
        signing_bytes(self)
    }

    pub fn with_signature(mut self, signature: Signature) -> Self {
        self.proof.signature = signature;
        self
    }

    pub fn holder_did(&self) -> &Did {
        &self.subject.holder_did
    }

    pub fn micro_credential_ids(&self) -> &[String] {
        &self.subject.micro_credential_ids
    }
}

#[derive(Clone, Debug)]
pub struct AggregateRequest {
    pub holder_did: Did,
    pub holder_public_key: PublicKey,
    pub micro_ids: Vec<String>,
    pub expires_at: Option<Timestamp>,
}

/// Check the micro set and build the aggregate with an empty proof. The
/// issuer must be the attesting entity that issued the final phase.
pub fn prepare_aggregate_credential(
    issuer: &Did,
    registry: &Registry,
    micros: &dyn MicroLookup,
    request: AggregateRequest,
    id: String,
    now: Timestamp,
) -> Result<AggregateCredential, CredentialError> {
    if request.micro_ids.is_empty() {
        return Err(CredentialError::EmptyMicroSet);
    }
    let issuer_doc = registry
        .resolve_did(issuer)
        .map_err(|_| CredentialError::UnauthorizedIssuer(format!("{issuer} is not registered")))?;
    if issuer_doc.role != Role::AttestingEntity {
        return Err(CredentialError::UnauthorizedIssuer(format!("{issuer} is not an attesting entity")));
    }
    if request.expires_at.is_some_and(|e| e <= now) {
        return Err(CredentialError::BadExpiry);
    }
    if !is_identifier(&id) || !id.starts_with(AGGREGATE_CREDENTIAL_PREFIX) {
        return Err(CredentialError::Malformed(format!("{id:?} is not an aggregate credential id")));
    }
    let holder = registry
        .resolve_did(&request.holder_did)
        .map_err(|_| CredentialError::Malformed(format!("holder {} does not resolve", request.holder_did)))?;
    if holder.signing_key != request.holder_public_key {
        return Err(CredentialError::Malformed("holder public key does not match the holder DID".into()));
    }

    let mut seen = BTreeSet::new();
    let mut resolved: Vec<MicroCredential> = Vec::with_capacity(request.micro_ids.len());
    for micro_id in &request.micro_ids {
        if !seen.insert(micro_id.as_str()) {
            return Err(CredentialError::Malformed(format!("{micro_id} listed twice")));
        }
        let micro = micros.micro(micro_id).ok_or_else(|| CredentialError::UnverifiedMicro {
            micro_id: micro_id.clone(),
            reason: VerificationFailure::MissingMicro { micro_id: micro_id.clone() },
        })?;
        verify_micro_credential(&micro, registry, now)
            .map_err(|reason| CredentialError::UnverifiedMicro { micro_id: micro_id.clone(), reason })?;
        if micro.subject_did() != &request.holder_did {
            return Err(CredentialError::UnverifiedMicro {
                micro_id: micro_id.clone(),
                reason: VerificationFailure::HolderMismatch { credential_id: micro_id.clone() },
            });
        }
        if let Some(first) = resolved.first() {
            if first.subject.document_id != micro.subject.document_id {
                return Err(CredentialError::Malformed("micro-credentials cover different documents".into()));
            }
        }
        resolved.push(micro);
    }
    resolved.sort_by_key(|m| m.phase_number());
    for (position, micro) in resolved.iter().enumerate() {
        if micro.phase_number() as usize != position + 1 {
            return Err(CredentialError::PhaseGap(format!(
                "expected phase {} but found phase {}",
                position + 1,
                micro.phase_number()
            )));
        }
    }
    let last = resolved.last().expect("non-empty");
    if &last.issuer_did != issuer {
        return Err(CredentialError::UnauthorizedIssuer(format!(
            "{issuer} did not issue the final phase credential"
        )));
    }

    Ok(AggregateCredential {
        context: VC_CONTEXT.iter().map(|s| s.to_string()).collect(),
        id,
        types: vec!["VerifiableCredential".into(), AGGREGATE_CREDENTIAL_TYPE.into()],
        issuer_did: issuer.clone(),
        activation_date: now,
        expires_at: request.expires_at,
        subject: AggregateSubject {
            holder_did: request.holder_did,
            holder_public_key: request.holder_public_key,
            micro_credential_ids: resolved.into_iter().map(|m| m.id).collect(),
        },
        status: StatusReference {
            registry: issuer_doc
                .revocation_registry_ref
                .unwrap_or_else(|| DEFAULT_REVOCATION_REGISTRY.to_owned()),
            status_type: STATUS_TYPE.to_owned(),
            status: Some(StatusSnapshot::Valid),
        },
        proof: Proof::unsigned(issuer, now),
    })
}

pub fn issue_aggregate_credential(
    issuer: &Identity,
    registry: &Registry,
    micros: &dyn MicroLookup,
    request: AggregateRequest,
    id: String,
    now: Timestamp,
) -> Result<AggregateCredential, CredentialError> {
    let draft = prepare_aggregate_credential(issuer.did(), registry, micros, request, id, now)?;
    let sig = issuer.sign(&draft.signing_bytes());
    Ok(draft.with_signature(sig))
}

pub fn verify_aggregate_credential(
    cred: &AggregateCredential,
    micros: &dyn MicroLookup,
    registry: &Registry,
    now: Timestamp,
) -> Verification {
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
    if cred.expires_at.is_some_and(|e| e <= cred.activation_date) {
        return Err(VerificationFailure::Malformed { detail: "expiry is not after activation".into() });
    }
    status_failure(registry.credential_status(&cred.id, now, cred.expires_at))?;

    let ids = cred.micro_credential_ids();
    if ids.is_empty() {
        return Err(VerificationFailure::Malformed { detail: "no micro-credentials listed".into() });
    }
    let mut seen = BTreeSet::new();
    for (position, micro_id) in ids.iter().enumerate() {
        if !seen.insert(micro_id) {
            return Err(VerificationFailure::Malformed { detail: format!("{micro_id} listed twice") });
        }
        let micro = micros
            .micro(micro_id)
            .ok_or_else(|| VerificationFailure::MissingMicro { micro_id: micro_id.clone() })?;
        let failed = |reason| VerificationFailure::MicroFailed { micro_id: micro_id.clone(), reason: Box::new(reason) };
        if micro.id != *micro_id {
            return Err(VerificationFailure::MissingMicro { micro_id: micro_id.clone() });
        }
        verify_micro_credential(&micro, registry, now).map_err(failed)?;
        if micro.subject_did() != cred.holder_did() {
            return Err(failed(VerificationFailure::HolderMismatch { credential_id: micro_id.clone() }));
        }
        if micro.phase_number() as usize != position + 1 {
            return Err(VerificationFailure::PhaseGap);
        }
    }
    Ok(())
}
