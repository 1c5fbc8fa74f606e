use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::crypto::{verify_signature, Identity, Nonce128, Signature};
use crate::registry::{Did, Registry};
use crate::time::Timestamp;

use super::{
    verify_aggregate_credential, verify_micro_credential, AggregateCredential, MicroCredential, MicroLookup,
    NonceTracker, Verification, VerificationFailure,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresentedCredential {
    Micro(MicroCredential),
    Aggregate(AggregateCredential),
}

impl PresentedCredential {
    pub fn id(&self) -> &str {
        match self {
            PresentedCredential::Micro(c) => &c.id,
            PresentedCredential::Aggregate(c) => &c.id,
        }
    }

    pub fn subject_did(&self) -> &Did {
        match self {
            PresentedCredential::Micro(c) => c.subject_did(),
            PresentedCredential::Aggregate(c) => c.holder_did(),
        }
    }
}

/// Credentials disclosed to a verifier, bound to the verifier's challenge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Presentation {
    pub credentials: Vec<PresentedCredential>,
    pub holder_did: Did,
    pub challenge_nonce: Nonce128,
    pub created_at: Timestamp,
    pub holder_signature: Signature,
}

#[derive(Serialize)]
struct SignedPart<'a> {
    challenge_nonce: &'a Nonce128,
    created_at: Timestamp,
    credential_ids: Vec<&'a str>,
}

impl Presentation {
    pub fn create(
        holder: &Identity,
        credentials: Vec<PresentedCredential>,
        challenge_nonce: Nonce128,
        now: Timestamp,
    ) -> Self {
        let mut p = Presentation {
            credentials,
            holder_did: holder.did().clone(),
            challenge_nonce,
            created_at: now,
            holder_signature: Signature([0; 64]),
        };
        p.holder_signature = holder.sign(&p.signing_bytes());
        p
    }

    /// Canonical `{challenge_nonce, created_at, credential_ids}`.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let part = SignedPart {
            challenge_nonce: &self.challenge_nonce,
            created_at: self.created_at,
            credential_ids: self.credentials.iter().map(|c| c.id()).collect(),
        };
        canonical::to_vec(&part).expect("presentation fields encode")
    }
}

/// Nonce, holder signature, then every embedded credential. The nonce is
/// consumed once the holder signature checks out, so a presentation whose
/// credentials later fail cannot be replayed either.
pub fn verify_presentation(
    presentation: &Presentation,
    expected_nonce: &Nonce128,
    tracker: &NonceTracker,
    registry: &Registry,
    micros: &dyn MicroLookup,
    now: Timestamp,
) -> Verification {
    if &presentation.challenge_nonce != expected_nonce {
        return Err(VerificationFailure::NonceMismatch);
    }
    if tracker.is_used(expected_nonce) {
        return Err(VerificationFailure::NonceReplayed);
    }
    let holder = registry
        .resolve_did(&presentation.holder_did)
        .map_err(|_| VerificationFailure::UnknownHolder)?;
    if !verify_signature(&holder.signing_key, &presentation.signing_bytes(), &presentation.holder_signature) {
        return Err(VerificationFailure::BadHolderSignature);
    }
    if !tracker.claim(*expected_nonce) {
        return Err(VerificationFailure::NonceReplayed);
    }

    let embedded: Vec<MicroCredential> = presentation
        .credentials
        .iter()
        .filter_map(|c| match c {
            PresentedCredential::Micro(m) => Some(m.clone()),
            PresentedCredential::Aggregate(_) => None,
        })
        .collect();
    let lookup = |id: &str| embedded.as_slice().micro(id).or_else(|| micros.micro(id));

    for credential in &presentation.credentials {
        let failed = |reason| VerificationFailure::CredentialFailed {
            credential_id: credential.id().to_owned(),
            reason: Box::new(reason),
        };
        if credential.subject_did() != &presentation.holder_did {
            return Err(VerificationFailure::HolderMismatch { credential_id: credential.id().to_owned() });
        }
        match credential {
            PresentedCredential::Micro(m) => verify_micro_credential(m, registry, now).map_err(failed)?,
            PresentedCredential::Aggregate(a) => {
                if a.subject.holder_public_key != holder.signing_key {
                    return Err(VerificationFailure::HolderMismatch { credential_id: a.id.clone() });
                }
                verify_aggregate_credential(a, &lookup, registry, now).map_err(failed)?
            }
        }
    }
    Ok(())
}
