//! Holder, attester and verifier agents: encrypted signed messaging,
//! credential offers gated on holder consent, and wallets with an audit log.

mod inbox;
mod message;
mod wallet;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::credentials::{verify_aggregate_credential, verify_micro_credential, MicroLookup, PresentedCredential};
use crate::crypto::{sha256, Identity};
use crate::registry::{Did, Registry};
use crate::time::Timestamp;

pub use inbox::{Inbox, InboxItem};
pub use message::SecureMessage;
pub use wallet::{AuditEntry, AuditEvent, KdfParams, Offer, OfferState, Received, ReceivedMessage, Wallet};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgentError {
    #[error("recipient {0} does not resolve")]
    UnknownRecipient(String),
    #[error("sender {0} does not resolve")]
    UnknownSender(String),
    #[error("holder {0} does not resolve")]
    UnknownHolder(String),
    #[error("message is addressed to a different DID")]
    WrongRecipient,
    #[error("message does not decrypt")]
    DecryptionFailure,
    #[error("sender signature does not verify")]
    BadSignature,
    #[error("unknown offer {0}")]
    UnknownOffer(String),
    #[error("offer {0} was already answered")]
    AlreadyResolved(String),
    #[error("credential does not verify: {0}")]
    InvalidCredential(String),
    #[error("credential {0} is not addressed to this wallet")]
    NotForThisWallet(String),
    #[error("wallet passphrase is wrong or the file was modified")]
    BadPassphrase,
    #[error("malformed: {0}")]
    Malformed(String),
    #[error("storage: {0}")]
    Storage(String),
}

impl AgentError {
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::UnknownRecipient(_) => "UnknownRecipient",
            AgentError::UnknownSender(_) => "UnknownSender",
            AgentError::UnknownHolder(_) => "UnknownHolder",
            AgentError::WrongRecipient => "WrongRecipient",
            AgentError::DecryptionFailure => "DecryptionFailure",
            AgentError::BadSignature => "BadSignature",
            AgentError::UnknownOffer(_) => "UnknownOffer",
            AgentError::AlreadyResolved(_) => "AlreadyResolved",
            AgentError::InvalidCredential(_) => "InvalidCredential",
            AgentError::NotForThisWallet(_) => "NotForThisWallet",
            AgentError::BadPassphrase => "BadPassphrase",
            AgentError::Malformed(_) => "Malformed",
            AgentError::Storage(_) => "StorageError",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Accept,
    Reject,
}

/// Plaintext carried inside a [`SecureMessage`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentPayload {
    CredentialOffer { offer_id: String, credential: PresentedCredential },
    OfferResponse { offer_id: String, credential_id: String, decision: Decision },
    Text { body: String },
}

/// Offers are keyed by credential, so re-offering the same credential is a
/// no-op on the holder side.
pub fn offer_id_for(credential_id: &str) -> String {
    format!("offer-{}", &sha256(credential_id.as_bytes()).to_hex()[..32])
}

/// Verify a credential on the issuer side and seal it as an offer to its
/// subject. Returns the offer id and the message to deliver.
pub fn offer_credential<R: RngCore + CryptoRng>(
    issuer: &Identity,
    credential: PresentedCredential,
    registry: &Registry,
    micros: &dyn MicroLookup,
    now: Timestamp,
    rng: &mut R,
) -> Result<(String, SecureMessage), AgentError> {
    let verdict = match &credential {
        PresentedCredential::Micro(m) => verify_micro_credential(m, registry, now),
        PresentedCredential::Aggregate(a) => verify_aggregate_credential(a, micros, registry, now),
    };
    verdict.map_err(|f| AgentError::InvalidCredential(f.to_string()))?;
    let holder: &Did = credential.subject_did();
    let holder_doc = registry
        .resolve_did(holder)
        .map_err(|_| AgentError::UnknownHolder(holder.to_string()))?;
    let offer_id = offer_id_for(credential.id());
    let payload = AgentPayload::CredentialOffer { offer_id: offer_id.clone(), credential };
    let plaintext = canonical::to_vec(&payload).map_err(|e| AgentError::Malformed(e.to_string()))?;
    let msg = SecureMessage::seal(issuer, &holder_doc, &plaintext, now, rng)?;
    Ok((offer_id, msg))
}
