use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use argon2::{Algorithm, Argon2, Params, Version};
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use zeroize::Zeroizing;

use crate::canonical;
use crate::credentials::{CredentialError, Presentation, PresentedCredential};
use crate::crypto::{hex_vec, Digest, Identity, IdentitySecrets, Nonce128, Nonce192};
use crate::jsonl;
use crate::registry::{Did, Registry};
use crate::time::Timestamp;

use super::{offer_id_for, AgentError, AgentPayload, Decision, SecureMessage};

const WALLET_FORMAT: &str = "attestchain-wallet-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditEvent {
    OfferReceived,
    OfferAccepted,
    OfferRejected,
    Disclosed,
    MessageSent,
    MessageReceived,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEntry {
    pub seq: u64,
    pub event: AuditEvent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterparty_did: Option<Did>,
    pub timestamp: Timestamp,
    pub subject_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonce: Option<Nonce128>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OfferState {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Offer {
    pub offer_id: String,
    pub issuer_did: Did,
    pub credential: PresentedCredential,
    pub received_at: Timestamp,
    pub state: OfferState,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceivedMessage {
    pub message_id: Digest,
    pub sender_did: Did,
    pub sent_at: Timestamp,
    pub received_at: Timestamp,
    pub body: AgentPayload,
}

/// What [`Wallet::receive`] did with an incoming message.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Received {
    Offer { offer_id: String, new: bool },
    Message(ReceivedMessage),
    Duplicate,
}

/// A holder's keys, accepted credentials, pending offers and audit log.
///
/// Single writer: every mutating method takes `&mut self`.
#[derive(Clone, Debug)]
pub struct Wallet {
    identity: Identity,
    credentials: BTreeMap<String, PresentedCredential>,
    offers: BTreeMap<String, Offer>,
    messages: Vec<ReceivedMessage>,
    audit_log: Vec<AuditEntry>,
    inbox_cursor: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WalletRecord {
    identity: IdentitySecrets,
    credentials: BTreeMap<String, PresentedCredential>,
    offers: BTreeMap<String, Offer>,
    messages: Vec<ReceivedMessage>,
    audit_log: Vec<AuditEntry>,
    inbox_cursor: u64,
}

/// Argon2id cost parameters, stored in the wallet file header.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KdfParams {
    pub algorithm: String,
    pub memory_kib: u32,
    pub iterations: u32,
    pub parallelism: u32,
    #[serde(with = "hex_vec")]
    pub salt: Vec<u8>,
}

impl KdfParams {
    pub fn new(memory_kib: u32, iterations: u32) -> Self {
        let mut salt = vec![0u8; 16];
        OsRng.fill_bytes(&mut salt);
        KdfParams { algorithm: "argon2id".into(), memory_kib, iterations, parallelism: 1, salt }
    }

    /// OWASP's baseline argon2id recommendation.
    pub fn recommended() -> Self {
        Self::new(19 * 1024, 2)
    }

    fn derive(&self, passphrase: &[u8]) -> Result<Zeroizing<[u8; 32]>, AgentError> {
        if self.algorithm != "argon2id" {
            return Err(AgentError::Malformed(format!("unsupported KDF {}", self.algorithm)));
        }
        let params = Params::new(self.memory_kib, self.iterations, self.parallelism, Some(32))
            .map_err(|e| AgentError::Malformed(format!("KDF parameters: {e}")))?;
        let mut key = Zeroizing::new([0u8; 32]);
        Argon2::new(Algorithm::Argon2id, Version::V0x13, params)
            .hash_password_into(passphrase, &self.salt, key.as_mut())
            .map_err(|e| AgentError::Malformed(format!("KDF: {e}")))?;
        Ok(key)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WalletFile {
    format: String,
    kdf: KdfParams,
    nonce: Nonce192,
    #[serde(with = "hex_vec")]
    ciphertext: Vec<u8>,
}

#[derive(Serialize)]
struct WalletHeader<'a> {
    format: &'a str,
    kdf: &'a KdfParams,
}

impl Wallet {
    pub fn new(identity: Identity) -> Self {
        Wallet {
            identity,
            credentials: BTreeMap::new(),
            offers: BTreeMap::new(),
            messages: Vec::new(),
            audit_log: Vec::new(),
            inbox_cursor: 0,
        }
    }

    /// `<dir>/<did>.wallet`
    pub fn path_in(dir: &Path, did: &Did) -> PathBuf {
        dir.join(format!("{did}.wallet"))
    }

    pub fn identity(&self) -> &Identity {
        &self.identity
    }

    pub fn owner_did(&self) -> &Did {
        self.identity.did()
    }

    pub fn credentials(&self) -> &BTreeMap<String, PresentedCredential> {
        &self.credentials
    }

    pub fn credential(&self, id: &str) -> Option<&PresentedCredential> {
        self.credentials.get(id)
    }

    pub fn offers(&self) -> impl Iterator<Item = &Offer> {
        self.offers.values()
    }

    pub fn pending_offers(&self) -> impl Iterator<Item = &Offer> {
        self.offers.values().filter(|o| o.state == OfferState::Pending)
    }

    pub fn messages(&self) -> &[ReceivedMessage] {
        &self.messages
    }

    pub fn audit_log(&self) -> &[AuditEntry] {
        &self.audit_log
    }

    pub fn inbox_cursor(&self) -> u64 {
        self.inbox_cursor
    }

    pub fn set_inbox_cursor(&mut self, cursor: u64) {
        self.inbox_cursor = self.inbox_cursor.max(cursor);
    }

    fn log(
        &mut self,
        event: AuditEvent,
        counterparty: Option<&Did>,
        now: Timestamp,
        subject_ids: Vec<String>,
        nonce: Option<Nonce128>,
    ) {
        let seq = self.audit_log.last().map_or(1, |e| e.seq + 1);
        // Never let a clock step backwards reorder the log.
        let timestamp = self.audit_log.last().map_or(now, |e| e.timestamp.max(now));
        self.audit_log.push(AuditEntry {
            seq,
            event,
            counterparty_did: counterparty.cloned(),
            timestamp,
            subject_ids,
            nonce,
        });
    }

    fn seal(&self, recipient: &Did, payload: &AgentPayload, registry: &Registry, now: Timestamp) -> Result<SecureMessage, AgentError> {
        let doc = registry
            .resolve_did(recipient)
            .map_err(|_| AgentError::UnknownRecipient(recipient.to_string()))?;
        let plaintext = canonical::to_vec(payload).map_err(|e| AgentError::Malformed(e.to_string()))?;
        SecureMessage::seal(&self.identity, &doc, &plaintext, now, &mut OsRng)
    }

    pub fn send_message(
        &mut self,
        recipient: &Did,
        payload: &AgentPayload,
        registry: &Registry,
        now: Timestamp,
    ) -> Result<SecureMessage, AgentError> {
        let msg = self.seal(recipient, payload, registry, now)?;
        self.log(AuditEvent::MessageSent, Some(recipient), now, vec![msg.message_id().to_hex()], None);
        Ok(msg)
    }

    /// Decrypt and file an incoming message. Offers become pending offers;
    /// anything else is kept as a received message.
    pub fn receive(&mut self, msg: &SecureMessage, registry: &Registry, now: Timestamp) -> Result<Received, AgentError> {
        let message_id = msg.message_id();
        if self.messages.iter().any(|m| m.message_id == message_id) {
            return Ok(Received::Duplicate);
        }
        let plaintext = msg.open(&self.identity, registry)?;
        let payload: AgentPayload = canonical::from_slice(&plaintext)
            .unwrap_or_else(|_| AgentPayload::Text { body: String::from_utf8_lossy(&plaintext).into_owned() });
        if let AgentPayload::CredentialOffer { offer_id, credential } = &payload {
            return self.receive_offer(msg, offer_id, credential, now);
        }
        let subject_ids = match &payload {
            AgentPayload::OfferResponse { offer_id, credential_id, .. } => {
                vec![message_id.to_hex(), offer_id.clone(), credential_id.clone()]
            }
            _ => vec![message_id.to_hex()],
        };
        self.log(AuditEvent::MessageReceived, Some(&msg.sender_did), now, subject_ids, None);
        let record = ReceivedMessage {
            message_id,
            sender_did: msg.sender_did.clone(),
            sent_at: msg.sent_at,
            received_at: now,
            body: payload,
        };
        self.messages.push(record.clone());
        Ok(Received::Message(record))
    }

    fn receive_offer(
        &mut self,
        msg: &SecureMessage,
        offer_id: &str,
        credential: &PresentedCredential,
        now: Timestamp,
    ) -> Result<Received, AgentError> {
        if credential.subject_did() != self.owner_did() {
            return Err(AgentError::NotForThisWallet(credential.id().to_owned()));
        }
        if offer_id != offer_id_for(credential.id()) {
            return Err(AgentError::Malformed("offer id does not match the credential".into()));
        }
        if self.offers.contains_key(offer_id) || self.credentials.contains_key(credential.id()) {
            return Ok(Received::Offer { offer_id: offer_id.to_owned(), new: false });
        }
        self.log(
            AuditEvent::OfferReceived,
            Some(&msg.sender_did),
            now,
            vec![offer_id.to_owned(), credential.id().to_owned()],
            None,
        );
        self.offers.insert(
            offer_id.to_owned(),
            Offer {
                offer_id: offer_id.to_owned(),
                issuer_did: msg.sender_did.clone(),
                credential: credential.clone(),
                received_at: now,
                state: OfferState::Pending,
            },
        );
        Ok(Received::Offer { offer_id: offer_id.to_owned(), new: true })
    }

    /// Accept or reject a pending offer. Returns the notification for the
    /// issuer's agent.
    pub fn respond_to_offer(
        &mut self,
        offer_id: &str,
        decision: Decision,
        registry: &Registry,
        now: Timestamp,
    ) -> Result<SecureMessage, AgentError> {
        let offer = self.offers.get(offer_id).ok_or_else(|| AgentError::UnknownOffer(offer_id.to_owned()))?;
        if offer.state != OfferState::Pending {
            return Err(AgentError::AlreadyResolved(offer_id.to_owned()));
        }
        let issuer = offer.issuer_did.clone();
        let credential_id = offer.credential.id().to_owned();
        let notice = self.seal(
            &issuer,
            &AgentPayload::OfferResponse { offer_id: offer_id.to_owned(), credential_id: credential_id.clone(), decision },
            registry,
            now,
        )?;
        let offer = self.offers.get_mut(offer_id).expect("checked above");
        let event = match decision {
            Decision::Accept => {
                offer.state = OfferState::Accepted;
                let credential = offer.credential.clone();
                self.credentials.insert(credential_id.clone(), credential);
                AuditEvent::OfferAccepted
            }
            Decision::Reject => {
                offer.state = OfferState::Rejected;
                AuditEvent::OfferRejected
            }
        };
        self.log(event, Some(&issuer), now, vec![offer_id.to_owned(), credential_id], None);
        Ok(notice)
    }

    /// Disclose held credentials against a verifier's challenge. The
    /// disclosure is logged before the presentation is returned.
    pub fn create_presentation(
        &mut self,
        credential_ids: &[String],
        challenge_nonce: Nonce128,
        verifier: Option<&Did>,
        now: Timestamp,
    ) -> Result<Presentation, CredentialError> {
        let credentials = credential_ids
            .iter()
            .map(|id| self.credentials.get(id).cloned().ok_or_else(|| CredentialError::UnknownCredential(id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        self.log(AuditEvent::Disclosed, verifier, now, credential_ids.to_vec(), Some(challenge_nonce));
        Ok(Presentation::create(&self.identity, credentials, challenge_nonce, now))
    }

    fn record(&self) -> WalletRecord {
        WalletRecord {
            identity: self.identity.secrets(),
            credentials: self.credentials.clone(),
            offers: self.offers.clone(),
            messages: self.messages.clone(),
            audit_log: self.audit_log.clone(),
            inbox_cursor: self.inbox_cursor,
        }
    }

    fn from_record(record: WalletRecord) -> Result<Self, AgentError> {
        let identity = Identity::from_secret_record(&record.identity).map_err(AgentError::Malformed)?;
        let wallet = Wallet {
            identity,
            credentials: record.credentials,
            offers: record.offers,
            messages: record.messages,
            audit_log: record.audit_log,
            inbox_cursor: record.inbox_cursor,
        };
        wallet.check_invariants()?;
        Ok(wallet)
    }

    /// Audit order, credential ownership and the consent gate.
    pub fn check_invariants(&self) -> Result<(), AgentError> {
        for pair in self.audit_log.windows(2) {
            if pair[1].seq <= pair[0].seq || pair[1].timestamp < pair[0].timestamp {
                return Err(AgentError::Malformed(format!("audit log out of order at seq {}", pair[1].seq)));
            }
        }
        for (id, credential) in &self.credentials {
            if credential.id() != id || credential.subject_did() != self.owner_did() {
                return Err(AgentError::Malformed(format!("credential {id} does not belong to this wallet")));
            }
            let accepted = self
                .audit_log
                .iter()
                .any(|e| e.event == AuditEvent::OfferAccepted && e.subject_ids.iter().any(|s| s == id));
            if !accepted {
                return Err(AgentError::Malformed(format!("credential {id} was stored without consent")));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, passphrase: &[u8]) -> Result<(), AgentError> {
        self.save_with(path, passphrase, KdfParams::recommended())
    }

    pub fn save_with(&self, path: &Path, passphrase: &[u8], kdf: KdfParams) -> Result<(), AgentError> {
        let key = kdf.derive(passphrase)?;
        let plaintext = Zeroizing::new(canonical::to_vec(&self.record()).map_err(|e| AgentError::Malformed(e.to_string()))?);
        let nonce = Nonce192::random(&mut OsRng);
        let aad = canonical::to_vec(&WalletHeader { format: WALLET_FORMAT, kdf: &kdf }).expect("header encodes");
        let ciphertext = XChaCha20Poly1305::new(key.as_ref().into())
            .encrypt(XNonce::from_slice(&nonce.0), Payload { msg: &plaintext, aad: &aad })
            .map_err(|_| AgentError::Malformed("wallet encryption failed".into()))?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| AgentError::Storage(e.to_string()))?;
        }
        let file = WalletFile { format: WALLET_FORMAT.into(), kdf, nonce, ciphertext };
        jsonl::write_document(path, &file).map_err(|e| AgentError::Storage(e.to_string()))
    }

    /// KDF cost of an existing wallet file, so a rewrite keeps it.
    pub fn kdf_params(path: &Path) -> Result<KdfParams, AgentError> {
        let file: WalletFile = jsonl::read_document(path).map_err(|e| AgentError::Storage(e.to_string()))?;
        Ok(file.kdf)
    }

    pub fn load(path: &Path, passphrase: &[u8]) -> Result<Self, AgentError> {
        let file: WalletFile = jsonl::read_document(path).map_err(|e| AgentError::Storage(e.to_string()))?;
        if file.format != WALLET_FORMAT {
            return Err(AgentError::Malformed(format!("unknown wallet format {}", file.format)));
        }
        let key = file.kdf.derive(passphrase)?;
        let aad = canonical::to_vec(&WalletHeader { format: &file.format, kdf: &file.kdf }).expect("header encodes");
        let plaintext = Zeroizing::new(
            XChaCha20Poly1305::new(key.as_ref().into())
                .decrypt(XNonce::from_slice(&file.nonce.0), Payload { msg: &file.ciphertext, aad: &aad })
                .map_err(|_| AgentError::BadPassphrase)?,
        );
        let record: WalletRecord =
            canonical::from_slice(&plaintext).map_err(|e| AgentError::Malformed(e.to_string()))?;
        Self::from_record(record)
    }
}
