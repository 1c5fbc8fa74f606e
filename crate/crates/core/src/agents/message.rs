use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use x25519_dalek::StaticSecret;
use zeroize::Zeroizing;

use crate::canonical;
use crate::crypto::{hex_vec, sha256, verify_signature, Digest, Identity, Nonce192, PublicKey, Signature};
use crate::registry::{Did, DidDocument, Registry};
use crate::time::Timestamp;

use super::AgentError;

const KDF_INFO: &[u8] = b"attestchain/secure-message/v1";

/// Encrypted, sender-signed message between two registered DIDs.
///
/// The sender draws a fresh X25519 key per message and agrees a key with the
/// recipient's registered key-agreement key; HKDF-SHA256 turns the shared
/// secret into an XChaCha20-Poly1305 key. Authenticity comes from the
/// Ed25519 signature, not from the key exchange.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecureMessage {
    pub sender_did: Did,
    pub recipient_did: Did,
    pub nonce: Nonce192,
    pub ephemeral_public_key: PublicKey,
    #[serde(with = "hex_vec")]
    pub ciphertext: Vec<u8>,
    pub sent_at: Timestamp,
    pub sender_signature: Signature,
}

#[derive(Serialize)]
struct Header<'a> {
    ephemeral_public_key: &'a PublicKey,
    nonce: &'a Nonce192,
    recipient_did: &'a Did,
    sender_did: &'a Did,
    sent_at: Timestamp,
}

#[derive(Serialize)]
struct Signed<'a> {
    #[serde(with = "hex_vec")]
    ciphertext: &'a [u8],
    ephemeral_public_key: &'a PublicKey,
    nonce: &'a Nonce192,
    recipient_did: &'a Did,
    sender_did: &'a Did,
    sent_at: Timestamp,
}

fn message_key(shared: &[u8; 32], eph: &PublicKey, recipient_key: &PublicKey) -> Zeroizing<[u8; 32]> {
    let mut info = KDF_INFO.to_vec();
    info.extend_from_slice(&eph.0);
    info.extend_from_slice(&recipient_key.0);
    let mut key = Zeroizing::new([0u8; 32]);
    Hkdf::<Sha256>::new(None, shared)
        .expand(&info, key.as_mut())
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    key
}

impl SecureMessage {
    fn header(&self) -> Vec<u8> {
        canonical::to_vec(&Header {
            ephemeral_public_key: &self.ephemeral_public_key,
            nonce: &self.nonce,
            recipient_did: &self.recipient_did,
            sender_did: &self.sender_did,
            sent_at: self.sent_at,
        })
        .expect("header encodes")
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        canonical::to_vec(&Signed {
            ciphertext: &self.ciphertext,
            ephemeral_public_key: &self.ephemeral_public_key,
            nonce: &self.nonce,
            recipient_did: &self.recipient_did,
            sender_did: &self.sender_did,
            sent_at: self.sent_at,
        })
        .expect("message encodes")
    }

    /// Content address of the whole message, used for audit entries and
    /// de-duplication.
    pub fn message_id(&self) -> Digest {
        sha256(&canonical::to_vec(self).expect("message encodes"))
    }

    pub fn seal<R: RngCore + CryptoRng>(
        sender: &Identity,
        recipient: &DidDocument,
        plaintext: &[u8],
        sent_at: Timestamp,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        let ephemeral = StaticSecret::random_from_rng(&mut *rng);
        let eph_public = PublicKey(x25519_dalek::PublicKey::from(&ephemeral).to_bytes());
        let shared = ephemeral.diffie_hellman(&x25519_dalek::PublicKey::from(recipient.key_agreement_key.0));
        if !shared.was_contributory() {
            return Err(AgentError::UnknownRecipient(format!(
                "{} has a degenerate key-agreement key",
                recipient.did
            )));
        }
        let key = message_key(shared.as_bytes(), &eph_public, &recipient.key_agreement_key);
        let mut msg = SecureMessage {
            sender_did: sender.did().clone(),
            recipient_did: recipient.did.clone(),
            nonce: Nonce192::random(rng),
            ephemeral_public_key: eph_public,
            ciphertext: Vec::new(),
            sent_at,
            sender_signature: Signature([0; 64]),
        };
        let aad = msg.header();
        msg.ciphertext = XChaCha20Poly1305::new(key.as_ref().into())
            .encrypt(XNonce::from_slice(&msg.nonce.0), Payload { msg: plaintext, aad: &aad })
            .map_err(|_| AgentError::Malformed("encryption failed".into()))?;
        msg.sender_signature = sender.sign(&msg.signing_bytes());
        Ok(msg)
    }

    /// Decrypt with the recipient's key-agreement secret, then check the
    /// sender's signature against the registry.
    pub fn open(&self, recipient: &Identity, registry: &Registry) -> Result<Vec<u8>, AgentError> {
        if &self.recipient_did != recipient.did() {
            return Err(AgentError::WrongRecipient);
        }
        let shared = recipient
            .agreement_secret()
            .diffie_hellman(&x25519_dalek::PublicKey::from(self.ephemeral_public_key.0));
        if !shared.was_contributory() {
            return Err(AgentError::DecryptionFailure);
        }
        let key = message_key(shared.as_bytes(), &self.ephemeral_public_key, &recipient.agreement_public());
        let aad = self.header();
        let plaintext = XChaCha20Poly1305::new(key.as_ref().into())
            .decrypt(XNonce::from_slice(&self.nonce.0), Payload { msg: &self.ciphertext, aad: &aad })
            .map_err(|_| AgentError::DecryptionFailure)?;
        self.verify_sender(registry)?;
        Ok(plaintext)
    }

    pub fn verify_sender(&self, registry: &Registry) -> Result<(), AgentError> {
        let sender = registry
            .resolve_did(&self.sender_did)
            .map_err(|_| AgentError::UnknownSender(self.sender_did.to_string()))?;
        if !verify_signature(&sender.signing_key, &self.signing_bytes(), &self.sender_signature) {
            return Err(AgentError::BadSignature);
        }
        Ok(())
    }
}
