use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::crypto::{sha256, PublicKey};
use crate::time::Timestamp;

use super::RegistryError;

pub const DID_PREFIX: &str = "did:attest:";

/// A `did:attest:` identifier: base58 of the first 16 bytes of
/// SHA-256(public signing key).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Did(String);

impl Did {
    pub fn from_signing_key(key: &PublicKey) -> Did {
        let digest = sha256(key.as_bytes());
        Did(format!("{DID_PREFIX}{}", bs58::encode(&digest.0[..16]).into_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Key reference used in proofs.
    pub fn signing_key_ref(&self) -> String {
        format!("{}#signing-key", self.0)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("malformed DID {0:?}")]
pub struct DidParseError(String);

impl FromStr for Did {
    type Err = DidParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let suffix = s.strip_prefix(DID_PREFIX).ok_or_else(|| DidParseError(s.to_owned()))?;
        let decoded = bs58::decode(suffix).into_vec().map_err(|_| DidParseError(s.to_owned()))?;
        // Require the unique base58 spelling of a 16-byte value.
        if decoded.len() != 16 || bs58::encode(&decoded).into_string() != suffix {
            return Err(DidParseError(s.to_owned()));
        }
        Ok(Did(s.to_owned()))
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Did({})", self.0)
    }
}

impl Serialize for Did {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Did {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Holder,
    AttestingEntity,
    Verifier,
    CredentialIssuer,
}

impl Role {
    pub fn may_revoke(self) -> bool {
        matches!(self, Role::AttestingEntity | Role::CredentialIssuer)
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "holder" => Ok(Role::Holder),
            "attestingentity" | "attester" => Ok(Role::AttestingEntity),
            "verifier" => Ok(Role::Verifier),
            "credentialissuer" | "issuer" => Ok(Role::CredentialIssuer),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

/// Revocation registry that issuers in this deployment write to.
pub const DEFAULT_REVOCATION_REGISTRY: &str = "urn:attest:revocations";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DidDocument {
    pub did: Did,
    pub signing_key: PublicKey,
    pub key_agreement_key: PublicKey,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service_endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revocation_registry_ref: Option<String>,
    /// Free-form statement of the issuer's privacy practices. Informational.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy_policy: Option<String>,
    pub created_at: Timestamp,
}

impl DidDocument {
    pub fn check_invariants(&self) -> Result<(), RegistryError> {
        check_keys(&self.signing_key, &self.key_agreement_key)
            .map_err(|e| RegistryError::InvariantViolation(e.to_string()))?;
        if Did::from_signing_key(&self.signing_key) != self.did {
            return Err(RegistryError::InvariantViolation(
                "did does not match the signing key".to_owned(),
            ));
        }
        Ok(())
    }
}

fn check_keys(signing_key: &PublicKey, key_agreement_key: &PublicKey) -> Result<(), RegistryError> {
    if ed25519_dalek::VerifyingKey::from_bytes(signing_key.as_bytes()).is_err() {
        return Err(RegistryError::MalformedKey("signing key is not a valid Ed25519 point".to_owned()));
    }
    if key_agreement_key.as_bytes() == &[0u8; 32] {
        return Err(RegistryError::MalformedKey("key agreement key is all zero".to_owned()));
    }
    if signing_key == key_agreement_key {
        return Err(RegistryError::MalformedKey(
            "signing key and key agreement key must differ".to_owned(),
        ));
    }
    Ok(())
}

/// Build an unregistered DID document. The DID string depends only on the
/// signing key.
pub fn create_did(
    signing_key: PublicKey,
    key_agreement_key: PublicKey,
    role: Role,
    service_endpoint: Option<String>,
    created_at: Timestamp,
) -> Result<DidDocument, RegistryError> {
    check_keys(&signing_key, &key_agreement_key)?;
    let revocation_registry_ref =
        role.may_revoke().then(|| DEFAULT_REVOCATION_REGISTRY.to_owned());
    Ok(DidDocument {
        did: Did::from_signing_key(&signing_key),
        signing_key,
        key_agreement_key,
        role,
        service_endpoint,
        revocation_registry_ref,
        privacy_policy: None,
        created_at,
    })
}
