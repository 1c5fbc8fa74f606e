//! Hashing, Ed25519 signatures and the byte newtypes that carry them.
//!
//! All byte values serialize as lowercase hex. Uppercase or mixed-case hex is
//! rejected on input so that every stored value has exactly one spelling.

use std::fmt;

use ed25519_dalek::{Signer as _, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use x25519_dalek::StaticSecret;
use zeroize::Zeroize;

use crate::registry::Did;

pub(crate) fn decode_hex_lower(s: &str) -> Result<Vec<u8>, String> {
    if !s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
        return Err(format!("expected lowercase hex, got {s:?}"));
    }
    hex::decode(s).map_err(|e| e.to_string())
}

pub(crate) fn decode_hex_array<const N: usize>(s: &str) -> Result<[u8; N], String> {
    let bytes = decode_hex_lower(s)?;
    bytes
        .try_into()
        .map_err(|v: Vec<u8>| format!("expected {N} bytes, got {}", v.len()))
}

macro_rules! hex_bytes {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Result<Self, String> {
                decode_hex_array::<$len>(s).map($name)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                $name::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_bytes!(
    /// SHA-256 output.
    Digest,
    32
);
hex_bytes!(
    /// Ed25519 signature.
    Signature,
    64
);
hex_bytes!(
    /// Raw 32-byte public key (Ed25519 verification key or X25519 agreement key).
    PublicKey,
    32
);
hex_bytes!(
    /// 128-bit challenge value.
    Nonce128,
    16
);
hex_bytes!(
    /// 192-bit XChaCha20-Poly1305 nonce.
    Nonce192,
    24
);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);
}

impl Nonce128 {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        Nonce128(bytes)
    }
}

impl Nonce192 {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 24];
        rng.fill_bytes(&mut bytes);
        Nonce192(bytes)
    }
}

pub fn sha256(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Verify an Ed25519 signature. Malformed keys never verify.
pub fn verify_signature(key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&key.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    vk.verify_strict(message, &sig).is_ok()
}

/// Serde adapter for variable-length byte strings as lowercase hex.
pub mod hex_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(deserializer)?;
        super::decode_hex_lower(&s).map_err(serde::de::Error::custom)
    }
}

/// Signing and key-agreement key pairs bound to their DID.
pub struct Identity {
    did: Did,
    signing: SigningKey,
    agreement: StaticSecret,
}

impl Identity {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let signing = SigningKey::generate(rng);
        let mut agreement_bytes = [0u8; 32];
        rng.fill_bytes(&mut agreement_bytes);
        let id = Self::from_secrets(signing.to_bytes(), agreement_bytes);
        agreement_bytes.zeroize();
        id
    }

    pub fn from_secrets(signing_seed: [u8; 32], agreement_secret: [u8; 32]) -> Self {
        let signing = SigningKey::from_bytes(&signing_seed);
        let agreement = StaticSecret::from(agreement_secret);
        let did = Did::from_signing_key(&PublicKey(signing.verifying_key().to_bytes()));
        Identity { did, signing, agreement }
    }

    pub fn did(&self) -> &Did {
        &self.did
    }

    pub fn signing_public(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn agreement_public(&self) -> PublicKey {
        PublicKey(x25519_dalek::PublicKey::from(&self.agreement).to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }

    pub(crate) fn agreement_secret(&self) -> &StaticSecret {
        &self.agreement
    }

    pub fn secrets(&self) -> IdentitySecrets {
        IdentitySecrets {
            signing_seed: hex::encode(self.signing.to_bytes()),
            agreement_secret: hex::encode(self.agreement.to_bytes()),
        }
    }

    pub fn from_secret_record(record: &IdentitySecrets) -> Result<Self, String> {
        let seed = decode_hex_array::<32>(&record.signing_seed)?;
        let agreement = decode_hex_array::<32>(&record.agreement_secret)?;
        Ok(Self::from_secrets(seed, agreement))
    }
}

impl Clone for Identity {
    fn clone(&self) -> Self {
        Identity::from_secrets(self.signing.to_bytes(), self.agreement.to_bytes())
    }
}

impl fmt::Debug for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Identity").field("did", &self.did).finish_non_exhaustive()
    }
}

/// Serialized secret key material. Only ever written inside encrypted wallets
/// or owner-readable key files.
#[derive(Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct IdentitySecrets {
    pub signing_seed: String,
    pub agreement_secret: String,
}

impl Drop for IdentitySecrets {
    fn drop(&mut self) {
        self.signing_seed.zeroize();
        self.agreement_secret.zeroize();
    }
}

impl fmt::Debug for IdentitySecrets {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("IdentitySecrets(..)")
    }
}
