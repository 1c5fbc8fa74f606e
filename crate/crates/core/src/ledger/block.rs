use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::crypto::{sha256, Digest, Identity, Signature};

use super::BlockPayload;

/// Identifier of one request's chain; doubles as the chain's file stem.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChainId(String);

impl ChainId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for ChainId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let ok = !s.is_empty()
            && s.len() <= 64
            && !s.starts_with('.')
            && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.'));
        if ok {
            Ok(ChainId(s.to_owned()))
        } else {
            Err(format!("invalid chain id {s:?}"))
        }
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChainId({})", self.0)
    }
}

impl Serialize for ChainId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for ChainId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

/// index ‖ prev_hash ‖ payload_hash, with the index as a big-endian u64.
pub fn signing_input(index: u64, prev_hash: &Digest, payload_hash: &Digest) -> [u8; 72] {
    let mut out = [0u8; 72];
    out[..8].copy_from_slice(&index.to_be_bytes());
    out[8..40].copy_from_slice(prev_hash.as_bytes());
    out[40..].copy_from_slice(payload_hash.as_bytes());
    out
}

pub fn compute_block_hash(
    index: u64,
    prev_hash: &Digest,
    payload_hash: &Digest,
    signature: &Signature,
) -> Digest {
    let mut input = Vec::with_capacity(72 + 64);
    input.extend_from_slice(&signing_input(index, prev_hash, payload_hash));
    input.extend_from_slice(signature.as_bytes());
    sha256(&input)
}

/// A block positioned on its chain but not yet signed by its attester.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnsignedBlock {
    pub index: u64,
    pub prev_hash: Digest,
    pub payload: BlockPayload,
    pub payload_hash: Digest,
}

impl UnsignedBlock {
    pub fn signing_bytes(&self) -> [u8; 72] {
        signing_input(self.index, &self.prev_hash, &self.payload_hash)
    }

    pub fn sign(&self, signer: &Identity) -> Signature {
        signer.sign(&self.signing_bytes())
    }

    pub fn with_signature(self, attester_signature: Signature) -> AttestationBlock {
        let block_hash =
            compute_block_hash(self.index, &self.prev_hash, &self.payload_hash, &attester_signature);
        AttestationBlock {
            index: self.index,
            prev_hash: self.prev_hash,
            payload: self.payload,
            payload_hash: self.payload_hash,
            attester_signature,
            block_hash,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttestationBlock {
    pub index: u64,
    pub prev_hash: Digest,
    pub payload: BlockPayload,
    pub payload_hash: Digest,
    pub attester_signature: Signature,
    pub block_hash: Digest,
}

impl AttestationBlock {
    pub fn recompute_hash(&self) -> Digest {
        compute_block_hash(self.index, &self.prev_hash, &self.payload_hash, &self.attester_signature)
    }

    pub fn signing_bytes(&self) -> [u8; 72] {
        signing_input(self.index, &self.prev_hash, &self.payload_hash)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_ids_are_filename_safe() {
        assert!("req-0123abcd".parse::<ChainId>().is_ok());
        assert!("../etc".parse::<ChainId>().is_err());
        assert!("a/b".parse::<ChainId>().is_err());
        assert!(".hidden".parse::<ChainId>().is_err());
        assert!("".parse::<ChainId>().is_err());
    }

    #[test]
    fn signing_input_layout() {
        let input = signing_input(1, &Digest([0xaa; 32]), &Digest([0xbb; 32]));
        assert_eq!(&input[..8], &[0, 0, 0, 0, 0, 0, 0, 1]);
        assert!(input[8..40].iter().all(|&b| b == 0xaa));
        assert!(input[40..].iter().all(|&b| b == 0xbb));
    }
}
