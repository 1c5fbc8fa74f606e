//! Content rules for anything that is stored on a chain or placed in
//! credential claims: identifiers, country codes and a closed claim vocabulary.
//! Free text (names, addresses, document content) cannot satisfy these rules.

use std::collections::BTreeMap;

pub const MAX_IDENTIFIER_LEN: usize = 128;

pub const CLAIM_KEYS: [&str; 5] =
    ["step_outcome", "policy_ref", "office_code", "destination_country", "document_kind"];

/// An opaque token: ASCII letters, digits and `. _ : -`, at most 128 bytes.
pub fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= MAX_IDENTIFIER_LEN
        && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b':' | b'-'))
}

/// ISO-3166 alpha-2 shape: two uppercase ASCII letters.
pub fn is_country_code(s: &str) -> bool {
    s.len() == 2 && s.bytes().all(|b| b.is_ascii_uppercase())
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClaimViolation {
    #[error("claim key {0:?} is not in the permitted vocabulary")]
    UnknownKey(String),
    #[error("claim {key:?} has a value that is not an opaque token")]
    BadValue { key: String },
}

pub fn check_claims(claims: &BTreeMap<String, String>) -> Result<(), ClaimViolation> {
    for (key, value) in claims {
        if !CLAIM_KEYS.contains(&key.as_str()) {
            return Err(ClaimViolation::UnknownKey(key.clone()));
        }
        let ok = if key == "destination_country" { is_country_code(value) } else { is_identifier(value) };
        if !ok {
            return Err(ClaimViolation::BadValue { key: key.clone() });
        }
    }
    Ok(())
}
