use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{self, CanonicalError};
use crate::crypto::{sha256, Digest};
use crate::privacy::{is_country_code, is_identifier};
use crate::registry::Did;
use crate::time::Timestamp;

use super::LedgerError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    RequestOpened,
    StepCompleted,
    AttestationFinalized,
    AttestationRevoked,
    AttestationExpired,
}

impl EventKind {
    /// The exact key set a payload of this kind carries.
    pub fn allowed_fields(self) -> &'static [&'static str] {
        const COMMON: [&str; 6] =
            ["kind", "document_id", "subject_did", "attester_did", "timestamp", "policy_refs"];
        match self {
            EventKind::RequestOpened => &[
                COMMON[0], COMMON[1], COMMON[2], COMMON[3], COMMON[4], COMMON[5],
                "destination_country",
            ],
            EventKind::StepCompleted => &[
                COMMON[0], COMMON[1], COMMON[2], COMMON[3], COMMON[4], COMMON[5],
                "micro_credential_id", "phase_number",
            ],
            EventKind::AttestationFinalized
            | EventKind::AttestationRevoked
            | EventKind::AttestationExpired => &[
                COMMON[0], COMMON[1], COMMON[2], COMMON[3], COMMON[4], COMMON[5],
                "aggregate_credential_id",
            ],
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, EventKind::AttestationRevoked | EventKind::AttestationExpired)
    }
}

/// The non-confidential record of one attestation event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockPayload {
    pub kind: EventKind,
    pub document_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination_country: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub micro_credential_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate_credential_id: Option<String>,
    pub subject_did: Did,
    pub attester_did: Did,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_number: Option<u32>,
    pub timestamp: Timestamp,
    pub policy_refs: Vec<String>,
}

impl BlockPayload {
    fn base(kind: EventKind, document_id: &str, subject: &Did, attester: &Did, policy_refs: Vec<String>) -> Self {
        BlockPayload {
            kind,
            document_id: document_id.to_owned(),
            destination_country: None,
            micro_credential_id: None,
            aggregate_credential_id: None,
            subject_did: subject.clone(),
            attester_did: attester.clone(),
            phase_number: None,
            // Overwritten by the ledger clock at append time.
            timestamp: Timestamp::from_unix(0),
            policy_refs,
        }
    }

    pub fn request_opened(
        document_id: &str,
        destination_country: &str,
        subject: &Did,
        attester: &Did,
        policy_refs: Vec<String>,
    ) -> Self {
        BlockPayload {
            destination_country: Some(destination_country.to_owned()),
            ..Self::base(EventKind::RequestOpened, document_id, subject, attester, policy_refs)
        }
    }

    pub fn step_completed(
        document_id: &str,
        micro_credential_id: &str,
        phase_number: u32,
        subject: &Did,
        attester: &Did,
        policy_refs: Vec<String>,
    ) -> Self {
        BlockPayload {
            micro_credential_id: Some(micro_credential_id.to_owned()),
            phase_number: Some(phase_number),
            ..Self::base(EventKind::StepCompleted, document_id, subject, attester, policy_refs)
        }
    }

    pub fn closing(
        kind: EventKind,
        document_id: &str,
        aggregate_credential_id: &str,
        subject: &Did,
        attester: &Did,
        policy_refs: Vec<String>,
    ) -> Self {
        debug_assert!(matches!(
            kind,
            EventKind::AttestationFinalized | EventKind::AttestationRevoked | EventKind::AttestationExpired
        ));
        BlockPayload {
            aggregate_credential_id: Some(aggregate_credential_id.to_owned()),
            ..Self::base(kind, document_id, subject, attester, policy_refs)
        }
    }

    /// Field presence must match `kind` exactly and every value must be an
    /// identifier-shaped token.
    pub fn validate(&self) -> Result<(), LedgerError> {
        let fail = |msg: String| Err(LedgerError::SchemaViolation(msg));
        let present = |name: &str, is_some: bool| -> Result<(), LedgerError> {
            let expected = self.kind.allowed_fields().contains(&name);
            match (expected, is_some) {
                (true, false) => Err(LedgerError::SchemaViolation(format!(
                    "{:?} payload requires {name}",
                    self.kind
                ))),
                (false, true) => Err(LedgerError::SchemaViolation(format!(
                    "{:?} payload may not carry {name}",
                    self.kind
                ))),
                _ => Ok(()),
            }
        };
        present("destination_country", self.destination_country.is_some())?;
        present("micro_credential_id", self.micro_credential_id.is_some())?;
        present("aggregate_credential_id", self.aggregate_credential_id.is_some())?;
        present("phase_number", self.phase_number.is_some())?;

        if !is_identifier(&self.document_id) {
            return fail("document_id is not an opaque identifier".to_owned());
        }
        if let Some(c) = &self.destination_country {
            if !is_country_code(c) {
                return fail(format!("destination_country {c:?} is not an ISO-3166 alpha-2 code"));
            }
        }
        for id in [&self.micro_credential_id, &self.aggregate_credential_id].into_iter().flatten() {
            if !is_identifier(id) {
                return fail("credential id is not an opaque identifier".to_owned());
            }
        }
        if self.phase_number == Some(0) {
            return fail("phase_number must be at least 1".to_owned());
        }
        if let Some(bad) = self.policy_refs.iter().find(|r| !is_identifier(r)) {
            return fail(format!("policy reference {bad:?} is not an opaque identifier"));
        }
        Ok(())
    }

    /// Parse a payload from a JSON object, rejecting any key outside the
    /// whitelist for its kind.
    pub fn from_json_value(value: &Value) -> Result<Self, LedgerError> {
        let obj = value
            .as_object()
            .ok_or_else(|| LedgerError::SchemaViolation("payload must be a JSON object".to_owned()))?;
        let kind: EventKind = obj
            .get("kind")
            .cloned()
            .ok_or_else(|| LedgerError::SchemaViolation("payload has no kind".to_owned()))
            .and_then(|k| {
                serde_json::from_value(k)
                    .map_err(|e| LedgerError::SchemaViolation(format!("bad kind: {e}")))
            })?;
        let allowed: BTreeSet<&str> = kind.allowed_fields().iter().copied().collect();
        let present: BTreeSet<&str> = obj.keys().map(String::as_str).collect();
        if let Some(extra) = present.difference(&allowed).next() {
            return Err(LedgerError::SchemaViolation(format!("field {extra:?} is not permitted for {kind:?}")));
        }
        if let Some(missing) = allowed.difference(&present).next() {
            return Err(LedgerError::SchemaViolation(format!("field {missing:?} is required for {kind:?}")));
        }
        let payload: BlockPayload = serde_json::from_value(value.clone())
            .map_err(|e| LedgerError::SchemaViolation(e.to_string()))?;
        payload.validate()?;
        Ok(payload)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self, LedgerError> {
        let value: Value = canonical::from_slice(bytes).map_err(|e| match e {
            CanonicalError::Encoding(m) => LedgerError::Encoding(m),
            other => LedgerError::Encoding(other.to_string()),
        })?;
        Self::from_json_value(&value)
    }

    /// Hash input. Only schema-valid payloads are encodable.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, LedgerError> {
        self.validate()?;
        self.raw_bytes()
    }

    /// Canonical encoding without schema validation, for hashing stored
    /// blocks of unknown provenance.
    pub(crate) fn raw_bytes(&self) -> Result<Vec<u8>, LedgerError> {
        canonical::to_vec(self).map_err(|e| LedgerError::Encoding(e.to_string()))
    }

    pub(crate) fn digest(&self) -> Result<Digest, LedgerError> {
        Ok(sha256(&self.raw_bytes()?))
    }
}

/// Encode a payload deterministically.
pub fn canonical_encode(payload: &BlockPayload) -> Result<Vec<u8>, LedgerError> {
    payload.canonical_bytes()
}
