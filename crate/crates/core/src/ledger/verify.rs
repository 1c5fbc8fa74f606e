use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::crypto::{verify_signature, Digest};
use crate::registry::{Did, Registry};

use super::{AttestationBlock, BlockPayload, EventKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    HashMismatch,
    LinkBroken,
    BadSignature,
    SchemaViolation,
    OrderViolation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainVerificationReport {
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_invalid_index: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<FailureReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ChainVerificationReport {
    pub fn ok() -> Self {
        ChainVerificationReport { valid: true, first_invalid_index: None, failure_reason: None, detail: None }
    }

    pub fn invalid(index: u64, reason: FailureReason, detail: impl Into<String>) -> Self {
        ChainVerificationReport {
            valid: false,
            first_invalid_index: Some(index),
            failure_reason: Some(reason),
            detail: Some(detail.into()),
        }
    }
}

/// Event-order rules for one chain, fed one payload at a time.
#[derive(Clone, Debug, Default)]
pub(crate) struct EventOrder {
    genesis: Option<(String, Did)>,
    last_phase: u32,
    finalized: Option<String>,
    closed: bool,
}

impl EventOrder {
    pub(crate) fn replay<'a>(payloads: impl IntoIterator<Item = &'a BlockPayload>) -> Result<Self, (FailureReason, String)> {
        let mut order = EventOrder::default();
        for p in payloads {
            order.accept(p)?;
        }
        Ok(order)
    }

    pub(crate) fn accept(&mut self, p: &BlockPayload) -> Result<(), (FailureReason, String)> {
        use FailureReason::{OrderViolation, SchemaViolation};
        let Some((doc, subject)) = &self.genesis else {
            if p.kind != EventKind::RequestOpened {
                return Err((OrderViolation, "chain must start with RequestOpened".into()));
            }
            self.genesis = Some((p.document_id.clone(), p.subject_did.clone()));
            return Ok(());
        };
        if &p.document_id != doc || &p.subject_did != subject {
            return Err((SchemaViolation, "document or subject differs from the chain's genesis".into()));
        }
        if self.closed {
            return Err((OrderViolation, "no events may follow revocation or expiry".into()));
        }
        match p.kind {
            EventKind::RequestOpened => Err((OrderViolation, "RequestOpened may only open a chain".into())),
            EventKind::StepCompleted => {
                if self.finalized.is_some() {
                    return Err((OrderViolation, "step recorded after finalization".into()));
                }
                let phase = p.phase_number.unwrap_or(0);
                if phase != self.last_phase + 1 {
                    return Err((
                        OrderViolation,
                        format!("phase {phase} follows phase {}", self.last_phase),
                    ));
                }
                self.last_phase = phase;
                Ok(())
            }
            EventKind::AttestationFinalized => {
                if self.finalized.is_some() {
                    return Err((OrderViolation, "chain finalized twice".into()));
                }
                if self.last_phase == 0 {
                    return Err((OrderViolation, "finalized without any completed phase".into()));
                }
                self.finalized = p.aggregate_credential_id.clone();
                Ok(())
            }
            EventKind::AttestationRevoked | EventKind::AttestationExpired => {
                let Some(agg) = &self.finalized else {
                    return Err((OrderViolation, format!("{:?} before finalization", p.kind)));
                };
                if p.aggregate_credential_id.as_ref() != Some(agg) {
                    return Err((SchemaViolation, "closing event names a different credential".into()));
                }
                self.closed = true;
                Ok(())
            }
        }
    }
}

/// Check hashes, links, schema, signatures and event order for an ordered
/// list of blocks. Never fails; problems are described in the report.
pub fn verify_chain(blocks: &[AttestationBlock], registry: &Registry) -> ChainVerificationReport {
    let mut expected_prev = Digest::ZERO;
    let mut order = EventOrder::default();
    for (position, block) in blocks.iter().enumerate() {
        let i = position as u64;
        let payload_hash = match block.payload.digest() {
            Ok(h) => h,
            Err(e) => return ChainVerificationReport::invalid(i, FailureReason::SchemaViolation, e.to_string()),
        };
        if payload_hash != block.payload_hash {
            return ChainVerificationReport::invalid(i, FailureReason::HashMismatch, "payload hash does not match payload");
        }
        if block.recompute_hash() != block.block_hash {
            return ChainVerificationReport::invalid(i, FailureReason::HashMismatch, "block hash does not match block fields");
        }
        if block.index != i {
            return ChainVerificationReport::invalid(
                i,
                FailureReason::OrderViolation,
                format!("block at position {i} claims index {}", block.index),
            );
        }
        if block.prev_hash != expected_prev {
            return ChainVerificationReport::invalid(i, FailureReason::LinkBroken, "prev_hash does not match the preceding block");
        }
        if let Err(e) = block.payload.validate() {
            return ChainVerificationReport::invalid(i, FailureReason::SchemaViolation, e.to_string());
        }
        let signed = registry
            .resolve_did(&block.payload.attester_did)
            .map(|doc| verify_signature(&doc.signing_key, &block.signing_bytes(), &block.attester_signature));
        match signed {
            Ok(true) => {}
            Ok(false) => {
                return ChainVerificationReport::invalid(i, FailureReason::BadSignature, "attester signature does not verify")
            }
            Err(_) => {
                return ChainVerificationReport::invalid(i, FailureReason::BadSignature, "attester DID does not resolve")
            }
        }
        if let Err((reason, detail)) = order.accept(&block.payload) {
            return ChainVerificationReport::invalid(i, reason, detail);
        }
        expected_prev = block.block_hash;
    }
    ChainVerificationReport::ok()
}

/// Verify a chain in its stored form: one canonical JSON block per line.
/// A line that does not parse, or is not byte-for-byte canonical, is a
/// schema violation at that index.
pub fn verify_chain_jsonl(bytes: &[u8], registry: &Registry) -> ChainVerificationReport {
    let mut blocks = Vec::new();
    let mut parse_failure = None;
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    if !body.is_empty() {
        for (i, line) in body.split(|&b| b == b'\n').enumerate() {
            match canonical::from_canonical_slice::<AttestationBlock>(line) {
                Ok(block) => blocks.push(block),
                Err(e) => {
                    parse_failure = Some((i as u64, e.to_string()));
                    break;
                }
            }
        }
    }
    let report = verify_chain(&blocks, registry);
    match (report.valid, parse_failure) {
        (true, Some((i, detail))) => {
            ChainVerificationReport::invalid(i, FailureReason::SchemaViolation, format!("unreadable block: {detail}"))
        }
        _ => report,
    }
}
