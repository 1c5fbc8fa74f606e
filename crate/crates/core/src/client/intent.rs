use crate::api::{check_draft_hashes, AnyDraft, OfflineOp};
use crate::ledger::{EventKind, UnsignedBlock};
use crate::registry::{Did, RevocationReason};

fn ensure(ok: bool, what: &str) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.to_owned())
    }
}

fn check_block(block: &UnsignedBlock, kind: EventKind, signer: &Did) -> Result<(), String> {
    check_draft_hashes(block)?;
    ensure(block.payload.kind == kind, "block has the wrong event kind")?;
    ensure(&block.payload.attester_did == signer, "block names another attester")
}

/// Check that a server-prepared draft says what `op` asked for and is to be
/// signed by `signer`. Nothing the server filled in on its own (ids,
/// timestamps, chain position) can change the meaning of the request.
pub fn check_intent(draft: &AnyDraft, signer: &Did, op: &OfflineOp) -> Result<(), String> {
    match (draft, op) {
        (AnyDraft::Step(d), OfflineOp::RecordStep { request_id, phase_number, claims, policy_refs }) => {
            let (c, p) = (&d.credential, &d.block.payload);
            ensure(&d.request_id == request_id, "draft is for another request")?;
            check_block(&d.block, EventKind::StepCompleted, signer)?;
            ensure(&c.issuer_did == signer, "credential names another issuer")?;
            ensure(c.subject.phase_number == *phase_number, "credential is for another phase")?;
            ensure(&c.subject.claims == claims, "credential claims differ from the request")?;
            ensure(p.phase_number == Some(*phase_number), "block is for another phase")?;
            ensure(&p.policy_refs == policy_refs, "block policy references differ from the request")?;
            ensure(p.micro_credential_id.as_deref() == Some(c.id.as_str()), "block references another credential")?;
            ensure(p.subject_did == c.subject.subject_did && p.document_id == c.subject.document_id, "block and credential disagree")
        }
        (AnyDraft::Finalize(d), OfflineOp::Finalize { request_id }) => {
            let (c, p) = (&d.credential, &d.block.payload);
            ensure(&d.request_id == request_id, "draft is for another request")?;
            check_block(&d.block, EventKind::AttestationFinalized, signer)?;
            ensure(&c.issuer_did == signer, "credential names another issuer")?;
            ensure(p.aggregate_credential_id.as_deref() == Some(c.id.as_str()), "block references another credential")?;
            ensure(p.subject_did == c.subject.holder_did, "block and credential disagree")
        }
        (AnyDraft::Revoke(d), OfflineOp::Revoke { request_id, reason }) => {
            let (r, p) = (&d.revocation, &d.block.payload);
            ensure(&d.request_id == request_id, "draft is for another request")?;
            check_block(&d.block, EventKind::AttestationRevoked, signer)?;
            ensure(&r.issuer_did == signer, "revocation names another issuer")?;
            ensure(r.reason == RevocationReason::Revoked, "revocation has the wrong reason")?;
            ensure(p.aggregate_credential_id.as_deref() == Some(r.credential_id.as_str()), "block revokes another credential")?;
            ensure(p.policy_refs == [format!("reason:{reason}")], "block records another reason")
        }
        _ => Err(format!("draft does not fit a {} operation", op.name())),
    }
}
