use std::collections::BTreeMap;

use rand::rngs::OsRng;
use serde::{Deserialize, Serialize};

use crate::agents::offer_credential;
use crate::credentials::{
    prepare_aggregate_credential, prepare_micro_credential, verify_aggregate_credential, verify_micro_credential,
    AggregateCredential, AggregateRequest, MicroCredential, MicroCredentialRequest, PresentedCredential,
    VerificationFailure,
};
use crate::crypto::{verify_signature, Identity, Signature};
use crate::ids::MICRO_CREDENTIAL_PREFIX;
use crate::ledger::{AttestationBlock, BlockPayload, ChainId, EventKind, UnsignedBlock};
use crate::privacy::{check_claims, is_country_code, is_identifier};
use crate::registry::{Did, RevocationDraft, RevocationEntry, RevocationReason, Role};
use crate::time::Timestamp;

use super::store::RequestCell;
use super::{AttestationRequest, RequestState, Workflow, WorkflowError};

const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepInput {
    pub phase_number: u32,
    #[serde(default)]
    pub claims: BTreeMap<String, String>,
    #[serde(default)]
    pub policy_refs: Vec<String>,
}

/// A phase credential and its block, both awaiting the attester's signature.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDraft {
    pub request_id: ChainId,
    pub credential: MicroCredential,
    pub block: UnsignedBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSignatures {
    pub credential: Signature,
    pub block: Signature,
}

impl StepDraft {
    pub fn sign(&self, attester: &Identity) -> StepSignatures {
        StepSignatures { credential: attester.sign(&self.credential.signing_bytes()), block: self.block.sign(attester) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub block: AttestationBlock,
    pub credential: MicroCredential,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offer_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalizeDraft {
    pub request_id: ChainId,
    pub credential: AggregateCredential,
    pub block: UnsignedBlock,
}

pub type FinalizeSignatures = StepSignatures;

impl FinalizeDraft {
    pub fn sign(&self, attester: &Identity) -> FinalizeSignatures {
        StepSignatures { credential: attester.sign(&self.credential.signing_bytes()), block: self.block.sign(attester) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalizeOutcome {
    pub block: AttestationBlock,
    pub credential: AggregateCredential,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offer_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevokeDraft {
    pub request_id: ChainId,
    pub revocation: RevocationDraft,
    pub block: UnsignedBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RevokeSignatures {
    pub revocation: Signature,
    pub block: Signature,
}

impl RevokeDraft {
    pub fn sign(&self, issuer: &Identity) -> RevokeSignatures {
        RevokeSignatures { revocation: issuer.sign(&self.revocation.signing_bytes()), block: self.block.sign(issuer) }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevokeOutcome {
    pub block: AttestationBlock,
    pub revocation: RevocationEntry,
}

fn reason_ref(reason: &str) -> String {
    format!("reason:{reason}")
}

impl Workflow {
    fn cell(&self, request_id: &ChainId) -> Result<RequestCell, WorkflowError> {
        self.requests.get(request_id).ok_or_else(|| WorkflowError::UnknownRequest(request_id.to_string()))
    }

    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn check_block_signature(&self, block: &UnsignedBlock, sig: &Signature) -> Result<(), WorkflowError> {
        let signer = self
            .registry
            .resolve_did(&block.payload.attester_did)
            .map_err(|_| WorkflowError::UnauthorizedAttester(block.payload.attester_did.to_string()))?;
        if !verify_signature(&signer.signing_key, &block.signing_bytes(), sig) {
            return Err(WorkflowError::BadSignature("block"));
        }
        Ok(())
    }

    fn check_fresh(&self, request_id: &ChainId, block: &UnsignedBlock) -> Result<(), WorkflowError> {
        match self.ledger.tip(request_id) {
            Some((len, hash)) if len == block.index && hash == block.prev_hash => Ok(()),
            _ => Err(WorkflowError::StaleDraft),
        }
    }

    fn save_state(&self, request: &AttestationRequest) {
        // The cache is rebuilt from the ledger on open, so a failed write
        // loses nothing.
        if let Err(e) = self.requests.persist(request) {
            tracing::warn!(request = %request.request_id, error = %e, "request state cache not written");
        }
    }

    /// Withdraw a credential whose block could not be appended.
    fn withdraw(&self, credential_id: &str) {
        let now = self.now();
        if let Err(e) = self.registry.revoke_credential(credential_id, RevocationReason::Revoked, &self.gateway, now) {
            tracing::error!(credential = credential_id, error = %e, "could not withdraw orphaned credential");
        }
    }

    /// Open a request. Rejects a second live request for the same document
    /// and destination; Revoked and Expired requests do not count.
    pub fn submit_request(
        &self,
        document_id: &str,
        destination_country: &str,
        holder: &Did,
        template_id: Option<&str>,
    ) -> Result<AttestationRequest, WorkflowError> {
        if !is_identifier(document_id) {
            return Err(WorkflowError::InvalidInput("document_id must be an opaque identifier".into()));
        }
        if !is_country_code(destination_country) {
            return Err(WorkflowError::InvalidInput("destination_country must be an ISO 3166 alpha-2 code".into()));
        }
        match self.registry.resolve_did(holder) {
            Ok(doc) if doc.role == Role::Holder => {}
            _ => return Err(WorkflowError::UnknownHolder(holder.to_string())),
        }
        let template_id = template_id.unwrap_or(super::DEFAULT_TEMPLATE_ID);
        let template =
            self.templates.get(template_id).ok_or_else(|| WorkflowError::UnknownTemplate(template_id.to_owned()))?;

        let _guard = self.submit_lock.lock();
        let duplicate = self.requests.all().into_iter().any(|cell| {
            let r = cell.lock();
            r.document_id == document_id && r.destination_country == destination_country && !r.state.is_closed()
        });
        if duplicate {
            return Err(WorkflowError::DuplicateRequest {
                document_id: document_id.to_owned(),
                destination_country: destination_country.to_owned(),
            });
        }
        let request_id: ChainId = self.ids.request_id().parse().map_err(WorkflowError::InvalidInput)?;
        let payload = BlockPayload::request_opened(
            document_id,
            destination_country,
            holder,
            self.gateway.did(),
            vec![template.policy_ref()],
        );
        let genesis = self.ledger.append_block(&request_id, payload, &self.gateway, &self.registry)?;
        let request = AttestationRequest {
            request_id,
            document_id: document_id.to_owned(),
            destination_country: destination_country.to_owned(),
            holder_did: holder.clone(),
            template_id: template_id.to_owned(),
            state: RequestState::Open,
            micro_ids_by_phase: BTreeMap::new(),
            aggregate_credential_id: None,
            aggregate_expires_at: None,
            opened_at: genesis.payload.timestamp,
        };
        self.requests.insert(request.clone())?;
        tracing::info!(request = %request.request_id, "request opened");
        Ok(request)
    }

    fn check_phase(&self, request: &AttestationRequest, phase: u32, attester: &Did) -> Result<String, WorkflowError> {
        let next = request.next_phase().ok_or(WorkflowError::RequestNotActive(request.state.name()))?;
        let template = self
            .templates
            .get(&request.template_id)
            .ok_or_else(|| WorkflowError::UnknownTemplate(request.template_id.clone()))?;
        if phase != next {
            return Err(WorkflowError::SkippedStep(format!("phase {phase} submitted but phase {next} is next")));
        }
        let spec = template.phase(phase).ok_or_else(|| {
            WorkflowError::SkippedStep(format!("template {} has only {} phases", template.template_id, template.len()))
        })?;
        let role = self.registry.resolve_did(attester).map(|d| d.role).ok();
        if !role.is_some_and(|r| spec.authorizes(attester, r)) {
            return Err(WorkflowError::UnauthorizedAttester(attester.to_string()));
        }
        Ok(spec.phase_name.clone())
    }

    /// Check a step and build its unsigned credential and block.
    pub fn prepare_step(&self, request_id: &ChainId, attester: &Did, input: StepInput) -> Result<StepDraft, WorkflowError> {
        let cell = self.cell(request_id)?;
        let request = cell.lock().clone();
        if !request.state.is_active() {
            return Err(WorkflowError::RequestNotActive(request.state.name()));
        }
        let phase_name = self.check_phase(&request, input.phase_number, attester)?;
        check_claims(&input.claims)?;
        let now = self.now();
        let credential = prepare_micro_credential(
            attester,
            &self.registry,
            MicroCredentialRequest {
                subject_did: request.holder_did.clone(),
                document_id: request.document_id.clone(),
                phase_number: input.phase_number,
                phase_name,
                claims: input.claims,
                expires_at: None,
            },
            self.ids.micro_credential_id(),
            now,
        )?;
        let payload = BlockPayload::step_completed(
            &request.document_id,
            &credential.id,
            input.phase_number,
            &request.holder_did,
            attester,
            input.policy_refs,
        );
        let block = self.ledger.prepare(request_id, payload)?;
        Ok(StepDraft { request_id: request_id.clone(), credential, block })
    }

    /// Verify both signatures, store the credential and append the block.
    /// If the append fails the credential is withdrawn in the registry.
    pub fn commit_step(&self, draft: StepDraft, sigs: StepSignatures) -> Result<StepOutcome, WorkflowError> {
        let StepDraft { request_id, credential, block } = draft;
        let cell = self.cell(&request_id)?;
        let mut request = cell.lock();
        if !request.state.is_active() {
            return Err(WorkflowError::RequestNotActive(request.state.name()));
        }
        let phase = credential.phase_number();
        if request.next_phase().is_some_and(|next| phase < next) {
            return Err(WorkflowError::StaleDraft);
        }
        let phase_name = self.check_phase(&request, phase, &credential.issuer_did)?;

        let p = &block.payload;
        let consistent = p.kind == EventKind::StepCompleted
            && p.attester_did == credential.issuer_did
            && p.subject_did == request.holder_did
            && p.document_id == request.document_id
            && p.phase_number == Some(phase)
            && p.micro_credential_id.as_deref() == Some(credential.id.as_str())
            && credential.subject.subject_did == request.holder_did
            && credential.subject.document_id == request.document_id
            && credential.subject.phase_name == phase_name
            && credential.id.starts_with(MICRO_CREDENTIAL_PREFIX)
            && self.credentials.micro(&credential.id).is_none();
        if !consistent {
            return Err(WorkflowError::InvalidInput("credential and block do not describe the same step".into()));
        }

        let now = self.now();
        let credential = credential.with_signature(sigs.credential);
        match verify_micro_credential(&credential, &self.registry, now) {
            Ok(()) => {}
            Err(VerificationFailure::BadSignature) => return Err(WorkflowError::BadSignature("credential")),
            Err(other) => return Err(WorkflowError::InvalidInput(format!("credential: {other}"))),
        }
        self.check_block_signature(&block, &sigs.block)?;
        self.check_fresh(&request_id, &block)?;

        self.credentials.put_micro(&credential)?;
        let block = match self.ledger.commit(&request_id, block, sigs.block, &self.registry) {
            Ok(b) => b,
            Err(e) => {
                self.withdraw(&credential.id);
                return Err(e.into());
            }
        };
        request.micro_ids_by_phase.insert(phase, credential.id.clone());
        request.state = RequestState::InProgress { completed_through: phase };
        self.save_state(&request);
        tracing::info!(request = %request_id, phase, "step recorded");
        Ok(StepOutcome { block, credential, offer_id: None })
    }

    /// Prepare, sign and commit a step, then offer the credential to the
    /// holder through the inbox.
    pub fn record_step(
        &self,
        request_id: &ChainId,
        attester: &Identity,
        input: StepInput,
    ) -> Result<StepOutcome, WorkflowError> {
        let draft = self.prepare_step(request_id, attester.did(), input)?;
        let sigs = draft.sign(attester);
        let mut outcome = self.commit_step(draft, sigs)?;
        outcome.offer_id = self.offer(attester, PresentedCredential::Micro(outcome.credential.clone()));
        Ok(outcome)
    }

    /// Seal an offer from `issuer` and post it to the holder's inbox. An
    /// offer that cannot be delivered is logged; the credential stands.
    fn offer(&self, issuer: &Identity, credential: PresentedCredential) -> Option<String> {
        let id = credential.id().to_owned();
        let delivered = offer_credential(issuer, credential, &self.registry, &self.credentials, self.now(), &mut OsRng)
            .and_then(|(offer_id, msg)| self.inbox.deliver(msg, &self.registry).map(|_| offer_id));
        match delivered {
            Ok(offer_id) => Some(offer_id),
            Err(e) => {
                tracing::warn!(credential = %id, error = %e, "offer not delivered");
                None
            }
        }
    }

    /// Offer delivery for commits that arrive without the issuer's agent
    /// key, as over HTTP: the gateway agent seals the offer.
    pub(crate) fn deliver_offer(&self, credential: PresentedCredential) -> Option<String> {
        self.offer(&self.gateway, credential)
    }

    fn final_attester(&self, request: &AttestationRequest) -> Option<Did> {
        let last = request.micro_ids_by_phase.last_key_value()?.1;
        self.credentials.micro(last).map(|m| m.issuer_did)
    }

    fn check_finalizable(&self, request: &AttestationRequest, attester: &Did) -> Result<(), WorkflowError> {
        let completed = match request.state {
            RequestState::Open => 0,
            RequestState::InProgress { completed_through } => completed_through,
            other => return Err(WorkflowError::AlreadyFinalized(other.name())),
        };
        let required = self
            .templates
            .get(&request.template_id)
            .ok_or_else(|| WorkflowError::UnknownTemplate(request.template_id.clone()))?
            .len();
        if completed < required {
            return Err(WorkflowError::PhasesIncomplete { completed, required });
        }
        if self.final_attester(request).as_ref() != Some(attester) {
            return Err(WorkflowError::UnauthorizedIssuer(format!("{attester} did not attest the final phase")));
        }
        Ok(())
    }

    /// Check that every phase is done and build the unsigned aggregate and
    /// its finalization block.
    pub fn prepare_finalize(&self, request_id: &ChainId, attester: &Did) -> Result<FinalizeDraft, WorkflowError> {
        let cell = self.cell(request_id)?;
        let request = cell.lock().clone();
        self.check_finalizable(&request, attester)?;
        let holder = self
            .registry
            .resolve_did(&request.holder_did)
            .map_err(|_| WorkflowError::UnknownHolder(request.holder_did.to_string()))?;
        let now = self.now();
        let validity = self.templates.get(&request.template_id).and_then(|t| t.validity_days);
        let credential = prepare_aggregate_credential(
            attester,
            &self.registry,
            &self.credentials,
            AggregateRequest {
                holder_did: request.holder_did.clone(),
                holder_public_key: holder.signing_key,
                micro_ids: request.micro_ids_by_phase.values().cloned().collect(),
                expires_at: validity.map(|d| now.plus_seconds(i64::from(d) * SECONDS_PER_DAY)),
            },
            self.ids.aggregate_credential_id(),
            now,
        )?;
        let payload = BlockPayload::closing(
            EventKind::AttestationFinalized,
            &request.document_id,
            &credential.id,
            &request.holder_did,
            attester,
            Vec::new(),
        );
        let block = self.ledger.prepare(request_id, payload)?;
        Ok(FinalizeDraft { request_id: request_id.clone(), credential, block })
    }

    pub fn commit_finalize(
        &self,
        draft: FinalizeDraft,
        sigs: FinalizeSignatures,
    ) -> Result<FinalizeOutcome, WorkflowError> {
        let FinalizeDraft { request_id, credential, block } = draft;
        let cell = self.cell(&request_id)?;
        let mut request = cell.lock();
        self.check_finalizable(&request, &credential.issuer_did)?;

        let p = &block.payload;
        let micro_ids: Vec<String> = request.micro_ids_by_phase.values().cloned().collect();
        let consistent = p.kind == EventKind::AttestationFinalized
            && p.attester_did == credential.issuer_did
            && p.subject_did == request.holder_did
            && p.document_id == request.document_id
            && p.aggregate_credential_id.as_deref() == Some(credential.id.as_str())
            && credential.holder_did() == &request.holder_did
            && credential.micro_credential_ids() == micro_ids.as_slice()
            && self.credentials.aggregate(&credential.id).is_none();
        if !consistent {
            return Err(WorkflowError::InvalidInput("credential and block do not describe this request".into()));
        }

        let now = self.now();
        let credential = credential.with_signature(sigs.credential);
        match verify_aggregate_credential(&credential, &self.credentials, &self.registry, now) {
            Ok(()) => {}
            Err(VerificationFailure::BadSignature) => return Err(WorkflowError::BadSignature("credential")),
            Err(other) => return Err(WorkflowError::InvalidInput(format!("credential: {other}"))),
        }
        self.check_block_signature(&block, &sigs.block)?;
        self.check_fresh(&request_id, &block)?;

        self.credentials.put_aggregate(&credential)?;
        let block = match self.ledger.commit(&request_id, block, sigs.block, &self.registry) {
            Ok(b) => b,
            Err(e) => {
                self.withdraw(&credential.id);
                return Err(e.into());
            }
        };
        request.state = RequestState::Finalized;
        request.aggregate_credential_id = Some(credential.id.clone());
        request.aggregate_expires_at = credential.expires_at;
        self.save_state(&request);
        tracing::info!(request = %request_id, "attestation finalized");
        Ok(FinalizeOutcome { block, credential, offer_id: None })
    }

    pub fn finalize_attestation(&self, request_id: &ChainId, attester: &Identity) -> Result<FinalizeOutcome, WorkflowError> {
        let draft = self.prepare_finalize(request_id, attester.did())?;
        let sigs = draft.sign(attester);
        let mut outcome = self.commit_finalize(draft, sigs)?;
        outcome.offer_id = self.offer(attester, PresentedCredential::Aggregate(outcome.credential.clone()));
        Ok(outcome)
    }

    /// The final-phase attester, a configured revocation authority and the
    /// gateway may revoke a finalized attestation.
    pub fn may_revoke(&self, request: &AttestationRequest, issuer: &Did) -> bool {
        issuer == self.gateway.did()
            || self.authorities.contains(issuer)
            || self.final_attester(request).as_ref() == Some(issuer)
    }

    fn check_revocable(&self, request: &AttestationRequest, issuer: &Did) -> Result<String, WorkflowError> {
        if request.state != RequestState::Finalized {
            return Err(WorkflowError::NotFinalized(request.state.name()));
        }
        if !self.may_revoke(request, issuer) {
            return Err(WorkflowError::UnauthorizedIssuer(format!("{issuer} may not revoke this attestation")));
        }
        request
            .aggregate_credential_id
            .clone()
            .ok_or_else(|| WorkflowError::Storage("finalized request has no aggregate".into()))
    }

    /// `reason` is a short identifier such as `document_withdrawn`; it is
    /// recorded on the chain.
    pub fn prepare_revoke(&self, request_id: &ChainId, issuer: &Did, reason: &str) -> Result<RevokeDraft, WorkflowError> {
        let cell = self.cell(request_id)?;
        let request = cell.lock().clone();
        let aggregate_id = self.check_revocable(&request, issuer)?;
        if !is_identifier(reason) || reason.len() > 64 {
            return Err(WorkflowError::InvalidInput("reason must be a short identifier".into()));
        }
        let revocation =
            self.registry.prepare_revocation(&aggregate_id, RevocationReason::Revoked, issuer, self.now())?;
        let payload = BlockPayload::closing(
            EventKind::AttestationRevoked,
            &request.document_id,
            &aggregate_id,
            &request.holder_did,
            issuer,
            vec![reason_ref(reason)],
        );
        let block = self.ledger.prepare(request_id, payload)?;
        Ok(RevokeDraft { request_id: request_id.clone(), revocation, block })
    }

    /// The registry entry is written before the block: if the append then
    /// fails the credential is still unusable, which is the safe side.
    pub fn commit_revoke(&self, draft: RevokeDraft, sigs: RevokeSignatures) -> Result<RevokeOutcome, WorkflowError> {
        let RevokeDraft { request_id, revocation, block } = draft;
        let cell = self.cell(&request_id)?;
        let mut request = cell.lock();
        let aggregate_id = self.check_revocable(&request, &revocation.issuer_did)?;
        let p = &block.payload;
        let consistent = p.kind == EventKind::AttestationRevoked
            && p.attester_did == revocation.issuer_did
            && p.document_id == request.document_id
            && p.subject_did == request.holder_did
            && p.aggregate_credential_id.as_deref() == Some(aggregate_id.as_str())
            && revocation.credential_id == aggregate_id
            && revocation.reason == RevocationReason::Revoked
            && p.policy_refs.iter().any(|r| r.starts_with("reason:"));
        if !consistent {
            return Err(WorkflowError::InvalidInput("revocation and block do not describe this request".into()));
        }
        let issuer = self
            .registry
            .resolve_did(&revocation.issuer_did)
            .map_err(|_| WorkflowError::UnauthorizedIssuer(revocation.issuer_did.to_string()))?;
        if !verify_signature(&issuer.signing_key, &revocation.signing_bytes(), &sigs.revocation) {
            return Err(WorkflowError::BadSignature("revocation"));
        }
        self.check_block_signature(&block, &sigs.block)?;
        self.check_fresh(&request_id, &block)?;

        let entry = revocation.with_signature(sigs.revocation);
        self.registry.record_revocation(entry.clone())?;
        let block = self.ledger.commit(&request_id, block, sigs.block, &self.registry)?;
        request.state = RequestState::Revoked;
        self.save_state(&request);
        tracing::info!(request = %request_id, "attestation revoked");
        Ok(RevokeOutcome { block, revocation: entry })
    }

    pub fn revoke_attestation(
        &self,
        request_id: &ChainId,
        issuer: &Identity,
        reason: &str,
    ) -> Result<RevokeOutcome, WorkflowError> {
        let draft = self.prepare_revoke(request_id, issuer.did(), reason)?;
        let sigs = draft.sign(issuer);
        self.commit_revoke(draft, sigs)
    }

    /// Close every finalized request whose aggregate has passed its expiry:
    /// an Expired registry entry and an AttestationExpired block, both
    /// signed by the gateway. Returns the requests that were closed.
    pub fn expire_sweep(&self) -> Result<Vec<ChainId>, WorkflowError> {
        let now = self.now();
        let mut closed = Vec::new();
        for cell in self.requests.all() {
            let mut request = cell.lock();
            if request.state != RequestState::Finalized || !request.aggregate_expires_at.is_some_and(|e| e < now) {
                continue;
            }
            let aggregate_id = request.aggregate_credential_id.clone().unwrap_or_default();
            match self.registry.revocation_entry(&aggregate_id) {
                Some(e) if e.reason == RevocationReason::Revoked => continue,
                Some(_) => {}
                None => {
                    self.registry.revoke_credential(&aggregate_id, RevocationReason::Expired, &self.gateway, now)?;
                }
            }
            let payload = BlockPayload::closing(
                EventKind::AttestationExpired,
                &request.document_id,
                &aggregate_id,
                &request.holder_did,
                self.gateway.did(),
                vec![reason_ref("expired")],
            );
            self.ledger.append_block(&request.request_id, payload, &self.gateway, &self.registry)?;
            request.state = RequestState::Expired;
            self.save_state(&request);
            tracing::info!(request = %request.request_id, "attestation expired");
            closed.push(request.request_id.clone());
        }
        closed.sort();
        Ok(closed)
    }
}
