use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ledger::{AttestationBlock, ChainId, EventKind};
use crate::registry::Did;
use crate::time::Timestamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state")]
pub enum RequestState {
    Open,
    /// Phases `1..=completed_through` are done.
    InProgress { completed_through: u32 },
    Finalized,
    Revoked,
    Expired,
}

impl RequestState {
    pub fn completed(self) -> Option<u32> {
        match self {
            RequestState::Open => Some(0),
            RequestState::InProgress { completed_through } => Some(completed_through),
            _ => None,
        }
    }

    pub fn is_active(self) -> bool {
        matches!(self, RequestState::Open | RequestState::InProgress { .. })
    }

    /// Revoked and Expired requests no longer block resubmission.
    pub fn is_closed(self) -> bool {
        matches!(self, RequestState::Revoked | RequestState::Expired)
    }

    pub fn name(self) -> &'static str {
        match self {
            RequestState::Open => "Open",
            RequestState::InProgress { .. } => "InProgress",
            RequestState::Finalized => "Finalized",
            RequestState::Revoked => "Revoked",
            RequestState::Expired => "Expired",
        }
    }
}

// `flatten` rules out deny_unknown_fields here.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationRequest {
    pub request_id: ChainId,
    pub document_id: String,
    pub destination_country: String,
    pub holder_did: Did,
    pub template_id: String,
    #[serde(flatten)]
    pub state: RequestState,
    pub micro_ids_by_phase: BTreeMap<u32, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate_credential_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate_expires_at: Option<Timestamp>,
    pub opened_at: Timestamp,
}

impl AttestationRequest {
    pub fn next_phase(&self) -> Option<u32> {
        self.state.completed().map(|k| k + 1)
    }

    /// Rebuild a request from its chain. The aggregate's expiry is not on
    /// the chain and is left unset.
    pub fn fold(request_id: &ChainId, blocks: &[AttestationBlock]) -> Result<Self, String> {
        let genesis = &blocks.first().ok_or("empty chain")?.payload;
        if genesis.kind != EventKind::RequestOpened {
            return Err("chain does not start with RequestOpened".into());
        }
        let template_id = genesis
            .policy_refs
            .iter()
            .find_map(|r| r.strip_prefix("template:"))
            .ok_or("genesis names no template")?
            .to_owned();
        let mut request = AttestationRequest {
            request_id: request_id.clone(),
            document_id: genesis.document_id.clone(),
            destination_country: genesis.destination_country.clone().ok_or("genesis has no destination")?,
            holder_did: genesis.subject_did.clone(),
            template_id,
            state: RequestState::Open,
            micro_ids_by_phase: BTreeMap::new(),
            aggregate_credential_id: None,
            aggregate_expires_at: None,
            opened_at: genesis.timestamp,
        };
        for block in &blocks[1..] {
            let p = &block.payload;
            request.state = match (p.kind, request.state) {
                (EventKind::StepCompleted, s) if s.is_active() => {
                    let phase = p.phase_number.ok_or("step without phase")?;
                    let micro = p.micro_credential_id.clone().ok_or("step without credential")?;
                    request.micro_ids_by_phase.insert(phase, micro);
                    RequestState::InProgress { completed_through: phase }
                }
                (EventKind::AttestationFinalized, RequestState::InProgress { .. }) => {
                    request.aggregate_credential_id = p.aggregate_credential_id.clone();
                    RequestState::Finalized
                }
                (EventKind::AttestationRevoked, RequestState::Finalized) => RequestState::Revoked,
                (EventKind::AttestationExpired, RequestState::Finalized) => RequestState::Expired,
                (kind, state) => return Err(format!("{kind:?} cannot follow {}", state.name())),
            };
        }
        Ok(request)
    }
}
