use serde::{Deserialize, Serialize};

use crate::ledger::{AttestationBlock, ChainId, EventKind};
use crate::registry::Did;
use crate::time::Timestamp;

use super::{AttestationRequest, Workflow};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletedPhase {
    pub phase_number: u32,
    pub phase_name: String,
    pub completed_at: Timestamp,
    pub attester_did: Did,
    pub block_index: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendingPhase {
    pub phase_number: u32,
    pub phase_name: String,
}

/// The public view of one request. Built from ledger blocks alone, so it
/// carries identifiers, DIDs and times but never claim values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestTimeline {
    pub request_id: ChainId,
    pub document_id: String,
    pub destination_country: String,
    pub template_id: String,
    pub state: String,
    pub total_phases: u32,
    pub opened_at: Timestamp,
    pub completed_phases: Vec<CompletedPhase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_phase: Option<PendingPhase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregate_credential_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finalized_at: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_at: Option<Timestamp>,
}

impl Workflow {
    /// Every request for `document_id`, oldest first, optionally narrowed to
    /// one destination.
    pub fn attestation_status(&self, document_id: &str, destination: Option<&str>) -> Vec<RequestTimeline> {
        self.ledger
            .chain_for_document(document_id, destination)
            .into_iter()
            .filter_map(|(id, blocks)| self.timeline(&id, &blocks))
            .collect()
    }

    pub fn request_timeline(&self, request_id: &ChainId) -> Option<RequestTimeline> {
        self.timeline(request_id, &self.ledger.blocks(request_id)?)
    }

    fn timeline(&self, request_id: &ChainId, blocks: &[AttestationBlock]) -> Option<RequestTimeline> {
        let request = AttestationRequest::fold(request_id, blocks).ok()?;
        let template = self.templates.get(&request.template_id);
        let name = |n: u32| template.and_then(|t| t.phase(n)).map_or_else(|| format!("Phase {n}"), |p| p.phase_name.clone());
        let mut timeline = RequestTimeline {
            request_id: request.request_id.clone(),
            document_id: request.document_id.clone(),
            destination_country: request.destination_country.clone(),
            template_id: request.template_id.clone(),
            state: request.state.name().to_owned(),
            total_phases: template.map_or(0, |t| t.len()),
            opened_at: request.opened_at,
            completed_phases: Vec::new(),
            pending_phase: None,
            aggregate_credential_id: request.aggregate_credential_id.clone(),
            finalized_at: None,
            closed_at: None,
        };
        for block in blocks {
            let p = &block.payload;
            match p.kind {
                EventKind::StepCompleted => {
                    let n = p.phase_number.unwrap_or_default();
                    timeline.completed_phases.push(CompletedPhase {
                        phase_number: n,
                        phase_name: name(n),
                        completed_at: p.timestamp,
                        attester_did: p.attester_did.clone(),
                        block_index: block.index,
                    });
                }
                EventKind::AttestationFinalized => timeline.finalized_at = Some(p.timestamp),
                k if k.is_terminal() => timeline.closed_at = Some(p.timestamp),
                _ => {}
            }
        }
        timeline.pending_phase = request
            .next_phase()
            .filter(|&n| n <= timeline.total_phases)
            .map(|n| PendingPhase { phase_number: n, phase_name: name(n) });
        Some(timeline)
    }
}
