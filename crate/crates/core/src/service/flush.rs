use std::collections::{HashMap, VecDeque};

use parking_lot::Mutex;

use crate::api::{AnyDraft, AnySignatures, FlushProgress, FlushResult, OfflineEntry, OfflineOp, PendingDraft};
use crate::time::Timestamp;
use crate::workflow::StepInput;

use super::auth::{random_token, Caller};
use super::{ApiError, ServiceState};

struct Session {
    owner: Caller,
    expires_at: Timestamp,
    remaining: VecDeque<OfflineEntry>,
    pending: Option<(OfflineEntry, AnyDraft)>,
}

/// Flush sessions in progress. A session walks a client's offline batch in
/// sequence order and pauses whenever an entry needs the caller's signature.
pub(crate) struct FlushSessions {
    sessions: Mutex<HashMap<String, Session>>,
}

impl FlushSessions {
    pub(crate) fn new() -> Self {
        FlushSessions { sessions: Mutex::default() }
    }
}

fn failure(entry: &OfflineEntry, e: ApiError) -> FlushResult {
    FlushResult { seq: entry.seq, op: entry.operation.name().into(), ok: false, result: None, error: Some(e.detail()) }
}

fn success(entry: &OfflineEntry, value: serde_json::Value) -> FlushResult {
    FlushResult { seq: entry.seq, op: entry.operation.name().into(), ok: true, result: Some(value), error: None }
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("API types always encode")
}

impl ServiceState {
    pub(crate) fn flush_start(&self, caller: Caller, entries: Vec<OfflineEntry>) -> Result<FlushProgress, ApiError> {
        if entries.windows(2).any(|w| w[0].seq >= w[1].seq) {
            return Err(ApiError::malformed("offline entries must be in strictly increasing sequence order"));
        }
        let now = self.now();
        let session = Session {
            owner: caller,
            expires_at: now.plus_seconds(i64::from(self.config.draft_ttl_seconds)),
            remaining: entries.into(),
            pending: None,
        };
        Ok(self.flush_run(random_token(), session, Vec::new()))
    }

    pub(crate) fn flush_continue(
        &self,
        caller: &Caller,
        session_id: &str,
        signatures: AnySignatures,
    ) -> Result<FlushProgress, ApiError> {
        let now = self.now();
        let mut session = {
            let mut map = self.flushes.sessions.lock();
            map.retain(|_, s| s.expires_at > now);
            match map.remove(session_id) {
                Some(s) if s.owner.did == caller.did => s,
                Some(s) => {
                    map.insert(session_id.to_owned(), s);
                    return Err(ApiError::new("UnknownFlushSession", "flush session belongs to another caller"));
                }
                None => return Err(ApiError::new("UnknownFlushSession", "unknown or expired flush session")),
            }
        };
        let (entry, draft) = session.pending.take().ok_or_else(|| ApiError::malformed("nothing awaits signing"))?;
        let result = match self.commit_draft(&session.owner, draft, signatures) {
            Ok(value) => success(&entry, value),
            Err(e) => failure(&entry, e),
        };
        session.expires_at = now.plus_seconds(i64::from(self.config.draft_ttl_seconds));
        Ok(self.flush_run(session_id.to_owned(), session, vec![result]))
    }

    /// Apply entries until one needs a signature or the batch is done.
    fn flush_run(&self, session_id: String, mut session: Session, mut results: Vec<FlushResult>) -> FlushProgress {
        while let Some(entry) = session.remaining.pop_front() {
            match self.flush_entry(&session.owner, &entry) {
                Ok(Step::Done(value)) => results.push(success(&entry, value)),
                Ok(Step::NeedsSignature(draft)) => {
                    let pending = PendingDraft { seq: entry.seq, draft: draft.clone() };
                    session.pending = Some((entry, draft));
                    self.flushes.sessions.lock().insert(session_id.clone(), session);
                    return FlushProgress { session_id, results, pending: Some(pending) };
                }
                Err(e) => results.push(failure(&entry, e)),
            }
        }
        FlushProgress { session_id, results, pending: None }
    }

    fn flush_entry(&self, caller: &Caller, entry: &OfflineEntry) -> Result<Step, ApiError> {
        match &entry.operation {
            OfflineOp::SubmitRequest { document_id, destination_country, template_id } => {
                let request = self.submit(caller, document_id, destination_country, template_id.as_deref())?;
                Ok(Step::Done(to_value(&request)))
            }
            OfflineOp::RecordStep { request_id, phase_number, claims, policy_refs } => {
                let input = StepInput { phase_number: *phase_number, claims: claims.clone(), policy_refs: policy_refs.clone() };
                Ok(Step::NeedsSignature(AnyDraft::Step(self.prepare_step(caller, request_id, input)?)))
            }
            OfflineOp::Finalize { request_id } => {
                Ok(Step::NeedsSignature(AnyDraft::Finalize(self.prepare_finalize(caller, request_id)?)))
            }
            OfflineOp::Revoke { request_id, reason } => {
                Ok(Step::NeedsSignature(AnyDraft::Revoke(self.prepare_revoke(caller, request_id, reason)?)))
            }
        }
    }
}

enum Step {
    Done(serde_json::Value),
    NeedsSignature(AnyDraft),
}
