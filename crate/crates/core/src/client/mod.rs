//! Blocking HTTP client for the gateway. Every draft the server hands back
//! is checked against what the caller asked for before it is signed.

mod intent;
mod queue;

use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::agents::{AgentError, InboxItem, Received, SecureMessage, Wallet};
use crate::api::{
    register_signing_bytes, AnyDraft, AnySignatures, ApiSession, ChainsResponse, ChallengeRequest, ChallengeResponse,
    Commit, ErrorBody, FinalizeBody, FlushCall, FlushContinue, FlushProgress, FlushResult, FlushStart, InboxPage,
    InboxPosted, OfflineEntry, OfflineOp, Prepared, PresentationVerdict, RegisterDidRequest, RegistryRevocationBody,
    RevocationSignature, RevokeBody, StatusResponse, SubmitRequestBody, SweepResult, VerifyPresentationBody,
    VerifyRequest,
};
use crate::credentials::Presentation;
use crate::crypto::{Identity, Nonce128};
use crate::ledger::ChainId;
use crate::registry::{create_did, Did, DidDocument, Registry, RevocationDraft, RevocationEntry, Role};
use crate::time::Timestamp;
use crate::workflow::{
    AttestationRequest, FinalizeDraft, FinalizeOutcome, RevokeDraft, RevokeOutcome, StepDraft, StepInput, StepOutcome,
};

pub use intent::check_intent;
pub use queue::{OfflineQueue, QueueError};

/// Prepare/commit attempts before a stale draft is reported.
const DRAFT_ATTEMPTS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{code}: {message}")]
    Api { status: u16, code: String, message: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("server draft does not match the request: {0}")]
    DraftMismatch(String),
    #[error("not logged in")]
    NoSession,
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Queue(#[from] QueueError),
}

impl ClientError {
    pub fn code(&self) -> &str {
        match self {
            ClientError::Api { code, .. } => code,
            ClientError::Transport(_) => "Unreachable",
            ClientError::Decode(_) => "MalformedResponse",
            ClientError::DraftMismatch(_) => "DraftMismatch",
            ClientError::NoSession => "Unauthenticated",
            ClientError::Agent(e) => e.code(),
            ClientError::Queue(_) => "StorageError",
        }
    }

    /// True when the service could not be reached at all, which is when
    /// callers fall back to the offline queue.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, ClientError::Transport(_))
    }
}

pub struct ApiClient {
    base: String,
    http: Client,
    token: Option<String>,
}

impl ApiClient {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let http = Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(ApiClient { base: base_url.trim_end_matches('/').to_owned(), http, token: None })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn set_token(&mut self, token: Option<String>) {
        self.token = token;
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T, ClientError> {
        let req = match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        };
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| ClientError::Transport(e.to_string()))?;
        if status == StatusCode::OK {
            return serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()));
        }
        match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(b) => Err(ClientError::Api { status: status.as_u16(), code: b.error.code, message: b.error.message }),
            Err(_) => Err(ClientError::Decode(format!("HTTP {status}: {}", String::from_utf8_lossy(&bytes)))),
        }
    }

    fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T, ClientError> {
        self.send(self.http.get(format!("{}{path}", self.base)).query(query))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        self.send(self.http.post(format!("{}{path}", self.base)).json(body))
    }

    // Identity and sessions

    /// Publish `identity` with proof of key possession.
    pub fn register(&self, identity: &Identity, role: Role, service_endpoint: Option<String>, now: Timestamp) -> Result<DidDocument, ClientError> {
        let document = create_did(identity.signing_public(), identity.agreement_public(), role, service_endpoint, now)
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        let signature = identity.sign(&register_signing_bytes(&document));
        self.post("/registry/dids", &RegisterDidRequest { document, signature })
    }

    pub fn resolve(&self, did: &Did) -> Result<DidDocument, ClientError> {
        self.get(&format!("/registry/dids/{did}"), &[])
    }

    /// Challenge login; the session token is kept for later calls.
    pub fn login(&mut self, identity: &Identity) -> Result<ApiSession, ClientError> {
        let did = identity.did().clone();
        let ch: ChallengeResponse = self.post("/auth/challenge", &ChallengeRequest { did: did.clone() })?;
        let signature = identity.sign(&crate::api::auth_signing_bytes(&did, &ch.challenge));
        let session: ApiSession = self.post("/auth/verify", &VerifyRequest { did, challenge: ch.challenge, signature })?;
        self.token = Some(session.token.clone());
        Ok(session)
    }

    /// A local registry holding the resolved documents, for wallet and
    /// message operations that need the counterparties' keys.
    pub fn registry_view<'a>(&self, dids: impl IntoIterator<Item = &'a Did>) -> Result<Registry, ClientError> {
        let view = Registry::in_memory();
        for did in dids {
            if view.resolve_did(did).is_ok() {
                continue;
            }
            let doc = self.resolve(did)?;
            view.register_did(doc).map_err(|e| ClientError::Decode(e.to_string()))?;
        }
        Ok(view)
    }

    // Workflow

    pub fn submit_request(&self, document_id: &str, destination_country: &str, template_id: Option<&str>) -> Result<AttestationRequest, ClientError> {
        let body = SubmitRequestBody {
            document_id: document_id.into(),
            destination_country: destination_country.into(),
            template_id: template_id.map(Into::into),
        };
        self.post("/requests", &body)
    }

    /// Prepare, check, sign and commit, preparing again if another commit
    /// got to the chain first.
    fn signed<D, P, R>(
        &self,
        path: &str,
        prepare: &P,
        signer: &Identity,
        op: &OfflineOp,
        wrap: fn(D) -> AnyDraft,
    ) -> Result<R, ClientError>
    where
        D: DeserializeOwned + Clone,
        P: Serialize,
        R: DeserializeOwned,
    {
        let mut attempt = 0;
        loop {
            attempt += 1;
            let prepared: Prepared<D> = self.post(path, prepare)?;
            let draft = wrap(prepared.draft);
            check_intent(&draft, signer.did(), op).map_err(ClientError::DraftMismatch)?;
            let commit = match sign_any(&draft, signer) {
                AnySignatures::Credential(s) => serde_json::to_value(Commit { draft_id: prepared.draft_id, signatures: s }),
                AnySignatures::Revocation(s) => serde_json::to_value(Commit { draft_id: prepared.draft_id, signatures: s }),
            }
            .expect("commit bodies always encode");
            match self.post(path, &commit) {
                Err(ClientError::Api { code, .. }) if code == "StaleDraft" && attempt < DRAFT_ATTEMPTS => continue,
                other => return other,
            }
        }
    }

    pub fn record_step(&self, request_id: &ChainId, attester: &Identity, input: StepInput) -> Result<StepOutcome, ClientError> {
        let op = OfflineOp::RecordStep {
            request_id: request_id.clone(),
            phase_number: input.phase_number,
            claims: input.claims.clone(),
            policy_refs: input.policy_refs.clone(),
        };
        self.signed::<StepDraft, _, _>(&format!("/requests/{request_id}/steps"), &input, attester, &op, AnyDraft::Step)
    }

    pub fn finalize(&self, request_id: &ChainId, attester: &Identity) -> Result<FinalizeOutcome, ClientError> {
        let op = OfflineOp::Finalize { request_id: request_id.clone() };
        let path = format!("/requests/{request_id}/finalize");
        self.signed::<FinalizeDraft, _, _>(&path, &FinalizeBody {}, attester, &op, AnyDraft::Finalize)
    }

    pub fn revoke(&self, request_id: &ChainId, issuer: &Identity, reason: &str) -> Result<RevokeOutcome, ClientError> {
        let op = OfflineOp::Revoke { request_id: request_id.clone(), reason: reason.into() };
        let body = RevokeBody { reason: reason.into() };
        self.signed::<RevokeDraft, _, _>(&format!("/requests/{request_id}/revoke"), &body, issuer, &op, AnyDraft::Revoke)
    }

    /// Revoke a single micro-credential in the registry.
    pub fn revoke_credential(&self, credential_id: &str, issuer: &Identity) -> Result<RevocationEntry, ClientError> {
        let prepared: Prepared<RevocationDraft> =
            self.post("/registry/revocations", &RegistryRevocationBody { credential_id: credential_id.into() })?;
        let d = &prepared.draft;
        if d.credential_id != credential_id || &d.issuer_did != issuer.did() {
            return Err(ClientError::DraftMismatch("revocation names another credential or issuer".into()));
        }
        let revocation = issuer.sign(&d.signing_bytes());
        self.post(
            "/registry/revocations",
            &Commit { draft_id: prepared.draft_id, signatures: RevocationSignature { revocation } },
        )
    }

    pub fn status(&self, document_id: &str, destination: Option<&str>) -> Result<StatusResponse, ClientError> {
        let q: Vec<_> = destination.map(|d| ("destination", d.to_owned())).into_iter().collect();
        self.get(&format!("/status/{document_id}"), &q)
    }

    pub fn chains(&self, document_id: &str, destination: Option<&str>) -> Result<ChainsResponse, ClientError> {
        let q: Vec<_> = destination.map(|d| ("destination", d.to_owned())).into_iter().collect();
        self.get(&format!("/chains/{document_id}"), &q)
    }

    pub fn expire_sweep(&self) -> Result<SweepResult, ClientError> {
        self.post("/expire/sweep", &serde_json::json!({}))
    }

    // Messaging

    pub fn post_message(&self, message: &SecureMessage) -> Result<InboxPosted, ClientError> {
        self.post(&format!("/inbox/{}", message.recipient_did), message)
    }

    pub fn fetch_inbox(&self, did: &Did, after: u64) -> Result<Vec<InboxItem>, ClientError> {
        let page: InboxPage = self.get(&format!("/inbox/{did}"), &[("after", after.to_string())])?;
        Ok(page.items)
    }

    /// Pull new inbox items into `wallet` and advance its cursor. Items that
    /// fail to open are reported and skipped.
    pub fn sync_wallet(&self, wallet: &mut Wallet, now: Timestamp) -> Result<Vec<Result<Received, AgentError>>, ClientError> {
        let items = self.fetch_inbox(wallet.owner_did(), wallet.inbox_cursor())?;
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            let view = self.registry_view([&item.message.sender_did, &item.message.recipient_did])?;
            out.push(wallet.receive(&item.message, &view, now));
            wallet.set_inbox_cursor(item.seq);
        }
        Ok(out)
    }

    pub fn verify_presentation(&self, presentation: &Presentation, expected_nonce: Nonce128) -> Result<PresentationVerdict, ClientError> {
        let body = VerifyPresentationBody { presentation: presentation.clone(), expected_nonce };
        self.post("/presentations/verify", &body)
    }

    // Offline

    /// Replay `entries` through a server flush session, checking and
    /// signing each draft it pauses on.
    pub fn flush(&self, entries: Vec<OfflineEntry>, signer: &Identity) -> Result<Vec<FlushResult>, ClientError> {
        let mut progress: FlushProgress = self.post("/offline/flush", &FlushCall::Start(FlushStart { entries: entries.clone() }))?;
        let mut results = Vec::new();
        loop {
            results.append(&mut progress.results);
            let Some(pending) = progress.pending.take() else { return Ok(results) };
            let entry = entries
                .iter()
                .find(|e| e.seq == pending.seq)
                .ok_or_else(|| ClientError::DraftMismatch(format!("server paused on unknown entry {}", pending.seq)))?;
            check_intent(&pending.draft, signer.did(), &entry.operation).map_err(ClientError::DraftMismatch)?;
            let call = FlushCall::Continue(FlushContinue {
                session_id: progress.session_id.clone(),
                signatures: sign_any(&pending.draft, signer),
            });
            progress = self.post("/offline/flush", &call)?;
        }
    }

    /// Flush whatever `queue` holds past its checkpoint and advance it.
    pub fn flush_queue(&self, queue: &OfflineQueue, signer: &Identity) -> Result<Vec<FlushResult>, ClientError> {
        let pending = queue.pending()?;
        if pending.is_empty() {
            return Ok(Vec::new());
        }
        let results = self.flush(pending, signer)?;
        if let Some(last) = results.iter().map(|r| r.seq).max() {
            queue.checkpoint(last)?;
        }
        Ok(results)
    }
}

pub fn sign_any(draft: &AnyDraft, signer: &Identity) -> AnySignatures {
    match draft {
        AnyDraft::Step(d) => AnySignatures::Credential(d.sign(signer)),
        AnyDraft::Finalize(d) => AnySignatures::Credential(d.sign(signer)),
        AnyDraft::Revoke(d) => AnySignatures::Revocation(d.sign(signer)),
    }
}

