//! HTTP gateway over the workflow: challenge login, a fixed endpoint/role
//! matrix, prepare/commit drafts for signed mutations, offline flush
//! sessions and the public status views.

mod auth;
mod config;
mod drafts;
mod error;
mod flush;
mod handlers;
mod nonces;

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::http::header::CONTENT_TYPE;
use axum::response::{IntoResponse, Response};
use serde::Serialize;

use crate::api::{
    register_signing_bytes, AnyDraft, AnySignatures, ChainRecord, ChainsResponse, InboxPage, InboxPosted, Prepared,
    PresentationVerdict, RegisterDidRequest, StatusResponse, SweepResult, VerifyPresentationBody,
};
use crate::agents::SecureMessage;
use crate::canonical;
use crate::credentials::{verify_presentation, PresentedCredential};
use crate::crypto::{verify_signature, Signature};
use crate::ids::IdSource;
use crate::ledger::ChainId;
use crate::privacy::is_identifier;
use crate::registry::{Did, DidDocument, RevocationDraft, RevocationEntry, RevocationReason, Role};
use crate::time::{SystemClock, Timestamp};
use crate::workflow::{
    AttestationRequest, FinalizeDraft, RevokeDraft, StepDraft, StepInput, TemplateSet, Workflow,
};

pub use auth::Caller;
pub use config::ServiceConfig;
pub use error::ApiError;

use auth::Sessions;
use drafts::Drafts;
use flush::FlushSessions;
use nonces::NonceBook;

/// Who may call an endpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Access {
    Public,
    /// Any registered role with a live session.
    Authenticated,
    Roles(&'static [Role]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Endpoint {
    AuthChallenge,
    AuthVerify,
    SubmitRequest,
    RecordStep,
    Finalize,
    Revoke,
    Status,
    Chains,
    RegisterDid,
    ResolveDid,
    RegistryRevocation,
    InboxPost,
    InboxFetch,
    VerifyPresentation,
    OfflineFlush,
    ExpireSweep,
}

impl Endpoint {
    pub const ALL: [Endpoint; 16] = [
        Endpoint::AuthChallenge,
        Endpoint::AuthVerify,
        Endpoint::SubmitRequest,
        Endpoint::RecordStep,
        Endpoint::Finalize,
        Endpoint::Revoke,
        Endpoint::Status,
        Endpoint::Chains,
        Endpoint::RegisterDid,
        Endpoint::ResolveDid,
        Endpoint::RegistryRevocation,
        Endpoint::InboxPost,
        Endpoint::InboxFetch,
        Endpoint::VerifyPresentation,
        Endpoint::OfflineFlush,
        Endpoint::ExpireSweep,
    ];

    /// Method and route pattern; `:name` segments are path parameters.
    pub fn route(self) -> (&'static str, &'static str) {
        match self {
            Endpoint::AuthChallenge => ("POST", "/auth/challenge"),
            Endpoint::AuthVerify => ("POST", "/auth/verify"),
            Endpoint::SubmitRequest => ("POST", "/requests"),
            Endpoint::RecordStep => ("POST", "/requests/:id/steps"),
            Endpoint::Finalize => ("POST", "/requests/:id/finalize"),
            Endpoint::Revoke => ("POST", "/requests/:id/revoke"),
            Endpoint::Status => ("GET", "/status/:document_id"),
            Endpoint::Chains => ("GET", "/chains/:document_id"),
            Endpoint::RegisterDid => ("POST", "/registry/dids"),
            Endpoint::ResolveDid => ("GET", "/registry/dids/:did"),
            Endpoint::RegistryRevocation => ("POST", "/registry/revocations"),
            Endpoint::InboxPost => ("POST", "/inbox/:did"),
            Endpoint::InboxFetch => ("GET", "/inbox/:did"),
            Endpoint::VerifyPresentation => ("POST", "/presentations/verify"),
            Endpoint::OfflineFlush => ("POST", "/offline/flush"),
            Endpoint::ExpireSweep => ("POST", "/expire/sweep"),
        }
    }

    pub fn access(self) -> Access {
        use Role::*;
        match self {
            Endpoint::AuthChallenge
            | Endpoint::AuthVerify
            | Endpoint::Status
            | Endpoint::Chains
            | Endpoint::RegisterDid
            | Endpoint::ResolveDid => Access::Public,
            Endpoint::SubmitRequest => Access::Roles(&[Holder]),
            Endpoint::RecordStep | Endpoint::Finalize => Access::Roles(&[AttestingEntity]),
            Endpoint::Revoke | Endpoint::RegistryRevocation => Access::Roles(&[AttestingEntity, CredentialIssuer]),
            Endpoint::InboxPost | Endpoint::InboxFetch => Access::Authenticated,
            Endpoint::VerifyPresentation => Access::Roles(&[Verifier]),
            // Each queued entry is checked against its own endpoint's rule.
            Endpoint::OfflineFlush => Access::Roles(&[Holder, AttestingEntity, CredentialIssuer]),
            Endpoint::ExpireSweep => Access::Roles(&[CredentialIssuer]),
        }
    }

    pub fn allows(self, role: Role) -> bool {
        match self.access() {
            Access::Public | Access::Authenticated => true,
            Access::Roles(roles) => roles.contains(&role),
        }
    }
}

/// JSON response body in canonical form.
pub struct Canon<T>(pub T);

impl<T: Serialize> IntoResponse for Canon<T> {
    fn into_response(self) -> Response {
        match canonical::to_vec(&self.0) {
            Ok(body) => ([(CONTENT_TYPE, "application/json")], body).into_response(),
            Err(e) => ApiError::new("Internal", e.to_string()).into_response(),
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("API types always encode")
}

fn parse_request_id(id: &str) -> Result<ChainId, ApiError> {
    id.parse().map_err(|_| ApiError::new("UnknownRequest", format!("unknown request {id}")))
}

/// Everything one running service holds.
pub struct ServiceState {
    workflow: Arc<Workflow>,
    config: ServiceConfig,
    sessions: Sessions,
    drafts: Drafts,
    flushes: FlushSessions,
    nonces: NonceBook,
}

impl ServiceState {
    pub fn new(workflow: Arc<Workflow>, config: ServiceConfig) -> Result<Self, ApiError> {
        let nonces = NonceBook::open(&config.data_dir.join("state").join("nonces"))
            .map_err(|e| ApiError::new("StorageError", e))?;
        Ok(ServiceState {
            sessions: Sessions::new(config.session_ttl_seconds),
            drafts: Drafts::new(config.draft_ttl_seconds),
            flushes: FlushSessions::new(),
            nonces,
            workflow,
            config,
        })
    }

    /// Open the node described by `config` with the system clock.
    pub fn open(config: ServiceConfig) -> Result<Self, ApiError> {
        let templates = match &config.template_dir {
            Some(dir) => TemplateSet::load_dir(dir)?,
            None => TemplateSet::default(),
        };
        let workflow = Workflow::open(
            &config.data_dir,
            templates,
            config.revocation_authorities.clone(),
            Arc::new(SystemClock),
            IdSource::from_entropy(),
        )?;
        Self::new(Arc::new(workflow), config)
    }

    pub fn workflow(&self) -> &Arc<Workflow> {
        &self.workflow
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    fn now(&self) -> Timestamp {
        self.workflow.clock().now()
    }

    fn require(&self, caller: &Caller, endpoint: Endpoint) -> Result<(), ApiError> {
        if endpoint.allows(caller.role) {
            return Ok(());
        }
        let (method, path) = endpoint.route();
        Err(ApiError::forbidden(format!("role {:?} may not call {method} {path}", caller.role)))
    }

    fn is_authority(&self, did: &Did) -> bool {
        did == self.workflow.gateway_did() || self.config.revocation_authorities.contains(did)
    }

    pub(crate) fn submit(
        &self,
        caller: &Caller,
        document_id: &str,
        destination_country: &str,
        template_id: Option<&str>,
    ) -> Result<AttestationRequest, ApiError> {
        self.require(caller, Endpoint::SubmitRequest)?;
        Ok(self.workflow.submit_request(document_id, destination_country, &caller.did, template_id)?)
    }

    pub(crate) fn prepare_step(&self, caller: &Caller, id: &ChainId, input: StepInput) -> Result<StepDraft, ApiError> {
        self.require(caller, Endpoint::RecordStep)?;
        Ok(self.workflow.prepare_step(id, &caller.did, input)?)
    }

    pub(crate) fn prepare_finalize(&self, caller: &Caller, id: &ChainId) -> Result<FinalizeDraft, ApiError> {
        self.require(caller, Endpoint::Finalize)?;
        Ok(self.workflow.prepare_finalize(id, &caller.did)?)
    }

    pub(crate) fn prepare_revoke(&self, caller: &Caller, id: &ChainId, reason: &str) -> Result<RevokeDraft, ApiError> {
        self.require(caller, Endpoint::Revoke)?;
        Ok(self.workflow.prepare_revoke(id, &caller.did, reason)?)
    }

    pub(crate) fn commit_draft(
        &self,
        caller: &Caller,
        draft: AnyDraft,
        signatures: AnySignatures,
    ) -> Result<serde_json::Value, ApiError> {
        let wf = &self.workflow;
        match (draft, signatures) {
            (AnyDraft::Step(d), AnySignatures::Credential(s)) => {
                self.require(caller, Endpoint::RecordStep)?;
                let mut outcome = wf.commit_step(d, s)?;
                outcome.offer_id = wf.deliver_offer(PresentedCredential::Micro(outcome.credential.clone()));
                Ok(to_value(&outcome))
            }
            (AnyDraft::Finalize(d), AnySignatures::Credential(s)) => {
                self.require(caller, Endpoint::Finalize)?;
                let mut outcome = wf.commit_finalize(d, s)?;
                outcome.offer_id = wf.deliver_offer(PresentedCredential::Aggregate(outcome.credential.clone()));
                Ok(to_value(&outcome))
            }
            (AnyDraft::Revoke(d), AnySignatures::Revocation(s)) => {
                self.require(caller, Endpoint::Revoke)?;
                Ok(to_value(&wf.commit_revoke(d, s)?))
            }
            _ => Err(ApiError::malformed("signatures do not fit the draft")),
        }
    }

    fn hold<T: Clone>(&self, caller: &Caller, draft: T, wrap: fn(T) -> drafts::Draft) -> Prepared<T> {
        let (draft_id, expires_at) = self.drafts.put(&caller.did, wrap(draft.clone()), self.now());
        Prepared { draft_id, expires_at, draft }
    }

    fn take_workflow_draft(&self, caller: &Caller, draft_id: &str, request_id: &ChainId) -> Result<AnyDraft, ApiError> {
        let draft = match self.drafts.take(draft_id, &caller.did, self.now())? {
            drafts::Draft::Workflow(d) => d,
            drafts::Draft::Revocation(_) => return Err(ApiError::malformed("draft is a registry revocation")),
        };
        let id = match &draft {
            AnyDraft::Step(d) => &d.request_id,
            AnyDraft::Finalize(d) => &d.request_id,
            AnyDraft::Revoke(d) => &d.request_id,
        };
        if id != request_id {
            return Err(ApiError::malformed("draft belongs to another request"));
        }
        Ok(draft)
    }

    /// Registration proves possession of the signing key. Holders and
    /// verifiers may self-register; attesting entities and credential
    /// issuers need an authority session, a configured authority DID or
    /// open registration.
    pub(crate) fn register_did(&self, caller: Option<&Caller>, req: RegisterDidRequest) -> Result<DidDocument, ApiError> {
        let doc = req.document;
        doc.check_invariants()?;
        if !verify_signature(&doc.signing_key, &register_signing_bytes(&doc), &req.signature) {
            return Err(ApiError::new("BadSignature", "registration is not signed by the document's key"));
        }
        let privileged = matches!(doc.role, Role::AttestingEntity | Role::CredentialIssuer);
        let vouched = caller.is_some_and(|c| self.is_authority(&c.did));
        if privileged && !(self.config.open_registration || vouched || self.config.revocation_authorities.contains(&doc.did)) {
            return Err(ApiError::forbidden(format!("registering a {:?} needs an authority session", doc.role)));
        }
        self.workflow.registry().register_did(doc.clone())?;
        tracing::info!(did = %doc.did, role = ?doc.role, "DID registered");
        Ok(doc)
    }

    pub(crate) fn prepare_registry_revocation(&self, caller: &Caller, credential_id: &str) -> Result<RevocationDraft, ApiError> {
        self.require(caller, Endpoint::RegistryRevocation)?;
        let store = self.workflow.credentials();
        if store.aggregate(credential_id).is_some() {
            return Err(ApiError::new(
                "InvalidInput",
                "aggregate credentials are revoked through POST /requests/{id}/revoke",
            ));
        }
        let micro = store
            .micro(credential_id)
            .ok_or_else(|| ApiError::new("UnknownCredential", format!("{credential_id} was not issued here")))?;
        if micro.issuer_did != caller.did && !self.is_authority(&caller.did) {
            return Err(ApiError::new("UnauthorizedIssuer", "only the issuer or an authority may revoke"));
        }
        Ok(self.workflow.registry().prepare_revocation(credential_id, RevocationReason::Revoked, &caller.did, self.now())?)
    }

    fn commit_registry_revocation(&self, caller: &Caller, draft_id: &str, sig: Signature) -> Result<RevocationEntry, ApiError> {
        self.require(caller, Endpoint::RegistryRevocation)?;
        let draft = match self.drafts.take(draft_id, &caller.did, self.now())? {
            drafts::Draft::Revocation(d) => d,
            drafts::Draft::Workflow(_) => return Err(ApiError::malformed("draft is not a registry revocation")),
        };
        let entry = draft.with_signature(sig);
        self.workflow.registry().record_revocation(entry.clone())?;
        Ok(entry)
    }

    fn post_inbox(&self, caller: &Caller, did: &Did, message: SecureMessage) -> Result<InboxPosted, ApiError> {
        if &message.recipient_did != did {
            return Err(ApiError::malformed("path DID and recipient_did differ"));
        }
        if message.sender_did != caller.did {
            return Err(ApiError::forbidden("messages may only be posted by their sender"));
        }
        let seq = self.workflow.inbox().deliver(message, self.workflow.registry())?;
        Ok(InboxPosted { seq })
    }

    fn fetch_inbox(&self, caller: &Caller, did: &Did, after: u64) -> Result<InboxPage, ApiError> {
        if &caller.did != did {
            return Err(ApiError::forbidden("an inbox may only be read by its owner"));
        }
        Ok(InboxPage { items: self.workflow.inbox().fetch(did, after) })
    }

    fn verify_presentation(&self, caller: &Caller, body: &VerifyPresentationBody) -> Result<PresentationVerdict, ApiError> {
        self.require(caller, Endpoint::VerifyPresentation)?;
        let tracker = self.nonces.tracker(&caller.did);
        let was_used = tracker.is_used(&body.expected_nonce);
        let verdict = verify_presentation(
            &body.presentation,
            &body.expected_nonce,
            &tracker,
            self.workflow.registry(),
            self.workflow.credentials(),
            self.now(),
        );
        if !was_used && tracker.is_used(&body.expected_nonce) {
            self.nonces.record(&caller.did, &body.expected_nonce).map_err(|e| ApiError::new("StorageError", e))?;
        }
        Ok(match verdict {
            Ok(()) => PresentationVerdict { valid: true, failure: None },
            Err(f) => PresentationVerdict { valid: false, failure: Some(f) },
        })
    }

    fn sweep(&self, caller: &Caller) -> Result<SweepResult, ApiError> {
        self.require(caller, Endpoint::ExpireSweep)?;
        Ok(SweepResult { expired: self.workflow.expire_sweep()? })
    }

    fn status(&self, document_id: &str, destination: Option<&str>) -> Result<StatusResponse, ApiError> {
        if !is_identifier(document_id) {
            return Err(ApiError::malformed("document_id must be an opaque identifier"));
        }
        Ok(StatusResponse {
            document_id: document_id.to_owned(),
            requests: self.workflow.attestation_status(document_id, destination),
        })
    }

    fn chains(&self, document_id: &str, destination: Option<&str>) -> Result<ChainsResponse, ApiError> {
        if !is_identifier(document_id) {
            return Err(ApiError::malformed("document_id must be an opaque identifier"));
        }
        let chains = self
            .workflow
            .ledger()
            .chain_for_document(document_id, destination)
            .into_iter()
            .map(|(request_id, blocks)| ChainRecord {
                request_id,
                destination_country: blocks[0].payload.destination_country.clone().unwrap_or_default(),
                blocks,
            })
            .collect();
        Ok(ChainsResponse { document_id: document_id.to_owned(), chains })
    }
}

pub fn router(state: Arc<ServiceState>) -> axum::Router {
    handlers::router(state)
}

/// Serve until the process ends.
pub async fn serve(state: Arc<ServiceState>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// A service running on its own thread and runtime, for tests, the demo
/// and the FFI node handle. Stops when dropped.
pub struct RunningService {
    addr: SocketAddr,
    state: Arc<ServiceState>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl RunningService {
    pub fn start(state: Arc<ServiceState>, listen: SocketAddr) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind(listen))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = router(state.clone());
        let thread = std::thread::Builder::new().name("attestchain-service".into()).spawn(move || {
            runtime.block_on(async move {
                let server = axum::serve(listener, app).with_graceful_shutdown(async {
                    let _ = rx.await;
                });
                if let Err(e) = server.await {
                    tracing::error!(error = %e, "service stopped");
                }
            });
        })?;
        Ok(RunningService { addr, state, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn state(&self) -> &Arc<ServiceState> {
        &self.state
    }

    pub fn stop(mut self) {
        self.shutdown_now();
    }

    fn shutdown_now(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        self.shutdown_now();
    }
}

