//! The attestation state machine: intake with duplicate detection, strictly
//! sequential phases, finalization, revocation and the expiry sweep.
//!
//! Every rule is checked before anything is appended to the ledger. Signed
//! operations come in two halves, `prepare_*` and `commit_*`, so that the
//! signer's keys can stay with the signer; `record_step`,
//! `finalize_attestation` and `revoke_attestation` run both halves for a
//! caller that holds the key locally.

mod ops;
mod request;
mod status;
mod store;
mod template;

use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::rngs::OsRng;

use crate::agents::{AgentError, Inbox};
use crate::credentials::CredentialError;
use crate::crypto::{Identity, IdentitySecrets};
use crate::ids::IdSource;
use crate::jsonl;
use crate::ledger::{Ledger, LedgerError};
use crate::privacy::ClaimViolation;
use crate::registry::{create_did, Did, Registry, RegistryError, Role};
use crate::time::Clock;

pub use ops::{
    FinalizeDraft, FinalizeOutcome, FinalizeSignatures, RevokeDraft, RevokeOutcome, RevokeSignatures, StepDraft, StepInput,
    StepOutcome, StepSignatures,
};
pub use request::{AttestationRequest, RequestState};
pub use status::{CompletedPhase, PendingPhase, RequestTimeline};
pub use store::CredentialStore;
pub use template::{PhaseSpec, TemplateSet, WorkflowTemplate, DEFAULT_TEMPLATE_ID};

use store::RequestStore;

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("a live request already exists for document {document_id} and destination {destination_country}")]
    DuplicateRequest { document_id: String, destination_country: String },
    #[error("holder {0} is not a registered holder")]
    UnknownHolder(String),
    #[error("unknown template {0}")]
    UnknownTemplate(String),
    #[error("unknown request {0}")]
    UnknownRequest(String),
    #[error("skipped step: {0}")]
    SkippedStep(String),
    #[error("attester {0} is not authorized for this phase")]
    UnauthorizedAttester(String),
    #[error("request is {0}, not open or in progress")]
    RequestNotActive(&'static str),
    #[error("phases incomplete: {completed} of {required} recorded")]
    PhasesIncomplete { completed: u32, required: u32 },
    #[error("unauthorized issuer: {0}")]
    UnauthorizedIssuer(String),
    #[error("request is already {0}")]
    AlreadyFinalized(&'static str),
    #[error("request is {0}, not finalized")]
    NotFinalized(&'static str),
    #[error(transparent)]
    ClaimWhitelistViolation(#[from] ClaimViolation),
    #[error("{0} signature does not verify")]
    BadSignature(&'static str),
    #[error("draft no longer matches the chain tip")]
    StaleDraft,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Credential(#[from] CredentialError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("storage: {0}")]
    Storage(String),
}

impl WorkflowError {
    pub fn code(&self) -> &'static str {
        match self {
            WorkflowError::DuplicateRequest { .. } => "DuplicateRequest",
            WorkflowError::UnknownHolder(_) => "UnknownHolder",
            WorkflowError::UnknownTemplate(_) => "UnknownTemplate",
            WorkflowError::UnknownRequest(_) => "UnknownRequest",
            WorkflowError::SkippedStep(_) => "SkippedStep",
            WorkflowError::UnauthorizedAttester(_) => "UnauthorizedAttester",
            WorkflowError::RequestNotActive(_) => "RequestNotActive",
            WorkflowError::PhasesIncomplete { .. } => "PhasesIncomplete",
            WorkflowError::UnauthorizedIssuer(_) => "UnauthorizedIssuer",
            WorkflowError::AlreadyFinalized(_) => "AlreadyFinalized",
            WorkflowError::NotFinalized(_) => "NotFinalized",
            WorkflowError::ClaimWhitelistViolation(_) => "ClaimWhitelistViolation",
            WorkflowError::BadSignature(_) => "BadSignature",
            WorkflowError::StaleDraft => "StaleDraft",
            WorkflowError::InvalidInput(_) => "InvalidInput",
            WorkflowError::Credential(e) => e.code(),
            WorkflowError::Ledger(LedgerError::StaleDraft) => "StaleDraft",
            WorkflowError::Ledger(e) => e.code(),
            WorkflowError::Registry(e) => e.code(),
            WorkflowError::Agent(e) => e.code(),
            WorkflowError::Storage(_) => "StorageError",
        }
    }
}

const GATEWAY_KEY_FILE: &str = "gateway.key";

/// One attestation node: registry, ledger, issued credentials, request
/// state, inbox, and the gateway identity that signs intake and expiry.
pub struct Workflow {
    registry: Arc<Registry>,
    ledger: Arc<Ledger>,
    credentials: CredentialStore,
    requests: RequestStore,
    inbox: Arc<Inbox>,
    templates: TemplateSet,
    gateway: Identity,
    clock: Arc<dyn Clock>,
    ids: IdSource,
    authorities: Vec<Did>,
    submit_lock: Mutex<()>,
}

impl Workflow {
    /// Everything in memory; the gateway is generated and registered.
    pub fn in_memory(templates: TemplateSet, clock: Arc<dyn Clock>, ids: IdSource) -> Result<Self, WorkflowError> {
        let registry = Arc::new(Registry::in_memory());
        let gateway = Identity::generate(&mut OsRng);
        register_gateway(&registry, &gateway, clock.as_ref())?;
        Ok(Workflow {
            ledger: Arc::new(Ledger::in_memory(clock.clone())),
            registry,
            credentials: CredentialStore::in_memory(),
            requests: RequestStore::new(None)?,
            inbox: Arc::new(Inbox::in_memory()),
            templates,
            gateway,
            clock,
            ids,
            authorities: Vec::new(),
            submit_lock: Mutex::new(()),
        })
    }

    /// Open (or initialise) a node's data directory.
    ///
    /// Layout: `registry/`, `chains/`, `credentials/`, `inbox/`,
    /// `state/requests/` and `gateway.key`. Every chain is verified on load
    /// and request state is rebuilt from the chains.
    pub fn open(
        data_dir: &Path,
        templates: TemplateSet,
        authorities: Vec<Did>,
        clock: Arc<dyn Clock>,
        ids: IdSource,
    ) -> Result<Self, WorkflowError> {
        std::fs::create_dir_all(data_dir).map_err(|e| WorkflowError::Storage(e.to_string()))?;
        let registry = Arc::new(Registry::open(&data_dir.join("registry"))?);
        let gateway = load_or_create_gateway(&data_dir.join(GATEWAY_KEY_FILE))?;
        register_gateway(&registry, &gateway, clock.as_ref())?;
        let ledger = Arc::new(Ledger::open(&data_dir.join("chains"), &registry, clock.clone())?);
        let credentials = CredentialStore::open(&data_dir.join("credentials"))?;
        let inbox = Arc::new(Inbox::open(&data_dir.join("inbox")).map_err(|e| WorkflowError::Storage(e.to_string()))?);
        let requests = RequestStore::new(Some(data_dir.join("state").join("requests")))?;
        let wf = Workflow {
            registry,
            ledger,
            credentials,
            requests,
            inbox,
            templates,
            gateway,
            clock,
            ids,
            authorities,
            submit_lock: Mutex::new(()),
        };
        wf.rebuild_requests()?;
        Ok(wf)
    }

    fn rebuild_requests(&self) -> Result<(), WorkflowError> {
        for chain_id in self.ledger.chain_ids() {
            let blocks = self.ledger.blocks(&chain_id).unwrap_or_default();
            let mut request = AttestationRequest::fold(&chain_id, &blocks)
                .map_err(|e| WorkflowError::Storage(format!("chain {chain_id}: {e}")))?;
            request.aggregate_expires_at = request
                .aggregate_credential_id
                .as_deref()
                .and_then(|id| self.credentials.aggregate(id))
                .and_then(|a| a.expires_at);
            if self.requests.read_cached(&chain_id).as_ref() != Some(&request) {
                tracing::info!(request = %chain_id, "request state rebuilt from ledger");
            }
            self.requests.insert(request)?;
        }
        Ok(())
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    pub fn credentials(&self) -> &CredentialStore {
        &self.credentials
    }

    pub fn inbox(&self) -> &Arc<Inbox> {
        &self.inbox
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn ids(&self) -> &IdSource {
        &self.ids
    }

    pub fn gateway_did(&self) -> &Did {
        self.gateway.did()
    }

    pub fn revocation_authorities(&self) -> &[Did] {
        &self.authorities
    }

    pub fn request(&self, request_id: &str) -> Option<AttestationRequest> {
        let id = request_id.parse().ok()?;
        self.requests.get(&id).map(|c| c.lock().clone())
    }

    pub fn requests(&self) -> Vec<AttestationRequest> {
        self.requests.all().into_iter().map(|c| c.lock().clone()).collect()
    }
}

fn register_gateway(registry: &Registry, gateway: &Identity, clock: &dyn Clock) -> Result<(), WorkflowError> {
    if registry.resolve_did(gateway.did()).is_ok() {
        return Ok(());
    }
    let doc = create_did(gateway.signing_public(), gateway.agreement_public(), Role::CredentialIssuer, None, clock.now())?;
    registry.register_did(doc)?;
    Ok(())
}

fn load_or_create_gateway(path: &Path) -> Result<Identity, WorkflowError> {
    if path.exists() {
        let secrets: IdentitySecrets = jsonl::read_document(path).map_err(|e| WorkflowError::Storage(e.to_string()))?;
        return Identity::from_secret_record(&secrets).map_err(WorkflowError::Storage);
    }
    let id = Identity::generate(&mut OsRng);
    jsonl::write_document(path, &id.secrets()).map_err(|e| WorkflowError::Storage(e.to_string()))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o600))
            .map_err(|e| WorkflowError::Storage(e.to_string()))?;
    }
    Ok(id)
}
