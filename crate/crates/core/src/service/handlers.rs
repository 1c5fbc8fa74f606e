use std::collections::HashMap;
use std::sync::Arc;

use axum::async_trait;
use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::header::AUTHORIZATION;
use axum::http::request::Parts;
use axum::middleware::{self, Next};
use axum::routing::{get, post, MethodRouter};
use axum::Router;
use serde::de::DeserializeOwned;

use crate::api::{
    AnyDraft, AnySignatures, ChallengeRequest, DraftCall, FinalizeCall, FlushCall, RegisterDidRequest,
    RegistryRevocationCall, RevokeCall, StepCall, SubmitRequestBody, VerifyPresentationBody, VerifyRequest,
};
use crate::agents::SecureMessage;
use crate::registry::Did;

use super::drafts::Draft;
use super::{parse_request_id, Access, ApiError, Caller, Canon, Endpoint, ServiceState};

type St = State<Arc<ServiceState>>;
type Reply = Result<axum::response::Response, ApiError>;

fn ok<T: serde::Serialize>(v: T) -> Reply {
    Ok(axum::response::IntoResponse::into_response(Canon(v)))
}

/// JSON body whose decoding failures come back in the API error shape.
pub(crate) struct JsonBody<T>(pub T);

#[async_trait]
impl<T: DeserializeOwned, S: Send + Sync> FromRequest<S> for JsonBody<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let bytes = Bytes::from_request(req, state).await.map_err(|e| ApiError::malformed(e.body_text()))?;
        serde_json::from_slice(&bytes).map(JsonBody).map_err(|e| ApiError::malformed(e.to_string()))
    }
}

fn bearer(parts: &Parts) -> Option<&str> {
    parts.headers.get(AUTHORIZATION)?.to_str().ok()?.strip_prefix("Bearer ")
}

#[async_trait]
impl FromRequestParts<Arc<ServiceState>> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<ServiceState>) -> Result<Self, ApiError> {
        let token = bearer(parts).ok_or_else(|| ApiError::unauthenticated("missing bearer token"))?;
        state.sessions.caller(token, state.workflow.registry(), state.now())
    }
}

/// A caller when a valid token is present. An invalid token is still an
/// error rather than silently anonymous.
pub(crate) struct MaybeCaller(Option<Caller>);

#[async_trait]
impl FromRequestParts<Arc<ServiceState>> for MaybeCaller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<ServiceState>) -> Result<Self, ApiError> {
        if bearer(parts).is_none() {
            return Ok(MaybeCaller(None));
        }
        Caller::from_request_parts(parts, state).await.map(|c| MaybeCaller(Some(c)))
    }
}

type Params = Query<HashMap<String, String>>;

fn param_did(raw: &str) -> Result<Did, ApiError> {
    serde_json::from_value(serde_json::Value::String(raw.to_owned()))
        .map_err(|_| ApiError::new("UnknownDid", format!("{raw} is not a DID")))
}

async fn challenge(State(s): St, JsonBody(req): JsonBody<ChallengeRequest>) -> Reply {
    ok(s.sessions.challenge(&req.did, s.workflow.registry(), s.now())?)
}

async fn verify(State(s): St, JsonBody(req): JsonBody<VerifyRequest>) -> Reply {
    ok(s.sessions.verify(&req, s.workflow.registry(), s.now())?)
}

async fn submit(State(s): St, caller: Caller, JsonBody(b): JsonBody<SubmitRequestBody>) -> Reply {
    ok(s.submit(&caller, &b.document_id, &b.destination_country, b.template_id.as_deref())?)
}

async fn record_step(State(s): St, caller: Caller, Path(id): Path<String>, JsonBody(call): JsonBody<StepCall>) -> Reply {
    s.require(&caller, Endpoint::RecordStep)?;
    let id = parse_request_id(&id)?;
    match call {
        DraftCall::Prepare(input) => {
            let draft = s.prepare_step(&caller, &id, input)?;
            ok(s.hold(&caller, draft, |d| Draft::Workflow(AnyDraft::Step(d))))
        }
        DraftCall::Commit(c) => {
            let draft = s.take_workflow_draft(&caller, &c.draft_id, &id)?;
            ok(s.commit_draft(&caller, draft, AnySignatures::Credential(c.signatures))?)
        }
    }
}

async fn finalize(State(s): St, caller: Caller, Path(id): Path<String>, JsonBody(call): JsonBody<FinalizeCall>) -> Reply {
    s.require(&caller, Endpoint::Finalize)?;
    let id = parse_request_id(&id)?;
    match call {
        DraftCall::Prepare(_) => {
            let draft = s.prepare_finalize(&caller, &id)?;
            ok(s.hold(&caller, draft, |d| Draft::Workflow(AnyDraft::Finalize(d))))
        }
        DraftCall::Commit(c) => {
            let draft = s.take_workflow_draft(&caller, &c.draft_id, &id)?;
            ok(s.commit_draft(&caller, draft, AnySignatures::Credential(c.signatures))?)
        }
    }
}

async fn revoke(State(s): St, caller: Caller, Path(id): Path<String>, JsonBody(call): JsonBody<RevokeCall>) -> Reply {
    s.require(&caller, Endpoint::Revoke)?;
    let id = parse_request_id(&id)?;
    match call {
        DraftCall::Prepare(b) => {
            let draft = s.prepare_revoke(&caller, &id, &b.reason)?;
            ok(s.hold(&caller, draft, |d| Draft::Workflow(AnyDraft::Revoke(d))))
        }
        DraftCall::Commit(c) => {
            let draft = s.take_workflow_draft(&caller, &c.draft_id, &id)?;
            ok(s.commit_draft(&caller, draft, AnySignatures::Revocation(c.signatures))?)
        }
    }
}

async fn status(State(s): St, Path(doc): Path<String>, Query(q): Params) -> Reply {
    ok(s.status(&doc, q.get("destination").map(String::as_str))?)
}

async fn chains(State(s): St, Path(doc): Path<String>, Query(q): Params) -> Reply {
    ok(s.chains(&doc, q.get("destination").map(String::as_str))?)
}

async fn register_did(State(s): St, MaybeCaller(caller): MaybeCaller, JsonBody(req): JsonBody<RegisterDidRequest>) -> Reply {
    ok(s.register_did(caller.as_ref(), req)?)
}

async fn resolve_did(State(s): St, Path(did): Path<String>) -> Reply {
    ok(s.workflow.registry().resolve_did(&param_did(&did)?)?)
}

async fn registry_revocation(State(s): St, caller: Caller, JsonBody(call): JsonBody<RegistryRevocationCall>) -> Reply {
    s.require(&caller, Endpoint::RegistryRevocation)?;
    match call {
        DraftCall::Prepare(b) => {
            let draft = s.prepare_registry_revocation(&caller, &b.credential_id)?;
            ok(s.hold(&caller, draft, Draft::Revocation))
        }
        DraftCall::Commit(c) => ok(s.commit_registry_revocation(&caller, &c.draft_id, c.signatures.revocation)?),
    }
}

async fn inbox_post(State(s): St, caller: Caller, Path(did): Path<String>, JsonBody(m): JsonBody<SecureMessage>) -> Reply {
    ok(s.post_inbox(&caller, &param_did(&did)?, m)?)
}

async fn inbox_fetch(State(s): St, caller: Caller, Path(did): Path<String>, Query(q): Params) -> Reply {
    let after = match q.get("after") {
        Some(v) => v.parse().map_err(|_| ApiError::malformed("after must be a sequence number"))?,
        None => 0,
    };
    ok(s.fetch_inbox(&caller, &param_did(&did)?, after)?)
}

async fn verify_presentation(State(s): St, caller: Caller, JsonBody(b): JsonBody<VerifyPresentationBody>) -> Reply {
    ok(s.verify_presentation(&caller, &b)?)
}

async fn offline_flush(State(s): St, caller: Caller, JsonBody(call): JsonBody<FlushCall>) -> Reply {
    s.require(&caller, Endpoint::OfflineFlush)?;
    match call {
        FlushCall::Start(b) => ok(s.flush_start(caller, b.entries)?),
        FlushCall::Continue(b) => ok(s.flush_continue(&caller, &b.session_id, b.signatures)?),
    }
}

async fn expire_sweep(State(s): St, caller: Caller) -> Reply {
    ok(s.sweep(&caller)?)
}

async fn not_found() -> ApiError {
    ApiError::new("NotFound", "no such endpoint")
}

/// Enforce the endpoint's access rule before the body is even read.
async fn guard(State((s, e)): State<(Arc<ServiceState>, Endpoint)>, req: Request, next: Next) -> Reply {
    if e.access() != Access::Public {
        let (mut parts, body) = req.into_parts();
        let caller = Caller::from_request_parts(&mut parts, &s).await?;
        s.require(&caller, e)?;
        return Ok(next.run(Request::from_parts(parts, body)).await);
    }
    Ok(next.run(req).await)
}

fn handler(e: Endpoint) -> MethodRouter<Arc<ServiceState>> {
    match e {
        Endpoint::AuthChallenge => post(challenge),
        Endpoint::AuthVerify => post(verify),
        Endpoint::SubmitRequest => post(submit),
        Endpoint::RecordStep => post(record_step),
        Endpoint::Finalize => post(finalize),
        Endpoint::Revoke => post(revoke),
        Endpoint::Status => get(status),
        Endpoint::Chains => get(chains),
        Endpoint::RegisterDid => post(register_did),
        Endpoint::ResolveDid => get(resolve_did),
        Endpoint::RegistryRevocation => post(registry_revocation),
        Endpoint::InboxPost => post(inbox_post),
        Endpoint::InboxFetch => get(inbox_fetch),
        Endpoint::VerifyPresentation => post(verify_presentation),
        Endpoint::OfflineFlush => post(offline_flush),
        Endpoint::ExpireSweep => post(expire_sweep),
    }
}

pub(crate) fn router(state: Arc<ServiceState>) -> Router {
    let mut routes: Vec<(&str, MethodRouter<Arc<ServiceState>>)> = Vec::new();
    for e in Endpoint::ALL {
        let (_, path) = e.route();
        let m = handler(e).route_layer(middleware::from_fn_with_state((state.clone(), e), guard));
        match routes.iter_mut().find(|(p, _)| *p == path) {
            Some((_, r)) => *r = std::mem::take(r).merge(m),
            None => routes.push((path, m)),
        }
    }
    routes
        .into_iter()
        .fold(Router::new(), |r, (path, m)| r.route(path, m))
        .fallback(not_found)
        .with_state(state)
}
