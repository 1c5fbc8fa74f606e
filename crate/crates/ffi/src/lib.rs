//! C ABI over the attestchain client, wallet and an embeddable gateway.
//!
//! Conventions:
//! - Every fallible call returns an [`AcStatus`]; `AC_STATUS_OK` is zero.
//! - On failure, [`ac_last_error_code`] and [`ac_last_error_message`] describe
//!   the error on the calling thread until its next failing call.
//! - Handles are opaque and released with their `_free` function.
//! - Strings written to `out` parameters are owned by the caller and released
//!   with [`ac_string_free`]. JSON results are canonical.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use attestchain::agents::{AgentError, KdfParams, Wallet};
use attestchain::canonical;
use attestchain::client::{ApiClient, ClientError};
use attestchain::ledger::{verify_chain, ChainId};
use attestchain::service::{RunningService, ServiceConfig, ServiceState};
use attestchain::workflow::StepInput;
use attestchain::{Clock, Identity, PublicKey, Role, SystemClock};
use rand::rngs::OsRng;
use serde::Serialize;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Unauthenticated = 4,
    Forbidden = 5,
    NotFound = 6,
    Conflict = 7,
    Unreachable = 8,
    BadPassphrase = 9,
    Storage = 10,
    Internal = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcRole {
    Holder = 0,
    AttestingEntity = 1,
    CredentialIssuer = 2,
    Verifier = 3,
}

impl From<AcRole> for Role {
    fn from(r: AcRole) -> Role {
        match r {
            AcRole::Holder => Role::Holder,
            AcRole::AttestingEntity => Role::AttestingEntity,
            AcRole::CredentialIssuer => Role::CredentialIssuer,
            AcRole::Verifier => Role::Verifier,
        }
    }
}

/// A gateway serving on a loopback port until freed.
pub struct AcGateway {
    svc: RunningService,
}

/// An encrypted wallet file, decrypted in memory.
pub struct AcWallet {
    wallet: Wallet,
}

/// An HTTP client for one gateway; holds at most one session.
pub struct AcClient {
    api: ApiClient,
}

struct Failure {
    status: AcStatus,
    code: String,
    message: String,
}

impl Failure {
    fn new(status: AcStatus, code: &str, message: impl Into<String>) -> Self {
        Failure { status, code: code.to_owned(), message: message.into() }
    }
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        let status = match &e {
            ClientError::Api { status: 401, .. } | ClientError::NoSession => AcStatus::Unauthenticated,
            ClientError::Api { status: 403, .. } => AcStatus::Forbidden,
            ClientError::Api { status: 404, .. } => AcStatus::NotFound,
            ClientError::Api { status: 409, .. } => AcStatus::Conflict,
            ClientError::Api { status, .. } if *status >= 500 => AcStatus::Storage,
            ClientError::Api { .. } | ClientError::DraftMismatch(_) => AcStatus::InvalidInput,
            ClientError::Transport(_) => AcStatus::Unreachable,
            ClientError::Decode(_) => AcStatus::Internal,
            ClientError::Agent(a) => return Failure::from_agent(a),
            ClientError::Queue(_) => AcStatus::Storage,
        };
        Failure { status, code: e.code().to_owned(), message: e.to_string() }
    }
}

impl From<AgentError> for Failure {
    fn from(e: AgentError) -> Self {
        Failure::from_agent(&e)
    }
}

impl Failure {
    fn from_agent(e: &AgentError) -> Self {
        let status = match e {
            AgentError::BadPassphrase => AcStatus::BadPassphrase,
            AgentError::Storage(_) => AcStatus::Storage,
            _ => AcStatus::InvalidInput,
        };
        Failure { status, code: e.code().to_owned(), message: e.to_string() }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<(CString, CString)> = RefCell::new((CString::default(), CString::default()));
}

fn c_string(s: impl Into<Vec<u8>>) -> CString {
    CString::new(s).unwrap_or_else(|e| {
        let mut bytes = e.into_vec();
        bytes.retain(|&b| b != 0);
        CString::new(bytes).expect("nul bytes removed")
    })
}

fn record(f: &Failure) {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = (c_string(f.code.as_str()), c_string(f.message.as_str())));
}

/// Run `body`, turning errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> AcStatus {
    let failure = match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => return AcStatus::Ok,
        Ok(Err(f)) => f,
        Err(_) => Failure::new(AcStatus::Panic, "Panic", "panic inside attestchain"),
    };
    record(&failure);
    failure.status
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(AcStatus::NullArgument, "NullArgument", format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(AcStatus::InvalidUtf8, "InvalidUtf8", format!("{name} is not UTF-8")))
}

unsafe fn opt_text<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, name).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(AcStatus::NullArgument, "NullArgument", format!("{name} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::new(AcStatus::NullArgument, "NullArgument", format!("{name} is null")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(AcStatus::NullArgument, "NullArgument", "out is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(AcStatus::NullArgument, "NullArgument", "out is null"));
    }
    *out = c_string(s).into_raw();
    Ok(())
}

unsafe fn put_json<T: Serialize>(out: *mut *mut c_char, value: &T) -> Result<(), Failure> {
    let s = canonical::to_string(value).map_err(|e| Failure::new(AcStatus::Internal, "Internal", e.to_string()))?;
    put_string(out, &s)
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure::new(AcStatus::InvalidInput, "InvalidInput", message)
}

fn chain_id(s: &str) -> Result<ChainId, Failure> {
    s.parse().map_err(invalid)
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn ac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Error code of the last failed call on this thread, e.g. `"SkippedStep"`.
/// Empty if none. Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn ac_last_error_code() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().0.as_ptr())
}

/// Human-readable message for the last failed call on this thread.
#[no_mangle]
pub extern "C" fn ac_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().1.as_ptr())
}

/// # Safety
/// `s` must be null or a string returned through an `out` parameter of this
/// library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Canonical form of a JSON document: sorted keys, no whitespace.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_canonicalize(json: *const c_char, out: *mut *mut c_char) -> AcStatus {
    guard(|| {
        let s = canonical::canonicalize(text(json, "json")?).map_err(|e| invalid(e.to_string()))?;
        put_string(out, &s)
    })
}

/// The DID derived from a hex Ed25519 public key.
///
/// # Safety
/// `signing_key_hex` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_did_for_signing_key(signing_key_hex: *const c_char, out: *mut *mut c_char) -> AcStatus {
    guard(|| {
        let key = PublicKey::from_hex(text(signing_key_hex, "signing_key_hex")?).map_err(invalid)?;
        put_string(out, attestchain::Did::from_signing_key(&key).as_str())
    })
}

/// Start a gateway on `data_dir`, listening on an ephemeral loopback port.
/// With `open_registration`, any caller may register privileged roles.
///
/// # Safety
/// `data_dir` must be a nul-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_gateway_start(data_dir: *const c_char, open_registration: bool, out: *mut *mut AcGateway) -> AcStatus {
    guard(|| {
        let mut cfg = ServiceConfig::new(PathBuf::from(text(data_dir, "data_dir")?));
        cfg.listen = ([127, 0, 0, 1], 0).into();
        cfg.open_registration = open_registration;
        let listen = cfg.listen;
        let state = ServiceState::open(cfg).map_err(|e| Failure::new(AcStatus::Storage, &e.code, e.message))?;
        let svc = RunningService::start(Arc::new(state), listen)
            .map_err(|e| Failure::new(AcStatus::Storage, "StorageError", e.to_string()))?;
        put(out, AcGateway { svc })
    })
}

/// Base URL of a running gateway.
///
/// # Safety
/// `gateway` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_gateway_url(gateway: *const AcGateway, out: *mut *mut c_char) -> AcStatus {
    guard(|| put_string(out, &handle(gateway, "gateway")?.svc.url()))
}

/// Stop the gateway and release it.
///
/// # Safety
/// `gateway` must be null or a handle from [`ac_gateway_start`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_gateway_free(gateway: *mut AcGateway) {
    if !gateway.is_null() {
        let g = Box::from_raw(gateway);
        g.svc.stop();
    }
}

/// Generate a fresh identity into a new wallet file. Zero KDF parameters
/// select the recommended cost.
///
/// # Safety
/// `path` and `passphrase` must be nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_wallet_create(
    path: *const c_char,
    passphrase: *const c_char,
    kdf_memory_kib: u32,
    kdf_iterations: u32,
    out: *mut *mut AcWallet,
) -> AcStatus {
    guard(|| {
        let path = PathBuf::from(text(path, "path")?);
        let passphrase = text(passphrase, "passphrase")?;
        if path.exists() {
            return Err(Failure::new(AcStatus::Conflict, "WalletExists", format!("{} already exists", path.display())));
        }
        let kdf = match (kdf_memory_kib, kdf_iterations) {
            (0, _) | (_, 0) => KdfParams::recommended(),
            (m, i) => KdfParams::new(m, i),
        };
        let wallet = Wallet::new(Identity::generate(&mut OsRng));
        wallet.save_with(&path, passphrase.as_bytes(), kdf)?;
        put(out, AcWallet { wallet })
    })
}

/// # Safety
/// `path` and `passphrase` must be nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_wallet_open(path: *const c_char, passphrase: *const c_char, out: *mut *mut AcWallet) -> AcStatus {
    guard(|| {
        let wallet = Wallet::load(&PathBuf::from(text(path, "path")?), text(passphrase, "passphrase")?.as_bytes())?;
        put(out, AcWallet { wallet })
    })
}

/// # Safety
/// `wallet` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_wallet_did(wallet: *const AcWallet, out: *mut *mut c_char) -> AcStatus {
    guard(|| put_string(out, handle(wallet, "wallet")?.wallet.owner_did().as_str()))
}

/// # Safety
/// `wallet` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_wallet_free(wallet: *mut AcWallet) {
    if !wallet.is_null() {
        drop(Box::from_raw(wallet));
    }
}

/// # Safety
/// `base_url` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_client_new(base_url: *const c_char, out: *mut *mut AcClient) -> AcStatus {
    guard(|| {
        let api = ApiClient::new(text(base_url, "base_url")?)?;
        put(out, AcClient { api })
    })
}

/// # Safety
/// `client` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ac_client_free(client: *mut AcClient) {
    if !client.is_null() {
        drop(Box::from_raw(client));
    }
}

/// Publish the wallet's DID document with `role`. Privileged roles need
/// open registration or an authority session on `client`.
///
/// # Safety
/// `client` and `wallet` must be live handles; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ac_client_register(
    client: *const AcClient,
    wallet: *const AcWallet,
    role: AcRole,
    out_json: *mut *mut c_char,
) -> AcStatus {
    guard(|| {
        let (c, w) = (handle(client, "client")?, handle(wallet, "wallet")?);
        let doc = c.api.register(w.wallet.identity(), role.into(), None, SystemClock.now())?;
        put_json(out_json, &doc)
    })
}

/// Open a session as the wallet's DID by challenge and signature.
///
/// # Safety
/// `client` and `wallet` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn ac_client_login(client: *mut AcClient, wallet: *const AcWallet) -> AcStatus {
    guard(|| {
        let (c, w) = (handle_mut(client, "client")?, handle(wallet, "wallet")?);
        c.api.login(w.wallet.identity())?;
        Ok(())
    })
}

/// Open an attestation request; `template_id` may be null.
///
/// # Safety
/// String arguments must be nul-terminated; `client` a live handle with a
/// holder session; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_client_submit_request(
    client: *const AcClient,
    document_id: *const c_char,
    destination_country: *const c_char,
    template_id: *const c_char,
    out_json: *mut *mut c_char,
) -> AcStatus {
    guard(|| {
        let c = handle(client, "client")?;
        let r = c.api.submit_request(
            text(document_id, "document_id")?,
            text(destination_country, "destination_country")?,
            opt_text(template_id, "template_id")?,
        )?;
        put_json(out_json, &r)
    })
}

/// Record one phase. `step_json` is
/// `{"phase_number":N,"claims":{...},"policy_refs":[...]}`. The wallet signs.
///
/// # Safety
/// String arguments must be nul-terminated; handles live; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_client_record_step(
    client: *const AcClient,
    wallet: *const AcWallet,
    request_id: *const c_char,
    step_json: *const c_char,
    out_json: *mut *mut c_char,
) -> AcStatus {
    guard(|| {
        let (c, w) = (handle(client, "client")?, handle(wallet, "wallet")?);
        let input: StepInput = serde_json::from_str(text(step_json, "step_json")?).map_err(|e| invalid(e.to_string()))?;
        let r = c.api.record_step(&chain_id(text(request_id, "request_id")?)?, w.wallet.identity(), input)?;
        put_json(out_json, &r)
    })
}

/// # Safety
/// String arguments must be nul-terminated; handles live; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_client_finalize(
    client: *const AcClient,
    wallet: *const AcWallet,
    request_id: *const c_char,
    out_json: *mut *mut c_char,
) -> AcStatus {
    guard(|| {
        let (c, w) = (handle(client, "client")?, handle(wallet, "wallet")?);
        let r = c.api.finalize(&chain_id(text(request_id, "request_id")?)?, w.wallet.identity())?;
        put_json(out_json, &r)
    })
}

/// `reason` is a short identifier recorded on the chain.
///
/// # Safety
/// String arguments must be nul-terminated; handles live; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_client_revoke(
    client: *const AcClient,
    wallet: *const AcWallet,
    request_id: *const c_char,
    reason: *const c_char,
    out_json: *mut *mut c_char,
) -> AcStatus {
    guard(|| {
        let (c, w) = (handle(client, "client")?, handle(wallet, "wallet")?);
        let id = chain_id(text(request_id, "request_id")?)?;
        let r = c.api.revoke(&id, w.wallet.identity(), text(reason, "reason")?)?;
        put_json(out_json, &r)
    })
}

/// Public timeline of a document; `destination_country` may be null.
///
/// # Safety
/// String arguments must be nul-terminated; `client` live; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_client_status(
    client: *const AcClient,
    document_id: *const c_char,
    destination_country: *const c_char,
    out_json: *mut *mut c_char,
) -> AcStatus {
    guard(|| {
        let c = handle(client, "client")?;
        let r = c.api.status(text(document_id, "document_id")?, opt_text(destination_country, "destination_country")?)?;
        put_json(out_json, &r)
    })
}

/// Fetch every chain for a document and verify it against keys resolved
/// from the gateway's registry. Writes the first failing report, or
/// `{"valid":true}`, to `out_json`.
///
/// # Safety
/// String arguments must be nul-terminated; `client` live; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn ac_client_verify_chains(
    client: *const AcClient,
    document_id: *const c_char,
    out_json: *mut *mut c_char,
) -> AcStatus {
    guard(|| {
        let c = handle(client, "client")?;
        let doc = text(document_id, "document_id")?;
        let chains = c.api.chains(doc, None)?.chains;
        if chains.is_empty() {
            return Err(Failure::new(AcStatus::NotFound, "UnknownRequest", format!("no chain for {doc}")));
        }
        let signers: Vec<_> = chains.iter().flat_map(|ch| ch.blocks.iter().map(|b| b.payload.attester_did.clone())).collect();
        let view = c.api.registry_view(&signers)?;
        for ch in &chains {
            let report = verify_chain(&ch.blocks, &view);
            if !report.valid {
                return put_json(out_json, &report);
            }
        }
        put_json(out_json, &serde_json::json!({ "valid": true }))
    })
}
