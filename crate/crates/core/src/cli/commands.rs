use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::sync::Arc;

use rand::rngs::OsRng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::agents::{AgentPayload, Decision, KdfParams, OfferState, Received, Wallet};
use crate::api::OfflineOp;
use crate::client::ApiClient;
use crate::credentials::Presentation;
use crate::crypto::{Identity, Nonce128};
use crate::ledger::{verify_chain, ChainId};
use crate::registry::Did;
use crate::service::{RunningService, ServiceConfig, ServiceState};
use crate::time::{Clock, SystemClock, Timestamp};
use crate::workflow::StepInput;

use super::context::{read_passphrase, Context, LoadedWallet, Profiles};
use super::{ChainCmd, Cli, CliError, CliProfile, Command, DemoCmd, ExpireCmd, IdentityCmd, MessageCmd, OfflineCmd};
use super::{PresentCmd, RequestCmd, StepCmd, WalletCmd};

type Out = Result<Value, CliError>;

fn value<T: Serialize>(v: T) -> Out {
    serde_json::to_value(v).map_err(|e| CliError::new("Internal", e.to_string()))
}

fn now() -> Timestamp {
    SystemClock.now()
}

fn parse_did(s: &str) -> Result<Did, CliError> {
    s.parse().map_err(|e| CliError::new("InvalidInput", format!("{s}: {e}")))
}

fn parse_request_id(s: &str) -> Result<ChainId, CliError> {
    s.parse().map_err(|e: String| CliError::new("InvalidInput", e))
}

fn parse_nonce(s: &str) -> Result<Nonce128, CliError> {
    Nonce128::from_hex(s).map_err(|e| CliError::new("InvalidInput", format!("nonce: {e}")))
}

pub(crate) fn run(cli: &Cli) -> Out {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Identity(cmd) => identity(&ctx, cmd),
        Command::Request(RequestCmd::Submit { document_id, destination, template }) => {
            let op = OfflineOp::SubmitRequest {
                document_id: document_id.clone(),
                destination_country: destination.clone(),
                template_id: template.clone(),
            };
            mutate(&ctx, op, |c, _| value(c.submit_request(document_id, destination, template.as_deref())?))
        }
        Command::Request(RequestCmd::Status { document_id, destination }) => {
            value(ctx.anon()?.status(document_id, destination.as_deref())?)
        }
        Command::Step(StepCmd::Record { request_id, phase, claims, policy_refs }) => {
            let request_id = parse_request_id(request_id)?;
            let mut parsed = BTreeMap::new();
            for c in claims {
                let (k, v) = c
                    .split_once('=')
                    .ok_or_else(|| CliError::new("InvalidInput", format!("claim {c} is not key=value")))?;
                parsed.insert(k.to_owned(), v.to_owned());
            }
            let input = StepInput { phase_number: *phase, claims: parsed, policy_refs: policy_refs.clone() };
            let op = OfflineOp::RecordStep {
                request_id: request_id.clone(),
                phase_number: input.phase_number,
                claims: input.claims.clone(),
                policy_refs: input.policy_refs.clone(),
            };
            mutate(&ctx, op, |c, id| value(c.record_step(&request_id, id, input.clone())?))
        }
        Command::Finalize { request_id } => {
            let request_id = parse_request_id(request_id)?;
            let op = OfflineOp::Finalize { request_id: request_id.clone() };
            mutate(&ctx, op, |c, id| value(c.finalize(&request_id, id)?))
        }
        Command::Revoke(args) => match (&args.request_id, &args.credential) {
            (_, Some(credential)) => {
                let w = ctx.wallet()?;
                value(ctx.session(&w)?.revoke_credential(credential, w.wallet.identity())?)
            }
            (Some(request_id), None) => {
                let request_id = parse_request_id(request_id)?;
                let reason = args.reason.clone().unwrap_or_else(|| "unspecified".into());
                let op = OfflineOp::Revoke { request_id: request_id.clone(), reason: reason.clone() };
                mutate(&ctx, op, |c, id| value(c.revoke(&request_id, id, &reason)?))
            }
            (None, None) => Err(CliError::new("UsageError", "give a request id or --credential")),
        },
        Command::Chain(cmd) => chain(&ctx, cmd),
        Command::Wallet(cmd) => wallet(&ctx, cmd),
        Command::Message(cmd) => message(&ctx, cmd),
        Command::Present(cmd) => present(&ctx, cmd),
        Command::Offline(cmd) => offline(&ctx, cmd),
        Command::Expire(ExpireCmd::Sweep) => {
            let w = ctx.wallet()?;
            value(ctx.session(&w)?.expire_sweep()?)
        }
        Command::Demo(DemoCmd::Run { data_dir }) => super::demo::run(data_dir.as_deref()),
        Command::Serve { config } => serve(config),
    }
}

/// Send a signed mutation, or queue it when asked to or when the service
/// cannot be reached.
fn mutate(ctx: &Context, op: OfflineOp, send: impl FnOnce(&ApiClient, &Identity) -> Out) -> Out {
    let w = ctx.wallet()?;
    let identity = w.wallet.identity();
    if !ctx.cli.offline {
        let mut client = ctx.anon()?;
        match client.login(identity) {
            Ok(_) => return send(&client, identity),
            Err(e) if e.is_unreachable() => tracing::warn!("service unreachable; queueing {}", op.name()),
            Err(e) => return Err(e.into()),
        }
    }
    let entry = ctx.queue(identity.did())?.enqueue(op, now())?;
    Ok(json!({ "queued": entry }))
}

fn identity(ctx: &Context, cmd: &IdentityCmd) -> Out {
    match cmd {
        IdentityCmd::Create { kdf_memory_kib, kdf_iterations } => {
            let path = ctx.wallet_path()?;
            if path.exists() {
                return Err(CliError::new("WalletExists", format!("{} already exists", path.display())));
            }
            let passphrase = ctx.passphrase()?;
            let wallet = Wallet::new(Identity::generate(&mut OsRng));
            wallet.save_with(&path, &passphrase, KdfParams::new(*kdf_memory_kib, *kdf_iterations))?;
            let did = wallet.owner_did().clone();
            if let Some(name) = &ctx.cli.profile {
                let mut profiles = Profiles::load()?;
                let profile = CliProfile { service_url: ctx.service_url(), wallet: path.clone(), did: did.clone() };
                profiles.profiles.insert(name.clone(), profile);
                profiles.save()?;
            }
            Ok(json!({ "did": did, "wallet": path }))
        }
        IdentityCmd::Register { role, service_endpoint, sponsor_wallet, sponsor_passphrase_file } => {
            let w = ctx.wallet()?;
            let mut client = ctx.anon()?;
            if let Some(sponsor) = sponsor_wallet {
                let passphrase = match sponsor_passphrase_file {
                    Some(p) => read_passphrase(p)?,
                    None => ctx.passphrase()?,
                };
                client.login(Wallet::load(sponsor, &passphrase)?.identity())?;
            }
            value(client.register(w.wallet.identity(), (*role).into(), service_endpoint.clone(), now())?)
        }
        IdentityCmd::Show => {
            let w = ctx.wallet()?;
            Ok(json!({ "did": w.wallet.owner_did() }))
        }
    }
}

fn chain(ctx: &Context, cmd: &ChainCmd) -> Out {
    let client = ctx.anon()?;
    match cmd {
        ChainCmd::Show { document_id, destination } => value(client.chains(document_id, destination.as_deref())?),
        ChainCmd::Verify { document_id, destination } => {
            let chains = client.chains(document_id, destination.as_deref())?.chains;
            if chains.is_empty() {
                return Err(CliError::new("UnknownRequest", format!("no chain for {document_id}")));
            }
            let signers: BTreeSet<&Did> = chains.iter().flat_map(|c| c.blocks.iter().map(|b| &b.payload.attester_did)).collect();
            let view = client.registry_view(signers)?;
            let mut failures = Vec::new();
            for c in &chains {
                let report = verify_chain(&c.blocks, &view);
                if !report.valid {
                    failures.push(json!({ "request_id": c.request_id, "report": report }));
                }
            }
            if failures.is_empty() {
                return Ok(json!({ "valid": true }));
            }
            Err(CliError::new("ChainInvalid", value(json!({ "valid": false, "chains": failures }))?.to_string()))
        }
    }
}

/// Pull the inbox into the wallet, keeping whatever opened.
fn sync(ctx: &Context, w: &mut LoadedWallet) -> Result<(ApiClient, Vec<Received>), CliError> {
    let client = ctx.session(w)?;
    let mut received = Vec::new();
    for r in client.sync_wallet(&mut w.wallet, now())? {
        match r {
            Ok(item) => received.push(item),
            Err(e) => tracing::warn!("inbox item skipped: {e}"),
        }
    }
    w.save()?;
    Ok((client, received))
}

fn respond(ctx: &Context, offer_id: &str, decision: Decision) -> Out {
    let mut w = ctx.wallet()?;
    let (client, _) = sync(ctx, &mut w)?;
    let offer = w
        .wallet
        .offers()
        .find(|o| o.offer_id == offer_id)
        .ok_or_else(|| CliError::new("UnknownOffer", format!("unknown offer {offer_id}")))?;
    let credential_id = offer.credential.id().to_owned();
    let view = client.registry_view([&offer.issuer_did.clone(), w.wallet.owner_did()])?;
    let ack = w.wallet.respond_to_offer(offer_id, decision, &view, now())?;
    w.save()?;
    client.post_message(&ack)?;
    Ok(json!({ "offer_id": offer_id, "credential_id": credential_id, "decision": decision }))
}

fn wallet(ctx: &Context, cmd: &WalletCmd) -> Out {
    match cmd {
        WalletCmd::Offers => {
            let mut w = ctx.wallet()?;
            sync(ctx, &mut w)?;
            let pending: Vec<_> = w.wallet.offers().filter(|o| o.state == OfferState::Pending).collect();
            Ok(json!({ "offers": value(pending)? }))
        }
        WalletCmd::Accept { offer_id } => respond(ctx, offer_id, Decision::Accept),
        WalletCmd::Reject { offer_id } => respond(ctx, offer_id, Decision::Reject),
        WalletCmd::List => {
            let w = ctx.wallet()?;
            Ok(json!({
                "did": w.wallet.owner_did(),
                "credentials": value(w.wallet.credentials())?,
                "audit_log": value(w.wallet.audit_log())?,
            }))
        }
    }
}

fn message(ctx: &Context, cmd: &MessageCmd) -> Out {
    let mut w = ctx.wallet()?;
    match cmd {
        MessageCmd::Send { recipient, body } => {
            let recipient = parse_did(recipient)?;
            let client = ctx.session(&w)?;
            let view = client.registry_view([&recipient, w.wallet.owner_did()])?;
            let msg = w.wallet.send_message(&recipient, &AgentPayload::Text { body: body.clone() }, &view, now())?;
            let posted = client.post_message(&msg)?;
            w.save()?;
            Ok(json!({ "seq": posted.seq, "message_id": msg.message_id() }))
        }
        MessageCmd::Read => {
            sync(ctx, &mut w)?;
            Ok(json!({ "messages": value(w.wallet.messages())? }))
        }
    }
}

fn present(ctx: &Context, cmd: &PresentCmd) -> Out {
    match cmd {
        PresentCmd::Challenge => Ok(json!({ "nonce": Nonce128::random(&mut OsRng) })),
        PresentCmd::Create { nonce, credentials, verifier } => {
            let mut w = ctx.wallet()?;
            let verifier = verifier.as_deref().map(parse_did).transpose()?;
            let p = w
                .wallet
                .create_presentation(credentials, parse_nonce(nonce)?, verifier.as_ref(), now())
                .map_err(|e| CliError::new(e.code(), e.to_string()))?;
            w.save()?;
            value(p)
        }
        PresentCmd::Verify { nonce, file } => {
            let raw = match file {
                Some(path) => std::fs::read(path).map_err(|e| CliError::new("InvalidInput", format!("{}: {e}", path.display())))?,
                None => {
                    let mut buf = Vec::new();
                    std::io::stdin().read_to_end(&mut buf).map_err(|e| CliError::new("InvalidInput", e.to_string()))?;
                    buf
                }
            };
            let presentation: Presentation =
                serde_json::from_slice(&raw).map_err(|e| CliError::new("MalformedRequest", format!("presentation: {e}")))?;
            let w = ctx.wallet()?;
            let verdict = ctx.session(&w)?.verify_presentation(&presentation, parse_nonce(nonce)?)?;
            match verdict.failure {
                None => value(verdict),
                Some(f) => Err(CliError::new(f.root().code(), f.to_string())),
            }
        }
    }
}

fn offline(ctx: &Context, cmd: &OfflineCmd) -> Out {
    let w = ctx.wallet()?;
    let queue = ctx.queue(w.wallet.owner_did())?;
    match cmd {
        OfflineCmd::List => Ok(json!({ "entries": queue.pending()? })),
        OfflineCmd::Flush => {
            if queue.pending()?.is_empty() {
                return Ok(json!({ "results": [] }));
            }
            let results = ctx.session(&w)?.flush_queue(&queue, w.wallet.identity())?;
            Ok(json!({ "results": results }))
        }
    }
}

fn serve(config: &std::path::Path) -> Out {
    let cfg = ServiceConfig::load(config).map_err(|e| CliError::new("ConfigError", e))?;
    let listen = cfg.listen;
    let state = ServiceState::open(cfg).map_err(|e| CliError::new(&e.code, e.message))?;
    let svc = RunningService::start(Arc::new(state), listen).map_err(|e| CliError::new("StorageError", e.to_string()))?;
    tracing::info!("listening on {}", svc.url());
    crate::cli::context::print_json(&json!({ "listening": svc.url() }));
    loop {
        std::thread::park();
    }
}
