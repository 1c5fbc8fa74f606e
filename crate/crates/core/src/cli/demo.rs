use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::rngs::OsRng;
use serde_json::{json, Value};

use crate::agents::{Decision, Wallet};
use crate::client::ApiClient;
use crate::credentials::verify_aggregate_credential;
use crate::crypto::{Identity, Nonce128};
use crate::ledger::verify_chain;
use crate::registry::{Did, Role};
use crate::service::{RunningService, ServiceConfig, ServiceState};
use crate::time::{Clock, SystemClock};
use crate::workflow::StepInput;

use super::CliError;

fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::new("DemoFailed", e.to_string())
}

fn client(url: &str, who: Option<&Identity>) -> Result<ApiClient, CliError> {
    let mut c = ApiClient::new(url)?;
    if let Some(id) = who {
        c.login(id)?;
    }
    Ok(c)
}

/// Holder, five attesting entities and a verifier walk one document through
/// the default template on a private gateway.
pub(crate) fn run(data_dir: Option<&Path>) -> Result<Value, CliError> {
    let temp;
    let dir = match data_dir {
        Some(d) => d.to_owned(),
        None => {
            temp = tempfile::tempdir().map_err(fail)?;
            temp.path().to_owned()
        }
    };
    let mut cfg = ServiceConfig::new(&dir);
    cfg.listen = "127.0.0.1:0".parse().expect("literal address");
    cfg.open_registration = true;
    let listen = cfg.listen;
    let state = ServiceState::open(cfg).map_err(|e| CliError::new(&e.code, e.message))?;
    let svc = RunningService::start(Arc::new(state), listen).map_err(fail)?;
    let url = svc.url();
    let clock = SystemClock;

    let holder = Identity::generate(&mut OsRng);
    let verifier = Identity::generate(&mut OsRng);
    let attesters: Vec<Identity> = (0..5).map(|_| Identity::generate(&mut OsRng)).collect();
    let anon = client(&url, None)?;
    anon.register(&holder, Role::Holder, None, clock.now())?;
    anon.register(&verifier, Role::Verifier, None, clock.now())?;
    for a in &attesters {
        anon.register(a, Role::AttestingEntity, None, clock.now())?;
    }

    let request = client(&url, Some(&holder))?.submit_request("D-100", "AE", None)?;
    let id = request.request_id;
    let mut micros = Vec::new();
    for (i, a) in attesters.iter().enumerate() {
        let input = StepInput {
            phase_number: i as u32 + 1,
            claims: BTreeMap::from([("step_outcome".to_owned(), "approved".to_owned())]),
            policy_refs: Vec::new(),
        };
        micros.push(client(&url, Some(a))?.record_step(&id, a, input)?.credential);
    }
    let last = &attesters[4];
    let credential = client(&url, Some(last))?.finalize(&id, last)?.credential;
    let aggregate = credential.id.clone();
    let issuers = micros.iter().map(|m| &m.issuer_did).chain([&credential.issuer_did]);
    let aggregate_check = verify_aggregate_credential(&credential, &micros, &anon.registry_view(issuers)?, clock.now());

    let chains = anon.chains("D-100", Some("AE"))?.chains;
    let blocks = &chains.first().ok_or_else(|| fail("chain missing"))?.blocks;
    let signers: BTreeSet<&Did> = blocks.iter().map(|b| &b.payload.attester_did).collect();
    let report = verify_chain(blocks, &anon.registry_view(signers)?);

    let holder_api = client(&url, Some(&holder))?;
    let mut wallet = Wallet::new(Identity::from_secret_record(&holder.secrets()).map_err(fail)?);
    holder_api.sync_wallet(&mut wallet, clock.now())?;
    let offers: Vec<(String, Did)> = wallet.pending_offers().map(|o| (o.offer_id.clone(), o.issuer_did.clone())).collect();
    for (offer_id, issuer) in &offers {
        let view = holder_api.registry_view([issuer, wallet.owner_did()])?;
        let ack = wallet.respond_to_offer(offer_id, Decision::Accept, &view, clock.now())?;
        holder_api.post_message(&ack)?;
    }

    let nonce = Nonce128::random(&mut OsRng);
    let presentation = wallet
        .create_presentation(&[aggregate.clone()], nonce, Some(verifier.did()), clock.now())
        .map_err(fail)?;
    let verdict = client(&url, Some(&verifier))?.verify_presentation(&presentation, nonce)?;

    Ok(json!({
        "request_id": id,
        "aggregate_credential_id": aggregate,
        "aggregate_valid": aggregate_check.is_ok(),
        "micro_credential_ids": credential.subject.micro_credential_ids,
        "blocks": blocks.len(),
        "chain_valid": report.valid,
        "credentials_accepted": wallet.credentials().len(),
        "presentation_valid": verdict.valid,
    }))
}
