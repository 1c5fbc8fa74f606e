//! Acceptance suite: one PASS/FAIL line per criterion, driven through the
//! gateway's HTTP API and the `attestchain` binary.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

use attestchain::agents::{Decision, Wallet};
use attestchain::api::{OfflineOp, PresentationVerdict};
use attestchain::canonical;
use attestchain::client::{ApiClient, ClientError, OfflineQueue};
use attestchain::crypto::{sha256, IdentitySecrets, Nonce128};
use attestchain::ledger::{canonical_encode, verify_chain_jsonl, AttestationBlock, BlockPayload, ChainId};
use attestchain::privacy::CLAIM_KEYS;
use attestchain::workflow::{StepInput, TemplateSet, WorkflowTemplate};
use attestchain::{Identity, Registry, Timestamp};
use common::{step, Net, NowTs};
use rand::rngs::OsRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn api_code<T: std::fmt::Debug>(r: Result<T, ClientError>) -> String {
    match r {
        Err(ClientError::Api { code, .. }) => code,
        other => format!("{other:?}"),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("end-to-end demo run", end_to_end),
        ("tamper evidence over 1000 single-bit mutations", tamper_evidence),
        ("contract rules and 24 phase orderings", contract_rules),
        ("revocation and expiry", revocation_and_expiry),
        ("privacy whitelist fuzz and public status", privacy_whitelist),
        ("replay protection 100/100", replay_protection),
        ("golden vectors", golden_vectors),
        ("offline queue equivalence", offline_equivalence),
    ];
    // Panics are reported on the criterion's FAIL line.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, run) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let ms = started.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({detail}; {ms} ms)"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_attestchain"))
        .args(["--quiet", "demo", "run", "--data-dir"])
        .arg(dir.path())
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stdout));
    let v: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    ensure!(v["blocks"] == 7, "chain has {} blocks", v["blocks"]);
    let micros = v["micro_credential_ids"].as_array().ok_or("no micro ids")?;
    ensure!(micros.len() == 5, "aggregate lists {} micros", micros.len());
    for key in ["chain_valid", "aggregate_valid", "presentation_valid"] {
        ensure!(v[key] == true, "{key} is {}", v[key]);
    }
    ensure!(elapsed.as_secs() < 10, "took {elapsed:?}");
    Ok(format!("{} in {:.2?}", v["aggregate_credential_id"].as_str().unwrap_or("?"), elapsed))
}

/// Drive `doc` through `steps` phases over HTTP, optionally finalizing.
fn build(net: &Net, doc: &str, steps: u32, finalize: bool) -> ChainId {
    let id = net.login(&net.holder).submit_request(doc, "AE", None).unwrap().request_id;
    for n in 1..=steps {
        let a = &net.attesters[n as usize - 1];
        net.login(a).record_step(&id, a, step(n)).unwrap();
    }
    if finalize {
        let a = &net.attesters[4];
        net.login(a).finalize(&id, a).unwrap();
    }
    id
}

fn fetch(net: &Net, doc: &str) -> (Vec<AttestationBlock>, Registry) {
    let anon = net.anon();
    let blocks = anon.chains(doc, None).unwrap().chains.remove(0).blocks;
    let signers: BTreeSet<_> = blocks.iter().map(|b| b.payload.attester_did.clone()).collect();
    let view = anon.registry_view(&signers).unwrap();
    (blocks, view)
}

fn stored(blocks: &[AttestationBlock]) -> (Vec<u8>, Vec<usize>) {
    let mut out = Vec::new();
    let mut ends = Vec::new();
    for b in blocks {
        out.extend(canonical::to_vec(b).unwrap());
        out.push(b'\n');
        ends.push(out.len());
    }
    (out, ends)
}

fn tamper_evidence() -> Outcome {
    let net = Net::new();
    let mut chains = Vec::new();
    for k in 0..=5 {
        let doc = format!("T-{k}");
        build(&net, &doc, k, k == 5);
        chains.push(fetch(&net, &doc));
    }
    for (blocks, view) in &chains {
        let report = verify_chain_jsonl(&stored(blocks).0, view);
        ensure!(report.valid, "pristine chain rejected: {report:?}");
    }
    let mut rng = ChaCha20Rng::seed_from_u64(1000);
    let cases = 1500;
    for case in 0..cases {
        let (blocks, view) = &chains[rng.gen_range(0..chains.len())];
        let (mut bytes, ends) = stored(blocks);
        let pos = rng.gen_range(0..bytes.len());
        let bit = rng.gen_range(0..8);
        bytes[pos] ^= 1 << bit;
        let owner = ends.iter().position(|&e| pos < e).unwrap() as u64;
        let report = verify_chain_jsonl(&bytes, view);
        ensure!(!report.valid, "case {case}: flip at byte {pos} bit {bit} accepted");
        let first = report.first_invalid_index.unwrap_or(u64::MAX);
        ensure!(first <= owner, "case {case}: reported index {first} after mutated block {owner}");
    }
    Ok(format!("{cases} cases, 0 false accepts"))
}

fn permutations(items: &[u32]) -> Vec<Vec<u32>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for (i, &head) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn contract_rules() -> Outcome {
    let templates = TemplateSet::default().with(WorkflowTemplate::uniform("four", 4, Some(365))).unwrap();
    let net = Net::with(templates, |_| {});
    let holder = net.login(&net.holder);
    holder.submit_request("DUP-1", "AE", None).map_err(|e| e.to_string())?;
    let dup = api_code(holder.submit_request("DUP-1", "AE", None));
    ensure!(dup == "DuplicateRequest", "duplicate gave {dup}");
    holder.submit_request("DUP-1", "FR", None).map_err(|e| format!("other destination refused: {e}"))?;

    let orders = permutations(&[1, 2, 3, 4]);
    ensure!(orders.len() == 24, "{} orderings", orders.len());
    let mut complete = Vec::new();
    let mut rejected = 0;
    for (i, order) in orders.iter().enumerate() {
        let id = holder.submit_request(&format!("PERM-{i}"), "AE", Some("four")).unwrap().request_id;
        let mut next = 1;
        let mut all_accepted = true;
        for &phase in order {
            let a = &net.attesters[phase as usize - 1];
            let got = net.login(a).record_step(&id, a, step(phase));
            if phase == next {
                got.map_err(|e| format!("{order:?}: in-order phase {phase} refused: {e}"))?;
                next += 1;
            } else {
                all_accepted = false;
                rejected += 1;
                let code = api_code(got);
                ensure!(code == "SkippedStep", "{order:?}: phase {phase} out of order gave {code}");
            }
        }
        if all_accepted {
            complete.push(order.clone());
        }
    }
    ensure!(complete == vec![vec![1, 2, 3, 4]], "fully accepted orderings: {complete:?}");
    Ok(format!("24 orderings, 1 accepted, {rejected} out-of-order steps refused with SkippedStep"))
}

/// The holder's wallet after accepting every offer waiting in its inbox.
fn holder_wallet(net: &Net) -> (Wallet, ApiClient) {
    let secrets: IdentitySecrets = net.holder.secrets();
    let mut wallet = Wallet::new(Identity::from_secret_record(&secrets).unwrap());
    let api = net.login(&net.holder);
    api.sync_wallet(&mut wallet, net.clock.now_ts()).unwrap();
    let offers: Vec<_> = wallet.pending_offers().map(|o| (o.offer_id.clone(), o.issuer_did.clone())).collect();
    for (offer, issuer) in offers {
        let view = api.registry_view([&issuer, wallet.owner_did()]).unwrap();
        let ack = wallet.respond_to_offer(&offer, Decision::Accept, &view, net.clock.now_ts()).unwrap();
        api.post_message(&ack).unwrap();
    }
    (wallet, api)
}

fn present(net: &Net, wallet: &mut Wallet, verifier: &ApiClient, credential: &str) -> PresentationVerdict {
    let nonce = Nonce128::random(&mut OsRng);
    let p = wallet
        .create_presentation(&[credential.to_owned()], nonce, Some(net.verifier.did()), net.clock.now_ts())
        .unwrap();
    verifier.verify_presentation(&p, nonce).unwrap()
}

fn revocation_and_expiry() -> Outcome {
    let templates = TemplateSet::default()
        .with(WorkflowTemplate::uniform("short", 1, Some(1)))
        .unwrap()
        .with(WorkflowTemplate::uniform("long", 1, Some(365)))
        .unwrap();
    let net = Net::with(templates, |_| {});
    let id = build(&net, "REV-1", 5, true);
    let aggregate = net.anon().status("REV-1", None).unwrap().requests[0].aggregate_credential_id.clone().ok_or("no aggregate")?;
    let (mut wallet, _) = holder_wallet(&net);
    let verifier = net.login(&net.verifier);
    let before = present(&net, &mut wallet, &verifier, &aggregate);
    ensure!(before.valid, "fresh aggregate refused: {:?}", before.failure);
    let last = &net.attesters[4];
    net.login(last).revoke(&id, last, "policy-fraud").map_err(|e| e.to_string())?;
    let after = present(&net, &mut wallet, &verifier, &aggregate);
    let code = after.failure.as_ref().map(|f| f.root().code()).unwrap_or("none");
    ensure!(!after.valid && code == "Revoked", "after revocation: valid={} code={code}", after.valid);

    let holder = net.login(&net.holder);
    let a = &net.attesters[0];
    let attester = net.login(a);
    let mut short = BTreeSet::new();
    for i in 0..6 {
        let template = if i % 2 == 0 { "short" } else { "long" };
        let id = holder.submit_request(&format!("EXP-{i}"), "AE", Some(template)).unwrap().request_id;
        attester.record_step(&id, a, step(1)).unwrap();
        attester.finalize(&id, a).unwrap();
        if i % 2 == 0 {
            short.insert(id);
        }
    }
    let issuer = net.login(&net.issuer);
    ensure!(issuer.expire_sweep().unwrap().expired.is_empty(), "sweep before expiry closed something");
    net.clock.advance(86_401);
    // Sessions age on the same clock.
    let issuer = net.login(&net.issuer);
    let swept: BTreeSet<_> = issuer.expire_sweep().unwrap().expired.into_iter().collect();
    ensure!(swept == short, "swept {swept:?}, expected {short:?}");
    let again = issuer.expire_sweep().unwrap().expired;
    ensure!(again.is_empty(), "re-run swept {again:?}");
    for i in 0..6 {
        let state = net.anon().status(&format!("EXP-{i}"), None).unwrap().requests[0].state.clone();
        let want = if i % 2 == 0 { "Expired" } else { "Finalized" };
        ensure!(state == want, "EXP-{i} is {state}");
    }
    Ok(format!("Revoked after revocation; {} of 6 fixtures expired, re-run idempotent", swept.len()))
}

fn random_key(rng: &mut ChaCha20Rng, forbidden: &[&str]) -> String {
    loop {
        let len = rng.gen_range(1..14);
        let key: String = (0..len).map(|_| char::from(b"abcdefghijklmnopqrstuvwxyz_ABCXYZ0189 .@"[rng.gen_range(0..40)])).collect();
        if !forbidden.contains(&key.as_str()) {
            return key;
        }
    }
}

fn random_value(rng: &mut ChaCha20Rng) -> Value {
    match rng.gen_range(0..5) {
        0 => Value::from(format!("Jane Roe {}", rng.gen::<u16>())),
        1 => Value::from(rng.gen::<u32>()),
        2 => Value::from(rng.gen::<bool>()),
        3 => Value::Null,
        _ => serde_json::json!({ "address": "12 Main St" }),
    }
}

fn contains_string(v: &Value, needle: &str) -> bool {
    match v {
        Value::String(s) => s.contains(needle),
        Value::Array(a) => a.iter().any(|x| contains_string(x, needle)),
        Value::Object(m) => m.iter().any(|(k, x)| k.contains(needle) || contains_string(x, needle)),
        _ => false,
    }
}

fn privacy_whitelist() -> Outcome {
    let net = Net::new();
    let mut rng = ChaCha20Rng::seed_from_u64(100);
    let id = net.login(&net.holder).submit_request("PRIV-1", "AE", None).unwrap().request_id;
    let a = &net.attesters[0];
    let attester = net.login(a);
    for trial in 0..100 {
        let key = random_key(&mut rng, &CLAIM_KEYS);
        let mut input = step(1);
        input.claims.insert(key.clone(), format!("v{}", rng.gen::<u32>()));
        let code = api_code(attester.record_step(&id, a, input));
        ensure!(code == "ClaimWhitelistViolation", "claim trial {trial} ({key:?}) gave {code}");
    }

    let secret = StepInput {
        phase_number: 1,
        claims: BTreeMap::from([
            ("step_outcome".to_owned(), "approved-x91".to_owned()),
            ("office_code".to_owned(), "OFC-SECRET-77".to_owned()),
        ]),
        policy_refs: vec!["policy:notary".into()],
    };
    attester.record_step(&id, a, secret).map_err(|e| e.to_string())?;
    let (blocks, view) = fetch(&net, "PRIV-1");
    let payload_fields: Vec<&str> = [
        "kind", "document_id", "subject_did", "attester_did", "timestamp", "policy_refs",
        "destination_country", "micro_credential_id", "aggregate_credential_id", "phase_number",
    ]
    .to_vec();
    for trial in 0..100 {
        let k = rng.gen_range(0..blocks.len());
        let key = random_key(&mut rng, &payload_fields);
        let mut block = serde_json::to_value(&blocks[k]).unwrap();
        block["payload"].as_object_mut().unwrap().insert(key.clone(), random_value(&mut rng));
        ensure!(BlockPayload::from_json_value(&block["payload"]).is_err(), "payload trial {trial} ({key:?}) parsed");
        let (mut bytes, ends) = stored(&blocks);
        let start = if k == 0 { 0 } else { ends[k - 1] };
        let mut line = canonical::value_to_vec(&block).unwrap();
        line.push(b'\n');
        bytes.splice(start..ends[k], line);
        ensure!(!verify_chain_jsonl(&bytes, &view).valid, "payload trial {trial} ({key:?}) verified");
    }

    let url = format!("{}/status/PRIV-1", net.svc.url());
    let status: Value = reqwest::blocking::get(url).and_then(|r| r.json()).map_err(|e| e.to_string())?;
    for needle in ["claims", "approved-x91", "OFC-SECRET-77", "office_code", "step_outcome"] {
        ensure!(!contains_string(&status, needle), "status response mentions {needle}: {status}");
    }
    Ok("100 claim and 100 payload injections refused; status carries no claims".into())
}

fn replay_protection() -> Outcome {
    let net = Net::new();
    build(&net, "RPL-1", 5, true);
    let aggregate = net.anon().status("RPL-1", None).unwrap().requests[0].aggregate_credential_id.clone().ok_or("no aggregate")?;
    let (mut wallet, _) = holder_wallet(&net);
    let verifier = net.login(&net.verifier);
    let mut refused = 0;
    for trial in 0..100 {
        let nonce = Nonce128::random(&mut OsRng);
        let p = wallet
            .create_presentation(&[aggregate.clone()], nonce, Some(net.verifier.did()), net.clock.now_ts())
            .map_err(|e| e.to_string())?;
        let first = verifier.verify_presentation(&p, nonce).map_err(|e| e.to_string())?;
        ensure!(first.valid, "trial {trial}: first verification failed: {:?}", first.failure);
        let second = verifier.verify_presentation(&p, nonce).map_err(|e| e.to_string())?;
        let code = second.failure.as_ref().map(|f| f.root().code()).unwrap_or("none");
        ensure!(!second.valid && code == "NonceReplayed", "trial {trial}: replay gave {code}");
        refused += 1;
    }
    Ok(format!("{refused}/100 replays refused"))
}

fn vector(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/vectors").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn golden_vectors() -> Outcome {
    let raw = vector("genesis_payload.json");
    let payload = BlockPayload::from_json_bytes(raw.as_bytes()).map_err(|e| e.to_string())?;
    let bytes = canonical_encode(&payload).map_err(|e| e.to_string())?;
    ensure!(bytes == vector("genesis_payload.canonical").trim_end().as_bytes(), "canonical bytes differ");
    let digest = sha256(&bytes).to_hex();
    ensure!(digest == vector("genesis_payload.sha256").trim(), "digest {digest}");
    for name in ["issuer_key", "holder_key", "gateway_key"] {
        let v: Value = serde_json::from_str(&vector(&format!("{name}.json"))).unwrap();
        let secrets = IdentitySecrets {
            signing_seed: v["signing_seed"].as_str().unwrap().to_owned(),
            agreement_secret: v["agreement_secret"].as_str().unwrap().to_owned(),
        };
        let id = Identity::from_secret_record(&secrets).map_err(|e| e.to_string())?;
        let want = vector(&format!("{name}.did.txt"));
        ensure!(id.did().as_str() == want.trim(), "{name}: {} != {}", id.did(), want.trim());
    }
    Ok("payload digest and 3 DIDs match".into())
}

/// Payload bytes with the service-assigned timestamp blanked.
fn payload_shape(blocks: &[AttestationBlock]) -> Vec<Vec<u8>> {
    blocks
        .iter()
        .map(|b| {
            let mut p = b.payload.clone();
            p.timestamp = Timestamp::from_unix(0);
            canonical::to_vec(&p).unwrap()
        })
        .collect()
}

fn offline_equivalence() -> Outcome {
    let online = Net::boot(tempfile::tempdir().unwrap(), TemplateSet::default(), |_| {}, 42);
    let offline_dir = tempfile::tempdir().unwrap();
    std::fs::copy(online.dir.path().join("gateway.key"), offline_dir.path().join("gateway.key")).map_err(|e| e.to_string())?;
    let offline = Net::boot(offline_dir, TemplateSet::default(), |_| {}, 42);
    let (a1, a2) = (&online.attesters[0], &online.attesters[1]);

    let id = online.login(&online.holder).submit_request("OFF-1", "AE", None).unwrap().request_id;
    online.login(a1).record_step(&id, a1, step(1)).unwrap();
    online.login(a2).record_step(&id, a2, step(2)).unwrap();

    let same_id = offline.login(&offline.holder).submit_request("OFF-1", "AE", None).unwrap().request_id;
    ensure!(same_id == id, "nodes diverged on request id");
    let queues = tempfile::tempdir().unwrap();
    let now = offline.clock.now_ts();
    let enqueue = |q: &OfflineQueue, phase| {
        let s = step(phase);
        let op = OfflineOp::RecordStep { request_id: id.clone(), phase_number: phase, claims: s.claims, policy_refs: s.policy_refs };
        q.enqueue(op, now).unwrap();
    };
    let q1 = OfflineQueue::open(&queues.path().join("a1")).unwrap();
    enqueue(&q1, 1);
    enqueue(&q1, 4);
    let q2 = OfflineQueue::open(&queues.path().join("a2")).unwrap();
    enqueue(&q2, 2);
    let r1 = offline.login(a1).flush_queue(&q1, a1).map_err(|e| e.to_string())?;
    let r2 = offline.login(a2).flush_queue(&q2, a2).map_err(|e| e.to_string())?;
    ensure!(r1.len() == 2 && r1[0].ok && r2.len() == 1 && r2[0].ok, "flush results {r1:?} {r2:?}");
    let invalid = r1[1].error.as_ref().map(|e| e.code.as_str()).unwrap_or("none");
    ensure!(!r1[1].ok && invalid == "SkippedStep", "invalid queued entry gave {invalid}");
    ensure!(q1.pending().unwrap().is_empty() && q2.pending().unwrap().is_empty(), "queue not drained");

    let (a, _) = fetch(&online, "OFF-1");
    let (b, view) = fetch(&offline, "OFF-1");
    ensure!(a.len() == 3 && b.len() == 3, "lengths {} and {}", a.len(), b.len());
    ensure!(payload_shape(&a) == payload_shape(&b), "payloads differ beyond timestamps");
    ensure!(verify_chain_jsonl(&stored(&b).0, &view).valid, "flushed chain does not verify");
    Ok("3 payloads identical modulo timestamps; queued phase 4 surfaced SkippedStep".into())
}
