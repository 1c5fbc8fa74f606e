//! Randomized properties over ledger, credentials, workflow and messaging.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, OnceLock};

use attestchain::agents::SecureMessage;
use attestchain::canonical;
use attestchain::credentials::{issue_micro_credential, verify_micro_credential, MicroCredential, MicroCredentialRequest};
use attestchain::ids::IdSource;
use attestchain::ledger::{verify_chain, verify_chain_jsonl, AttestationBlock, BlockPayload, ChainId};
use attestchain::privacy::CLAIM_KEYS;
use attestchain::registry::create_did;
use attestchain::workflow::{AttestationRequest, RequestState, StepInput, TemplateSet, Workflow, WorkflowTemplate};
use attestchain::{Identity, ManualClock, Registry, Role, Timestamp};
use proptest::prelude::*;
use proptest::test_runner::Config;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::Value;

const T0: i64 = 1_709_283_600;

fn register(registry: &Registry, rng: &mut ChaCha20Rng, role: Role) -> Identity {
    let id = Identity::generate(rng);
    registry
        .register_did(create_did(id.signing_public(), id.agreement_public(), role, None, Timestamp::from_unix(0)).unwrap())
        .unwrap();
    id
}

fn step(n: u32) -> StepInput {
    StepInput {
        phase_number: n,
        claims: BTreeMap::from([("step_outcome".to_owned(), "approved".to_owned())]),
        policy_refs: vec![format!("policy:phase-{n}")],
    }
}

struct Pool {
    registry: Arc<Registry>,
    chains: Vec<Vec<AttestationBlock>>,
}

/// Chains of every length the default template can produce, from a bare
/// genesis block up to finalized and revoked.
fn pool() -> &'static Pool {
    static POOL: OnceLock<Pool> = OnceLock::new();
    POOL.get_or_init(|| {
        let clock = Arc::new(ManualClock::new(Timestamp::from_unix(T0)));
        let wf = Workflow::in_memory(TemplateSet::default(), clock.clone(), IdSource::seeded(9)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let holder = register(wf.registry(), &mut rng, Role::Holder);
        let attesters: Vec<_> = (0..5).map(|_| register(wf.registry(), &mut rng, Role::AttestingEntity)).collect();
        let mut chains = Vec::new();
        for i in 0..16u32 {
            let id = wf.submit_request(&format!("D-{i}"), "AE", holder.did(), None).unwrap().request_id;
            let steps = if i % 8 >= 5 { 5 } else { i % 6 };
            for n in 1..=steps {
                clock.advance(1 + i64::from(n));
                wf.record_step(&id, &attesters[n as usize - 1], step(n)).unwrap();
            }
            if i % 8 >= 5 {
                wf.finalize_attestation(&id, &attesters[4]).unwrap();
            }
            if i % 8 == 7 {
                wf.revoke_attestation(&id, &attesters[4], "policy-fraud").unwrap();
            }
            let blocks = wf.ledger().blocks(&id).unwrap();
            assert!(verify_chain(&blocks, wf.registry()).valid);
            chains.push(blocks);
        }
        Pool { registry: wf.registry().clone(), chains }
    })
}

fn cases(n: u32) -> Config {
    Config { cases: n, failure_persistence: None, ..Config::default() }
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

/// Every scalar leaf of a JSON value, as a path of keys and indices.
fn leaves(v: &Value, path: &mut Vec<Value>, out: &mut Vec<Vec<Value>>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                path.push(Value::String(k.clone()));
                leaves(child, path, out);
                path.pop();
            }
        }
        Value::Array(a) => {
            for (i, child) in a.iter().enumerate() {
                path.push(Value::from(i));
                leaves(child, path, out);
                path.pop();
            }
        }
        _ => out.push(path.clone()),
    }
}

fn leaf_mut<'a>(v: &'a mut Value, path: &[Value]) -> &'a mut Value {
    path.iter().fold(v, |v, p| match p {
        Value::String(k) => v.get_mut(k.as_str()).unwrap(),
        Value::Number(i) => v.get_mut(i.as_u64().unwrap() as usize).unwrap(),
        _ => unreachable!(),
    })
}

/// Flip one bit of a scalar leaf, keeping strings valid UTF-8.
fn flip(v: &mut Value, pick: usize, bit: u32) {
    match v {
        Value::String(s) if !s.is_empty() => {
            let mut bytes = s.clone().into_bytes();
            let i = pick % bytes.len();
            bytes[i] ^= 1 << (bit % 8);
            *s = String::from_utf8(bytes).unwrap_or_else(|e| {
                let mut b = e.into_bytes();
                b[i] ^= 1 << (bit % 8);
                b[i] ^= 1;
                String::from_utf8(b).unwrap()
            });
        }
        Value::String(s) => s.push('0'),
        Value::Number(n) => *v = Value::from(n.as_u64().unwrap() ^ (1 << (bit % 63))),
        Value::Bool(b) => *b = !*b,
        Value::Null => *v = Value::Bool(true),
        _ => unreachable!(),
    }
}

fn extra_key(allowed: &'static [&'static str]) -> impl Strategy<Value = String> {
    "[a-z_]{1,12}|[A-Za-z0-9 @.]{1,16}".prop_filter("must be outside the whitelist", move |k| !allowed.contains(&k.as_str()))
}

fn junk_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        "[ -~]{0,24}".prop_map(Value::from),
        any::<u32>().prop_map(Value::from),
        any::<bool>().prop_map(Value::from),
        Just(Value::Null),
        Just(serde_json::json!({"name": "Jane Roe"})),
    ]
}

proptest! {
    #![proptest_config(cases(1200))]

    /// Any single-bit change to the stored chain is caught no later than the
    /// block that holds the changed byte.
    #[test]
    fn stored_bit_flips_are_always_detected(chain in any::<prop::sample::Index>(), at in any::<prop::sample::Index>(), bit in 0u8..8) {
        let p = pool();
        let blocks = &p.chains[chain.index(p.chains.len())];
        let (mut bytes, ends) = stored(blocks);
        let pos = at.index(bytes.len());
        bytes[pos] ^= 1 << bit;
        let owner = ends.iter().position(|&e| pos < e).unwrap() as u64;
        let report = verify_chain_jsonl(&bytes, &p.registry);
        prop_assert!(!report.valid, "flip at byte {pos} bit {bit} accepted");
        prop_assert!(report.first_invalid_index.unwrap() <= owner, "{report:?} for block {owner}");
    }
}

proptest! {
    #![proptest_config(cases(400))]

    #[test]
    fn field_bit_flips_are_always_detected(
        chain in any::<prop::sample::Index>(),
        block in any::<prop::sample::Index>(),
        leaf in any::<prop::sample::Index>(),
        pick in any::<usize>(),
        bit in 0u32..64,
    ) {
        let p = pool();
        let mut blocks = p.chains[chain.index(p.chains.len())].clone();
        let k = block.index(blocks.len());
        let mut value = serde_json::to_value(&blocks[k]).unwrap();
        let mut paths = Vec::new();
        leaves(&value, &mut Vec::new(), &mut paths);
        let path = &paths[leaf.index(paths.len())];
        flip(leaf_mut(&mut value, path), pick, bit);
        // A mutation the block type cannot even represent is rejected at parse.
        if let Ok(mutated) = serde_json::from_value::<AttestationBlock>(value) {
            blocks[k] = mutated;
            let report = verify_chain(&blocks, &p.registry);
            prop_assert!(!report.valid, "mutation of {path:?} accepted");
            prop_assert!(report.first_invalid_index.unwrap() <= k as u64);
        }
    }

    #[test]
    fn chain_links_and_indices_hold(chain in any::<prop::sample::Index>()) {
        let p = pool();
        let blocks = &p.chains[chain.index(p.chains.len())];
        for (i, b) in blocks.iter().enumerate() {
            prop_assert_eq!(b.index, i as u64);
            if i > 0 {
                prop_assert_eq!(b.prev_hash, blocks[i - 1].block_hash);
            }
            let once = canonical::to_vec(&b.payload).unwrap();
            prop_assert_eq!(&once, &canonical::to_vec(&b.payload).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(cases(100))]

    #[test]
    fn extra_payload_fields_are_rejected(
        chain in any::<prop::sample::Index>(),
        block in any::<prop::sample::Index>(),
        key in extra_key(&[
            "kind", "document_id", "subject_did", "attester_did", "timestamp", "policy_refs",
            "destination_country", "micro_credential_id", "aggregate_credential_id", "phase_number",
        ]),
        value in junk_value(),
    ) {
        let p = pool();
        let blocks = &p.chains[chain.index(p.chains.len())];
        let k = block.index(blocks.len());
        let mut payload = serde_json::to_value(&blocks[k].payload).unwrap();
        payload.as_object_mut().unwrap().insert(key.clone(), value.clone());
        prop_assert!(BlockPayload::from_json_value(&payload).is_err(), "payload accepted {key}");

        let mut block = serde_json::to_value(&blocks[k]).unwrap();
        block["payload"] = payload;
        let mut tampered = blocks.clone();
        match serde_json::from_value::<AttestationBlock>(block.clone()) {
            Ok(b) => {
                tampered[k] = b;
                prop_assert!(!verify_chain(&tampered, &p.registry).valid);
            }
            Err(_) => {
                let (mut bytes, ends) = stored(blocks);
                let start = if k == 0 { 0 } else { ends[k - 1] };
                let mut line = canonical::value_to_vec(&block).unwrap_or_else(|_| block.to_string().into_bytes());
                line.push(b'\n');
                bytes.splice(start..ends[k], line);
                prop_assert!(!verify_chain_jsonl(&bytes, &p.registry).valid);
            }
        }
    }

    #[test]
    fn extra_claim_keys_are_rejected(key in extra_key(&CLAIM_KEYS), value in "[a-z0-9]{1,12}") {
        let f = creds();
        let mut claims = BTreeMap::from([("step_outcome".to_owned(), "approved".to_owned())]);
        claims.insert(key.clone(), value.clone());
        let issued = issue_micro_credential(&f.attester, &f.registry, request(&f.holder, claims), "urn:attest:mc:x".into(), now());
        prop_assert_eq!(issued.unwrap_err().code(), "ClaimWhitelistViolation");

        // Smuggled into an issued credential, the claim breaks the signature.
        let mut smuggled = f.micro.clone();
        smuggled.subject.claims.insert(key, value);
        prop_assert!(verify_micro_credential(&smuggled, &f.registry, now()).is_err());
    }

    #[test]
    fn extra_credential_fields_do_not_parse(key in "[a-zA-Z_]{1,12}", value in junk_value()) {
        let f = creds();
        let mut v = serde_json::to_value(&f.micro).unwrap();
        prop_assume!(v.get(&key).is_none());
        v.as_object_mut().unwrap().insert(key.clone(), value.clone());
        prop_assert!(serde_json::from_value::<MicroCredential>(v).is_err());
        let mut v = serde_json::to_value(&f.micro).unwrap();
        prop_assume!(v["credentialSubject"].get(&key).is_none());
        v["credentialSubject"].as_object_mut().unwrap().insert(key, value);
        prop_assert!(serde_json::from_value::<MicroCredential>(v).is_err());
    }
}

struct Creds {
    registry: Registry,
    attester: Identity,
    holder: Identity,
    micro: MicroCredential,
}

fn now() -> Timestamp {
    Timestamp::from_unix(T0 + 60)
}

fn request(holder: &Identity, claims: BTreeMap<String, String>) -> MicroCredentialRequest {
    MicroCredentialRequest {
        subject_did: holder.did().clone(),
        document_id: "D-7".into(),
        phase_number: 1,
        phase_name: "Notary".into(),
        claims,
        expires_at: Some(Timestamp::from_unix(T0 + 86_400)),
    }
}

fn creds() -> &'static Creds {
    static CREDS: OnceLock<Creds> = OnceLock::new();
    CREDS.get_or_init(|| {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let registry = Registry::in_memory();
        let attester = register(&registry, &mut rng, Role::AttestingEntity);
        let holder = register(&registry, &mut rng, Role::Holder);
        let claims = BTreeMap::from([
            ("step_outcome".to_owned(), "approved".to_owned()),
            ("office_code".to_owned(), "NTR-04".to_owned()),
        ]);
        let id = "urn:attest:mc:p1".to_owned();
        let micro = issue_micro_credential(&attester, &registry, request(&holder, claims), id, Timestamp::from_unix(T0)).unwrap();
        Creds { registry, attester, holder, micro }
    })
}

proptest! {
    #![proptest_config(cases(300))]

    #[test]
    fn credential_mutations_fail_verification(leaf in any::<prop::sample::Index>(), pick in any::<usize>(), bit in 0u32..64) {
        let f = creds();
        let mut value = serde_json::to_value(&f.micro).unwrap();
        let mut paths = Vec::new();
        leaves(&value, &mut Vec::new(), &mut paths);
        let path = &paths[leaf.index(paths.len())];
        flip(leaf_mut(&mut value, path), pick, bit);
        if let Ok(mutated) = serde_json::from_value::<MicroCredential>(value) {
            prop_assert!(verify_micro_credential(&mutated, &f.registry, now()).is_err(), "mutation of {path:?} verified");
        }
    }

    #[test]
    fn issued_credentials_verify_and_encode_stably(
        outcome in "[a-z]{1,10}",
        office in "[A-Z]{2,4}-[0-9]{1,3}",
        phase in 1u32..9,
        lifetime in 1i64..10_000_000,
    ) {
        let f = creds();
        let claims = BTreeMap::from([("step_outcome".to_owned(), outcome), ("office_code".to_owned(), office)]);
        let mut req = request(&f.holder, claims);
        req.phase_number = phase;
        req.expires_at = Some(Timestamp::from_unix(T0 + lifetime));
        let m = issue_micro_credential(&f.attester, &f.registry, req, "urn:attest:mc:r".into(), Timestamp::from_unix(T0)).unwrap();
        prop_assert!(verify_micro_credential(&m, &f.registry, Timestamp::from_unix(T0)).is_ok());
        let bytes = canonical::to_vec(&m).unwrap();
        let back: MicroCredential = canonical::from_canonical_slice(&bytes).unwrap();
        prop_assert_eq!(canonical::to_vec(&back).unwrap(), bytes);
    }

    #[test]
    fn only_the_recipient_can_open_a_message(body in proptest::collection::vec(any::<u8>(), 0..256), seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let registry = Registry::in_memory();
        let cast: Vec<_> = [Role::Holder, Role::AttestingEntity, Role::AttestingEntity, Role::CredentialIssuer, Role::Verifier]
            .into_iter()
            .map(|r| register(&registry, &mut rng, r))
            .collect();
        let (sender, recipient) = (&cast[0], &cast[1]);
        let doc = registry.resolve_did(recipient.did()).unwrap();
        let msg = SecureMessage::seal(sender, &doc, &body, Timestamp::from_unix(T0), &mut rng).unwrap();
        prop_assert_eq!(msg.open(recipient, &registry).unwrap(), body.clone());
        if body.len() >= 8 {
            let shown = serde_json::to_string(&msg).unwrap();
            prop_assert!(!shown.contains(&hex::encode(&body)));
        }
        for other in cast.iter().filter(|c| c.did() != recipient.did()) {
            prop_assert!(msg.open(other, &registry).is_err());
            let mut readdressed = msg.clone();
            readdressed.recipient_did = other.did().clone();
            prop_assert!(readdressed.open(other, &registry).is_err());
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Submit(usize),
    Step { doc: usize, phase: u32, by: usize },
    Finalize { doc: usize, by: usize },
    Revoke { doc: usize, by: usize },
}

fn op(phases: u32) -> impl Strategy<Value = Op> {
    prop_oneof![
        1 => (0..2usize).prop_map(Op::Submit),
        6 => (0..2usize, 1..=phases + 1, 0..3usize).prop_map(|(doc, phase, by)| Op::Step { doc, phase, by }),
        2 => (0..2usize, 0..3usize).prop_map(|(doc, by)| Op::Finalize { doc, by }),
        1 => (0..2usize, 0..3usize).prop_map(|(doc, by)| Op::Revoke { doc, by }),
    ]
}

/// The brute-force model: per document, the live request's state.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Model {
    Active { done: u32, last: Option<usize> },
    Finalized { last: usize },
    Revoked,
}

proptest! {
    #![proptest_config(cases(64))]

    #[test]
    fn workflow_matches_its_model(phases in 1u32..5, ops in proptest::collection::vec(op(5), 1..40)) {
        let templates = TemplateSet::default().with(WorkflowTemplate::uniform("u", phases, Some(30))).unwrap();
        let clock = Arc::new(ManualClock::new(Timestamp::from_unix(T0)));
        let wf = Workflow::in_memory(templates, clock.clone(), IdSource::seeded(2)).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let holder = register(wf.registry(), &mut rng, Role::Holder);
        let attesters: Vec<_> = (0..3).map(|_| register(wf.registry(), &mut rng, Role::AttestingEntity)).collect();
        let mut model: [Option<(ChainId, Model)>; 2] = [None, None];

        for op in ops {
            clock.advance(1);
            match op {
                Op::Submit(doc) => {
                    let allowed = matches!(model[doc], None | Some((_, Model::Revoked)));
                    let got = wf.submit_request(&format!("D-{doc}"), "AE", holder.did(), Some("u"));
                    prop_assert_eq!(got.is_ok(), allowed, "{:?}", got);
                    if let Ok(r) = got {
                        model[doc] = Some((r.request_id, Model::Active { done: 0, last: None }));
                    } else {
                        prop_assert_eq!(got.unwrap_err().code(), "DuplicateRequest");
                    }
                }
                Op::Step { doc, phase, by } => {
                    let Some((id, state)) = model[doc].clone() else { continue };
                    let got = wf.record_step(&id, &attesters[by], step(phase));
                    match state {
                        Model::Active { done, .. } if phase == done + 1 && phase <= phases => {
                            prop_assert!(got.is_ok(), "{:?}", got);
                            model[doc] = Some((id, Model::Active { done: phase, last: Some(by) }));
                        }
                        Model::Active { .. } => prop_assert_eq!(got.unwrap_err().code(), "SkippedStep"),
                        _ => prop_assert!(got.is_err()),
                    }
                }
                Op::Finalize { doc, by } => {
                    let Some((id, state)) = model[doc].clone() else { continue };
                    let got = wf.finalize_attestation(&id, &attesters[by]);
                    match state {
                        Model::Active { done, last: Some(last) } if done == phases && last == by => {
                            prop_assert!(got.is_ok(), "{:?}", got);
                            model[doc] = Some((id, Model::Finalized { last }));
                        }
                        _ => prop_assert!(got.is_err()),
                    }
                }
                Op::Revoke { doc, by } => {
                    let Some((id, state)) = model[doc].clone() else { continue };
                    let got = wf.revoke_attestation(&id, &attesters[by], "policy-x");
                    match state {
                        Model::Finalized { last } if last == by => {
                            prop_assert!(got.is_ok(), "{:?}", got);
                            model[doc] = Some((id, Model::Revoked));
                        }
                        _ => prop_assert!(got.is_err()),
                    }
                }
            }
        }

        let mut live = BTreeSet::new();
        for request in wf.requests() {
            if request.state == RequestState::Finalized {
                prop_assert_eq!(request.micro_ids_by_phase.len() as u32, phases);
            }
            if !request.state.is_closed() {
                prop_assert!(live.insert(request.document_id.clone()), "two live requests for {}", request.document_id);
            }
            let blocks = wf.ledger().blocks(&request.request_id).unwrap();
            prop_assert!(verify_chain(&blocks, wf.registry()).valid);
            let folded = AttestationRequest::fold(&request.request_id, &blocks).unwrap();
            let mut expected = request.clone();
            expected.aggregate_expires_at = None;
            prop_assert_eq!(folded, expected);
        }
    }
}
