//! Drives the `attestchain` binary against a live gateway.

mod common;

use std::path::PathBuf;
use std::process::Command;

use attestchain::canonical;
use common::Net;
use serde_json::Value;
use tempfile::TempDir;

struct Run {
    code: i32,
    json: Value,
    stdout: String,
    stderr: String,
}

/// A scratch HOME plus one passphrase shared by every wallet.
struct Shell {
    home: TempDir,
    url: String,
}

impl Shell {
    fn new(url: &str) -> Shell {
        let home = tempfile::tempdir().unwrap();
        std::fs::write(home.path().join("pass"), "correct horse\n").unwrap();
        Shell { home, url: url.to_owned() }
    }

    fn wallet(&self, name: &str) -> PathBuf {
        self.home.path().join(format!("{name}.wallet"))
    }

    fn raw(&self, args: &[&str]) -> Run {
        let out = Command::new(env!("CARGO_BIN_EXE_attestchain"))
            .env("HOME", self.home.path())
            .args(args)
            .output()
            .unwrap();
        let stdout = String::from_utf8(out.stdout).unwrap();
        let stderr = String::from_utf8(out.stderr).unwrap();
        let line = stdout.strip_suffix('\n').unwrap_or_else(|| panic!("no trailing newline: {stdout:?}"));
        assert!(!line.contains('\n'), "more than one document: {stdout}");
        let json: Value = serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {stdout}"));
        assert_eq!(canonical::to_vec(&json).unwrap(), line.as_bytes(), "output is not canonical");
        Run { code: out.status.code().unwrap(), json, stdout, stderr }
    }

    /// Runs as `who` with --quiet and checks nothing but JSON was written.
    fn as_(&self, who: &str, args: &[&str]) -> Run {
        let wallet = self.wallet(who);
        let pass = self.home.path().join("pass");
        let mut full = vec![
            "--quiet",
            "--service-url",
            &self.url,
            "--wallet",
            wallet.to_str().unwrap(),
            "--passphrase-file",
            pass.to_str().unwrap(),
        ];
        full.extend_from_slice(args);
        let run = self.raw(&full);
        assert!(run.stderr.is_empty(), "--quiet leaked: {}", run.stderr);
        run
    }

    fn ok(&self, who: &str, args: &[&str]) -> Value {
        let run = self.as_(who, args);
        assert_eq!(run.code, 0, "{args:?}: {}", run.stdout);
        run.json
    }

    fn fails(&self, who: &str, args: &[&str]) -> String {
        let run = self.as_(who, args);
        assert_eq!(run.code, 1, "{args:?}: {}", run.stdout);
        run.json["error"]["code"].as_str().unwrap().to_owned()
    }

    fn enroll(&self, who: &str, role: &str) -> String {
        let created = self.ok(who, &["identity", "create", "--kdf-memory-kib", "64", "--kdf-iterations", "1"]);
        self.ok(who, &["identity", "register", "--role", role]);
        created["did"].as_str().unwrap().to_owned()
    }
}

fn open_net() -> Net {
    Net::with(Default::default(), |cfg| cfg.open_registration = true)
}

fn s(v: &Value) -> &str {
    v.as_str().unwrap()
}

fn attesters(sh: &Shell) -> Vec<String> {
    (1..=5).map(|i| format!("a{i}")).inspect(|a| drop(sh.enroll(a, "attesting-entity"))).collect()
}

#[test]
fn full_flow_through_the_binary() {
    let net = open_net();
    let sh = Shell::new(&net.svc.url());
    let holder = sh.enroll("holder", "holder");
    let verifier = sh.enroll("verifier", "verifier");
    let a = attesters(&sh);

    let id = sh.ok("holder", &["request", "submit", "D-1", "--destination", "AE"])["request_id"].clone();
    let id = s(&id);
    assert_eq!(sh.fails("a2", &["step", "record", id, "--phase", "2", "--claim", "step_outcome=approved"]), "SkippedStep");
    assert_eq!(sh.fails("holder", &["step", "record", id, "--phase", "1"]), "Forbidden");
    assert_eq!(
        sh.fails("a1", &["step", "record", id, "--phase", "1", "--claim", "salary=100"]),
        "ClaimWhitelistViolation"
    );
    for (i, who) in a.iter().enumerate() {
        let phase = (i + 1).to_string();
        sh.ok(who, &["step", "record", id, "--phase", &phase, "--claim", "step_outcome=approved", "--policy-ref", "policy:std"]);
    }
    let fin = sh.ok("a5", &["finalize", id]);
    let aggregate = s(&fin["credential"]["id"]).to_owned();

    assert_eq!(sh.ok("holder", &["chain", "verify", "D-1", "--destination", "AE"]), serde_json::json!({"valid": true}));
    let status = sh.ok("holder", &["request", "status", "D-1"]);
    assert!(!status.to_string().contains("approved"), "{status}");

    let offers = sh.ok("holder", &["wallet", "offers"]);
    let offers = offers["offers"].as_array().unwrap();
    assert_eq!(offers.len(), 6);
    for o in offers {
        sh.ok("holder", &["wallet", "accept", s(&o["offer_id"])]);
    }
    let listed = sh.ok("holder", &["wallet", "list"]);
    assert_eq!(s(&listed["did"]), holder);
    assert_eq!(listed["credentials"].as_object().unwrap().len(), 6);

    let nonce = sh.ok("verifier", &["present", "challenge"])["nonce"].clone();
    let presentation = sh.ok("holder", &["present", "create", "--nonce", s(&nonce), "--credential", &aggregate, "--verifier", &verifier]);
    let file = sh.home.path().join("presentation.json");
    std::fs::write(&file, presentation.to_string()).unwrap();
    let args = ["present", "verify", "--nonce", s(&nonce), "--file", file.to_str().unwrap()];
    assert_eq!(sh.ok("verifier", &args)["valid"], true);
    assert_eq!(sh.fails("verifier", &args), "NonceReplayed");

    sh.ok("a5", &["revoke", id, "--reason", "policy:fraud"]);
    assert_eq!(sh.fails("holder", &["chain", "verify", "D-9"]), "UnknownRequest");
    let nonce = sh.ok("verifier", &["present", "challenge"])["nonce"].clone();
    let presentation = sh.ok("holder", &["present", "create", "--nonce", s(&nonce), "--credential", &aggregate]);
    std::fs::write(&file, presentation.to_string()).unwrap();
    assert_eq!(sh.fails("verifier", &["present", "verify", "--nonce", s(&nonce), "--file", file.to_str().unwrap()]), "Revoked");
}

#[test]
fn messages_travel_between_wallets() {
    let net = open_net();
    let sh = Shell::new(&net.svc.url());
    sh.enroll("holder", "holder");
    let a1 = sh.enroll("a1", "attesting-entity");
    sh.ok("holder", &["message", "send", &a1, "--body", "please expedite"]);
    let read = sh.ok("a1", &["message", "read"]);
    assert!(read.to_string().contains("please expedite"), "{read}");
}

#[test]
fn offline_entries_queue_then_flush() {
    let net = open_net();
    let sh = Shell::new(&net.svc.url());
    sh.enroll("holder", "holder");
    attesters(&sh);
    let id = sh.ok("holder", &["request", "submit", "D-2", "--destination", "AE"])["request_id"].clone();
    let id = s(&id);

    let queued = sh.ok("a1", &["--offline", "step", "record", id, "--phase", "1", "--claim", "step_outcome=approved"]);
    assert_eq!(queued["queued"]["seq"], 1);
    sh.ok("a1", &["--offline", "step", "record", id, "--phase", "3", "--claim", "step_outcome=approved"]);
    sh.ok("a1", &["--offline", "step", "record", id, "--phase", "2", "--claim", "step_outcome=approved"]);
    assert_eq!(sh.ok("a1", &["offline", "list"])["entries"].as_array().unwrap().len(), 3);

    let flushed = sh.ok("a1", &["offline", "flush"]);
    let results = flushed["results"].as_array().unwrap();
    let outcome: Vec<_> = results.iter().map(|r| (r["seq"].as_u64().unwrap(), r["ok"].as_bool().unwrap())).collect();
    assert_eq!(outcome, vec![(1, true), (2, false), (3, true)]);
    assert_eq!(results[1]["error"]["code"], "SkippedStep");
    assert!(sh.ok("a1", &["offline", "list"])["entries"].as_array().unwrap().is_empty());
    assert_eq!(sh.ok("a1", &["offline", "flush"])["results"], serde_json::json!([]));

    let chains = sh.ok("holder", &["chain", "show", "D-2"]);
    assert_eq!(chains["chains"][0]["blocks"].as_array().unwrap().len(), 3);
}

#[test]
fn unreachable_service_falls_back_to_the_queue() {
    let net = open_net();
    let sh = Shell::new(&net.svc.url());
    sh.enroll("holder", "holder");
    let dead = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", l.local_addr().unwrap())
    };
    let down = Shell { home: sh.home, url: dead };
    let queued = down.ok("holder", &["request", "submit", "D-3", "--destination", "AE"]);
    assert_eq!(queued["queued"]["operation"]["op"], "submit_request", "{queued}");
    let up = Shell { home: down.home, url: net.svc.url() };
    let results = up.ok("holder", &["offline", "flush"]);
    assert_eq!(results["results"][0]["ok"], true, "{results}");
    assert_eq!(up.ok("holder", &["request", "status", "D-3"])["requests"].as_array().unwrap().len(), 1);
}

#[test]
fn profiles_stand_in_for_flags() {
    let net = open_net();
    let sh = Shell::new(&net.svc.url());
    let wallet = sh.wallet("p");
    let pass = sh.home.path().join("pass");
    let create = sh.raw(&[
        "--quiet",
        "--profile",
        "desk",
        "--service-url",
        &sh.url,
        "--wallet",
        wallet.to_str().unwrap(),
        "--passphrase-file",
        pass.to_str().unwrap(),
        "identity",
        "create",
        "--kdf-memory-kib",
        "64",
        "--kdf-iterations",
        "1",
    ]);
    assert_eq!(create.code, 0, "{}", create.stdout);
    assert!(sh.home.path().join(".attestchain/profiles.json").exists());
    let pass = pass.to_str().unwrap();
    let reg = sh.raw(&["--quiet", "--profile", "desk", "--passphrase-file", pass, "identity", "register", "--role", "holder"]);
    assert_eq!(reg.code, 0, "{}", reg.stdout);
    let shown = sh.raw(&["--quiet", "--profile", "desk", "--passphrase-file", pass, "identity", "show"]);
    assert_eq!(shown.json["did"], create.json["did"]);
}

#[test]
fn usage_and_wallet_errors_are_json() {
    let sh = Shell::new("http://127.0.0.1:9");
    let run = sh.raw(&["step", "record"]);
    assert_eq!(run.code, 2);
    assert_eq!(run.json["error"]["code"], "UsageError");
    let run = sh.raw(&["--quiet", "identity", "show"]);
    assert_eq!(run.code, 1);
    assert_eq!(run.json["error"]["code"], "WalletRequired");

    sh.ok("w", &["identity", "create", "--kdf-memory-kib", "64", "--kdf-iterations", "1"]);
    assert_eq!(sh.fails("w", &["identity", "create"]), "WalletExists");
    std::fs::write(sh.home.path().join("pass"), "wrong").unwrap();
    let code = sh.fails("w", &["identity", "show"]);
    assert_eq!(code, "BadPassphrase");
}

#[test]
fn demo_prints_the_aggregate() {
    let sh = Shell::new("http://127.0.0.1:9");
    let data = sh.home.path().join("demo");
    let start = std::time::Instant::now();
    let run = sh.raw(&["--quiet", "demo", "run", "--data-dir", data.to_str().unwrap()]);
    assert_eq!(run.code, 0, "{}", run.stdout);
    assert!(start.elapsed().as_secs() < 10);
    let out = run.json;
    assert!(s(&out["aggregate_credential_id"]).starts_with("urn:attest:vc:"));
    assert_eq!(out["blocks"], 7);
    assert_eq!(out["micro_credential_ids"].as_array().unwrap().len(), 5);
    for key in ["chain_valid", "aggregate_valid", "presentation_valid"] {
        assert_eq!(out[key], true, "{key}");
    }
    assert!(data.read_dir().unwrap().next().is_some(), "data dir left empty");
}

#[test]
fn logs_go_to_stderr_without_quiet() {
    let sh = Shell::new("http://127.0.0.1:9");
    let run = sh.raw(&["demo", "run"]);
    assert_eq!(run.code, 0);
    assert!(run.stdout.starts_with('{'));
}
