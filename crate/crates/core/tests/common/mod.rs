#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use attestchain::client::ApiClient;
use attestchain::ids::IdSource;
use attestchain::service::{RunningService, ServiceConfig, ServiceState};
use attestchain::workflow::{StepInput, TemplateSet, Workflow};
use attestchain::{Identity, ManualClock, Role, Timestamp};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use tempfile::TempDir;

pub const T0: i64 = 1_709_283_600;

/// One gateway on a temporary data directory plus a registered cast.
pub struct Net {
    pub dir: TempDir,
    pub clock: Arc<ManualClock>,
    pub svc: RunningService,
    pub holder: Identity,
    pub attesters: Vec<Identity>,
    pub issuer: Identity,
    pub verifier: Identity,
}

pub fn config(data_dir: &Path, authority: &Identity) -> ServiceConfig {
    let mut cfg = ServiceConfig::new(data_dir);
    cfg.listen = "127.0.0.1:0".parse().unwrap();
    cfg.revocation_authorities = vec![authority.did().clone()];
    cfg
}

pub fn start(data_dir: &Path, cfg: ServiceConfig, templates: TemplateSet, clock: Arc<ManualClock>, seed: u64) -> RunningService {
    let wf = Workflow::open(data_dir, templates, cfg.revocation_authorities.clone(), clock, IdSource::seeded(seed)).unwrap();
    let listen = cfg.listen;
    let state = ServiceState::new(Arc::new(wf), cfg).unwrap();
    RunningService::start(Arc::new(state), listen).unwrap()
}

pub fn cast(seed: u64) -> (Identity, Vec<Identity>, Identity, Identity) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let holder = Identity::generate(&mut rng);
    let attesters = (0..5).map(|_| Identity::generate(&mut rng)).collect();
    let issuer = Identity::generate(&mut rng);
    let verifier = Identity::generate(&mut rng);
    (holder, attesters, issuer, verifier)
}

impl Net {
    pub fn new() -> Net {
        Net::with(TemplateSet::default(), |_| {})
    }

    pub fn with(templates: TemplateSet, tweak: impl FnOnce(&mut ServiceConfig)) -> Net {
        Net::boot(tempfile::tempdir().unwrap(), templates, tweak, 1)
    }

    /// A gateway on `dir`, whose contents (such as a gateway key) are kept.
    pub fn boot(dir: TempDir, templates: TemplateSet, tweak: impl FnOnce(&mut ServiceConfig), seed: u64) -> Net {
        let clock = Arc::new(ManualClock::new(Timestamp::from_unix(T0)));
        let (holder, attesters, issuer, verifier) = cast(7);
        let mut cfg = config(dir.path(), &issuer);
        tweak(&mut cfg);
        let svc = start(dir.path(), cfg, templates, clock.clone(), seed);
        let net = Net { dir, clock, svc, holder, attesters, issuer, verifier };
        net.enroll();
        net
    }

    /// Register everyone over HTTP: holder and verifier on their own, the
    /// issuer as a configured authority, attesters under the issuer's session.
    pub fn enroll(&self) {
        let now = self.clock.now_ts();
        let anon = self.anon();
        anon.register(&self.holder, Role::Holder, None, now).unwrap();
        anon.register(&self.verifier, Role::Verifier, None, now).unwrap();
        anon.register(&self.issuer, Role::CredentialIssuer, None, now).unwrap();
        let issuer = self.login(&self.issuer);
        for a in &self.attesters {
            issuer.register(a, Role::AttestingEntity, None, now).unwrap();
        }
    }

    pub fn anon(&self) -> ApiClient {
        ApiClient::new(&self.svc.url()).unwrap()
    }

    pub fn login(&self, id: &Identity) -> ApiClient {
        let mut c = self.anon();
        c.login(id).unwrap();
        c
    }
}

pub trait NowTs {
    fn now_ts(&self) -> Timestamp;
}

impl NowTs for ManualClock {
    fn now_ts(&self) -> Timestamp {
        attestchain::Clock::now(self)
    }
}

pub fn step(n: u32) -> StepInput {
    StepInput {
        phase_number: n,
        claims: BTreeMap::from([("step_outcome".to_owned(), "approved".to_owned())]),
        policy_refs: vec![format!("policy:phase-{n}")],
    }
}
