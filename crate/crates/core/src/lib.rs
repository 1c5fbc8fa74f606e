//! Document attestation on tamper-evident, hash-linked chains, with a
//! signed micro-credential per completed phase and an aggregate credential
//! once every phase is done.

pub mod agents;
pub mod api;
pub mod canonical;
pub mod cli;
pub mod client;
pub mod credentials;
pub mod crypto;
pub mod ids;
pub mod jsonl;
pub mod ledger;
pub mod privacy;
pub mod registry;
pub mod service;
pub mod time;
pub mod workflow;

pub use crypto::{Digest, Identity, PublicKey, Signature};
pub use registry::{Did, DidDocument, Registry, Role};
pub use time::{Clock, ManualClock, SystemClock, Timestamp};
