use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::registry::Did;

/// Contents of `config/service.json`. Relative paths are taken from the
/// directory the service is started in.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_dir: Option<PathBuf>,
    #[serde(default = "default_session_ttl")]
    pub session_ttl_seconds: u32,
    #[serde(default = "default_draft_ttl")]
    pub draft_ttl_seconds: u32,
    /// DIDs allowed to revoke any attestation and to register attesting
    /// entities and credential issuers.
    #[serde(default)]
    pub revocation_authorities: Vec<Did>,
    /// Let anyone self-register as an attesting entity or credential issuer.
    /// Meant for demos and tests.
    #[serde(default)]
    pub open_registration: bool,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8480))
}

fn default_session_ttl() -> u32 {
    3600
}

fn default_draft_ttl() -> u32 {
    300
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            listen: default_listen(),
            data_dir: data_dir.into(),
            template_dir: None,
            session_ttl_seconds: default_session_ttl(),
            draft_ttl_seconds: default_draft_ttl(),
            revocation_authorities: Vec::new(),
            open_registration: false,
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
