use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::{AgentError, KdfParams, Wallet};
use crate::api::ErrorDetail;
use crate::canonical;
use crate::client::{ApiClient, ClientError, OfflineQueue, QueueError};
use crate::registry::Did;

use super::Cli;

const DEFAULT_SERVICE_URL: &str = "http://127.0.0.1:8480";

#[derive(Debug, thiserror::Error)]
#[error("{code}: {message}")]
pub struct CliError {
    pub code: String,
    pub message: String,
}

impl CliError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        CliError { code: code.to_owned(), message: message.into() }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Api { code, message, .. } => CliError { code, message },
            other => CliError::new(other.code(), other.to_string()),
        }
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

impl From<QueueError> for CliError {
    fn from(e: QueueError) -> Self {
        CliError::new("StorageError", e.to_string())
    }
}

pub(crate) fn print_json(value: &Value) {
    let bytes = canonical::to_vec(value).unwrap_or_else(|e| format!("{{\"error\":{{\"code\":\"Internal\",\"message\":\"{e}\"}}}}").into_bytes());
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(&bytes);
    let _ = out.write_all(b"\n");
}

pub(crate) fn print_error(e: &CliError) {
    let detail = ErrorDetail { code: e.code.clone(), message: e.message.clone() };
    print_json(&serde_json::json!({ "error": detail }));
}

/// One named operator setup.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliProfile {
    pub service_url: String,
    pub wallet: PathBuf,
    pub did: Did,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profiles {
    pub profiles: BTreeMap<String, CliProfile>,
}

/// `~/.attestchain`
pub(crate) fn home() -> Result<PathBuf, CliError> {
    let home = std::env::var_os("HOME").ok_or_else(|| CliError::new("ConfigError", "HOME is not set"))?;
    Ok(PathBuf::from(home).join(".attestchain"))
}

impl Profiles {
    fn path() -> Result<PathBuf, CliError> {
        Ok(home()?.join("profiles.json"))
    }

    pub fn load() -> Result<Self, CliError> {
        let path = Self::path()?;
        if !path.exists() {
            return Ok(Profiles::default());
        }
        let bytes = std::fs::read(&path).map_err(|e| CliError::new("ConfigError", format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::new("ConfigError", format!("{}: {e}", path.display())))
    }

    pub fn save(&self) -> Result<(), CliError> {
        let path = Self::path()?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::new("ConfigError", e.to_string()))?;
        }
        crate::jsonl::write_document(&path, self).map_err(|e| CliError::new("ConfigError", e.to_string()))
    }
}

/// Flags resolved against the selected profile.
pub(crate) struct Context<'a> {
    pub cli: &'a Cli,
    pub profile: Option<CliProfile>,
}

impl<'a> Context<'a> {
    pub fn new(cli: &'a Cli) -> Result<Self, CliError> {
        let profile = match &cli.profile {
            Some(name) => Profiles::load()?.profiles.get(name).cloned(),
            None => None,
        };
        Ok(Context { cli, profile })
    }

    pub fn service_url(&self) -> String {
        self.cli
            .service_url
            .clone()
            .or_else(|| self.profile.as_ref().map(|p| p.service_url.clone()))
            .unwrap_or_else(|| DEFAULT_SERVICE_URL.to_owned())
    }

    pub fn wallet_path(&self) -> Result<PathBuf, CliError> {
        self.cli
            .wallet
            .clone()
            .or_else(|| self.profile.as_ref().map(|p| p.wallet.clone()))
            .ok_or_else(|| CliError::new("WalletRequired", "pass --wallet or a --profile with a wallet"))
    }

    pub fn passphrase(&self) -> Result<Vec<u8>, CliError> {
        let path = self
            .cli
            .passphrase_file
            .as_ref()
            .ok_or_else(|| CliError::new("PassphraseRequired", "pass --passphrase-file"))?;
        read_passphrase(path)
    }

    pub fn wallet(&self) -> Result<LoadedWallet, CliError> {
        let path = self.wallet_path()?;
        let passphrase = self.passphrase()?;
        let wallet = Wallet::load(&path, &passphrase)?;
        Ok(LoadedWallet { wallet, path, passphrase })
    }

    pub fn anon(&self) -> Result<ApiClient, CliError> {
        Ok(ApiClient::new(&self.service_url())?)
    }

    pub fn session(&self, w: &LoadedWallet) -> Result<ApiClient, CliError> {
        let mut client = self.anon()?;
        client.login(w.wallet.identity())?;
        Ok(client)
    }

    pub fn queue(&self, did: &Did) -> Result<OfflineQueue, CliError> {
        Ok(OfflineQueue::open(&home()?.join("queues").join(did.as_str()))?)
    }
}

pub(crate) fn read_passphrase(path: &Path) -> Result<Vec<u8>, CliError> {
    let raw = std::fs::read(path).map_err(|e| CliError::new("PassphraseRequired", format!("{}: {e}", path.display())))?;
    let trimmed = raw.strip_suffix(b"\n").unwrap_or(&raw);
    let trimmed = trimmed.strip_suffix(b"\r").unwrap_or(trimmed);
    Ok(trimmed.to_vec())
}

pub(crate) struct LoadedWallet {
    pub wallet: Wallet,
    pub path: PathBuf,
    passphrase: Vec<u8>,
}

impl LoadedWallet {
    /// Rewrite the wallet at the cost it was created with.
    pub fn save(&self) -> Result<(), CliError> {
        let old = Wallet::kdf_params(&self.path)?;
        self.wallet.save_with(&self.path, &self.passphrase, KdfParams::new(old.memory_kib, old.iterations))?;
        Ok(())
    }
}
