use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;

use crate::canonical;
use crate::crypto::{sha256, verify_signature, Digest, Identity, Signature};
use crate::jsonl::{self, JsonlError};
use crate::registry::Registry;
use crate::time::Clock;

use super::verify::{verify_chain, EventOrder, FailureReason};
use super::{AttestationBlock, BlockPayload, ChainId, EventKind, LedgerError, UnsignedBlock};

pub const CHAIN_FILE_SUFFIX: &str = ".chain.jsonl";

type ChainCell = Arc<RwLock<Vec<AttestationBlock>>>;

/// Append-only store of attestation chains, one per request.
///
/// Appends to a chain hold that chain's write lock, so they are serialized;
/// readers clone a snapshot under the read lock and only ever observe whole
/// blocks.
pub struct Ledger {
    dir: Option<PathBuf>,
    chains: RwLock<BTreeMap<ChainId, ChainCell>>,
    clock: Arc<dyn Clock>,
}

impl Ledger {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Ledger { dir: None, chains: RwLock::new(BTreeMap::new()), clock }
    }

    /// Load every `<chain_id>.chain.jsonl` under `dir`, refusing to start on
    /// any chain that does not verify.
    pub fn open(dir: &Path, registry: &Registry, clock: Arc<dyn Clock>) -> Result<Self, LedgerError> {
        std::fs::create_dir_all(dir)
            .map_err(|source| JsonlError::Io { path: dir.display().to_string(), source })?;
        let mut chains = BTreeMap::new();
        let entries = std::fs::read_dir(dir)
            .map_err(|source| JsonlError::Io { path: dir.display().to_string(), source })?;
        for entry in entries {
            let entry = entry.map_err(|source| JsonlError::Io { path: dir.display().to_string(), source })?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(stem) = name.strip_suffix(CHAIN_FILE_SUFFIX) else { continue };
            let chain_id: ChainId = stem.parse().map_err(LedgerError::Corrupt)?;
            let blocks: Vec<AttestationBlock> = jsonl::read_all(&entry.path())?;
            let report = verify_chain(&blocks, registry);
            if !report.valid {
                return Err(LedgerError::Corrupt(format!(
                    "chain {chain_id} failed verification at block {:?}: {:?}",
                    report.first_invalid_index, report.failure_reason
                )));
            }
            chains.insert(chain_id, Arc::new(RwLock::new(blocks)));
        }
        Ok(Ledger { dir: Some(dir.to_owned()), chains: RwLock::new(chains), clock })
    }

    pub fn chain_path(&self, chain_id: &ChainId) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{chain_id}{CHAIN_FILE_SUFFIX}")))
    }

    pub fn blocks(&self, chain_id: &ChainId) -> Option<Vec<AttestationBlock>> {
        let cell = self.chains.read().get(chain_id).cloned()?;
        let blocks = cell.read().clone();
        Some(blocks)
    }

    pub fn len(&self, chain_id: &ChainId) -> usize {
        self.chains.read().get(chain_id).map(|c| c.read().len()).unwrap_or(0)
    }

    /// Length and tip hash, or `None` for an unknown chain.
    pub fn tip(&self, chain_id: &ChainId) -> Option<(u64, Digest)> {
        let cell = self.chains.read().get(chain_id).cloned()?;
        let blocks = cell.read();
        blocks.last().map(|b| (blocks.len() as u64, b.block_hash))
    }

    pub fn chain_ids(&self) -> Vec<ChainId> {
        self.chains.read().keys().cloned().collect()
    }

    /// Every chain whose genesis names `document_id` (and `destination`, when
    /// given), ordered by opening time.
    pub fn chain_for_document(
        &self,
        document_id: &str,
        destination: Option<&str>,
    ) -> Vec<(ChainId, Vec<AttestationBlock>)> {
        let cells: Vec<(ChainId, ChainCell)> =
            self.chains.read().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let mut out: Vec<(ChainId, Vec<AttestationBlock>)> = cells
            .into_iter()
            .filter_map(|(id, cell)| {
                let blocks = cell.read().clone();
                let genesis = &blocks.first()?.payload;
                let matches = genesis.document_id == document_id
                    && destination.map_or(true, |d| genesis.destination_country.as_deref() == Some(d));
                matches.then_some((id, blocks))
            })
            .collect();
        out.sort_by(|a, b| (a.1[0].payload.timestamp, &a.0).cmp(&(b.1[0].payload.timestamp, &b.0)));
        out
    }

    /// Stamp, validate and position a payload at the chain tip.
    pub fn prepare(&self, chain_id: &ChainId, mut payload: BlockPayload) -> Result<UnsignedBlock, LedgerError> {
        payload.timestamp = self.clock.now();
        payload.validate()?;
        let (index, prev_hash) = match self.blocks(chain_id) {
            None if payload.kind == EventKind::RequestOpened => (0, Digest::ZERO),
            None => return Err(LedgerError::UnknownChain(chain_id.to_string())),
            Some(_) if payload.kind == EventKind::RequestOpened => {
                return Err(LedgerError::ChainExists(chain_id.to_string()))
            }
            Some(blocks) => {
                check_order(&blocks, &payload)?;
                let tip = blocks.last().expect("stored chains are never empty");
                (blocks.len() as u64, tip.block_hash)
            }
        };
        let payload_hash = sha256(&payload.canonical_bytes()?);
        Ok(UnsignedBlock { index, prev_hash, payload, payload_hash })
    }

    /// Attach the attester's signature and append. Fails with `StaleDraft`
    /// if the chain moved since `prepare`.
    pub fn commit(
        &self,
        chain_id: &ChainId,
        unsigned: UnsignedBlock,
        signature: Signature,
        registry: &Registry,
    ) -> Result<AttestationBlock, LedgerError> {
        unsigned.payload.validate()?;
        if sha256(&unsigned.payload.canonical_bytes()?) != unsigned.payload_hash {
            return Err(LedgerError::SchemaViolation("payload_hash does not match payload".into()));
        }
        let signer = registry
            .resolve_did(&unsigned.payload.attester_did)
            .map_err(|_| LedgerError::UnresolvableSigner(unsigned.payload.attester_did.to_string()))?;
        if !verify_signature(&signer.signing_key, &unsigned.signing_bytes(), &signature) {
            return Err(LedgerError::BadSignature);
        }

        if unsigned.index == 0 {
            if unsigned.payload.kind != EventKind::RequestOpened || unsigned.prev_hash != Digest::ZERO {
                return Err(LedgerError::OrderViolation("chain must start with RequestOpened".into()));
            }
            let mut chains = self.chains.write();
            if chains.contains_key(chain_id) {
                return Err(LedgerError::StaleDraft);
            }
            let block = unsigned.with_signature(signature);
            self.persist(chain_id, &block, true)?;
            chains.insert(chain_id.clone(), Arc::new(RwLock::new(vec![block.clone()])));
            return Ok(block);
        }

        let cell = self
            .chains
            .read()
            .get(chain_id)
            .cloned()
            .ok_or_else(|| LedgerError::UnknownChain(chain_id.to_string()))?;
        let mut blocks = cell.write();
        let tip = blocks.last().expect("stored chains are never empty");
        if blocks.len() as u64 != unsigned.index || tip.block_hash != unsigned.prev_hash {
            return Err(LedgerError::StaleDraft);
        }
        check_order(&blocks, &unsigned.payload)?;
        let block = unsigned.with_signature(signature);
        self.persist(chain_id, &block, false)?;
        blocks.push(block.clone());
        Ok(block)
    }

    /// Prepare, sign and commit in one step.
    pub fn append_block(
        &self,
        chain_id: &ChainId,
        payload: BlockPayload,
        signer: &Identity,
        registry: &Registry,
    ) -> Result<AttestationBlock, LedgerError> {
        if registry.resolve_did(signer.did()).is_err() || &payload.attester_did != signer.did() {
            return Err(LedgerError::UnresolvableSigner(signer.did().to_string()));
        }
        loop {
            let unsigned = self.prepare(chain_id, payload.clone())?;
            let sig = unsigned.sign(signer);
            match self.commit(chain_id, unsigned, sig, registry) {
                Err(LedgerError::StaleDraft) => continue,
                other => return other,
            }
        }
    }

    fn persist(&self, chain_id: &ChainId, block: &AttestationBlock, genesis: bool) -> Result<(), LedgerError> {
        let Some(path) = self.chain_path(chain_id) else { return Ok(()) };
        let io_err = |source| LedgerError::Storage(JsonlError::Io { path: path.display().to_string(), source });
        let mut line = canonical::to_vec(block).map_err(|e| LedgerError::Encoding(e.to_string()))?;
        line.push(b'\n');
        let mut opts = OpenOptions::new();
        if genesis {
            opts.write(true).create_new(true);
        } else {
            opts.append(true);
        }
        let mut file = opts.open(&path).map_err(io_err)?;
        file.write_all(&line).map_err(io_err)?;
        file.sync_data().map_err(io_err)
    }
}

fn check_order(blocks: &[AttestationBlock], payload: &BlockPayload) -> Result<(), LedgerError> {
    let map = |(reason, detail): (FailureReason, String)| match reason {
        FailureReason::SchemaViolation => LedgerError::SchemaViolation(detail),
        _ => LedgerError::OrderViolation(detail),
    };
    let mut order = EventOrder::replay(blocks.iter().map(|b| &b.payload)).map_err(map)?;
    order.accept(payload).map_err(map)
}
