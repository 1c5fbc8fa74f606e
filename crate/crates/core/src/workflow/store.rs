use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::credentials::{AggregateCredential, MicroCredential, MicroLookup};
use crate::jsonl;
use crate::ledger::ChainId;

use super::{AttestationRequest, WorkflowError};

const MICRO_FILE: &str = "micro.jsonl";
const AGGREGATE_FILE: &str = "aggregate.jsonl";

fn storage(e: impl std::fmt::Display) -> WorkflowError {
    WorkflowError::Storage(e.to_string())
}

/// Every credential this node has issued, append-only.
pub struct CredentialStore {
    dir: Option<PathBuf>,
    micros: RwLock<BTreeMap<String, MicroCredential>>,
    aggregates: RwLock<BTreeMap<String, AggregateCredential>>,
}

impl CredentialStore {
    pub fn in_memory() -> Self {
        CredentialStore { dir: None, micros: RwLock::default(), aggregates: RwLock::default() }
    }

    pub fn open(dir: &Path) -> Result<Self, WorkflowError> {
        std::fs::create_dir_all(dir).map_err(storage)?;
        let micros: Vec<MicroCredential> = jsonl::read_all(&dir.join(MICRO_FILE)).map_err(storage)?;
        let aggregates: Vec<AggregateCredential> = jsonl::read_all(&dir.join(AGGREGATE_FILE)).map_err(storage)?;
        Ok(CredentialStore {
            dir: Some(dir.to_owned()),
            micros: RwLock::new(micros.into_iter().map(|m| (m.id.clone(), m)).collect()),
            aggregates: RwLock::new(aggregates.into_iter().map(|a| (a.id.clone(), a)).collect()),
        })
    }

    pub fn put_micro(&self, micro: &MicroCredential) -> Result<(), WorkflowError> {
        let mut map = self.micros.write();
        if map.contains_key(&micro.id) {
            return Err(WorkflowError::InvalidInput(format!("credential id {} already issued", micro.id)));
        }
        if let Some(dir) = &self.dir {
            jsonl::append(&dir.join(MICRO_FILE), micro).map_err(storage)?;
        }
        map.insert(micro.id.clone(), micro.clone());
        Ok(())
    }

    pub fn put_aggregate(&self, agg: &AggregateCredential) -> Result<(), WorkflowError> {
        let mut map = self.aggregates.write();
        if map.contains_key(&agg.id) {
            return Err(WorkflowError::InvalidInput(format!("credential id {} already issued", agg.id)));
        }
        if let Some(dir) = &self.dir {
            jsonl::append(&dir.join(AGGREGATE_FILE), agg).map_err(storage)?;
        }
        map.insert(agg.id.clone(), agg.clone());
        Ok(())
    }

    pub fn micro(&self, id: &str) -> Option<MicroCredential> {
        self.micros.read().get(id).cloned()
    }

    pub fn aggregate(&self, id: &str) -> Option<AggregateCredential> {
        self.aggregates.read().get(id).cloned()
    }
}

impl MicroLookup for CredentialStore {
    fn micro(&self, id: &str) -> Option<MicroCredential> {
        CredentialStore::micro(self, id)
    }
}

pub(crate) type RequestCell = Arc<Mutex<AttestationRequest>>;

/// Current state of every request, cached under `state/requests/`. The
/// ledger is authoritative; these files are rebuilt from it on open.
pub(crate) struct RequestStore {
    dir: Option<PathBuf>,
    cells: RwLock<BTreeMap<ChainId, RequestCell>>,
}

impl RequestStore {
    pub(crate) fn new(dir: Option<PathBuf>) -> Result<Self, WorkflowError> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).map_err(storage)?;
        }
        Ok(RequestStore { dir, cells: RwLock::default() })
    }

    pub(crate) fn path(&self, id: &ChainId) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    pub(crate) fn read_cached(&self, id: &ChainId) -> Option<AttestationRequest> {
        jsonl::read_document(&self.path(id)?).ok()
    }

    pub(crate) fn persist(&self, request: &AttestationRequest) -> Result<(), WorkflowError> {
        match self.path(&request.request_id) {
            Some(path) => jsonl::write_document(&path, request).map_err(storage),
            None => Ok(()),
        }
    }

    pub(crate) fn insert(&self, request: AttestationRequest) -> Result<RequestCell, WorkflowError> {
        self.persist(&request)?;
        let cell = Arc::new(Mutex::new(request.clone()));
        self.cells.write().insert(request.request_id, cell.clone());
        Ok(cell)
    }

    pub(crate) fn get(&self, id: &ChainId) -> Option<RequestCell> {
        self.cells.read().get(id).cloned()
    }

    pub(crate) fn all(&self) -> Vec<RequestCell> {
        self.cells.read().values().cloned().collect()
    }
}
