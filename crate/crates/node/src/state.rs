//! The running node: replayed chain, single writer, snapshot readers.

use std::sync::{Arc, Mutex, RwLock};

use bcer2_core::ledger::Chain;
use bcer2_core::records::{HandlerRegistry, RecordsError, RecordsNetwork};
use bcer2_core::store::{ChainStore, StoreError};
use thiserror::Error;

use crate::config::{ConfigError, NodeConfig};

#[derive(Debug, Error)]
pub enum NodeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("refusing to start: chain file corrupt at height {height}: {reason}")]
    CorruptChain { height: u64, reason: String },
    #[error("chain store: {0}")]
    Store(StoreError),
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: std::net::SocketAddr, source: std::io::Error },
    #[error("server: {0}")]
    Serve(std::io::Error),
}

impl From<StoreError> for NodeError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Corrupt { height, reason } => NodeError::CorruptChain { height, reason },
            other => NodeError::Store(other),
        }
    }
}

#[derive(Debug)]
pub struct Node {
    config: NodeConfig,
    /// Held for the whole of a write: run consensus, persist, publish.
    store: Mutex<ChainStore>,
    current: RwLock<Arc<RecordsNetwork>>,
}

impl Node {
    /// Replays the chain file strictly; any unreadable or invalid block
    /// refuses the start and names its height.
    pub fn open(config: NodeConfig) -> Result<Self, NodeError> {
        let params = config.params()?;
        let (model, acl) = config.model_and_acl()?;
        let store = ChainStore::open(&config.data_dir)?;
        let chain = store.replay(params.quorum, &params.validator_keys())?;
        let mut net = RecordsNetwork::open_with(params, chain, model, acl, HandlerRegistry::with_defaults())?;
        for card in config.cards()? {
            net.admit_card(&card)?;
        }
        tracing::info!(network = %config.network_id, height = net.chain().height(), "chain replayed");
        Ok(Node { config, store: Mutex::new(store), current: RwLock::new(Arc::new(net)) })
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    /// Immutable view for readers; later commits do not affect it.
    pub fn snapshot(&self) -> Arc<RecordsNetwork> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn chain(&self) -> Arc<Chain> {
        self.snapshot().chain()
    }

    /// Runs `op` against a private copy of the network, persists whatever it
    /// committed and then publishes the copy. Writers queue on the store
    /// lock. A failed persist leaves the published network untouched and
    /// marks it corrupt, since the file may now hold a torn line.
    pub fn write<T>(&self, op: impl FnOnce(&mut RecordsNetwork) -> Result<T, RecordsError>) -> Result<T, RecordsError> {
        let mut store = self.store.lock().unwrap_or_else(|e| e.into_inner());
        let mut net = (*self.snapshot()).clone();
        let out = op(&mut net)?;
        if let Err(e) = store.persist_chain(&net.chain()) {
            tracing::error!(error = %e, "persist failed");
            let mut current = self.current.write().unwrap_or_else(|e| e.into_inner());
            let mut damaged = (**current).clone();
            damaged.mark_corrupt(format!("persist failed: {e}"));
            *current = Arc::new(damaged);
            return Err(RecordsError::Integrity(e.to_string()));
        }
        *self.current.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(net);
        Ok(out)
    }
}
