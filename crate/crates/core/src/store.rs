//! Append-only chain file: one lowercase-hex canonical block per line.
//!
//! Replay is strict. Any line that is not lowercase hex, does not decode,
//! or lacks its terminating newline is corruption at that height, and the
//! replayed chain must also pass full validation. A torn final line left by
//! a crash is not silently dropped; [`ChainStore::repair`] removes it
//! explicitly.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ledger::{validate_chain, Block, Chain, ValidatorKeys};

pub const CHAIN_FILE: &str = "chain.log";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("out-of-order persist: expected height {expected}, got {got}")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("chain file corrupt at height {height}: {reason}")]
    Corrupt { height: u64, reason: String },
    #[error("chain file is empty")]
    Empty,
    #[error("chain file I/O: {0}")]
    Io(#[from] io::Error),
}

/// Blocks that decoded before the first unreadable line, plus that line's
/// problem, if any.
#[derive(Debug, Clone)]
pub struct LenientLoad {
    pub blocks: Vec<Block>,
    pub corruption: Option<(u64, String)>,
}

#[derive(Debug)]
pub struct ChainStore {
    path: PathBuf,
    /// Number of complete lines on disk.
    persisted: u64,
}

fn parse_line(line: &[u8]) -> Result<Block, String> {
    if line.is_empty() {
        return Err("empty line".into());
    }
    if let Some(b) = line.iter().find(|b| !matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return Err(format!("byte 0x{b:02x} is not lowercase hex"));
    }
    let bytes = hex::decode(line).map_err(|e| e.to_string())?;
    Block::decode(&bytes).map_err(|e| e.to_string())
}

/// Splits file content into lines, flagging a missing final newline.
fn scan(content: &[u8]) -> LenientLoad {
    let mut blocks = Vec::new();
    let mut rest = content;
    while !rest.is_empty() {
        let height = blocks.len() as u64;
        let Some(end) = rest.iter().position(|b| *b == b'\n') else {
            return LenientLoad { blocks, corruption: Some((height, "line not terminated".into())) };
        };
        match parse_line(&rest[..end]) {
            Ok(b) => blocks.push(b),
            Err(reason) => return LenientLoad { blocks, corruption: Some((height, reason)) },
        }
        rest = &rest[end + 1..];
    }
    LenientLoad { blocks, corruption: None }
}

fn chain_from(blocks: Vec<Block>) -> Chain {
    let network_id = blocks.first().map(|g| g.header.proposer_id.clone()).unwrap_or_default();
    Chain { network_id, blocks }
}

impl ChainStore {
    /// Opens (creating if needed) the chain file in `dir`. Only counts
    /// complete lines; nothing is read beyond that.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = dir.as_ref().join(CHAIN_FILE);
        if !path.exists() {
            File::create(&path)?;
        }
        let content = fs::read(&path)?;
        let persisted = content.iter().filter(|b| **b == b'\n').count() as u64;
        Ok(ChainStore { path, persisted })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn persisted_height(&self) -> Option<u64> {
        self.persisted.checked_sub(1)
    }

    /// Appends one committed block. Heights must arrive in order.
    pub fn persist_block(&mut self, block: &Block) -> Result<(), StoreError> {
        if block.height() != self.persisted {
            return Err(StoreError::OutOfOrder { expected: self.persisted, got: block.height() });
        }
        let mut line = hex::encode(block.encode());
        line.push('\n');
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        self.persisted += 1;
        Ok(())
    }

    /// Persists every block of `chain` above what is already on disk.
    pub fn persist_chain(&mut self, chain: &Chain) -> Result<usize, StoreError> {
        let from = self.persisted as usize;
        for b in chain.blocks.iter().skip(from) {
            self.persist_block(b)?;
        }
        Ok(chain.blocks.len().saturating_sub(from))
    }

    /// Reads whatever decodes, stopping at the first bad line.
    pub fn load_lenient(&self) -> Result<LenientLoad, StoreError> {
        Ok(scan(&fs::read(&self.path)?))
    }

    /// Strict replay: every line decodes and the chain validates.
    pub fn replay(&self, quorum: usize, keys: &ValidatorKeys) -> Result<Chain, StoreError> {
        let LenientLoad { blocks, corruption } = self.load_lenient()?;
        if let Some((height, reason)) = corruption {
            return Err(StoreError::Corrupt { height, reason });
        }
        if blocks.is_empty() {
            return Err(StoreError::Empty);
        }
        let chain = chain_from(blocks);
        if let Some((height, fault)) = validate_chain(&chain, quorum, keys).first_failure() {
            return Err(StoreError::Corrupt { height, reason: fault.to_string() });
        }
        Ok(chain)
    }

    /// Replays, or writes `genesis` first when the file is empty.
    pub fn open_or_bootstrap(
        dir: impl AsRef<Path>,
        genesis: &Block,
        quorum: usize,
        keys: &ValidatorKeys,
    ) -> Result<(Self, Chain), StoreError> {
        let mut store = Self::open(dir)?;
        match store.replay(quorum, keys) {
            Err(StoreError::Empty) => {
                store.persist_block(genesis)?;
                let chain = store.replay(quorum, keys)?;
                Ok((store, chain))
            }
            other => other.map(|chain| (store, chain)),
        }
    }

    /// How many blocks survive a repair and how many bytes it would cut,
    /// without touching the file.
    pub fn plan_repair(&self, quorum: usize, keys: &ValidatorKeys) -> Result<RepairPlan, StoreError> {
        let content = fs::read(&self.path)?;
        let LenientLoad { blocks, .. } = scan(&content);
        let report = validate_chain(&chain_from(blocks), quorum, keys);
        let keep = match report.first_failure() {
            Some((h, _)) => h as usize,
            None => report.heights.len(),
        };
        let keep_bytes: usize = content.split_inclusive(|b| *b == b'\n').take(keep).map(<[u8]>::len).sum();
        Ok(RepairPlan {
            keep_blocks: keep as u64,
            complete_lines: self.persisted,
            keep_bytes: keep_bytes as u64,
            remove_bytes: (content.len() - keep_bytes) as u64,
        })
    }

    /// Truncates the file after the last line that decodes and validates.
    /// Returns the number of bytes removed.
    pub fn repair(&mut self, quorum: usize, keys: &ValidatorKeys) -> Result<u64, StoreError> {
        let plan = self.plan_repair(quorum, keys)?;
        if plan.remove_bytes > 0 {
            let f = OpenOptions::new().write(true).open(&self.path)?;
            f.set_len(plan.keep_bytes)?;
            f.sync_all()?;
        }
        self.persisted = plan.keep_blocks;
        Ok(plan.remove_bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RepairPlan {
    pub keep_blocks: u64,
    /// Newline-terminated lines currently in the file.
    pub complete_lines: u64,
    pub keep_bytes: u64,
    pub remove_bytes: u64,
}

impl RepairPlan {
    /// True when only an unterminated final line would go, which is what a
    /// crash mid-append leaves behind.
    pub fn torn_tail_only(&self) -> bool {
        self.keep_blocks == self.complete_lines
    }
}
