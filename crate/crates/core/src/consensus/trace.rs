use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use num_rational::Ratio;
use thiserror::Error;

use super::{majority, ConsensusError};
use crate::HashDigest;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub validator_count: usize,
    pub quorum: usize,
    pub rng_seed: u64,
    pub drop_probability: Ratio<u32>,
    pub max_delay_ticks: u64,
    pub silent_validators: BTreeSet<String>,
}

impl SimConfig {
    /// Fault-free config with a majority quorum.
    pub fn new(validator_count: usize, rng_seed: u64) -> Self {
        SimConfig {
            validator_count,
            quorum: majority(validator_count),
            rng_seed,
            drop_probability: Ratio::from_integer(0),
            max_delay_ticks: 2,
            silent_validators: BTreeSet::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ConsensusError> {
        let bad = |m: String| Err(ConsensusError::InvalidConfig(m));
        if self.validator_count == 0 {
            return bad("validator_count must be positive".into());
        }
        if self.quorum < majority(self.validator_count) || self.quorum > self.validator_count {
            return bad(format!(
                "quorum {} outside {}..={}",
                self.quorum,
                majority(self.validator_count),
                self.validator_count
            ));
        }
        if *self.drop_probability.denom() == 0 || self.drop_probability > Ratio::from_integer(1) {
            return bad(format!("drop_probability {} outside [0, 1]", self.drop_probability));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let silent: Vec<_> = self.silent_validators.iter().map(String::as_str).collect();
        format!(
            "validators={}\nquorum={}\nseed={}\ndrop={}/{}\nmax_delay={}\nsilent={}\n",
            self.validator_count,
            self.quorum,
            self.rng_seed,
            self.drop_probability.numer(),
            self.drop_probability.denom(),
            self.max_delay_ticks,
            silent.join(","),
        )
    }

    pub fn from_text(text: &str) -> Result<Self, TraceParseError> {
        let mut fields = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(TraceParseError::Line(i + 1))?;
            if fields.insert(k.trim(), v.trim()).is_some() {
                return Err(TraceParseError::Duplicate(k.trim().to_owned()));
            }
        }
        Self::from_fields(&fields)
    }

    fn from_fields(fields: &BTreeMap<&str, &str>) -> Result<Self, TraceParseError> {
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| TraceParseError::Missing(k.to_owned()));
        let num = |k: &str| -> Result<u64, TraceParseError> {
            get(k)?.parse().map_err(|_| TraceParseError::Value(k.to_owned()))
        };
        let drop = get("drop")?;
        let (n, d) = drop.split_once('/').unwrap_or((drop, "1"));
        let n: u32 = n.parse().map_err(|_| TraceParseError::Value("drop".into()))?;
        let d: u32 = d.parse().map_err(|_| TraceParseError::Value("drop".into()))?;
        if d == 0 {
            return Err(TraceParseError::Value("drop".into()));
        }
        let known = ["validators", "quorum", "seed", "drop", "max_delay", "silent"];
        if let Some(k) = fields.keys().find(|k| !known.contains(k)) {
            return Err(TraceParseError::Unknown((*k).to_owned()));
        }
        Ok(SimConfig {
            validator_count: num("validators")? as usize,
            quorum: num("quorum")? as usize,
            rng_seed: num("seed")?,
            drop_probability: Ratio::new(n, d),
            max_delay_ticks: num("max_delay")?,
            silent_validators: get("silent")?
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_owned)
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub tick: u64,
    pub node: String,
    pub kind: String,
    /// Single whitespace-free token.
    pub outcome: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceParseError {
    #[error("line {0}: malformed")]
    Line(usize),
    #[error("missing header `{0}`")]
    Missing(String),
    #[error("duplicate header `{0}`")]
    Duplicate(String),
    #[error("unknown header `{0}`")]
    Unknown(String),
    #[error("bad value for `{0}`")]
    Value(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimTrace {
    pub config: SimConfig,
    pub events: Vec<TraceEvent>,
    /// Leader-side commits in the order they happened.
    pub committed: Vec<(u64, HashDigest)>,
}

/// Outcome token for a block at a height.
pub(crate) fn block_token(height: u64, hash: &HashDigest) -> String {
    format!("h{height}:{hash}")
}

fn parse_block_token(s: &str) -> Option<(u64, HashDigest)> {
    let (h, hash) = s.strip_prefix('h')?.split_once(':')?;
    Some((h.parse().ok()?, hash.parse().ok()?))
}

impl SimTrace {
    pub fn new(config: SimConfig) -> Self {
        SimTrace { config, events: Vec::new(), committed: Vec::new() }
    }

    pub(crate) fn push(&mut self, tick: u64, node: &str, kind: &str, outcome: impl Into<String>) {
        let outcome: String = outcome.into();
        debug_assert!(!outcome.is_empty() && !outcome.contains(char::is_whitespace));
        if kind == "commit" {
            if let Some(c) = parse_block_token(&outcome) {
                self.committed.push(c);
            }
        }
        self.events.push(TraceEvent { tick, node: node.to_owned(), kind: kind.to_owned(), outcome });
    }

    pub fn count(&self, kind: &str) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Every block any node committed or applied, grouped by height.
    pub fn blocks_by_height(&self) -> BTreeMap<u64, BTreeSet<HashDigest>> {
        let mut out: BTreeMap<u64, BTreeSet<HashDigest>> = BTreeMap::new();
        for e in &self.events {
            if matches!(e.kind.as_str(), "commit" | "apply" | "final") {
                if let Some((h, hash)) = parse_block_token(&e.outcome) {
                    out.entry(h).or_default().insert(hash);
                }
            }
        }
        out
    }

    /// Heights at which two different block hashes were committed.
    pub fn safety_violations(&self) -> Vec<u64> {
        self.blocks_by_height().into_iter().filter(|(_, s)| s.len() > 1).map(|(h, _)| h).collect()
    }

    /// Final tip of every node, from the closing `final` events.
    pub fn final_tips(&self) -> BTreeMap<String, (u64, HashDigest)> {
        self.events
            .iter()
            .filter(|e| e.kind == "final")
            .filter_map(|e| Some((e.node.clone(), parse_block_token(&e.outcome)?)))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = self.config.to_text();
        out.push('\n');
        for e in &self.events {
            let _ = writeln!(out, "{} {} {} {}", e.tick, e.node, e.kind, e.outcome);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TraceParseError> {
        let mut header = BTreeMap::new();
        let mut lines = text.lines().enumerate().peekable();
        while let Some((_, line)) = lines.peek().copied() {
            if line.trim().is_empty() {
                lines.next();
                break;
            }
            let Some((k, v)) = line.split_once('=') else { break };
            if header.insert(k.trim(), v.trim()).is_some() {
                return Err(TraceParseError::Duplicate(k.trim().to_owned()));
            }
            lines.next();
        }
        let mut trace = SimTrace::new(SimConfig::from_fields(&header)?);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<_> = line.split_whitespace().collect();
            let [tick, node, kind, outcome] = parts[..] else {
                return Err(TraceParseError::Line(i + 1));
            };
            let tick = tick.parse().map_err(|_| TraceParseError::Line(i + 1))?;
            trace.push(tick, node, kind, outcome);
        }
        Ok(trace)
    }
}
