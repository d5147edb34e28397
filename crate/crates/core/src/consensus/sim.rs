//! Deterministic discrete-event network for the validator state machines.
//!
//! Events run in (tick, sequence) order. Every inter-validator message is
//! dropped with the configured probability or delayed uniformly in
//! `0..=max_delay_ticks`, both drawn from one seeded RNG. Silent validators
//! ignore everything they receive.
//!
//! A driver feeds the workload one register at a time. Each register gets up
//! to N rounds; in each round the round leader re-broadcasts its proposal
//! every `max(1, 2 * max_delay_ticks)` ticks, at most [`MAX_RETRIES`] times.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::trace::block_token;
use super::{
    leader_for_round, on_proposal, propose_round, try_commit, CommitOutcome, ConsensusError, Endorsement, Proposal,
    ProposalContext, SimConfig, SimTrace, ValidatorNode,
};
use crate::hash_digest;
use crate::identity::KeyPair;
use crate::ledger::{find_register, Block, Chain, Register, ValidatorKeys};

pub const MAX_RETRIES: u32 = 10;

/// Roster names `v0..v{n-1}`.
pub fn validator_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("v{i}")).collect()
}

/// Reproducible validator keys for a network, for tests and demos.
pub fn derive_validators(network_id: &str, n: usize) -> Vec<(String, KeyPair)> {
    validator_ids(n)
        .into_iter()
        .map(|id| {
            let seed = hash_digest(format!("{network_id}/validator/{id}").as_bytes());
            (id, KeyPair::from_seed(seed.0))
        })
        .collect()
}

/// Everything a run needs besides the workload.
#[derive(Debug, Clone)]
pub struct SimSetup {
    pub config: SimConfig,
    /// Roster in leader-rotation order.
    pub validators: Vec<(String, KeyPair)>,
    pub ctx: ProposalContext,
    /// Chain every validator starts from.
    pub chain: Chain,
    /// Wall-clock base; block timestamps are `start_ms + tick`.
    pub start_ms: u64,
}

impl SimSetup {
    pub fn roster(&self) -> Vec<String> {
        self.validators.iter().map(|(id, _)| id.clone()).collect()
    }

    pub fn validator_keys(&self) -> ValidatorKeys {
        self.validators.iter().map(|(id, k)| (id.clone(), k.public_key())).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub trace: SimTrace,
    pub chains: BTreeMap<String, Chain>,
}

impl SimOutcome {
    /// Longest local chain; ties go to the first validator in id order.
    pub fn longest_chain(&self) -> Option<&Chain> {
        self.chains.values().fold(None, |best: Option<&Chain>, c| match best {
            Some(b) if b.height() >= c.height() => Some(b),
            _ => Some(c),
        })
    }
}

#[derive(Debug, Clone)]
enum Msg {
    Propose(Proposal),
    Endorse(Endorsement),
    Commit(Block),
    SyncRequest(u64),
    Blocks(Vec<Block>),
}

impl Msg {
    fn kind(&self) -> &'static str {
        match self {
            Msg::Propose(_) => "propose",
            Msg::Endorse(_) => "endorse",
            Msg::Commit(_) => "commit",
            Msg::SyncRequest(_) => "sync-request",
            Msg::Blocks(_) => "blocks",
        }
    }
}

#[derive(Debug)]
enum Event {
    Deliver { to: usize, from: usize, msg: Msg },
    Retry { node: usize, proposal_id: String },
    StartRound { index: usize, round: u32 },
    Deadline { index: usize, round: u32 },
}

struct Scheduled {
    tick: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.tick, self.seq) == (other.tick, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the max-heap pops the earliest event.
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.tick, other.seq).cmp(&(self.tick, self.seq))
    }
}

struct Active {
    proposal: Proposal,
    endorsements: Vec<Endorsement>,
    endorsed_by: BTreeSet<String>,
    retries_left: u32,
}

struct Runtime {
    node: ValidatorNode,
    silent: bool,
    /// Current workload register and the round it was submitted for.
    pending: Option<(Register, u32)>,
    active: Option<Active>,
}

struct Simulation<'a> {
    setup: &'a SimSetup,
    keys: ValidatorKeys,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    tick: u64,
    nodes: Vec<Runtime>,
    trace: SimTrace,
    workload: &'a [Register],
    current: usize,
    current_round: u32,
    committed_ids: HashSet<String>,
    retry_interval: u64,
    round_len: u64,
}

/// Runs `workload` through the simulated network. A pure function of
/// `(setup, workload)`.
pub fn run_simulation(setup: &SimSetup, workload: &[Register]) -> Result<SimOutcome, ConsensusError> {
    let config = &setup.config;
    config.validate()?;
    if setup.validators.len() != config.validator_count {
        return Err(ConsensusError::InvalidConfig(format!(
            "{} validator keys for validator_count {}",
            setup.validators.len(),
            config.validator_count
        )));
    }
    let roster = std::sync::Arc::new(setup.roster());
    if let Some(s) = config.silent_validators.iter().find(|s| !roster.contains(s)) {
        return Err(ConsensusError::InvalidConfig(format!("silent validator `{s}` not in roster")));
    }
    let keys = setup.validator_keys();
    let shared_keys = std::sync::Arc::new(keys.clone());
    let nodes = setup
        .validators
        .iter()
        .map(|(id, kp)| Runtime {
            node: ValidatorNode::new(
                id.clone(),
                kp.clone(),
                setup.chain.clone(),
                roster.clone(),
                shared_keys.clone(),
                config.quorum,
            ),
            silent: config.silent_validators.contains(id),
            pending: None,
            active: None,
        })
        .collect();
    let retry_interval = (2 * config.max_delay_ticks).max(1);
    let mut sim = Simulation {
        setup,
        keys,
        rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
        queue: BinaryHeap::new(),
        seq: 0,
        tick: 0,
        nodes,
        trace: SimTrace::new(config.clone()),
        workload,
        current: 0,
        current_round: 0,
        committed_ids: HashSet::new(),
        retry_interval,
        round_len: retry_interval * (u64::from(MAX_RETRIES) + 1) + 2 * config.max_delay_ticks + 2,
    };
    if !workload.is_empty() {
        sim.schedule(0, Event::StartRound { index: 0, round: 0 });
    }
    while let Some(Scheduled { tick, event, .. }) = sim.queue.pop() {
        sim.tick = tick;
        sim.handle(event);
    }
    let mut chains = BTreeMap::new();
    for rt in sim.nodes {
        let c = &rt.node.local_chain;
        sim.trace.push(sim.tick, &rt.node.validator_id, "final", block_token(c.height(), &c.tip_hash()));
        chains.insert(rt.node.validator_id, rt.node.local_chain);
    }
    Ok(SimOutcome { trace: sim.trace, chains })
}

impl Simulation<'_> {
    fn schedule(&mut self, delay: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Scheduled { tick: self.tick + delay, seq: self.seq, event });
    }

    fn id(&self, i: usize) -> &str {
        &self.nodes[i].node.validator_id
    }

    fn log(&mut self, i: usize, kind: &str, outcome: impl Into<String>) {
        let id = self.nodes[i].node.validator_id.clone();
        self.trace.push(self.tick, &id, kind, outcome);
    }

    fn send(&mut self, from: usize, to: usize, msg: Msg) {
        let p = self.setup.config.drop_probability;
        if self.rng.gen_ratio(*p.numer(), *p.denom()) {
            let outcome = format!("{}->{}", msg.kind(), self.id(to));
            self.log(from, "drop", outcome);
            return;
        }
        let delay = self.rng.gen_range(0..=self.setup.config.max_delay_ticks);
        self.schedule(delay, Event::Deliver { to, from, msg });
    }

    fn broadcast(&mut self, from: usize, msg: &Msg, skip: &BTreeSet<String>) {
        for to in 0..self.nodes.len() {
            if to != from && !skip.contains(self.id(to)) {
                self.send(from, to, msg.clone());
            }
        }
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::StartRound { index, round } => self.start_round(index, round),
            Event::Deadline { index, round } => self.deadline(index, round),
            Event::Retry { node, proposal_id } => self.retry(node, &proposal_id),
            Event::Deliver { to, from, msg } => {
                if self.nodes[to].silent {
                    return;
                }
                match msg {
                    Msg::Propose(p) => self.on_propose(to, from, p),
                    Msg::Endorse(e) => self.on_endorse(to, e),
                    Msg::Commit(b) => self.on_commit(to, from, b),
                    Msg::SyncRequest(h) => self.on_sync_request(to, from, h),
                    Msg::Blocks(bs) => self.on_blocks(to, bs),
                }
            }
        }
    }

    fn start_round(&mut self, index: usize, round: u32) {
        if index != self.current {
            return;
        }
        self.current_round = round;
        self.trace.push(self.tick, "driver", "submit", format!("#{index}r{round}"));
        let register = &self.workload[index];
        for rt in self.nodes.iter_mut().filter(|rt| !rt.silent) {
            rt.pending = Some((register.clone(), round));
        }
        for i in 0..self.nodes.len() {
            self.try_lead(i);
        }
        let len = self.round_len;
        self.schedule(len, Event::Deadline { index, round });
    }

    fn deadline(&mut self, index: usize, round: u32) {
        if index != self.current || round != self.current_round {
            return;
        }
        if (round as usize) + 1 < self.nodes.len() {
            self.start_round(index, round + 1);
        } else {
            self.trace.push(self.tick, "driver", "abandon", format!("#{index}"));
            self.advance();
        }
    }

    fn advance(&mut self) {
        self.current += 1;
        self.current_round = 0;
        if self.current < self.workload.len() {
            let gap = self.setup.config.max_delay_ticks + 1;
            self.schedule(gap, Event::StartRound { index: self.current, round: 0 });
        }
    }

    /// Proposes the pending register if this node leads the pending round at
    /// its next height.
    fn try_lead(&mut self, i: usize) {
        let rt = &self.nodes[i];
        if rt.silent {
            return;
        }
        let Some((register, round)) = rt.pending.clone() else { return };
        if find_register(&rt.node.local_chain, &register.register_id).is_some() {
            self.nodes[i].pending = None;
            return;
        }
        let height = rt.node.tip_height() + 1;
        let Ok(leader) = leader_for_round(height, round, &rt.node.roster) else { return };
        if leader != rt.node.validator_id {
            return;
        }
        if rt.active.as_ref().is_some_and(|a| a.proposal.height == height && a.proposal.round == round) {
            return;
        }
        let now = self.setup.start_ms + self.tick;
        let proposal = match propose_round(&rt.node, register, round, now, &self.setup.ctx) {
            Ok(p) => p,
            Err(e) => {
                let code = match &e {
                    ConsensusError::InvalidRegister(r) => r.code(),
                    _ => "invalid",
                };
                self.log(i, "reject", code);
                self.nodes[i].pending = None;
                return;
            }
        };
        let own = match on_proposal(&mut self.nodes[i].node, &proposal, &self.setup.ctx) {
            Ok(e) => e,
            Err(r) => {
                self.log(i, "reject", r.code());
                return;
            }
        };
        self.log(i, "propose", format!("h{height}r{round}"));
        let proposal_id = proposal.proposal_id.clone();
        let msg = Msg::Propose(proposal.clone());
        self.nodes[i].active = Some(Active {
            proposal,
            endorsed_by: BTreeSet::from([own.validator_id.clone()]),
            endorsements: vec![own],
            retries_left: MAX_RETRIES,
        });
        self.broadcast(i, &msg, &BTreeSet::new());
        let interval = self.retry_interval;
        self.schedule(interval, Event::Retry { node: i, proposal_id });
        self.check_quorum(i);
    }

    fn retry(&mut self, i: usize, proposal_id: &str) {
        let Some(active) = self.nodes[i].active.as_mut() else { return };
        if active.proposal.proposal_id != proposal_id {
            return;
        }
        let tag = format!("h{}r{}", active.proposal.height, active.proposal.round);
        if active.retries_left == 0 {
            self.log(i, "timeout", tag);
            return;
        }
        active.retries_left -= 1;
        let msg = Msg::Propose(active.proposal.clone());
        let skip = active.endorsed_by.clone();
        self.log(i, "retry", tag);
        self.broadcast(i, &msg, &skip);
        let interval = self.retry_interval;
        self.schedule(interval, Event::Retry { node: i, proposal_id: proposal_id.to_owned() });
    }

    fn on_propose(&mut self, i: usize, from: usize, proposal: Proposal) {
        let tip = self.nodes[i].node.tip_height();
        if proposal.height <= tip {
            let blocks = self.nodes[i].node.local_chain.blocks[proposal.height as usize..].to_vec();
            self.log(i, "reject", "stale");
            self.send(i, from, Msg::Blocks(blocks));
            return;
        }
        if proposal.height > tip + 1 {
            self.log(i, "sync", format!("h{}", tip + 1));
            self.send(i, from, Msg::SyncRequest(tip + 1));
            return;
        }
        let tag = format!("h{}r{}", proposal.height, proposal.round);
        match on_proposal(&mut self.nodes[i].node, &proposal, &self.setup.ctx) {
            Ok(e) => {
                self.log(i, "endorse", tag);
                self.send(i, from, Msg::Endorse(e));
            }
            Err(r) => self.log(i, "reject", r.code()),
        }
    }

    fn on_endorse(&mut self, i: usize, e: Endorsement) {
        let Some(active) = self.nodes[i].active.as_mut() else { return };
        if active.proposal.proposal_id != e.proposal_id || active.endorsed_by.contains(&e.validator_id) {
            return;
        }
        let hash = active.proposal.block_hash();
        let Some(key) = self.keys.get(&e.validator_id) else { return };
        if !key.verify(hash.as_bytes(), &e.signature) {
            return;
        }
        active.endorsed_by.insert(e.validator_id.clone());
        active.endorsements.push(e);
        self.check_quorum(i);
    }

    fn check_quorum(&mut self, i: usize) {
        let Some(active) = self.nodes[i].active.as_ref() else { return };
        if active.endorsements.len() < self.setup.config.quorum {
            return;
        }
        let outcome = try_commit(&active.proposal, &active.endorsements, self.setup.config.quorum, &self.keys);
        let CommitOutcome::Committed(block) = outcome else { return };
        self.nodes[i].active = None;
        match self.nodes[i].node.apply(block.clone()) {
            Ok(()) => {}
            Err(e) => {
                let code = match e {
                    crate::ledger::LedgerError::Rejected(f) => f.code(),
                    _ => "invalid-block",
                };
                self.log(i, "reject", code);
                return;
            }
        }
        self.log(i, "commit", block_token(block.height(), &block.hash()));
        self.note_committed(&block);
        self.broadcast(i, &Msg::Commit(block), &BTreeSet::new());
        self.try_lead(i);
    }

    fn note_committed(&mut self, block: &Block) {
        let Some(register) = &block.register else { return };
        if !self.committed_ids.insert(register.register_id.clone()) {
            return;
        }
        let current = self.workload.get(self.current).map(|r| r.register_id.as_str());
        if current == Some(register.register_id.as_str()) {
            self.advance();
        }
    }

    fn on_commit(&mut self, i: usize, from: usize, block: Block) {
        let tip = self.nodes[i].node.tip_height();
        if block.height() == tip + 1 {
            self.apply(i, block);
            self.try_lead(i);
        } else if block.height() > tip + 1 {
            self.log(i, "sync", format!("h{}", tip + 1));
            self.send(i, from, Msg::SyncRequest(tip + 1));
        }
    }

    fn on_sync_request(&mut self, i: usize, from: usize, from_height: u64) {
        let chain = &self.nodes[i].node.local_chain;
        if from_height > chain.height() {
            return;
        }
        let blocks = chain.blocks[from_height as usize..].to_vec();
        self.send(i, from, Msg::Blocks(blocks));
    }

    fn on_blocks(&mut self, i: usize, blocks: Vec<Block>) {
        for b in blocks {
            if b.height() == self.nodes[i].node.tip_height() + 1 && !self.apply(i, b) {
                break;
            }
        }
        self.try_lead(i);
    }

    fn apply(&mut self, i: usize, block: Block) -> bool {
        let token = block_token(block.height(), &block.hash());
        let height = block.height();
        match self.nodes[i].node.apply(block) {
            Ok(()) => {
                self.log(i, "apply", token);
                let rt = &mut self.nodes[i];
                if rt.active.as_ref().is_some_and(|a| a.proposal.height <= height) {
                    rt.active = None;
                }
                true
            }
            Err(_) => {
                self.log(i, "reject", "invalid-block");
                false
            }
        }
    }
}
