//! Consortium consensus among a fixed, pre-selected validator set.
//!
//! A height is decided in rounds. The leader of round `r` at height `h` is
//! `roster[(h + r) mod N]`; round 0 is [`leader_for`]. The leader builds a
//! block body around the submitted register and circulates it; validators
//! check it and sign its hash. Once `quorum` distinct valid signatures are
//! in, the leader assembles the block and broadcasts it for everyone to
//! append.
//!
//! A validator signs at most one body per height. Later rounds re-propose
//! the body the new leader already signed, if any. With `quorum` a strict
//! majority, two different bodies can never both collect a quorum.

mod sim;
mod trace;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::canonical;
use crate::identity::{CardDirectory, KeyPair};
use crate::ledger::{self, Block, BlockHeader, Chain, Register, RegisterKind, ValidatorKeys};
use crate::model::{authorize, validate_instance, AclRuleSet, Action, ModelDefinition, Operation};
use crate::HashDigest;

pub use sim::{derive_validators, run_simulation, validator_ids, SimOutcome, SimSetup, MAX_RETRIES};
pub use trace::{SimConfig, SimTrace, TraceEvent, TraceParseError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("validator set is empty")]
    EmptyValidatorSet,
    #[error("`{node}` is not the leader for height {height} round {round}")]
    NotLeader { node: String, height: u64, round: u32 },
    #[error("register rejected before proposal: {0}")]
    InvalidRegister(Rejection),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

/// Why a validator refused to endorse a proposal.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Rejection {
    #[error("wrong leader")]
    WrongLeader,
    #[error("bad link")]
    BadLink,
    #[error("bad signature")]
    BadSignature,
    #[error("unauthorized")]
    Unauthorized,
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("duplicate register id")]
    DuplicateRegister,
    #[error("already endorsed another block at this height")]
    Locked,
}

impl Rejection {
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::WrongLeader => "wrong-leader",
            Rejection::BadLink => "bad-link",
            Rejection::BadSignature => "bad-signature",
            Rejection::Unauthorized => "unauthorized",
            Rejection::SchemaViolation(_) => "schema-violation",
            Rejection::DuplicateRegister => "duplicate-register",
            Rejection::Locked => "locked",
        }
    }
}

/// Business rules every validator applies to a register before endorsing.
#[derive(Debug, Clone)]
pub struct ProposalContext {
    pub model: Arc<ModelDefinition>,
    pub acl: Arc<AclRuleSet>,
    pub cards: Arc<CardDirectory>,
}

pub fn operation_for(kind: RegisterKind) -> Operation {
    match kind {
        RegisterKind::AssetCreate | RegisterKind::ParticipantCreate => Operation::Create,
        RegisterKind::AssetUpdate => Operation::Update,
    }
}

impl ProposalContext {
    /// Signature, ACL and schema checks for one register.
    pub fn admit(&self, register: &Register) -> Result<(), Rejection> {
        let card = self.cards.get(&register.submitter_card_id).ok_or(Rejection::BadSignature)?;
        if !register.verify_signature(&card.public_key) {
            return Err(Rejection::BadSignature);
        }
        let op = operation_for(register.kind);
        let participant = self.model.local_name(&card.participant_type);
        let resource = self.model.local_name(&register.resource_type);
        if authorize(&self.acl, participant, op, resource) != Action::Allow {
            return Err(Rejection::Unauthorized);
        }
        let instance = canonical::decode(&register.payload).map_err(|e| Rejection::SchemaViolation(e.to_string()))?;
        validate_instance(&self.model, &register.resource_type, &instance).map_err(|errs| {
            Rejection::SchemaViolation(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        })
    }
}

/// Round-0 leader for a height.
pub fn leader_for(height: u64, validator_ids: &[String]) -> Result<&str, ConsensusError> {
    leader_for_round(height, 0, validator_ids)
}

pub fn leader_for_round(height: u64, round: u32, validator_ids: &[String]) -> Result<&str, ConsensusError> {
    if validator_ids.is_empty() {
        return Err(ConsensusError::EmptyValidatorSet);
    }
    let n = validator_ids.len() as u64;
    let slot = (height % n + u64::from(round) % n) % n;
    Ok(&validator_ids[slot as usize])
}

/// Smallest strict majority of `n`.
pub fn majority(n: usize) -> usize {
    n / 2 + 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub proposal_id: String,
    pub height: u64,
    pub round: u32,
    /// Block without endorsements.
    pub block_body: Block,
    pub proposer_id: String,
}

impl Proposal {
    pub fn block_hash(&self) -> HashDigest {
        self.block_body.hash()
    }
}

/// A validator's signature over a proposed block hash.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Endorsement {
    pub proposal_id: String,
    pub validator_id: String,
    pub signature: Vec<u8>,
}

/// One validator's state.
#[derive(Debug, Clone)]
pub struct ValidatorNode {
    pub validator_id: String,
    pub keypair: KeyPair,
    pub local_chain: Chain,
    /// Full validator roster in leader-rotation order (includes this node).
    pub roster: Arc<Vec<String>>,
    pub validator_keys: Arc<ValidatorKeys>,
    pub quorum: usize,
    /// Body this node signed at each undecided height.
    locks: BTreeMap<u64, Block>,
}

impl ValidatorNode {
    pub fn new(
        validator_id: String,
        keypair: KeyPair,
        local_chain: Chain,
        roster: Arc<Vec<String>>,
        validator_keys: Arc<ValidatorKeys>,
        quorum: usize,
    ) -> Self {
        ValidatorNode { validator_id, keypair, local_chain, roster, validator_keys, quorum, locks: BTreeMap::new() }
    }

    pub fn peer_ids(&self) -> impl Iterator<Item = &String> {
        self.roster.iter().filter(move |id| **id != self.validator_id)
    }

    pub fn tip_height(&self) -> u64 {
        self.local_chain.height()
    }

    pub fn locked_body(&self, height: u64) -> Option<&Block> {
        self.locks.get(&height)
    }

    /// Appends a committed block after full ledger checks.
    pub fn apply(&mut self, block: Block) -> Result<(), ledger::LedgerError> {
        let height = block.height();
        self.local_chain = ledger::append_block(&self.local_chain, block, self.quorum, &self.validator_keys)?;
        self.locks.retain(|h, _| *h > height);
        Ok(())
    }
}

/// Builds a round-0 proposal. See [`propose_round`].
pub fn propose(
    node: &ValidatorNode,
    register: Register,
    now_ms: u64,
    ctx: &ProposalContext,
) -> Result<Proposal, ConsensusError> {
    propose_round(node, register, 0, now_ms, ctx)
}

/// Builds the proposal for the next height. A leader that already signed a
/// body at that height re-proposes it unchanged instead of `register`.
pub fn propose_round(
    node: &ValidatorNode,
    register: Register,
    round: u32,
    now_ms: u64,
    ctx: &ProposalContext,
) -> Result<Proposal, ConsensusError> {
    let height = node.tip_height() + 1;
    let leader = leader_for_round(height, round, &node.roster)?;
    if leader != node.validator_id {
        return Err(ConsensusError::NotLeader { node: node.validator_id.clone(), height, round });
    }
    let block_body = match node.locked_body(height) {
        Some(body) => body.clone(),
        None => {
            ctx.admit(&register).map_err(ConsensusError::InvalidRegister)?;
            let tip = node.local_chain.tip().ok_or(ConsensusError::InvalidConfig("empty chain".into()))?;
            Block {
                header: BlockHeader {
                    height,
                    previous_hash: tip.hash(),
                    payload_hash: register.hash(),
                    timestamp_ms: now_ms.max(tip.header.timestamp_ms),
                    proposer_id: node.validator_id.clone(),
                },
                register: Some(register),
                endorsements: Vec::new(),
            }
        }
    };
    Ok(Proposal {
        proposal_id: format!("{height}.{round}.{}", node.validator_id),
        height,
        round,
        block_body,
        proposer_id: node.validator_id.clone(),
    })
}

/// Validator-side checks. On success the node is locked to this body for
/// the height and returns its endorsement.
pub fn on_proposal(
    node: &mut ValidatorNode,
    proposal: &Proposal,
    ctx: &ProposalContext,
) -> Result<Endorsement, Rejection> {
    let leader = leader_for_round(proposal.height, proposal.round, &node.roster).map_err(|_| Rejection::WrongLeader)?;
    if leader != proposal.proposer_id {
        return Err(Rejection::WrongLeader);
    }
    let body = &proposal.block_body;
    let tip = node.local_chain.tip().ok_or(Rejection::BadLink)?;
    if proposal.height != tip.height() + 1
        || body.header.height != proposal.height
        || body.header.previous_hash != tip.hash()
        || body.header.timestamp_ms < tip.header.timestamp_ms
        || !node.roster.contains(&body.header.proposer_id)
    {
        return Err(Rejection::BadLink);
    }
    let register = body.register.as_ref().ok_or(Rejection::SchemaViolation("no register".into()))?;
    if body.header.payload_hash != register.hash() {
        return Err(Rejection::BadLink);
    }
    if ledger::find_register(&node.local_chain, &register.register_id).is_some() {
        return Err(Rejection::DuplicateRegister);
    }
    let hash = body.hash();
    if let Some(locked) = node.locks.get(&proposal.height) {
        if locked.hash() != hash {
            return Err(Rejection::Locked);
        }
    } else {
        ctx.admit(register)?;
        node.locks.insert(proposal.height, body.body());
    }
    Ok(Endorsement {
        proposal_id: proposal.proposal_id.clone(),
        validator_id: node.validator_id.clone(),
        signature: node.keypair.sign(hash.as_bytes()).to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommitOutcome {
    Committed(Block),
    Pending { valid: usize, needed: usize },
}

/// Counts distinct, valid endorsements. Invalid signatures, unknown
/// validators and repeats are skipped, never fatal.
pub fn try_commit(
    proposal: &Proposal,
    endorsements: &[Endorsement],
    quorum: usize,
    validator_keys: &ValidatorKeys,
) -> CommitOutcome {
    let hash = proposal.block_hash();
    let mut valid: BTreeMap<&str, &Endorsement> = BTreeMap::new();
    for e in endorsements {
        if e.proposal_id != proposal.proposal_id || valid.contains_key(e.validator_id.as_str()) {
            continue;
        }
        let Some(key) = validator_keys.get(&e.validator_id) else { continue };
        if key.verify(hash.as_bytes(), &e.signature) {
            valid.insert(&e.validator_id, e);
        }
    }
    if valid.len() < quorum {
        return CommitOutcome::Pending { valid: valid.len(), needed: quorum };
    }
    let mut block = proposal.block_body.body();
    block.endorsements = valid
        .values()
        .map(|e| ledger::Endorsement { validator_id: e.validator_id.clone(), signature: e.signature.clone() })
        .collect();
    CommitOutcome::Committed(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poc::PocFixture;

    fn ids(n: usize) -> Vec<String> {
        validator_ids(n)
    }

    struct Net {
        fixture: PocFixture,
        nodes: Vec<ValidatorNode>,
        ctx: ProposalContext,
        keys: ValidatorKeys,
    }

    fn net(n: usize) -> Net {
        let fixture = PocFixture::new("test-net", n, 5);
        let roster = Arc::new(validator_ids(n));
        let keys = fixture.params.validator_keys();
        let shared = Arc::new(keys.clone());
        let chain = Chain::genesis("test-net", 0).unwrap();
        let nodes = fixture
            .params
            .validators
            .iter()
            .map(|(id, kp)| {
                ValidatorNode::new(id.clone(), kp.clone(), chain.clone(), roster.clone(), shared.clone(), majority(n))
            })
            .collect();
        let ctx = fixture.context();
        Net { fixture, nodes, ctx, keys }
    }

    #[test]
    fn leader_rotation() {
        let abc: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        assert_eq!(leader_for(0, &abc).unwrap(), "a");
        assert_eq!(leader_for(3, &abc).unwrap(), "a");
        assert_eq!(leader_for(7, &ids(11)).unwrap(), "v7");
        assert_eq!(leader_for_round(7, 5, &ids(11)).unwrap(), "v1");
        assert_eq!(leader_for(1, &[]), Err(ConsensusError::EmptyValidatorSet));
        assert_eq!(majority(11), 6);
        assert_eq!(majority(10), 6);
    }

    #[test]
    fn propose_checks_leader_and_signature() {
        let n = net(3);
        let reg = n.fixture.register(0);
        let p = propose(&n.nodes[1], reg.clone(), 10, &n.ctx).unwrap();
        assert_eq!(p.height, 1);
        assert_eq!(p.block_body.header.previous_hash, n.nodes[1].local_chain.tip_hash());
        assert_eq!(p.block_body.header.payload_hash, reg.hash());
        assert!(p.block_body.endorsements.is_empty());
        assert!(matches!(propose(&n.nodes[0], reg.clone(), 10, &n.ctx), Err(ConsensusError::NotLeader { .. })));
        let mut broken = reg;
        broken.submitter_signature[0] ^= 1;
        assert_eq!(
            propose(&n.nodes[1], broken, 10, &n.ctx),
            Err(ConsensusError::InvalidRegister(Rejection::BadSignature))
        );
    }

    #[test]
    fn endorse_or_reject() {
        let mut n = net(3);
        let p = propose(&n.nodes[1], n.fixture.register(0), 10, &n.ctx).unwrap();
        let e = on_proposal(&mut n.nodes[2], &p, &n.ctx).unwrap();
        assert!(n.keys["v2"].verify(p.block_hash().as_bytes(), &e.signature));

        // A user-role card may not create records.
        let user_reg = n.fixture.register_signed_by(1, &n.fixture.user);
        let mut forged = p.clone();
        forged.block_body.header.payload_hash = user_reg.hash();
        forged.block_body.register = Some(user_reg);
        assert_eq!(on_proposal(&mut n.nodes[0], &forged, &n.ctx), Err(Rejection::Unauthorized));

        let mut wrong = p.clone();
        wrong.proposer_id = "v0".into();
        assert_eq!(on_proposal(&mut n.nodes[0], &wrong, &n.ctx), Err(Rejection::WrongLeader));

        let mut stale = p.clone();
        stale.height = 0;
        stale.proposer_id = "v0".into();
        assert_eq!(on_proposal(&mut n.nodes[0], &stale, &n.ctx), Err(Rejection::BadLink));

        let mut bad_schema = p.clone();
        let mut reg = n.fixture.register(2);
        reg.payload = crate::canonical::encode(&crate::Value::map([("record_id", crate::Value::str("x"))]));
        let reg = crate::ledger::RegisterBody {
            register_id: reg.register_id,
            kind: reg.kind,
            resource_type: reg.resource_type,
            payload: reg.payload,
        }
        .sign(&n.fixture.coordinator)
        .unwrap();
        bad_schema.block_body.header.payload_hash = reg.hash();
        bad_schema.block_body.register = Some(reg);
        assert!(matches!(on_proposal(&mut n.nodes[0], &bad_schema, &n.ctx), Err(Rejection::SchemaViolation(_))));
    }

    #[test]
    fn one_body_per_height() {
        let mut n = net(3);
        let p0 = propose(&n.nodes[1], n.fixture.register(0), 10, &n.ctx).unwrap();
        assert!(on_proposal(&mut n.nodes[2], &p0, &n.ctx).is_ok());
        assert!(on_proposal(&mut n.nodes[2], &p0, &n.ctx).is_ok(), "same body may be endorsed again");
        let p1 = propose_round(&n.nodes[2], n.fixture.register(1), 1, 20, &n.ctx).unwrap();
        assert_eq!(p1.block_hash(), p0.block_hash(), "locked leader re-proposes its body");
        let fresh = propose_round(&n.nodes[0], n.fixture.register(1), 2, 20, &n.ctx).unwrap();
        assert_ne!(fresh.block_hash(), p0.block_hash());
        assert_eq!(on_proposal(&mut n.nodes[2], &fresh, &n.ctx), Err(Rejection::Locked));
    }

    #[test]
    fn commit_needs_quorum_of_distinct_valid_signatures() {
        let mut n = net(11);
        let p = propose(&n.nodes[1], n.fixture.register(0), 10, &n.ctx).unwrap();
        let mut es: Vec<_> = (1..7).map(|i| on_proposal(&mut n.nodes[i], &p, &n.ctx).unwrap()).collect();
        let CommitOutcome::Committed(block) = try_commit(&p, &es, 6, &n.keys) else { panic!("six of eleven") };
        assert_eq!(block.endorsements.len(), 6);
        assert_eq!(block.hash(), p.block_hash());
        assert!(ledger::append_block(&n.nodes[0].local_chain, block, 6, &n.keys).is_ok());

        es[5].signature[3] ^= 0x40;
        assert_eq!(try_commit(&p, &es, 6, &n.keys), CommitOutcome::Pending { valid: 5, needed: 6 });
        es[5] = es[0].clone();
        assert_eq!(try_commit(&p, &es, 6, &n.keys), CommitOutcome::Pending { valid: 5, needed: 6 });
    }

    fn setup(n: usize, seed: u64) -> SimSetup {
        let f = PocFixture::new("test-net", n, 5);
        SimSetup {
            config: SimConfig::new(n, seed),
            validators: f.params.validators.clone(),
            ctx: f.context(),
            chain: Chain::genesis("test-net", 0).unwrap(),
            start_ms: 1_000,
        }
    }

    fn workload(n: usize, count: usize) -> Vec<Register> {
        let f = PocFixture::new("test-net", n, 5);
        (0..count).map(|i| f.register(i)).collect()
    }

    #[test]
    fn fault_free_run_commits_everything() {
        let s = setup(11, 3);
        let out = run_simulation(&s, &workload(11, 10)).unwrap();
        assert_eq!(out.trace.committed.len(), 10);
        let tips: std::collections::BTreeSet<_> = out.trace.final_tips().into_values().collect();
        assert_eq!(tips.len(), 1);
        assert_eq!(tips.iter().next().unwrap().0, 10);
        assert!(out.trace.safety_violations().is_empty());
        for c in out.chains.values() {
            assert!(ledger::validate_chain(c, 6, &s.validator_keys()).is_valid());
        }
    }

    #[test]
    fn five_silent_still_commit_six_silent_do_not() {
        let mut s = setup(11, 4);
        s.config.silent_validators = ["v1", "v2", "v3", "v4", "v5"].map(String::from).into();
        let out = run_simulation(&s, &workload(11, 3)).unwrap();
        assert_eq!(out.trace.committed.len(), 3);

        s.config.silent_validators.insert("v6".into());
        let out = run_simulation(&s, &workload(11, 3)).unwrap();
        assert!(out.trace.committed.is_empty());
        assert!(out.trace.count("timeout") > 0);
        assert_eq!(out.trace.count("abandon"), 3);
    }

    #[test]
    fn runs_are_reproducible_and_traces_round_trip() {
        let mut s = setup(5, 11);
        s.config.drop_probability = num_rational::Ratio::new(1, 4);
        s.config.max_delay_ticks = 3;
        let w = workload(5, 3);
        let a = run_simulation(&s, &w).unwrap();
        let b = run_simulation(&s, &w).unwrap();
        assert_eq!(a.trace.to_text(), b.trace.to_text());
        assert_eq!(SimTrace::from_text(&a.trace.to_text()).unwrap(), a.trace);
        s.config.rng_seed = 12;
        let c = run_simulation(&s, &w).unwrap();
        assert_ne!(a.trace.to_text(), c.trace.to_text());
    }

    #[test]
    fn bad_configs_rejected() {
        let mut s = setup(3, 0);
        s.config.quorum = 1;
        assert!(matches!(run_simulation(&s, &[]), Err(ConsensusError::InvalidConfig(_))));
        let mut s = setup(3, 0);
        s.config.silent_validators.insert("v9".into());
        assert!(run_simulation(&s, &[]).is_err());
        let mut s = setup(3, 0);
        s.config.validator_count = 4;
        assert!(run_simulation(&s, &[]).is_err());
    }
}
