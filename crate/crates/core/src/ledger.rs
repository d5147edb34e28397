//! Append-only hash-chained ledger.
//!
//! Every block past genesis carries exactly one [`Register`] and the
//! validator endorsements that committed it. A block's hash covers the
//! canonical encoding of its header and register; endorsements sign that
//! hash and are not part of it.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::canonical::{self, DecodeError, Fields, Value};
use crate::hash::{hash_digest, HashDigest};
use crate::identity::{IdCard, IdentityError, PublicKey};

/// Public keys of the pre-selected validator set, by validator id.
pub type ValidatorKeys = BTreeMap<String, PublicKey>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegisterKind {
    AssetCreate,
    AssetUpdate,
    ParticipantCreate,
}

impl RegisterKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegisterKind::AssetCreate => "asset-create",
            RegisterKind::AssetUpdate => "asset-update",
            RegisterKind::ParticipantCreate => "participant-create",
        }
    }
}

impl fmt::Display for RegisterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegisterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "asset-create" => Ok(RegisterKind::AssetCreate),
            "asset-update" => Ok(RegisterKind::AssetUpdate),
            "participant-create" => Ok(RegisterKind::ParticipantCreate),
            other => Err(format!("unknown register kind `{other}`")),
        }
    }
}

/// The unsigned part of a register, as produced by transaction handlers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterBody {
    pub register_id: String,
    pub kind: RegisterKind,
    pub resource_type: String,
    pub payload: Vec<u8>,
}

impl RegisterBody {
    /// Bytes the submitter signs: the canonical list
    /// `[register_id, kind, resource_type, payload]`.
    pub fn signing_bytes(&self) -> Vec<u8> {
        signing_bytes(&self.register_id, self.kind, &self.resource_type, &self.payload)
    }

    pub fn sign(self, card: &IdCard) -> Result<Register, IdentityError> {
        let signature = card.sign(&self.signing_bytes())?;
        Ok(Register {
            register_id: self.register_id,
            kind: self.kind,
            resource_type: self.resource_type,
            payload: self.payload,
            submitter_card_id: card.card_id.clone(),
            submitter_signature: signature.to_vec(),
        })
    }
}

fn signing_bytes(register_id: &str, kind: RegisterKind, resource_type: &str, payload: &[u8]) -> Vec<u8> {
    canonical::encode(&Value::List(vec![
        Value::str(register_id),
        Value::str(kind.as_str()),
        Value::str(resource_type),
        Value::bytes(payload),
    ]))
}

/// A signed ledger entry.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Register {
    pub register_id: String,
    pub kind: RegisterKind,
    pub resource_type: String,
    /// Canonical bytes of the resource instance.
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub submitter_card_id: String,
    #[serde(with = "hex_bytes")]
    pub submitter_signature: Vec<u8>,
}

impl Register {
    pub fn signing_bytes(&self) -> Vec<u8> {
        signing_bytes(&self.register_id, self.kind, &self.resource_type, &self.payload)
    }

    pub fn verify_signature(&self, submitter: &PublicKey) -> bool {
        submitter.verify(&self.signing_bytes(), &self.submitter_signature)
    }

    pub fn payload_value(&self) -> Result<Value, DecodeError> {
        canonical::decode(&self.payload)
    }

    pub fn to_value(&self) -> Value {
        Value::map([
            ("register_id", Value::str(&self.register_id)),
            ("kind", Value::str(self.kind.as_str())),
            ("resource_type", Value::str(&self.resource_type)),
            ("payload", Value::bytes(self.payload.clone())),
            ("submitter_card_id", Value::str(&self.submitter_card_id)),
            ("submitter_signature", Value::bytes(self.submitter_signature.clone())),
        ])
    }

    pub fn from_value(value: &Value) -> Result<Self, DecodeError> {
        let f = Fields::of(value, "register")?;
        f.only(&["register_id", "kind", "resource_type", "payload", "submitter_card_id", "submitter_signature"])?;
        Ok(Register {
            register_id: f.str("register_id")?.to_owned(),
            kind: f.str("kind")?.parse().map_err(|problem| DecodeError::Field { field: "kind".into(), problem })?,
            resource_type: f.str("resource_type")?.to_owned(),
            payload: f.bytes("payload")?.to_vec(),
            submitter_card_id: f.str("submitter_card_id")?.to_owned(),
            submitter_signature: f.bytes("submitter_signature")?.to_vec(),
        })
    }

    /// Hash of the canonical register encoding, stored in the block header.
    pub fn hash(&self) -> HashDigest {
        hash_digest(&canonical::encode(&self.to_value()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct BlockHeader {
    pub height: u64,
    pub previous_hash: HashDigest,
    pub payload_hash: HashDigest,
    pub timestamp_ms: u64,
    pub proposer_id: String,
}

impl BlockHeader {
    fn to_value(&self) -> Value {
        Value::map([
            ("height", Value::Int(self.height as i64)),
            ("previous_hash", Value::bytes(self.previous_hash.0)),
            ("payload_hash", Value::bytes(self.payload_hash.0)),
            ("timestamp_ms", Value::Int(self.timestamp_ms as i64)),
            ("proposer_id", Value::str(&self.proposer_id)),
        ])
    }

    fn from_value(value: &Value) -> Result<Self, DecodeError> {
        let f = Fields::of(value, "header")?;
        f.only(&["height", "previous_hash", "payload_hash", "timestamp_ms", "proposer_id"])?;
        let non_negative = |field: &str| -> Result<u64, DecodeError> {
            u64::try_from(f.int(field)?)
                .map_err(|_| DecodeError::Field { field: field.into(), problem: "negative".into() })
        };
        Ok(BlockHeader {
            height: non_negative("height")?,
            previous_hash: HashDigest(f.fixed("previous_hash")?),
            payload_hash: HashDigest(f.fixed("payload_hash")?),
            timestamp_ms: non_negative("timestamp_ms")?,
            proposer_id: f.str("proposer_id")?.to_owned(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Endorsement {
    pub validator_id: String,
    #[serde(with = "hex_bytes")]
    pub signature: Vec<u8>,
}

mod hex_bytes {
    pub fn serialize<S: serde::Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Block {
    pub header: BlockHeader,
    /// Absent only in genesis.
    pub register: Option<Register>,
    pub endorsements: Vec<Endorsement>,
}

impl Block {
    fn body_value(&self) -> Value {
        let mut m = BTreeMap::new();
        m.insert("header".to_owned(), self.header.to_value());
        if let Some(r) = &self.register {
            m.insert("register".to_owned(), r.to_value());
        }
        Value::Map(m)
    }

    pub fn to_value(&self) -> Value {
        let mut v = self.body_value();
        if let Value::Map(m) = &mut v {
            let endorsements = self
                .endorsements
                .iter()
                .map(|e| {
                    Value::map([
                        ("validator_id", Value::str(&e.validator_id)),
                        ("signature", Value::bytes(e.signature.clone())),
                    ])
                })
                .collect();
            m.insert("endorsements".to_owned(), Value::List(endorsements));
        }
        v
    }

    pub fn from_value(value: &Value) -> Result<Self, DecodeError> {
        let f = Fields::of(value, "block")?;
        f.only(&["header", "register", "endorsements"])?;
        let endorsements = f
            .list("endorsements")?
            .iter()
            .map(|e| {
                let ef = Fields::of(e, "endorsement")?;
                ef.only(&["validator_id", "signature"])?;
                Ok(Endorsement {
                    validator_id: ef.str("validator_id")?.to_owned(),
                    signature: ef.bytes("signature")?.to_vec(),
                })
            })
            .collect::<Result<Vec<_>, DecodeError>>()?;
        Ok(Block {
            header: BlockHeader::from_value(f.get("header")?)?,
            register: f.opt("register").map(Register::from_value).transpose()?,
            endorsements,
        })
    }

    /// Canonical encoding of the full block, endorsements included.
    pub fn encode(&self) -> Vec<u8> {
        canonical::encode(&self.to_value())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        Self::from_value(&canonical::decode(bytes)?)
    }

    /// Block hash: SHA-256 over the canonical block without endorsements.
    pub fn hash(&self) -> HashDigest {
        hash_digest(&canonical::encode(&self.body_value()))
    }

    pub fn height(&self) -> u64 {
        self.header.height
    }

    /// Same block with endorsements stripped, as circulated in proposals.
    pub fn body(&self) -> Block {
        Block { endorsements: Vec::new(), ..self.clone() }
    }
}

/// Payload hash carried by a genesis header: the digest of the canonical
/// network id string.
pub fn genesis_payload_hash(network_id: &str) -> HashDigest {
    hash_digest(&canonical::encode(&Value::str(network_id)))
}

/// The genesis block. Its proposer field holds the network id.
pub fn make_genesis(network_id: &str, created_ms: u64) -> Result<Block, LedgerError> {
    if network_id.is_empty() {
        return Err(LedgerError::EmptyNetworkId);
    }
    Ok(Block {
        header: BlockHeader {
            height: 0,
            previous_hash: HashDigest::ZERO,
            payload_hash: genesis_payload_hash(network_id),
            timestamp_ms: created_ms,
            proposer_id: network_id.to_owned(),
        },
        register: None,
        endorsements: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    pub network_id: String,
    pub blocks: Vec<Block>,
}

impl Chain {
    pub fn genesis(network_id: &str, created_ms: u64) -> Result<Self, LedgerError> {
        Ok(Chain { network_id: network_id.to_owned(), blocks: vec![make_genesis(network_id, created_ms)?] })
    }

    pub fn tip(&self) -> Option<&Block> {
        self.blocks.last()
    }

    /// Height of the tip. Zero for a genesis-only (or empty) chain.
    pub fn height(&self) -> u64 {
        self.tip().map_or(0, Block::height)
    }

    pub fn tip_hash(&self) -> HashDigest {
        self.tip().map_or(HashDigest::ZERO, Block::hash)
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(usize::try_from(height).ok()?)
    }

    pub fn registers(&self) -> impl DoubleEndedIterator<Item = (u64, &Register)> {
        self.blocks.iter().filter_map(|b| b.register.as_ref().map(|r| (b.height(), r)))
    }
}

/// The first check a block fails.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockFault {
    #[error("missing genesis")]
    MissingGenesis,
    #[error("malformed genesis: {0}")]
    BadGenesis(&'static str),
    #[error("height {found} where {expected} was expected")]
    HeightGap { expected: u64, found: u64 },
    #[error("previous_hash does not match predecessor")]
    BadLink,
    #[error("block carries no register")]
    MissingRegister,
    #[error("payload hash does not match register")]
    PayloadHashMismatch,
    #[error("register has empty resource type")]
    EmptyResourceType,
    #[error("duplicate register id `{0}`")]
    DuplicateRegisterId(String),
    #[error("timestamp {block} precedes predecessor timestamp {previous}")]
    NonMonotonicTimestamp { block: u64, previous: u64 },
    #[error("validator `{0}` endorsed twice")]
    DuplicateEndorser(String),
    #[error("endorsement from unknown validator `{0}`")]
    UnknownValidator(String),
    #[error("endorsement signature from `{0}` does not verify")]
    BadEndorsementSignature(String),
    #[error("{have} endorsements, quorum is {need}")]
    InsufficientEndorsements { have: usize, need: usize },
    #[error("predecessor at height {0} failed validation")]
    UntrustedAncestor(u64),
}

impl BlockFault {
    /// Short machine name of the failed check.
    pub fn code(&self) -> &'static str {
        match self {
            BlockFault::MissingGenesis => "missing-genesis",
            BlockFault::BadGenesis(_) => "bad-genesis",
            BlockFault::HeightGap { .. } => "height-gap",
            BlockFault::BadLink => "bad-link",
            BlockFault::MissingRegister => "missing-register",
            BlockFault::PayloadHashMismatch => "payload-hash",
            BlockFault::EmptyResourceType => "empty-resource-type",
            BlockFault::DuplicateRegisterId(_) => "duplicate-register-id",
            BlockFault::NonMonotonicTimestamp { .. } => "non-monotonic-timestamp",
            BlockFault::DuplicateEndorser(_) => "duplicate-endorser",
            BlockFault::UnknownValidator(_) => "unknown-validator",
            BlockFault::BadEndorsementSignature(_) => "bad-endorsement-signature",
            BlockFault::InsufficientEndorsements { .. } => "insufficient-endorsements",
            BlockFault::UntrustedAncestor(_) => "untrusted-ancestor",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LedgerError {
    #[error("network id must not be empty")]
    EmptyNetworkId,
    #[error("chain has no genesis block")]
    EmptyChain,
    #[error("block rejected: {0}")]
    Rejected(#[from] BlockFault),
}

fn check_genesis(block: &Block, network_id: &str) -> Result<(), BlockFault> {
    let h = &block.header;
    if h.height != 0 {
        return Err(BlockFault::HeightGap { expected: 0, found: h.height });
    }
    if h.previous_hash != HashDigest::ZERO {
        return Err(BlockFault::BadGenesis("previous_hash is not zero"));
    }
    if block.register.is_some() {
        return Err(BlockFault::BadGenesis("genesis carries a register"));
    }
    if !block.endorsements.is_empty() {
        return Err(BlockFault::BadGenesis("genesis carries endorsements"));
    }
    if h.proposer_id != network_id || h.payload_hash != genesis_payload_hash(network_id) {
        return Err(BlockFault::BadGenesis("network id mismatch"));
    }
    Ok(())
}

/// Checks a non-genesis block against its predecessor.
fn check_successor(
    prev: &Block,
    block: &Block,
    seen_ids: &HashSet<&str>,
    quorum: usize,
    validator_keys: &ValidatorKeys,
) -> Result<(), BlockFault> {
    let h = &block.header;
    let expected = prev.height() + 1;
    if h.height != expected {
        return Err(BlockFault::HeightGap { expected, found: h.height });
    }
    if h.previous_hash != prev.hash() {
        return Err(BlockFault::BadLink);
    }
    let register = block.register.as_ref().ok_or(BlockFault::MissingRegister)?;
    if h.payload_hash != register.hash() {
        return Err(BlockFault::PayloadHashMismatch);
    }
    if register.resource_type.is_empty() {
        return Err(BlockFault::EmptyResourceType);
    }
    if seen_ids.contains(register.register_id.as_str()) {
        return Err(BlockFault::DuplicateRegisterId(register.register_id.clone()));
    }
    if h.timestamp_ms < prev.header.timestamp_ms {
        return Err(BlockFault::NonMonotonicTimestamp { block: h.timestamp_ms, previous: prev.header.timestamp_ms });
    }
    check_endorsements(block, quorum, validator_keys)
}

/// Endorsement rules: distinct known validators, every signature valid over
/// the block hash, and at least `quorum` of them.
pub fn check_endorsements(block: &Block, quorum: usize, validator_keys: &ValidatorKeys) -> Result<(), BlockFault> {
    let hash = block.hash();
    let mut seen = HashSet::new();
    for e in &block.endorsements {
        if !seen.insert(e.validator_id.as_str()) {
            return Err(BlockFault::DuplicateEndorser(e.validator_id.clone()));
        }
        let key =
            validator_keys.get(&e.validator_id).ok_or_else(|| BlockFault::UnknownValidator(e.validator_id.clone()))?;
        if !key.verify(hash.as_bytes(), &e.signature) {
            return Err(BlockFault::BadEndorsementSignature(e.validator_id.clone()));
        }
    }
    if block.endorsements.len() < quorum {
        return Err(BlockFault::InsufficientEndorsements { have: block.endorsements.len(), need: quorum });
    }
    Ok(())
}

/// Returns a new chain with `block` appended. The input chain is left
/// untouched.
pub fn append_block(
    chain: &Chain,
    block: Block,
    quorum: usize,
    validator_keys: &ValidatorKeys,
) -> Result<Chain, LedgerError> {
    let tip = chain.tip().ok_or(LedgerError::EmptyChain)?;
    let seen: HashSet<&str> = chain.registers().map(|(_, r)| r.register_id.as_str()).collect();
    check_successor(tip, &block, &seen, quorum, validator_keys)?;
    let mut blocks = chain.blocks.clone();
    blocks.push(block);
    Ok(Chain { network_id: chain.network_id.clone(), blocks })
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct HeightCheck {
    /// Position in the chain, which is the expected height.
    pub height: u64,
    #[serde(serialize_with = "fault_code")]
    pub fault: Option<BlockFault>,
}

fn fault_code<S: serde::Serializer>(f: &Option<BlockFault>, s: S) -> Result<S::Ok, S::Error> {
    match f {
        Some(f) => s.serialize_str(&format!("{}: {f}", f.code())),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ValidationReport {
    pub missing_genesis: bool,
    pub heights: Vec<HeightCheck>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        !self.missing_genesis && self.heights.iter().all(|h| h.fault.is_none())
    }

    pub fn first_failure(&self) -> Option<(u64, &BlockFault)> {
        if self.missing_genesis {
            return Some((0, &BlockFault::MissingGenesis));
        }
        self.heights.iter().find_map(|h| h.fault.as_ref().map(|f| (h.height, f)))
    }

    pub fn broken_heights(&self) -> Vec<u64> {
        self.heights.iter().filter(|h| h.fault.is_some()).map(|h| h.height).collect()
    }
}

/// Validates every block. A block whose own checks pass is still reported
/// broken when any earlier block failed, since its link only proves it
/// descends from the tampered content.
pub fn validate_chain(chain: &Chain, quorum: usize, validator_keys: &ValidatorKeys) -> ValidationReport {
    let Some(genesis) = chain.blocks.first() else {
        return ValidationReport { missing_genesis: true, heights: Vec::new() };
    };
    let mut heights = Vec::with_capacity(chain.blocks.len());
    let mut first_broken = None;
    let mut record = |height: u64, fault: Option<BlockFault>, first_broken: &mut Option<u64>| {
        let fault = match (fault, *first_broken) {
            (Some(f), _) => Some(f),
            (None, Some(b)) => Some(BlockFault::UntrustedAncestor(b)),
            (None, None) => None,
        };
        if fault.is_some() && first_broken.is_none() {
            *first_broken = Some(height);
        }
        heights.push(HeightCheck { height, fault });
    };

    record(0, check_genesis(genesis, &chain.network_id).err(), &mut first_broken);
    let mut seen = HashSet::new();
    for (i, pair) in chain.blocks.windows(2).enumerate() {
        let (prev, block) = (&pair[0], &pair[1]);
        let fault = check_successor(prev, block, &seen, quorum, validator_keys).err();
        if let Some(r) = &block.register {
            seen.insert(r.register_id.as_str());
        }
        record(i as u64 + 1, fault, &mut first_broken);
    }
    ValidationReport { missing_genesis: false, heights }
}

/// Linear scan for a register id; returns the block height with it.
pub fn find_register<'a>(chain: &'a Chain, register_id: &str) -> Option<(u64, &'a Register)> {
    chain.registers().find(|(_, r)| r.register_id == register_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::KeyPair;

    pub(crate) fn validators(n: usize) -> (Vec<(String, KeyPair)>, ValidatorKeys) {
        let pairs: Vec<_> = (0..n).map(|i| (format!("v{i}"), KeyPair::from_seed([i as u8 + 100; 32]))).collect();
        let keys = pairs.iter().map(|(id, k)| (id.clone(), k.public_key())).collect();
        (pairs, keys)
    }

    fn register(id: &str) -> Register {
        let submitter = KeyPair::from_seed([42u8; 32]);
        let body = RegisterBody {
            register_id: id.to_owned(),
            kind: RegisterKind::AssetCreate,
            resource_type: "EducationalRecord".into(),
            payload: canonical::encode(&Value::map([("recordId", Value::str(id))])),
        };
        let signature = submitter.sign(&body.signing_bytes()).to_vec();
        Register {
            register_id: body.register_id,
            kind: body.kind,
            resource_type: body.resource_type,
            payload: body.payload,
            submitter_card_id: "card-1".into(),
            submitter_signature: signature,
        }
    }

    fn endorsed(chain: &Chain, reg: Register, signers: &[(String, KeyPair)], ts: u64) -> Block {
        let tip = chain.tip().unwrap();
        let mut block = Block {
            header: BlockHeader {
                height: tip.height() + 1,
                previous_hash: tip.hash(),
                payload_hash: reg.hash(),
                timestamp_ms: ts,
                proposer_id: signers[0].0.clone(),
            },
            register: Some(reg),
            endorsements: Vec::new(),
        };
        let hash = block.hash();
        block.endorsements = signers
            .iter()
            .map(|(id, k)| Endorsement { validator_id: id.clone(), signature: k.sign(hash.as_bytes()).to_vec() })
            .collect();
        block
    }

    fn build_chain(records: usize) -> (Chain, ValidatorKeys) {
        let (pairs, keys) = validators(11);
        let mut chain = Chain::genesis("unifacs-net", 1_000).unwrap();
        for i in 0..records {
            let block = endorsed(&chain, register(&format!("rec-{i}")), &pairs[..6], 2_000 + i as u64);
            chain = append_block(&chain, block, 6, &keys).unwrap();
        }
        (chain, keys)
    }

    #[test]
    fn genesis_shape() {
        let g = make_genesis("unifacs-net", 5).unwrap();
        assert_eq!(g.header.height, 0);
        assert_eq!(g.header.previous_hash.0, [0u8; 32]);
        assert!(g.register.is_none());
        assert_eq!(g.hash(), make_genesis("unifacs-net", 5).unwrap().hash());
        assert_eq!(make_genesis("", 5), Err(LedgerError::EmptyNetworkId));
        let chain = Chain::genesis("unifacs-net", 5).unwrap();
        assert!(validate_chain(&chain, 6, &ValidatorKeys::new()).is_valid());
    }

    #[test]
    fn append_with_quorum_and_one_below() {
        let (pairs, keys) = validators(11);
        let chain = Chain::genesis("unifacs-net", 1).unwrap();
        let ok = endorsed(&chain, register("r1"), &pairs[..6], 2);
        let longer = append_block(&chain, ok, 6, &keys).unwrap();
        assert_eq!(longer.blocks.len(), 2);
        assert_eq!(chain.blocks.len(), 1);

        let short = endorsed(&chain, register("r1"), &pairs[..5], 2);
        assert_eq!(
            append_block(&chain, short, 6, &keys),
            Err(LedgerError::Rejected(BlockFault::InsufficientEndorsements { have: 5, need: 6 }))
        );
    }

    #[test]
    fn append_rejections() {
        let (pairs, keys) = validators(11);
        let (chain, _) = build_chain(1);

        let mut bad_link = endorsed(&chain, register("r9"), &pairs[..6], 5_000);
        bad_link.header.previous_hash.0[0] ^= 1;
        assert_eq!(append_block(&chain, bad_link, 6, &keys), Err(BlockFault::BadLink.into()));

        let dup = endorsed(&chain, register("rec-0"), &pairs[..6], 5_000);
        assert_eq!(append_block(&chain, dup, 6, &keys), Err(BlockFault::DuplicateRegisterId("rec-0".into()).into()));

        let early = endorsed(&chain, register("r9"), &pairs[..6], 10);
        assert!(matches!(
            append_block(&chain, early, 6, &keys),
            Err(LedgerError::Rejected(BlockFault::NonMonotonicTimestamp { .. }))
        ));

        let mut bad_sig = endorsed(&chain, register("r9"), &pairs[..6], 5_000);
        bad_sig.endorsements[2].signature[10] ^= 0x40;
        assert_eq!(
            append_block(&chain, bad_sig, 6, &keys),
            Err(BlockFault::BadEndorsementSignature("v2".into()).into())
        );

        let mut twice = endorsed(&chain, register("r9"), &pairs[..6], 5_000);
        let again = twice.endorsements[0].clone();
        twice.endorsements.push(again);
        assert_eq!(append_block(&chain, twice, 6, &keys), Err(BlockFault::DuplicateEndorser("v0".into()).into()));
    }

    #[test]
    fn append_leaves_old_tip_hash() {
        let (pairs, keys) = validators(11);
        let (chain, _) = build_chain(3);
        let before = chain.tip_hash();
        let snapshot = chain.clone();
        let block = endorsed(&chain, register("later"), &pairs[..6], 9_000);
        let _ = append_block(&chain, block, 6, &keys).unwrap();
        assert_eq!(chain.tip_hash(), before);
        assert_eq!(chain, snapshot);
    }

    #[test]
    fn eleven_block_chain_valid() {
        let (chain, keys) = build_chain(10);
        assert_eq!(chain.blocks.len(), 11);
        let report = validate_chain(&chain, 6, &keys);
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn tampered_payload_breaks_suffix() {
        let (mut chain, keys) = build_chain(10);
        chain.blocks[4].register.as_mut().unwrap().payload[3] ^= 0xff;

        // oracle: re-hash every block and collect heights whose own checks or ancestry break
        let mut expected = Vec::new();
        let mut broken = false;
        for (i, b) in chain.blocks.iter().enumerate().skip(1) {
            let prev = &chain.blocks[i - 1];
            let own_ok =
                b.header.previous_hash == prev.hash() && b.register.as_ref().unwrap().hash() == b.header.payload_hash;
            broken |= !own_ok;
            if broken {
                expected.push(i as u64);
            }
        }
        let report = validate_chain(&chain, 6, &keys);
        assert_eq!(report.broken_heights(), expected);
        assert_eq!(expected, (4..=10).collect::<Vec<_>>());
        assert_eq!(report.first_failure().unwrap(), (4, &BlockFault::PayloadHashMismatch));
    }

    #[test]
    fn empty_chain_missing_genesis() {
        let chain = Chain { network_id: "n".into(), blocks: vec![] };
        let report = validate_chain(&chain, 1, &ValidatorKeys::new());
        assert!(!report.is_valid());
        assert_eq!(report.first_failure().unwrap().1.code(), "missing-genesis");
    }

    #[test]
    fn find_register_scan() {
        let (chain, _) = build_chain(10);
        let (height, reg) = find_register(&chain, "rec-6").unwrap();
        // oracle: position of the id in insertion order plus one for genesis
        assert_eq!(height, 7);
        assert_eq!(reg.register_id, "rec-6");
        assert!(find_register(&chain, "nope").is_none());
        let g = Chain::genesis("n", 0).unwrap();
        assert!(find_register(&g, "rec-0").is_none());
    }

    #[test]
    fn block_codec_round_trip() {
        let (chain, _) = build_chain(2);
        for b in &chain.blocks {
            let bytes = b.encode();
            assert_eq!(&Block::decode(&bytes).unwrap(), b);
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let (a, _) = build_chain(5);
        let (b, _) = build_chain(5);
        assert_eq!(a.tip_hash(), b.tip_hash());
    }

    #[test]
    fn provenance_recoverable() {
        let (chain, _) = build_chain(3);
        for (h, reg) in chain.registers() {
            assert_eq!(reg.submitter_card_id, "card-1");
            assert_eq!(chain.block(h).unwrap().header.proposer_id, "v0");
        }
    }
}
