use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::handlers::{dispatch_transaction, HandlerRegistry};
use super::{
    default_acl, default_model, new_record_id, role_allows, EducationalRecord, RecordKind, RecordsError,
    RegistrationRequest, RECORD_TYPE, REGISTER_RECORD_TX,
};
use crate::canonical;
use crate::consensus::{majority, run_simulation, ProposalContext, SimConfig, SimSetup, SimTrace};
use crate::identity::{check_card, CardDirectory, IdCard, KeyPair, PublicKey};
use crate::ledger::{
    check_endorsements, find_register, validate_chain, Chain, Register, RegisterBody, RegisterKind, ValidatorKeys,
};
use crate::model::{authorize, AclRuleSet, Action, ModelDefinition, Operation};
use crate::store::ChainStore;
use crate::{hash_digest, HashDigest};

#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub network_id: String,
    pub quorum: usize,
    /// Validator roster in leader-rotation order.
    pub validators: Vec<(String, KeyPair)>,
    /// Registration authority that signs ID cards.
    pub authority: PublicKey,
    pub max_delay_ticks: u64,
}

impl NetworkParams {
    pub fn validator_keys(&self) -> ValidatorKeys {
        self.validators.iter().map(|(id, k)| (id.clone(), k.public_key())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerificationStatus {
    Authentic,
    NotFound,
    IntegrityFailure,
}

impl VerificationStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            VerificationStatus::Authentic => "authentic",
            VerificationStatus::NotFound => "not-found",
            VerificationStatus::IntegrityFailure => "integrity-failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProvenanceEntry {
    pub height: u64,
    pub kind: RegisterKind,
    pub submitter_card_id: String,
    pub block_hash: HashDigest,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationResult {
    pub status: VerificationStatus,
    pub record_id: String,
    pub height: Option<u64>,
    pub issuer_card_id: Option<String>,
    pub issued_on: Option<String>,
    pub endorsement_count: Option<usize>,
    pub chain_valid: bool,
    pub record: Option<EducationalRecord>,
    pub provenance: Vec<ProvenanceEntry>,
}

impl VerificationResult {
    fn bare(status: VerificationStatus, record_id: &str, chain_valid: bool) -> Self {
        VerificationResult {
            status,
            record_id: record_id.to_owned(),
            height: None,
            issuer_card_id: None,
            issued_on: None,
            endorsement_count: None,
            chain_valid,
            record: None,
            provenance: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DocumentCheck {
    pub matches: bool,
    pub verification: VerificationResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegistrationReceipt {
    pub record_id: String,
    pub height: u64,
    pub block_hash: HashDigest,
    pub document_hash: HashDigest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordSummary {
    pub record: EducationalRecord,
    pub height: u64,
}

/// Shared by clones so a writer's copy keeps ticking the same clock.
type Clock = Arc<Mutex<dyn FnMut() -> u64 + Send>>;

fn system_clock() -> u64 {
    let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap_or_default();
    now.as_millis() as u64
}

/// One records network as seen by a node: model, rules, known cards,
/// validator roster and the current chain. Clones are cheap and share the
/// model, rules and chain until one of them commits.
#[derive(Clone)]
pub struct RecordsNetwork {
    params: NetworkParams,
    keys: ValidatorKeys,
    model: Arc<ModelDefinition>,
    acl: Arc<AclRuleSet>,
    cards: Arc<CardDirectory>,
    handlers: HandlerRegistry,
    chain: Arc<Chain>,
    integrity_fault: Option<String>,
    rng: ChaCha8Rng,
    clock: Clock,
    last_trace: Option<SimTrace>,
}

impl std::fmt::Debug for RecordsNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecordsNetwork")
            .field("network_id", &self.params.network_id)
            .field("height", &self.chain.height())
            .field("integrity_fault", &self.integrity_fault)
            .finish_non_exhaustive()
    }
}

impl RecordsNetwork {
    /// Opens a network over an existing chain with the bundled model and ACL.
    pub fn open(params: NetworkParams, chain: Chain) -> Result<Self, RecordsError> {
        Self::open_with(params, chain, default_model().clone(), default_acl().clone(), HandlerRegistry::with_defaults())
    }

    pub fn open_with(
        params: NetworkParams,
        chain: Chain,
        model: ModelDefinition,
        acl: AclRuleSet,
        handlers: HandlerRegistry,
    ) -> Result<Self, RecordsError> {
        let n = params.validators.len();
        if n == 0 || params.quorum < majority(n) || params.quorum > n {
            return Err(RecordsError::Config(format!("quorum {} invalid for {n} validators", params.quorum)));
        }
        let unique: HashSet<_> = params.validators.iter().map(|(id, _)| id).collect();
        if unique.len() != n {
            return Err(RecordsError::Config("duplicate validator id".into()));
        }
        if chain.network_id != params.network_id {
            return Err(RecordsError::Config(format!(
                "chain belongs to network `{}`, expected `{}`",
                chain.network_id, params.network_id
            )));
        }
        handlers.check_complete(&model)?;
        let keys = params.validator_keys();
        let report = validate_chain(&chain, params.quorum, &keys);
        let integrity_fault = report.first_failure().map(|(h, f)| format!("height {h}: {f}"));
        Ok(RecordsNetwork {
            params,
            keys,
            model: Arc::new(model),
            acl: Arc::new(acl),
            cards: Arc::new(CardDirectory::new()),
            handlers,
            chain: Arc::new(chain),
            integrity_fault,
            rng: ChaCha8Rng::from_entropy(),
            clock: Arc::new(Mutex::new(system_clock)),
            last_trace: None,
        })
    }

    /// Opens over whatever the chain file holds. Unreadable lines and
    /// validation failures do not stop the open; they put the network in
    /// the integrity-failure state instead.
    pub fn from_store(params: NetworkParams, store: &ChainStore) -> Result<Self, RecordsError> {
        let load = store.load_lenient().map_err(|e| RecordsError::Config(e.to_string()))?;
        if load.blocks.is_empty() && load.corruption.is_none() {
            return Err(RecordsError::Config("chain file is empty".into()));
        }
        let chain = Chain { network_id: params.network_id.clone(), blocks: load.blocks };
        let mut net = Self::open(params, chain)?;
        if let Some((height, reason)) = load.corruption {
            net.mark_corrupt(format!("height {height}: {reason}"));
        }
        Ok(net)
    }

    /// Fresh genesis-only network.
    pub fn bootstrap(params: NetworkParams, created_ms: u64) -> Result<Self, RecordsError> {
        let chain = Chain::genesis(&params.network_id, created_ms).map_err(|e| RecordsError::Config(e.to_string()))?;
        Self::open(params, chain)
    }

    /// Makes record ids and consensus runs reproducible.
    pub fn seed_rng(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn set_clock(&mut self, clock: impl FnMut() -> u64 + Send + 'static) {
        self.clock = Arc::new(Mutex::new(clock));
    }

    /// Flags the chain as damaged beyond what validation sees, e.g. an
    /// unreadable tail in the chain file.
    pub fn mark_corrupt(&mut self, reason: impl Into<String>) {
        self.integrity_fault.get_or_insert(reason.into());
    }

    pub fn integrity_fault(&self) -> Option<&str> {
        self.integrity_fault.as_deref()
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn validator_keys(&self) -> &ValidatorKeys {
        &self.keys
    }

    pub fn quorum(&self) -> usize {
        self.params.quorum
    }

    pub fn chain(&self) -> Arc<Chain> {
        self.chain.clone()
    }

    pub fn model(&self) -> &ModelDefinition {
        &self.model
    }

    pub fn acl(&self) -> &AclRuleSet {
        &self.acl
    }

    pub fn cards(&self) -> &CardDirectory {
        &self.cards
    }

    /// Trace of the most recent consensus run.
    pub fn last_trace(&self) -> Option<&SimTrace> {
        self.last_trace.as_ref()
    }

    /// Authority signature, network and role/participant consistency.
    pub fn check_card(&self, card: &IdCard) -> Result<(), RecordsError> {
        check_card(card, &self.params.authority, &self.params.network_id)
            .map_err(|e| RecordsError::InvalidCard(e.to_string()))?;
        let participant = self.model.local_name(&card.participant_type);
        if self.model.participant(participant).is_none() {
            return Err(RecordsError::InvalidCard(format!("unknown participant type `{participant}`")));
        }
        if !role_allows(card.role, participant) {
            return Err(RecordsError::InvalidCard(format!(
                "role {} cannot hold participant type {participant}",
                card.role.as_str()
            )));
        }
        Ok(())
    }

    /// Adds a card's public half to the directory validators consult.
    pub fn admit_card(&mut self, card: &IdCard) -> Result<(), RecordsError> {
        self.check_card(card)?;
        if self.cards.get(&card.card_id).is_none() {
            Arc::make_mut(&mut self.cards)
                .admit(card, &self.params.authority, &self.params.network_id)
                .map_err(|e| RecordsError::InvalidCard(e.to_string()))?;
        }
        Ok(())
    }

    pub fn authorize(&self, card: &IdCard, op: Operation, resource: &str) -> Result<(), RecordsError> {
        let participant = self.model.local_name(&card.participant_type);
        if authorize(&self.acl, participant, op, resource) == Action::Allow {
            Ok(())
        } else {
            Err(RecordsError::Unauthorized {
                card_id: card.card_id.clone(),
                participant: participant.to_owned(),
                operation: op.keyword().to_owned(),
                resource: resource.to_owned(),
            })
        }
    }

    fn ensure_intact(&self) -> Result<(), RecordsError> {
        match &self.integrity_fault {
            Some(f) => Err(RecordsError::Integrity(f.clone())),
            None => Ok(()),
        }
    }

    fn holder_card(&self, card: &IdCard) -> Result<(), RecordsError> {
        self.check_card(card)?;
        if card.secret.is_none() {
            return Err(RecordsError::InvalidCard(format!("card {} carries no secret key", card.card_id)));
        }
        Ok(())
    }

    /// Card check, CREATE authorization, schema check, handler dispatch,
    /// consensus, append. Returns once the register is committed.
    pub fn register_certificate(&mut self, request: RegistrationRequest) -> Result<RegistrationReceipt, RecordsError> {
        self.ensure_intact()?;
        let RegistrationRequest { draft, card, document } = request;
        self.holder_card(&card)?;
        self.authorize(&card, Operation::Create, RECORD_TYPE)?;
        let record_id = match &draft.record_id {
            Some(id) => id.clone(),
            None => new_record_id(&mut self.rng),
        };
        let record = draft.into_record(record_id, &card.card_id, document.as_deref().unwrap_or_default());
        let bodies = dispatch_transaction(REGISTER_RECORD_TX, &record.to_instance(), &self.handlers, &self.model)?;
        self.reject_duplicates(&bodies)?;
        let registers = bodies
            .into_iter()
            .map(|b| b.sign(&card).map_err(|e| RecordsError::InvalidCard(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        self.admit_card(&card)?;
        self.commit(registers)?;
        self.receipt(&record)
    }

    /// Registration with a detached signature from a card the network
    /// already knows. `signature` covers the register signing bytes of
    /// [`super::record_register_body`].
    pub fn register_presigned(
        &mut self,
        card_id: &str,
        record: EducationalRecord,
        signature: &[u8],
    ) -> Result<RegistrationReceipt, RecordsError> {
        self.ensure_intact()?;
        let card = self
            .cards
            .get(card_id)
            .cloned()
            .ok_or_else(|| RecordsError::InvalidCard(format!("unknown card `{card_id}`")))?;
        self.check_card(&card)?;
        self.authorize(&card, Operation::Create, RECORD_TYPE)?;
        if record.issuer_card_id != card_id {
            return Err(RecordsError::InvalidCard("issuer_card_id does not match the signing card".into()));
        }
        let bodies = dispatch_transaction(REGISTER_RECORD_TX, &record.to_instance(), &self.handlers, &self.model)?;
        let registers: Vec<Register> = bodies
            .iter()
            .map(|b| Register {
                register_id: b.register_id.clone(),
                kind: b.kind,
                resource_type: b.resource_type.clone(),
                payload: b.payload.clone(),
                submitter_card_id: card_id.to_owned(),
                submitter_signature: signature.to_vec(),
            })
            .collect();
        if !registers.iter().all(|r| r.verify_signature(&card.public_key)) {
            return Err(RecordsError::InvalidCard("signature does not verify".into()));
        }
        self.reject_duplicates(&bodies)?;
        self.commit(registers)?;
        self.receipt(&record)
    }

    fn reject_duplicates(&self, bodies: &[RegisterBody]) -> Result<(), RecordsError> {
        match bodies.iter().find(|b| find_register(&self.chain, &b.register_id).is_some()) {
            Some(b) => Err(RecordsError::DuplicateRecordId(b.register_id.clone())),
            None => Ok(()),
        }
    }

    fn receipt(&self, record: &EducationalRecord) -> Result<RegistrationReceipt, RecordsError> {
        let (height, _) = self.latest(&record.record_id).ok_or(RecordsError::ConsensusTimeout)?;
        Ok(RegistrationReceipt {
            record_id: record.record_id.clone(),
            height,
            block_hash: self.chain.block(height).map(|b| b.hash()).unwrap_or_default(),
            document_hash: record.document_hash,
        })
    }

    /// Runs the registers through validator consensus and adopts the
    /// resulting chain when every one of them committed.
    fn commit(&mut self, registers: Vec<Register>) -> Result<(), RecordsError> {
        let config = SimConfig {
            validator_count: self.params.validators.len(),
            quorum: self.params.quorum,
            rng_seed: self.rng.next_u64(),
            drop_probability: num_rational::Ratio::from_integer(0),
            max_delay_ticks: self.params.max_delay_ticks,
            silent_validators: Default::default(),
        };
        let setup = SimSetup {
            config,
            validators: self.params.validators.clone(),
            ctx: ProposalContext { model: self.model.clone(), acl: self.acl.clone(), cards: self.cards.clone() },
            chain: (*self.chain).clone(),
            start_ms: (self.clock.lock().unwrap_or_else(|e| e.into_inner()))(),
        };
        let outcome = run_simulation(&setup, &registers).map_err(|e| RecordsError::Config(e.to_string()))?;
        let best = outcome.longest_chain().cloned();
        self.last_trace = Some(outcome.trace);
        let best = best.ok_or(RecordsError::ConsensusTimeout)?;
        if registers.iter().any(|r| find_register(&best, &r.register_id).is_none()) {
            return Err(RecordsError::ConsensusTimeout);
        }
        self.chain = Arc::new(best);
        Ok(())
    }

    /// Registers touching `record_id`, oldest first.
    fn history(&self, record_id: &str) -> Vec<(u64, &Register, EducationalRecord)> {
        self.chain
            .registers()
            .filter(|(_, r)| r.resource_type == RECORD_TYPE)
            .filter_map(|(h, r)| {
                let record = r.payload_value().ok().and_then(|v| EducationalRecord::from_instance(&v).ok())?;
                (record.record_id == record_id).then_some((h, r, record))
            })
            .collect()
    }

    fn latest(&self, record_id: &str) -> Option<(u64, EducationalRecord)> {
        self.history(record_id).pop().map(|(h, _, r)| (h, r))
    }

    /// Re-checks payload hash, endorsements and links from `height` to the tip.
    fn recheck(&self, height: u64) -> bool {
        let blocks = &self.chain.blocks;
        let Some(block) = blocks.get(height as usize) else { return false };
        let payload_ok = block.register.as_ref().is_some_and(|r| r.hash() == block.header.payload_hash);
        payload_ok
            && check_endorsements(block, self.params.quorum, &self.keys).is_ok()
            && blocks[height as usize..].windows(2).all(|w| w[1].header.previous_hash == w[0].hash())
    }

    /// Public lookup by identifier. Needs no credential and never changes
    /// the chain.
    pub fn verify_certificate(&self, record_id: &str) -> VerificationResult {
        if self.integrity_fault.is_some() {
            return VerificationResult::bare(VerificationStatus::IntegrityFailure, record_id, false);
        }
        let history = self.history(record_id);
        let Some((created_at, creator, _)) = history.first() else {
            return VerificationResult::bare(VerificationStatus::NotFound, record_id, true);
        };
        if !history.iter().all(|(h, _, _)| self.recheck(*h)) {
            return VerificationResult::bare(VerificationStatus::IntegrityFailure, record_id, false);
        }
        let (_, _, latest) = history.last().expect("nonempty");
        let creation_block = self.chain.block(*created_at).expect("height from scan");
        VerificationResult {
            status: VerificationStatus::Authentic,
            record_id: record_id.to_owned(),
            height: Some(*created_at),
            issuer_card_id: Some(creator.submitter_card_id.clone()),
            issued_on: Some(latest.issued_on.clone()),
            endorsement_count: Some(creation_block.endorsements.len()),
            chain_valid: true,
            record: Some(latest.clone()),
            provenance: history
                .iter()
                .map(|(h, r, _)| {
                    let b = self.chain.block(*h).expect("height from scan");
                    ProvenanceEntry {
                        height: *h,
                        kind: r.kind,
                        submitter_card_id: r.submitter_card_id.clone(),
                        block_hash: b.hash(),
                        timestamp_ms: b.header.timestamp_ms,
                    }
                })
                .collect(),
        }
    }

    /// Compares SHA-256 of `document` with the stored document hash.
    pub fn verify_document(&self, record_id: &str, document: &[u8]) -> Result<DocumentCheck, RecordsError> {
        let verification = self.verify_certificate(record_id);
        match verification.status {
            VerificationStatus::NotFound => Err(RecordsError::NotFound(record_id.to_owned())),
            VerificationStatus::IntegrityFailure => Ok(DocumentCheck { matches: false, verification }),
            VerificationStatus::Authentic => {
                let stored = verification.record.as_ref().map(|r| r.document_hash);
                Ok(DocumentCheck { matches: stored == Some(hash_digest(document)), verification })
            }
        }
    }

    /// Latest state of every record, newest first, filtered by the given
    /// fields.
    pub fn list_records(
        &self,
        student_ref: Option<&str>,
        institution: Option<&str>,
        kind: Option<RecordKind>,
    ) -> Vec<RecordSummary> {
        let mut seen = HashSet::new();
        self.chain
            .registers()
            .rev()
            .filter(|(_, r)| r.resource_type == RECORD_TYPE)
            .filter_map(|(height, r)| {
                let record = r.payload_value().ok().and_then(|v| EducationalRecord::from_instance(&v).ok())?;
                Some(RecordSummary { record, height })
            })
            .filter(|s| seen.insert(s.record.record_id.clone()))
            .filter(|s| student_ref.is_none_or(|v| s.record.student_ref == v))
            .filter(|s| institution.is_none_or(|v| s.record.institution == v))
            .filter(|s| kind.is_none_or(|k| s.record.kind == k))
            .collect()
    }

    /// Credentialed READ, gated by the ACL.
    pub fn read_record(&self, card: &IdCard, record_id: &str) -> Result<EducationalRecord, RecordsError> {
        self.check_card(card)?;
        self.authorize(card, Operation::Read, RECORD_TYPE)?;
        self.ensure_intact()?;
        self.latest(record_id).map(|(_, r)| r).ok_or_else(|| RecordsError::NotFound(record_id.to_owned()))
    }

    /// Credentialed UPDATE: commits an asset-update register carrying the
    /// new state. Issuer and document hash may change; the id may not.
    pub fn update_record(
        &mut self,
        card: &IdCard,
        record: EducationalRecord,
    ) -> Result<RegistrationReceipt, RecordsError> {
        self.holder_card(card)?;
        self.authorize(card, Operation::Update, RECORD_TYPE)?;
        self.ensure_intact()?;
        if self.latest(&record.record_id).is_none() {
            return Err(RecordsError::NotFound(record.record_id));
        }
        let asset = record.to_instance();
        crate::model::validate_instance(&self.model, RECORD_TYPE, &asset).map_err(|errs| {
            RecordsError::SchemaViolation(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
        })?;
        let body = RegisterBody {
            register_id: format!("{}/update/{}", record.record_id, new_record_id(&mut self.rng)),
            kind: RegisterKind::AssetUpdate,
            resource_type: RECORD_TYPE.to_owned(),
            payload: canonical::encode(&asset),
        };
        let register = body.sign(card).map_err(|e| RecordsError::InvalidCard(e.to_string()))?;
        self.admit_card(card)?;
        self.commit(vec![register])?;
        self.receipt(&record)
    }

    /// Credentialed DELETE. The ledger is append-only, so an authorized
    /// delete is still refused.
    pub fn delete_record(&mut self, card: &IdCard, record_id: &str) -> Result<(), RecordsError> {
        self.check_card(card)?;
        self.authorize(card, Operation::Delete, RECORD_TYPE)?;
        Err(RecordsError::Unsupported(format!("records are permanent; `{record_id}` cannot be deleted")))
    }
}
