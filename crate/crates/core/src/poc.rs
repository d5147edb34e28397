//! The desk-scale proof of concept: a coordinator registers N educational
//! records on an M-validator network, every record is verified, and a
//! registration without adequate credentials is turned away.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::consensus::{derive_validators, majority, ProposalContext};
use crate::identity::{issue_card_with_rng, CardDirectory, ConnectionProfile, IdCard, KeyPair, Role};
use crate::ledger::{validate_chain, Register};
use crate::records::{
    default_acl, default_model, record_register_body, NetworkParams, RecordDraft, RecordKind, RecordsError,
    RecordsNetwork, RegistrationRequest, VerificationStatus,
};
use crate::{hash_digest, HashDigest};

/// 2018-12-10T00:00:00Z, the fixed clock origin of PoC runs.
pub const POC_EPOCH_MS: u64 = 1_544_400_000_000;

const TITLES: &[(&str, &str)] = &[
    ("Bachelor of Computer Science", "Computer Science"),
    ("Blockchain Fundamentals", "Computer Science"),
    ("Bachelor of Information Systems", "Information Systems"),
    ("Distributed Systems Extension Course", "Information Systems"),
    ("Bachelor of Software Engineering", "Software Engineering"),
    ("Cloud Computing Workshop", "Software Engineering"),
    ("Master of Applied Computing", "Applied Computing"),
    ("Data Privacy Seminar", "Applied Computing"),
];

/// Network, authority and cards for a reproducible run.
#[derive(Debug, Clone)]
pub struct PocFixture {
    pub params: NetworkParams,
    pub authority: KeyPair,
    pub coordinator: IdCard,
    pub user: IdCard,
    /// Well-formed card from an authority the network does not trust.
    pub forged: IdCard,
    seed: u64,
}

impl PocFixture {
    pub fn new(network_id: &str, validators: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let authority = KeyPair::generate(&mut rng);
        let profile = ConnectionProfile::new(network_id, "http://127.0.0.1:8480");
        let coordinator =
            issue_card_with_rng(&mut rng, &authority, "Coordinator", "coord-001", Role::Coordinator, profile.clone())
                .expect("valid fixture card");
        let user = issue_card_with_rng(&mut rng, &authority, "User", "user-001", Role::User, profile.clone())
            .expect("valid fixture card");
        let rogue = KeyPair::generate(&mut rng);
        let forged = issue_card_with_rng(&mut rng, &rogue, "Coordinator", "coord-666", Role::Coordinator, profile)
            .expect("valid fixture card");
        PocFixture {
            params: NetworkParams {
                network_id: network_id.to_owned(),
                quorum: majority(validators),
                validators: derive_validators(network_id, validators),
                authority: authority.public_key(),
                max_delay_ticks: 2,
            },
            authority,
            coordinator,
            user,
            forged,
            seed,
        }
    }

    /// Genesis-only network with a fixed clock and seeded randomness.
    pub fn network(&self) -> RecordsNetwork {
        let mut net = RecordsNetwork::bootstrap(self.params.clone(), POC_EPOCH_MS).expect("fixture params are valid");
        net.seed_rng(self.seed);
        let mut now = POC_EPOCH_MS;
        net.set_clock(move || {
            now += 1_000;
            now
        });
        net
    }

    /// Validator-side context with the fixture cards admitted.
    pub fn context(&self) -> ProposalContext {
        let mut cards = CardDirectory::new();
        for card in [&self.coordinator, &self.user] {
            cards.admit(card, &self.authority.public_key(), &self.params.network_id).expect("fixture card");
        }
        ProposalContext {
            model: default_model().clone().into(),
            acl: default_acl().clone().into(),
            cards: cards.into(),
        }
    }

    /// Record `i`: students get two records each.
    pub fn draft(&self, i: usize) -> RecordDraft {
        let (title, course) = TITLES[i % TITLES.len()];
        RecordDraft {
            record_id: None,
            kind: if i.is_multiple_of(2) { RecordKind::Diploma } else { RecordKind::Certificate },
            title: title.to_owned(),
            student_ref: format!("s-{:03}", i / 2 + 1),
            institution: if i % 5 == 4 { "UFBA" } else { "UNIFACS" }.to_owned(),
            course: course.to_owned(),
            issued_on: format!("2018-12-{:02}", 1 + i % 28),
        }
    }

    pub fn document(&self, i: usize) -> Vec<u8> {
        format!("%PDF-1.4\n% educational record {i}\n").into_bytes()
    }

    /// Signed asset-create register for record `i` with a deterministic id.
    pub fn register(&self, i: usize) -> Register {
        self.register_signed_by(i, &self.coordinator)
    }

    pub fn register_signed_by(&self, i: usize, card: &IdCard) -> Register {
        let record_id = hex::encode(&hash_digest(format!("{}/{i}", self.seed).as_bytes()).0[..16]);
        let record = self.draft(i).into_record(record_id, &card.card_id, &self.document(i));
        record_register_body(&record).sign(card).expect("card holds a secret key")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PocReport {
    pub records: usize,
    pub validators: usize,
    pub quorum: usize,
    pub committed: usize,
    /// Blocks including genesis.
    pub chain_blocks: usize,
    pub chain_valid: bool,
    pub verified: usize,
    pub min_endorsements: usize,
    pub documents_matched: usize,
    pub unauthorized_rejected: bool,
    pub invalid_card_rejected: bool,
    pub tip_unchanged_after_rejections: bool,
    pub record_ids: Vec<String>,
    pub tip_hash: HashDigest,
    pub elapsed_ms: u128,
}

impl PocReport {
    pub fn passed(&self) -> bool {
        self.committed == self.records
            && self.chain_blocks == self.records + 1
            && self.chain_valid
            && self.verified == self.records
            && (self.records == 0 || self.min_endorsements >= self.quorum)
            && self.documents_matched == self.records
            && self.unauthorized_rejected
            && self.invalid_card_rejected
            && self.tip_unchanged_after_rejections
    }

    pub fn summary(&self) -> String {
        format!(
            "{c}/{n} committed, chain {valid}, {v}/{n} verified, unauthorized attempt {rej}",
            c = self.committed,
            n = self.records,
            valid = if self.chain_valid { "valid" } else { "INVALID" },
            v = self.verified,
            rej = if self.unauthorized_rejected && self.invalid_card_rejected && self.tip_unchanged_after_rejections {
                "rejected"
            } else {
                "ACCEPTED"
            },
        )
    }
}

/// Runs the scenario end to end and returns the report with the final
/// network.
pub fn run_poc(records: usize, validators: usize, seed: u64) -> Result<(PocReport, RecordsNetwork), RecordsError> {
    let started = Instant::now();
    let fixture = PocFixture::new("bcer2-poc", validators, seed);
    let mut net = fixture.network();

    let mut record_ids = Vec::with_capacity(records);
    for i in 0..records {
        let receipt = net.register_certificate(RegistrationRequest {
            draft: fixture.draft(i),
            card: fixture.coordinator.clone(),
            document: Some(fixture.document(i)),
        })?;
        record_ids.push(receipt.record_id);
    }
    let chain = net.chain();
    let committed = record_ids.iter().filter(|id| crate::ledger::find_register(&chain, id).is_some()).count();
    let chain_valid = validate_chain(&chain, net.quorum(), net.validator_keys()).is_valid();

    let mut verified = 0;
    let mut min_endorsements = usize::MAX;
    let mut documents_matched = 0;
    for (i, id) in record_ids.iter().enumerate() {
        let v = net.verify_certificate(id);
        if v.status == VerificationStatus::Authentic {
            verified += 1;
        }
        min_endorsements = min_endorsements.min(v.endorsement_count.unwrap_or(0));
        if net.verify_document(id, &fixture.document(i)).is_ok_and(|d| d.matches) {
            documents_matched += 1;
        }
    }

    let tip_before = net.chain().tip_hash();
    let attempt = |card: &IdCard| RegistrationRequest {
        draft: fixture.draft(records),
        card: card.clone(),
        document: Some(fixture.document(records)),
    };
    let unauthorized_rejected =
        matches!(net.register_certificate(attempt(&fixture.user)), Err(RecordsError::Unauthorized { .. }));
    let invalid_card_rejected =
        matches!(net.register_certificate(attempt(&fixture.forged)), Err(RecordsError::InvalidCard(_)));
    let tip_unchanged_after_rejections = net.chain().tip_hash() == tip_before;

    let chain = net.chain();
    let report = PocReport {
        records,
        validators,
        quorum: net.quorum(),
        committed,
        chain_blocks: chain.blocks.len(),
        chain_valid,
        verified,
        min_endorsements: if records == 0 { 0 } else { min_endorsements },
        documents_matched,
        unauthorized_rejected,
        invalid_card_rejected,
        tip_unchanged_after_rejections,
        record_ids,
        tip_hash: chain.tip_hash(),
        elapsed_ms: started.elapsed().as_millis(),
    };
    Ok((report, net))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_poc_passes() {
        let (report, _) = run_poc(3, 4, 1).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.summary(), "3/3 committed, chain valid, 3/3 verified, unauthorized attempt rejected");
        assert!(report.min_endorsements >= 3);
    }

    #[test]
    fn poc_is_reproducible() {
        let (a, _) = run_poc(2, 3, 9).unwrap();
        let (b, _) = run_poc(2, 3, 9).unwrap();
        assert_eq!(a.tip_hash, b.tip_hash);
        assert_eq!(a.record_ids, b.record_ids);
        let (c, _) = run_poc(2, 3, 10).unwrap();
        assert_ne!(a.tip_hash, c.tip_hash);
    }
}
