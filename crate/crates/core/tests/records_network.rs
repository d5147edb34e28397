use bcer2_core::identity::{issue_card, ConnectionProfile, Role};
use bcer2_core::model::{authorize, parse_acl, AclRuleSet, Action, Operation};
use bcer2_core::poc::PocFixture;
use bcer2_core::records::{
    default_model, record_register_body, HandlerRegistry, RecordKind, RecordsError, RecordsNetwork,
    RegistrationRequest, VerificationStatus, RECORD_TYPE,
};
use bcer2_core::{hash_digest, Chain};

fn setup() -> (PocFixture, RecordsNetwork) {
    let f = PocFixture::new("records-test", 5, 21);
    let net = f.network();
    (f, net)
}

fn request(f: &PocFixture, i: usize, card: &bcer2_core::IdCard) -> RegistrationRequest {
    RegistrationRequest { draft: f.draft(i), card: card.clone(), document: Some(f.document(i)) }
}

#[test]
fn coordinator_registers_at_next_height() {
    let (f, mut net) = setup();
    let r = net.register_certificate(request(&f, 0, &f.coordinator)).unwrap();
    assert_eq!(r.height, 1);
    assert_eq!(r.record_id.len(), 32);
    assert_eq!(r.document_hash, hash_digest(&f.document(0)));
    let r2 = net.register_certificate(request(&f, 1, &f.coordinator)).unwrap();
    assert_eq!(r2.height, 2);
    assert_eq!(net.chain().tip_hash(), r2.block_hash);
}

#[test]
fn user_card_is_unauthorized_and_chain_unchanged() {
    let (f, mut net) = setup();
    net.register_certificate(request(&f, 0, &f.coordinator)).unwrap();
    let tip = net.chain().tip_hash();
    let err = net.register_certificate(request(&f, 1, &f.user)).unwrap_err();
    assert_eq!(err.code(), "unauthorized");
    let err = net.register_certificate(request(&f, 1, &f.forged)).unwrap_err();
    assert_eq!(err.code(), "invalid-card");
    let mut public_only = f.coordinator.public();
    public_only.card_id = f.coordinator.card_id.clone();
    assert_eq!(net.register_certificate(request(&f, 1, &public_only)).unwrap_err().code(), "invalid-card");
    assert_eq!(net.chain().tip_hash(), tip);
}

#[test]
fn duplicate_record_id_rejected() {
    let (f, mut net) = setup();
    let mut req = request(&f, 0, &f.coordinator);
    req.draft.record_id = Some("fixed-id".into());
    net.register_certificate(req.clone()).unwrap();
    let err = net.register_certificate(req).unwrap_err();
    assert_eq!(err, RecordsError::DuplicateRecordId("fixed-id".into()));
}

#[test]
fn schema_violation_reported() {
    let (f, mut net) = setup();
    let mut req = request(&f, 0, &f.coordinator);
    req.draft.issued_on = "last tuesday".into();
    assert_eq!(net.register_certificate(req).unwrap_err().code(), "schema-violation");
    let mut req = request(&f, 0, &f.coordinator);
    req.draft.record_id = Some("  ".into());
    assert_eq!(net.register_certificate(req).unwrap_err().code(), "schema-violation");
}

#[test]
fn verification_statuses_and_provenance() {
    let (f, mut net) = setup();
    let r = net.register_certificate(request(&f, 0, &f.coordinator)).unwrap();
    let v = net.verify_certificate(&r.record_id);
    assert_eq!(v.status, VerificationStatus::Authentic);
    assert_eq!(v.height, Some(1));
    assert_eq!(v.issuer_card_id.as_deref(), Some(f.coordinator.card_id.as_str()));
    assert_eq!(v.issued_on.as_deref(), Some("2018-12-01"));
    assert!(v.endorsement_count.unwrap() >= net.quorum());
    assert!(v.chain_valid);
    assert_eq!(v.provenance.len(), 1);
    assert_eq!(v.provenance[0].block_hash, r.block_hash);

    let unknown = net.verify_certificate("0123456789abcdef0123456789abcdef");
    assert_eq!(unknown.status, VerificationStatus::NotFound);
    assert_eq!(unknown.height, None);

    // Verification is read-only and stable.
    let tip = net.chain().tip_hash();
    assert_eq!(net.verify_certificate(&r.record_id), v);
    let _ = net.list_records(None, None, None);
    assert_eq!(net.chain().tip_hash(), tip);
    net.register_certificate(request(&f, 1, &f.coordinator)).unwrap();
    assert_eq!(net.verify_certificate(&r.record_id), v);
}

#[test]
fn document_matching() {
    let (f, mut net) = setup();
    let r = net.register_certificate(request(&f, 0, &f.coordinator)).unwrap();
    assert!(net.verify_document(&r.record_id, &f.document(0)).unwrap().matches);
    let mut altered = f.document(0);
    altered[3] ^= 1;
    assert!(!net.verify_document(&r.record_id, &altered).unwrap().matches);
    assert!(!net.verify_document(&r.record_id, b"").unwrap().matches);
    assert_eq!(net.verify_document("nope", b"x").unwrap_err().code(), "not-found");
}

#[test]
fn listing_filters_newest_first() {
    let (f, mut net) = setup();
    for i in 0..6 {
        net.register_certificate(request(&f, i, &f.coordinator)).unwrap();
    }
    let all = net.list_records(None, None, None);
    assert_eq!(all.len(), 6);
    assert!(all.windows(2).all(|w| w[0].height > w[1].height));
    let s2 = net.list_records(Some("s-002"), None, None);
    assert_eq!(s2.iter().map(|s| s.height).collect::<Vec<_>>(), vec![4, 3]);
    assert!(net.list_records(Some("s-999"), None, None).is_empty());
    assert_eq!(net.list_records(None, Some("UFBA"), None).len(), 1);
    assert_eq!(net.list_records(None, None, Some(RecordKind::Diploma)).len(), 3);
}

#[test]
fn presigned_registration() {
    let (f, mut net) = setup();
    net.admit_card(&f.coordinator).unwrap();
    net.admit_card(&f.user).unwrap();
    let record = f.draft(0).into_record("presigned-1".into(), &f.coordinator.card_id, &f.document(0));
    let sig = f.coordinator.sign(&record_register_body(&record).signing_bytes()).unwrap();
    let mut bad = sig;
    bad[0] ^= 1;
    assert_eq!(
        net.register_presigned(&f.coordinator.card_id, record.clone(), &bad).unwrap_err().code(),
        "invalid-card"
    );
    assert_eq!(net.register_presigned("card-unknown", record.clone(), &sig).unwrap_err().code(), "invalid-card");
    let r = net.register_presigned(&f.coordinator.card_id, record.clone(), &sig).unwrap();
    assert_eq!(r.height, 1);
    assert_eq!(net.register_presigned(&f.coordinator.card_id, record, &sig).unwrap_err().code(), "duplicate-record-id");

    let user_record = f.draft(1).into_record("presigned-2".into(), &f.user.card_id, &f.document(1));
    let sig = f.user.sign(&record_register_body(&user_record).signing_bytes()).unwrap();
    assert_eq!(net.register_presigned(&f.user.card_id, user_record, &sig).unwrap_err().code(), "unauthorized");
}

/// Observed outcome of each CRUD call, as allow/deny.
fn observe(net: &mut RecordsNetwork, card: &bcer2_core::IdCard, op: Operation, f: &PocFixture, i: usize) -> Action {
    let existing = net.list_records(None, None, None)[0].record.clone();
    let result = match op {
        Operation::Create => net.register_certificate(request(f, i, card)).map(|_| ()),
        Operation::Read => net.read_record(card, &existing.record_id).map(|_| ()),
        Operation::Update => {
            let mut changed = existing.clone();
            changed.title.push_str(" (revised)");
            net.update_record(card, changed).map(|_| ())
        }
        Operation::Delete => net.delete_record(card, &existing.record_id),
    };
    match result {
        Err(RecordsError::Unauthorized { .. }) => Action::Deny,
        Ok(()) | Err(RecordsError::Unsupported(_)) => Action::Allow,
        Err(e) => panic!("{op} by {}: unexpected {e}", card.participant_type),
    }
}

fn matrix(net: &mut RecordsNetwork, f: &PocFixture, acl: &AclRuleSet) {
    net.register_certificate(request(f, 0, &f.coordinator)).unwrap_or_else(|_| {
        panic!("seed record");
    });
    let mut i = 1;
    for card in [&f.coordinator, &f.user] {
        for op in Operation::ALL {
            let expected = authorize(acl, &card.participant_type, op, RECORD_TYPE);
            let tip = net.chain().tip_hash();
            let observed = observe(net, card, op, f, i);
            i += 1;
            assert_eq!(observed, expected, "{} {op}", card.participant_type);
            if observed == Action::Deny {
                assert_eq!(net.chain().tip_hash(), tip);
            }
        }
    }
}

#[test]
fn acl_matrix_matches_authorize_for_fixture_rules() {
    let (f, mut net) = setup();
    let acl = net.acl().clone();
    matrix(&mut net, &f, &acl);
}

#[test]
fn acl_matrix_matches_authorize_for_permissive_rules() {
    let f = PocFixture::new("records-test", 5, 21);
    let acl = parse_acl(
        r#"rule Everything { participant: "Coordinator" operation: CREATE, READ, UPDATE, DELETE resource: ANY action: ALLOW }
           rule UsersUpdate { participant: "User" operation: READ, UPDATE resource: "EducationalRecord" action: ALLOW }"#,
        default_model(),
    )
    .unwrap();
    let chain = Chain::genesis("records-test", 0).unwrap();
    let mut net = RecordsNetwork::open_with(
        f.params.clone(),
        chain,
        default_model().clone(),
        acl.clone(),
        HandlerRegistry::with_defaults(),
    )
    .unwrap();
    matrix(&mut net, &f, &acl);
    let updated = net.list_records(None, None, None);
    assert!(updated[0].record.title.ends_with("(revised)"));
    let v = net.verify_certificate(&updated[0].record.record_id);
    assert!(v.provenance.len() >= 2);
}

#[test]
fn empty_ruleset_denies_everything() {
    let f = PocFixture::new("records-test", 5, 21);
    let chain = Chain::genesis("records-test", 0).unwrap();
    let mut net = RecordsNetwork::open_with(
        f.params.clone(),
        chain,
        default_model().clone(),
        AclRuleSet::default(),
        HandlerRegistry::with_defaults(),
    )
    .unwrap();
    let err = net.register_certificate(request(&f, 0, &f.coordinator)).unwrap_err();
    assert_eq!(err.code(), "unauthorized");
    assert_eq!(net.read_record(&f.user, "x").unwrap_err().code(), "unauthorized");
    assert_eq!(net.chain().height(), 0);
}

#[test]
fn role_and_participant_must_agree() {
    let f = PocFixture::new("records-test", 5, 21);
    let net = f.network();
    let profile = ConnectionProfile::new("records-test", "http://localhost:1");
    let odd = issue_card(&f.authority, "Coordinator", "x", Role::User, profile.clone()).unwrap();
    assert_eq!(net.check_card(&odd).unwrap_err().code(), "invalid-card");
    let unknown = issue_card(&f.authority, "Dean", "x", Role::User, profile).unwrap();
    assert_eq!(net.check_card(&unknown).unwrap_err().code(), "invalid-card");
    let elsewhere =
        issue_card(&f.authority, "User", "x", Role::User, ConnectionProfile::new("other-net", "http://localhost:1"))
            .unwrap();
    assert_eq!(net.check_card(&elsewhere).unwrap_err().code(), "invalid-card");
}

#[test]
fn corrupt_network_reports_integrity_failure() {
    let (f, mut net) = setup();
    let r = net.register_certificate(request(&f, 0, &f.coordinator)).unwrap();
    let mut chain = (*net.chain()).clone();
    chain.blocks[1].header.timestamp_ms += 1;
    let tampered = RecordsNetwork::open(f.params.clone(), chain).unwrap();
    assert!(tampered.integrity_fault().is_some());
    let v = tampered.verify_certificate(&r.record_id);
    assert_eq!(v.status, VerificationStatus::IntegrityFailure);
    assert!(!v.chain_valid);
    net.mark_corrupt("torn tail");
    assert_eq!(net.verify_certificate(&r.record_id).status, VerificationStatus::IntegrityFailure);
    assert_eq!(net.register_certificate(request(&f, 1, &f.coordinator)).unwrap_err().code(), "integrity-failure");
}
