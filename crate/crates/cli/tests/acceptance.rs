//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs with `cargo test --workspace` or `cargo test --test acceptance`.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use bcer2_core::consensus::{run_simulation, validator_ids, SimConfig, SimSetup};
use bcer2_core::identity::{IdCard, Role};
use bcer2_core::ledger::{append_block, validate_chain, Chain, Register};
use bcer2_core::model::{
    authorize, format_acl, format_model, parse_acl, parse_model, parse_model_bytes, AclRuleSet, Action, Operation,
};
use bcer2_core::poc::{run_poc, PocFixture};
use bcer2_core::records::{
    default_model, HandlerRegistry, RecordsError, RecordsNetwork, RegistrationRequest, VerificationStatus, RECORD_TYPE,
};
use bcer2_core::store::{ChainStore, CHAIN_FILE};
use bcer2_node::{init_data_dir, issue_card, InitOptions, NodeConfig, Server};
use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("PoC replication", poc_replication),
        ("credential rejection", credential_rejection),
        ("tamper evidence", tamper_evidence),
        ("replica finality", replica_finality),
        ("consensus safety", consensus_safety),
        ("ACL matrix", acl_matrix),
        ("parser suite", parser_suite),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail} ({secs:.1}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {why} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn poc_replication() -> Outcome {
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_bcer2"))
        .args(["--json", "poc", "run", "--records", "10", "--validators", "11"])
        .output()
        .map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let v: Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    check!(out.status.success(), "exit {:?}", out.status.code());
    check!(v["committed"] == 10, "committed {}", v["committed"]);
    check!(v["chain_blocks"] == 11, "chain has {} blocks", v["chain_blocks"]);
    check!(v["chain_valid"] == true, "validate_chain failed");
    check!(v["verified"] == 10, "verified {}", v["verified"]);
    check!(v["min_endorsements"].as_u64().unwrap_or(0) >= 6, "min endorsements {}", v["min_endorsements"]);
    let summary = "10/10 committed, chain valid, 10/10 verified, unauthorized attempt rejected";
    check!(v["summary"] == summary, "summary {}", v["summary"]);
    check!(elapsed.as_millis() < 5000, "took {elapsed:?}");
    Ok(format!("{summary}; 11 blocks, min endorsements {}, {} ms", v["min_endorsements"], elapsed.as_millis()))
}

fn credential_rejection() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    init_data_dir(dir.path(), &InitOptions { network_id: "acceptance".into(), validators: 11, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let coordinator = issue_card(dir.path(), "Coordinator", "coord-01", Role::Coordinator, "http://localhost")
        .map_err(|e| e.to_string())?;
    let user = issue_card(dir.path(), "User", "user-01", Role::User, "http://localhost").map_err(|e| e.to_string())?;

    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    let config = NodeConfig::load(dir.path(), "127.0.0.1:0".parse().unwrap()).map_err(|e| e.to_string())?;
    let server = runtime.block_on(Server::bind(config)).map_err(|e| e.to_string())?;
    let base = format!("http://{}", server.local_addr());
    runtime.spawn(server.run());

    let client = reqwest::blocking::Client::new();
    let post = |card: Option<&IdCard>| -> Result<u16, String> {
        let mut form = reqwest::blocking::multipart::Form::new()
            .text("kind", "diploma")
            .text("title", "Bachelor of Computer Science")
            .text("student_ref", "s-001")
            .text("institution", "UNIFACS")
            .text("course", "Computer Science")
            .text("issued_on", "2018-12-10");
        if let Some(card) = card {
            form = form.part(
                "card",
                reqwest::blocking::multipart::Part::bytes(card.to_file_text().into_bytes()).file_name("c.bcid"),
            );
        }
        let r = client.post(format!("{base}/records")).multipart(form).send().map_err(|e| e.to_string())?;
        Ok(r.status().as_u16())
    };
    let tip = || -> Result<Value, String> {
        let head: Value =
            client.get(format!("{base}/chain/head")).send().and_then(|r| r.json()).map_err(|e| e.to_string())?;
        Ok(head["tip_hash"].clone())
    };

    check!(post(Some(&coordinator))? == 201, "coordinator registration did not commit");
    let before = tip()?;
    let user_status = post(Some(&user))?;
    let none_status = post(None)?;
    let after = tip()?;
    check!(user_status == 403, "user card got {user_status}");
    check!(none_status == 401, "no card got {none_status}");
    check!(before == after, "tip moved from {before} to {after}");

    let (report, _) = run_poc(2, 11, 5).map_err(|e| e.to_string())?;
    check!(report.unauthorized_rejected && report.invalid_card_rejected, "library path accepted a bad credential");
    check!(report.tip_unchanged_after_rejections, "library tip moved");
    Ok("user card 403, no card 401, tip hash unchanged".into())
}

struct PersistedPoc {
    bytes: Vec<u8>,
    net: RecordsNetwork,
    record_ids: Vec<String>,
}

fn persisted_poc(seed: u64) -> Result<(tempfile::TempDir, PersistedPoc), String> {
    let (report, net) = run_poc(10, 11, seed).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    ChainStore::open(dir.path()).and_then(|mut s| s.persist_chain(&net.chain())).map_err(|e| e.to_string())?;
    let bytes = fs::read(dir.path().join(CHAIN_FILE)).map_err(|e| e.to_string())?;
    Ok((dir, PersistedPoc { bytes, net, record_ids: report.record_ids }))
}

fn tamper_evidence() -> Outcome {
    let chains = [persisted_poc(11)?.1, persisted_poc(12)?.1];
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = scratch.path().join(CHAIN_FILE);
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a3);
    let (mut unreadable, mut invalid, mut lookups) = (0, 0, 0);
    for case in 0..1000 {
        let p = &chains[case % 2];
        let mut bytes = p.bytes.clone();
        let at = rng.gen_range(0..bytes.len());
        let old = bytes[at];
        while bytes[at] == old {
            bytes[at] = rng.gen();
        }
        fs::write(&path, &bytes).map_err(|e| e.to_string())?;
        let store = ChainStore::open(scratch.path()).map_err(|e| e.to_string())?;
        let params = p.net.params().clone();
        let load = store.load_lenient().map_err(|e| e.to_string())?;
        let chain = Chain { network_id: params.network_id.clone(), blocks: load.blocks };
        let valid = validate_chain(&chain, params.quorum, &params.validator_keys()).is_valid();
        check!(load.corruption.is_some() || !valid, "case {case}: byte {at} mutation passed validation");
        if load.corruption.is_some() {
            unreadable += 1;
        } else {
            invalid += 1;
        }
        let net = RecordsNetwork::from_store(params, &store).map_err(|e| e.to_string())?;
        for id in &p.record_ids {
            let status = net.verify_certificate(id).status;
            check!(status == VerificationStatus::IntegrityFailure, "case {case}: {id} reported {}", status.as_str());
            lookups += 1;
        }
    }
    Ok(format!(
        "1000/1000 mutations detected ({unreadable} undecodable, {invalid} failed validation), {lookups} lookups all integrity-failure"
    ))
}

fn sim_setup(fixture: &PocFixture, config: SimConfig) -> SimSetup {
    SimSetup {
        config,
        validators: fixture.params.validators.clone(),
        ctx: fixture.context(),
        chain: Chain::genesis(&fixture.params.network_id, 0).expect("genesis"),
        start_ms: 0,
    }
}

fn workload(fixture: &PocFixture, n: usize) -> Vec<Register> {
    (0..n).map(|i| fixture.register(i)).collect()
}

fn replica_finality() -> Outcome {
    let (dir, p) = persisted_poc(21)?;
    let params = p.net.params().clone();
    let keys = params.validator_keys();
    let chain = p.net.chain();
    let replayed =
        ChainStore::open(dir.path()).and_then(|s| s.replay(params.quorum, &keys)).map_err(|e| e.to_string())?;
    check!(replayed.tip_hash() == chain.tip_hash(), "file replay tip differs");
    let mut replica = Chain { network_id: chain.network_id.clone(), blocks: vec![chain.blocks[0].clone()] };
    for b in &chain.blocks[1..] {
        replica = append_block(&replica, b.clone(), params.quorum, &keys).map_err(|e| e.to_string())?;
    }
    check!(replica.tip_hash() == chain.tip_hash(), "block-stream replay tip differs");

    let fixture = PocFixture::new("finality", 11, 3);
    let work = workload(&fixture, 10);
    for seed in 0..100 {
        let mut config = SimConfig::new(11, 1000 + seed);
        config.max_delay_ticks = seed % 5;
        let out = run_simulation(&sim_setup(&fixture, config), &work).map_err(|e| e.to_string())?;
        let tips: BTreeSet<_> = out.trace.final_tips().into_values().collect();
        check!(out.trace.committed.len() == 10, "seed {seed}: {} commits", out.trace.committed.len());
        check!(tips.len() == 1, "seed {seed}: {} distinct tips", tips.len());
        check!(out.chains.len() == 11, "seed {seed}: {} replicas", out.chains.len());
    }
    Ok(format!(
        "replayed tip {} identical; 100/100 fault-free runs end on one tip across 11 validators",
        chain.tip_hash()
    ))
}

fn consensus_safety() -> Outcome {
    let fixture = PocFixture::new("safety", 11, 4);
    let work = workload(&fixture, 3);
    let keys = fixture.params.validator_keys();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5afe7);
    let (mut commits, mut max_drop) = (0, Ratio::new(0, 1));
    for run in 0..1000 {
        let mut config = SimConfig::new(11, rng.gen());
        config.drop_probability = Ratio::new(rng.gen_range(0..=10), 20);
        config.max_delay_ticks = rng.gen_range(0..=4);
        let silent = rng.gen_range(0..=5);
        config.silent_validators = validator_ids(11).choose_multiple(&mut rng, silent).cloned().collect();
        max_drop = max_drop.max(config.drop_probability);
        let out = run_simulation(&sim_setup(&fixture, config.clone()), &work).map_err(|e| e.to_string())?;
        let violations = out.trace.safety_violations();
        check!(
            violations.is_empty(),
            "run {run} ({}): conflicting commits at {violations:?}",
            config.to_text().replace('\n', " ")
        );
        for c in out.chains.values() {
            check!(validate_chain(c, 6, &keys).is_valid(), "run {run}: replica chain invalid");
        }
        commits += out.trace.committed.len();
    }
    let mut silent_commits = 0;
    for _ in 0..100 {
        let mut config = SimConfig::new(11, rng.gen());
        config.drop_probability = Ratio::new(rng.gen_range(0..=10), 20);
        config.silent_validators = validator_ids(11).choose_multiple(&mut rng, 6).cloned().collect();
        let out = run_simulation(&sim_setup(&fixture, config), &work).map_err(|e| e.to_string())?;
        silent_commits += out.trace.committed.len();
    }
    check!(silent_commits == 0, "{silent_commits} commits with 6 silent validators");
    Ok(format!(
        "1000 faulty runs (drop up to {max_drop}, up to 5 silent): 0 conflicting heights, {commits} commits; 100 runs with 6 silent: 0 commits"
    ))
}

fn observe(net: &mut RecordsNetwork, f: &PocFixture, card: &IdCard, op: Operation, i: usize) -> Result<Action, String> {
    let existing = net.list_records(None, None, None)[0].record.clone();
    let result = match op {
        Operation::Create => net
            .register_certificate(RegistrationRequest { draft: f.draft(i), card: card.clone(), document: None })
            .map(|_| ()),
        Operation::Read => net.read_record(card, &existing.record_id).map(|_| ()),
        Operation::Update => {
            let mut changed = existing;
            changed.title.push_str(" (revised)");
            net.update_record(card, changed).map(|_| ())
        }
        Operation::Delete => net.delete_record(card, &existing.record_id),
    };
    match result {
        Ok(()) | Err(RecordsError::Unsupported(_)) => Ok(Action::Allow),
        Err(RecordsError::Unauthorized { .. }) => Ok(Action::Deny),
        Err(e) => Err(format!("{op} by {}: {e}", card.participant_type)),
    }
}

fn acl_matrix() -> Outcome {
    let f = PocFixture::new("acl", 5, 6);
    let mut net = f.network();
    let acl = net.acl().clone();
    net.register_certificate(RegistrationRequest { draft: f.draft(0), card: f.coordinator.clone(), document: None })
        .map_err(|e| e.to_string())?;
    let mut cells = Vec::new();
    let mut i = 1;
    for card in [&f.coordinator, &f.user] {
        for op in Operation::ALL {
            let expected = authorize(&acl, &card.participant_type, op, RECORD_TYPE);
            let tip = net.chain().tip_hash();
            let observed = observe(&mut net, &f, card, op, i)?;
            i += 1;
            check!(
                observed == expected,
                "{} {op}: observed {observed:?}, authorize says {expected:?}",
                card.participant_type
            );
            check!(observed == Action::Allow || net.chain().tip_hash() == tip, "denied {op} changed the chain");
            cells.push(format!(
                "{}:{op}={}",
                card.participant_type,
                if observed == Action::Allow { "allow" } else { "deny" }
            ));
        }
    }

    let mut empty = RecordsNetwork::open_with(
        f.params.clone(),
        Chain::genesis("acl", 0).map_err(|e| e.to_string())?,
        default_model().clone(),
        AclRuleSet::default(),
        HandlerRegistry::with_defaults(),
    )
    .map_err(|e| e.to_string())?;
    for p in ["Coordinator", "User", "Student"] {
        for op in Operation::ALL {
            check!(
                authorize(&AclRuleSet::default(), p, op, RECORD_TYPE) == Action::Deny,
                "empty ruleset allows {p} {op}"
            );
        }
    }
    let denied = empty.register_certificate(RegistrationRequest {
        draft: f.draft(0),
        card: f.coordinator.clone(),
        document: None,
    });
    check!(matches!(denied, Err(RecordsError::Unauthorized { .. })), "empty ruleset let a coordinator register");
    Ok(format!("8/8 cells match [{}]; empty ruleset denies all", cells.join(" ")))
}

fn fixture_files(kind: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(kind);
    let mut files: Vec<_> =
        fs::read_dir(dir).map(|d| d.filter_map(|e| e.ok().map(|e| e.path())).collect()).unwrap_or_default();
    files.sort();
    files
}

fn is_acl(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "acl")
}

const PUNCT: &[u8] = b"{}:,.-> \n\"o@/";

fn parser_suite() -> Outcome {
    let valid = fixture_files("valid");
    let invalid = fixture_files("invalid");
    check!(valid.len() == 20 && invalid.len() == 20, "found {} valid, {} invalid fixtures", valid.len(), invalid.len());
    for path in &valid {
        let src = fs::read_to_string(path).map_err(|e| e.to_string())?;
        let name = path.file_name().unwrap().to_string_lossy();
        let same = if is_acl(path) {
            let a = parse_acl(&src, default_model()).map_err(|e| format!("{name}: {e}"))?;
            parse_acl(&format_acl(&a), default_model()).map_err(|e| format!("{name}: {e}"))? == a
        } else {
            let m = parse_model(&src).map_err(|e| format!("{name}: {e}"))?;
            parse_model(&format_model(&m)).map_err(|e| format!("{name}: {e}"))? == m
        };
        check!(same, "{name} changed on round trip");
    }
    for path in &invalid {
        let src = fs::read_to_string(path).map_err(|e| e.to_string())?;
        let name = path.file_name().unwrap().to_string_lossy();
        let expected = src.lines().next().and_then(|l| l.strip_prefix("// expect ")).and_then(|l| l.split_once(' '));
        let (pos, fragment) = expected.ok_or_else(|| format!("{name}: no expectation header"))?;
        let err = if is_acl(path) { parse_acl(&src, default_model()).err() } else { parse_model(&src).err() };
        let err = err.ok_or_else(|| format!("{name} parsed"))?;
        check!(err.pos.to_string() == pos, "{name}: error at {}, expected {pos}", err.pos);
        check!(err.to_string().contains(fragment), "{name}: `{err}`");
    }
    let seeds: Vec<Vec<u8>> = valid.iter().filter(|p| !is_acl(p)).map(|p| fs::read(p).unwrap_or_default()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022);
    let (mut ok, mut rejected) = (0, 0);
    for _ in 0..10_000 {
        let mut input = seeds[rng.gen_range(0..seeds.len())].clone();
        for _ in 0..rng.gen_range(1..=4) {
            let at = rng.gen_range(0..=input.len());
            match rng.gen_range(0..3) {
                0 if at < input.len() => {
                    input.remove(at);
                }
                1 if at < input.len() => input[at] = rng.gen(),
                _ => input.insert(at, *PUNCT.choose(&mut rng).unwrap()),
            }
        }
        match parse_model_bytes(&input) {
            Ok(m) => {
                check!(parse_model(&format_model(&m)).ok() == Some(m), "fuzz: accepted input does not round trip");
                ok += 1;
            }
            Err(e) => {
                check!(e.pos.line >= 1 && e.pos.col >= 1, "fuzz: unpositioned error {e}");
                rejected += 1;
            }
        }
    }
    Ok(format!("20/20 valid round-trip, 20/20 invalid positioned, 10000 fuzz inputs ({ok} accepted, {rejected} rejected), no crash"))
}
