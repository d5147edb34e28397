use std::fmt::Write as _;
use std::path::Path;

use bcer2_core::identity::{save_card, IdCard, Role};
use bcer2_core::ledger::validate_chain;
use bcer2_core::poc::run_poc;
use bcer2_core::records::{
    RecordDraft, RecordKind, RecordSummary, RecordsNetwork, RegistrationRequest, VerificationStatus,
};
use bcer2_core::store::ChainStore;
use bcer2_core::Chain;
use bcer2_node::{init_data_dir, InitOptions, Node, NodeConfig};
use reqwest::blocking::{multipart, Client};
use serde_json::{json, Value};

use crate::output::{Failure, Output, EXIT_INTEGRITY, EXIT_NOT_FOUND};
use crate::{CardCommand, ChainCommand, Cli, Command, KindArg, PocCommand, RecordCommand, RegisterArgs, RoleArg};

type Result<T> = std::result::Result<T, Failure>;

pub fn run(cli: &Cli, out: &Output) -> Result<u8> {
    match &cli.command {
        Command::Init(a) => init(cli, out, a),
        Command::Card(CardCommand::Issue { role, participant_ref, participant_type, endpoint, out: path }) => {
            card_issue(
                cli,
                out,
                *role,
                participant_ref,
                participant_type.as_deref(),
                endpoint.as_deref(),
                path.as_deref(),
            )
        }
        Command::Serve { listen } => serve(cli, *listen),
        Command::Record(RecordCommand::Register(a)) => register(cli, out, a),
        Command::Record(RecordCommand::Verify { record_id, document }) => {
            verify(cli, out, record_id, document.as_deref())
        }
        Command::Record(RecordCommand::List { student, institution, kind }) => {
            list(cli, out, student.as_deref(), institution.as_deref(), kind.map(record_kind))
        }
        Command::Chain(ChainCommand::Validate) => chain_validate(cli, out),
        Command::Chain(ChainCommand::Repair { force }) => chain_repair(cli, out, *force),
        Command::Poc(PocCommand::Run { records, validators, seed }) => poc_run(out, *records, *validators, *seed),
    }
}

fn record_kind(k: KindArg) -> RecordKind {
    match k {
        KindArg::Certificate => RecordKind::Certificate,
        KindArg::Diploma => RecordKind::Diploma,
    }
}

fn config(cli: &Cli) -> Result<NodeConfig> {
    Ok(NodeConfig::load(&cli.data_dir, bcer2_node::config::DEFAULT_LISTEN.parse().expect("valid default"))?)
}

/// Read-only view of the data directory. A damaged chain file does not
/// fail the open; lookups then report integrity-failure.
fn local_network(cli: &Cli) -> Result<RecordsNetwork> {
    let config = config(cli)?;
    let store = ChainStore::open(&config.data_dir)?;
    Ok(RecordsNetwork::from_store(config.params()?, &store)?)
}

fn node_url(cli: &Cli) -> Option<String> {
    cli.node_url.as_ref().map(|u| u.trim_end_matches('/').to_owned())
}

/// Turns an API error body into a failure with the matching exit class.
fn api_failure(status: reqwest::StatusCode, body: &Value) -> Failure {
    let code = body["code"].as_str().or(body["status"].as_str()).unwrap_or("http");
    let message = body["message"].as_str().map(str::to_owned).unwrap_or_else(|| format!("HTTP {status}"));
    Failure::from_code(code, message)
}

fn init(cli: &Cli, out: &Output, a: &crate::InitArgs) -> Result<u8> {
    let opts = InitOptions {
        network_id: a.network_id.clone(),
        validators: a.validators,
        quorum: a.quorum,
        max_delay_ticks: a.max_delay,
    };
    let report = init_data_dir(&cli.data_dir, &opts)?;
    let human = format!(
        "initialized network `{}` in {}\n  validators: {} (quorum {})\n  genesis: {}\n",
        report.network_id,
        report.data_dir.display(),
        report.validators.len(),
        report.quorum,
        report.genesis_hash
    );
    out.emit(serde_json::to_value(&report).expect("report serializes"), &human);
    Ok(0)
}

fn card_issue(
    cli: &Cli,
    out: &Output,
    role: RoleArg,
    participant_ref: &str,
    participant_type: Option<&str>,
    endpoint: Option<&str>,
    path: Option<&Path>,
) -> Result<u8> {
    let (role, default_type) = match role {
        RoleArg::Coordinator => (Role::Coordinator, "Coordinator"),
        RoleArg::User => (Role::User, "User"),
    };
    let default_endpoint = format!("http://{}", bcer2_node::config::DEFAULT_LISTEN);
    let endpoint = endpoint.map(str::to_owned).or_else(|| node_url(cli)).unwrap_or(default_endpoint);
    let card = bcer2_node::issue_card(
        &cli.data_dir,
        participant_type.unwrap_or(default_type),
        participant_ref,
        role,
        &endpoint,
    )?;
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| format!("{participant_ref}.bcid").into());
    save_card(&card, &path).map_err(|e| Failure::usage(e.to_string()))?;
    let human = format!("issued {} card {} -> {}\n", card.role.as_str(), card.card_id, path.display());
    out.emit(
        json!({
            "card_id": card.card_id,
            "participant_type": card.participant_type,
            "participant_ref": card.participant_ref,
            "role": card.role,
            "path": path,
        }),
        &human,
    );
    Ok(0)
}

fn serve(cli: &Cli, listen: std::net::SocketAddr) -> Result<u8> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .try_init();
    let mut config = config(cli)?;
    config.listen = listen;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(bcer2_node::serve(config))?;
    Ok(0)
}

fn register(cli: &Cli, out: &Output, a: &RegisterArgs) -> Result<u8> {
    let card_text = std::fs::read_to_string(&a.card)?;
    let card = IdCard::from_file_text(&card_text)
        .map_err(|e| Failure::from_code("invalid-card", format!("{}: {e}", a.card.display())))?;
    let document = a.document.as_ref().map(std::fs::read).transpose()?;
    let draft = RecordDraft {
        record_id: a.record_id.clone(),
        kind: record_kind(a.kind),
        title: a.title.clone(),
        student_ref: a.student.clone(),
        institution: a.institution.clone(),
        course: a.course.clone(),
        issued_on: a.issued_on.clone(),
    };

    let receipt = match node_url(cli) {
        Some(url) => {
            let mut form = multipart::Form::new()
                .text("kind", draft.kind.as_str())
                .text("title", draft.title)
                .text("student_ref", draft.student_ref)
                .text("institution", draft.institution)
                .text("course", draft.course)
                .text("issued_on", draft.issued_on)
                .part("card", multipart::Part::bytes(card_text.into_bytes()).file_name("card.bcid"));
            if let Some(id) = draft.record_id {
                form = form.text("record_id", id);
            }
            if let Some(doc) = document {
                form = form.part("document", multipart::Part::bytes(doc).file_name("document"));
            }
            let resp = Client::new().post(format!("{url}/records")).multipart(form).send()?;
            let status = resp.status();
            let body: Value = resp.json()?;
            if !status.is_success() {
                return Err(api_failure(status, &body));
            }
            body
        }
        None => {
            let config = config(cli)?;
            let node = Node::open(config.clone())?;
            let request = RegistrationRequest { draft, card: card.clone(), document };
            let receipt = node.write(|net| net.register_certificate(request))?;
            config.remember_card(&card)?;
            serde_json::to_value(receipt).expect("receipt serializes")
        }
    };
    let human = format!(
        "registered record {}\n  height: {}\n  block: {}\n",
        receipt["record_id"].as_str().unwrap_or_default(),
        receipt["height"],
        receipt["block_hash"].as_str().unwrap_or_default()
    );
    out.emit(receipt, &human);
    Ok(0)
}

fn describe_verification(v: &Value) -> String {
    let text = |v: &Value| v.as_str().unwrap_or("?").to_owned();
    let mut s = format!("{}: {}\n", text(&v["status"]), text(&v["record_id"]));
    let r = &v["record"];
    if r.is_object() {
        let _ = writeln!(
            s,
            "  {} `{}` for student {} ({}, {})",
            text(&r["kind"]),
            text(&r["title"]),
            text(&r["student_ref"]),
            text(&r["institution"]),
            text(&r["course"])
        );
        let _ = writeln!(s, "  issued on {} by card {}", text(&r["issued_on"]), text(&v["issuer_card_id"]));
        let _ = writeln!(s, "  height {} with {} endorsements", v["height"], v["endorsement_count"]);
        let _ = writeln!(s, "  document sha256 {}", text(&r["document_hash"]));
    }
    for p in v["provenance"].as_array().into_iter().flatten() {
        let _ = writeln!(
            s,
            "  provenance: height {} {} by {} in block {}",
            p["height"],
            text(&p["kind"]),
            text(&p["submitter_card_id"]),
            text(&p["block_hash"])
        );
    }
    s
}

fn status_exit(status: &str) -> u8 {
    match status {
        "authentic" => 0,
        "not-found" => EXIT_NOT_FOUND,
        _ => EXIT_INTEGRITY,
    }
}

fn verify(cli: &Cli, out: &Output, record_id: &str, document: Option<&Path>) -> Result<u8> {
    let document = document.map(std::fs::read).transpose()?;
    let (result, matches): (Value, Option<bool>) = match node_url(cli) {
        Some(url) => {
            let client = Client::new();
            let resp = match &document {
                Some(doc) => client.post(format!("{url}/verify/{record_id}/document")).body(doc.clone()).send()?,
                None => client.get(format!("{url}/verify/{record_id}")).send()?,
            };
            let status = resp.status();
            let body: Value = resp.json()?;
            if body.get("status").is_none() && body.get("verification").is_none() {
                return Err(api_failure(status, &body));
            }
            match body.get("verification") {
                Some(v) => (v.clone(), body["matches"].as_bool()),
                None => (body, None),
            }
        }
        None => {
            let net = local_network(cli)?;
            let v = net.verify_certificate(record_id);
            let matches = match (&document, v.status) {
                (Some(doc), VerificationStatus::Authentic) => Some(net.verify_document(record_id, doc)?.matches),
                _ => None,
            };
            (serde_json::to_value(v).expect("result serializes"), matches)
        }
    };
    let status = result["status"].as_str().unwrap_or("integrity-failure").to_owned();
    let mut human = describe_verification(&result);
    let mut exit = status_exit(&status);
    let mut value = result;
    if let Some(m) = matches {
        let _ = writeln!(
            human,
            "  document {}",
            if m { "matches the ledger hash" } else { "DOES NOT match the ledger hash" }
        );
        if !m {
            exit = EXIT_INTEGRITY;
        }
        value = json!({ "matches": m, "verification": value });
    }
    out.emit(value, &human);
    Ok(exit)
}

fn list(
    cli: &Cli,
    out: &Output,
    student: Option<&str>,
    institution: Option<&str>,
    kind: Option<RecordKind>,
) -> Result<u8> {
    let records: Value = match node_url(cli) {
        Some(url) => {
            let mut query = Vec::new();
            if let Some(s) = student {
                query.push(("student", s.to_owned()));
            }
            if let Some(i) = institution {
                query.push(("institution", i.to_owned()));
            }
            if let Some(k) = kind {
                query.push(("kind", k.as_str().to_owned()));
            }
            let resp = Client::new().get(format!("{url}/records")).query(&query).send()?;
            let status = resp.status();
            let body: Value = resp.json()?;
            if !status.is_success() {
                return Err(api_failure(status, &body));
            }
            body
        }
        None => {
            let net = local_network(cli)?;
            if let Some(fault) = net.integrity_fault() {
                eprintln!("warning: chain integrity failure ({fault}); listing what could be read");
            }
            let found: Vec<RecordSummary> = net.list_records(student, institution, kind);
            serde_json::to_value(found).expect("records serialize")
        }
    };
    let rows = records.as_array().cloned().unwrap_or_default();
    let mut human = String::new();
    for r in &rows {
        let rec = &r["record"];
        let _ = writeln!(
            human,
            "{:>5}  {}  {:<11}  {:<8}  {:<10}  {}",
            r["height"],
            rec["record_id"].as_str().unwrap_or_default(),
            rec["kind"].as_str().unwrap_or_default(),
            rec["student_ref"].as_str().unwrap_or_default(),
            rec["institution"].as_str().unwrap_or_default(),
            rec["title"].as_str().unwrap_or_default()
        );
    }
    let _ = writeln!(human, "{} record(s)", rows.len());
    out.emit(json!({ "records": rows }), &human);
    Ok(0)
}

fn chain_validate(cli: &Cli, out: &Output) -> Result<u8> {
    if let Some(url) = node_url(cli) {
        let head: Value = Client::new().get(format!("{url}/chain/head")).send()?.json()?;
        let valid = head["chain_valid"].as_bool().unwrap_or(false);
        let human = format!(
            "node chain {} at height {}{}\n",
            if valid { "valid" } else { "INVALID" },
            head["height"],
            head["integrity_fault"].as_str().map(|f| format!(": {f}")).unwrap_or_default()
        );
        out.emit(head, &human);
        return Ok(if valid { 0 } else { EXIT_INTEGRITY });
    }
    let config = config(cli)?;
    let params = config.params()?;
    let store = ChainStore::open(&config.data_dir)?;
    let load = store.load_lenient()?;
    let chain = Chain { network_id: params.network_id.clone(), blocks: load.blocks };
    let report = validate_chain(&chain, params.quorum, &params.validator_keys());
    let broken = match (&load.corruption, report.first_failure()) {
        (_, Some((h, fault))) => Some((h, fault.to_string())),
        (Some((h, reason)), None) => Some((*h, format!("unreadable line: {reason}"))),
        (None, None) => None,
    };
    let value = json!({
        "valid": broken.is_none(),
        "height": chain.height(),
        "blocks": chain.blocks.len(),
        "tip_hash": chain.tip_hash(),
        "first_broken_height": broken.as_ref().map(|(h, _)| *h),
        "fault": broken.as_ref().map(|(_, f)| f.clone()),
    });
    match broken {
        None => {
            out.emit(value, &format!("chain valid: {} blocks, tip {}\n", chain.blocks.len(), chain.tip_hash()));
            Ok(0)
        }
        Some((h, fault)) => {
            out.emit(value, &format!("chain INVALID: first broken height {h}: {fault}\n"));
            Ok(EXIT_INTEGRITY)
        }
    }
}

fn chain_repair(cli: &Cli, out: &Output, force: bool) -> Result<u8> {
    let config = config(cli)?;
    let params = config.params()?;
    let keys = params.validator_keys();
    let mut store = ChainStore::open(&config.data_dir)?;
    let plan = store.plan_repair(params.quorum, &keys)?;
    if plan.keep_blocks == 0 {
        return Err(Failure::new(EXIT_INTEGRITY, "integrity-failure", "genesis is damaged; nothing to keep"));
    }
    if !plan.torn_tail_only() && !force {
        return Err(Failure::new(
            EXIT_INTEGRITY,
            "integrity-failure",
            format!(
                "block at height {} is complete but invalid; rerun with --force to cut {} complete block(s)",
                plan.keep_blocks,
                plan.complete_lines - plan.keep_blocks
            ),
        ));
    }
    let removed = store.repair(params.quorum, &keys)?;
    let chain = store.replay(params.quorum, &keys)?;
    let human =
        format!("removed {removed} byte(s); chain now {} blocks, tip {}\n", chain.blocks.len(), chain.tip_hash());
    out.emit(json!({ "removed_bytes": removed, "height": chain.height(), "tip_hash": chain.tip_hash() }), &human);
    Ok(0)
}

fn poc_run(out: &Output, records: usize, validators: usize, seed: u64) -> Result<u8> {
    if validators == 0 {
        return Err(Failure::usage("at least one validator is needed"));
    }
    let (report, _) = run_poc(records, validators, seed)?;
    let mut human = format!("{}\n", report.summary());
    let _ = writeln!(
        human,
        "  validators {} (quorum {}), chain {} blocks, min endorsements {}, documents matched {}/{}, {} ms",
        report.validators,
        report.quorum,
        report.chain_blocks,
        report.min_endorsements,
        report.documents_matched,
        report.records,
        report.elapsed_ms
    );
    let _ = writeln!(human, "  tip {}", report.tip_hash);
    let _ = writeln!(human, "{}", if report.passed() { "PASS" } else { "FAIL" });
    let mut value = serde_json::to_value(&report).expect("report serializes");
    value["summary"] = report.summary().into();
    value["passed"] = report.passed().into();
    out.emit(value, &human);
    Ok(if report.passed() { 0 } else { EXIT_INTEGRITY })
}
