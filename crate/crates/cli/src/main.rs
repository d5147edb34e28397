//! `bcer2`: bootstrap a records network, issue cards, run the node,
//! register and verify records, and run the proof-of-concept scenario.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use output::Output;

#[derive(Debug, Parser)]
#[command(name = "bcer2", version, about = "Consortium ledger for educational records")]
struct Cli {
    /// Node data directory.
    #[arg(long, global = true, env = "BCER2_DATA_DIR", default_value = "bcer2-data")]
    data_dir: PathBuf,
    /// Talk to a running node instead of opening the data directory.
    #[arg(long, global = true)]
    node_url: Option<String>,
    /// Print one JSON object on stdout; human text goes to stderr.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a network: validator roster, authority key, model, ACL, genesis.
    Init(InitArgs),
    /// ID card operations.
    #[command(subcommand)]
    Card(CardCommand),
    /// Run the HTTP node.
    Serve {
        #[arg(long, default_value = bcer2_node::config::DEFAULT_LISTEN)]
        listen: std::net::SocketAddr,
    },
    /// Register, verify and list educational records.
    #[command(subcommand)]
    Record(RecordCommand),
    /// Inspect and repair the local chain file.
    #[command(subcommand)]
    Chain(ChainCommand),
    /// Proof-of-concept scenario.
    #[command(subcommand)]
    Poc(PocCommand),
}

#[derive(Debug, Args)]
struct InitArgs {
    #[arg(long, default_value = "bcer2")]
    network_id: String,
    #[arg(long, default_value_t = 11)]
    validators: usize,
    /// Defaults to a majority of the validators.
    #[arg(long)]
    quorum: Option<usize>,
    #[arg(long, default_value_t = 2)]
    max_delay: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoleArg {
    Coordinator,
    User,
}

#[derive(Debug, Subcommand)]
enum CardCommand {
    /// Issue a card signed by the network's registration authority.
    Issue {
        #[arg(long, value_enum)]
        role: RoleArg,
        /// Identifying value of the participant, e.g. `coord-01`.
        #[arg(long)]
        participant_ref: String,
        /// Participant type from the model. Defaults to Coordinator or User.
        #[arg(long)]
        participant_type: Option<String>,
        #[arg(long)]
        endpoint: Option<String>,
        /// Output `.bcid` file. Defaults to `<participant_ref>.bcid`.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Certificate,
    Diploma,
}

#[derive(Debug, Subcommand)]
enum RecordCommand {
    /// Register a certificate or diploma.
    Register(RegisterArgs),
    /// Look a record up by identifier.
    Verify {
        record_id: String,
        /// Also compare this file with the stored document hash.
        #[arg(long)]
        document: Option<PathBuf>,
    },
    /// List records, newest first.
    List {
        #[arg(long)]
        student: Option<String>,
        #[arg(long)]
        institution: Option<String>,
        #[arg(long, value_enum)]
        kind: Option<KindArg>,
    },
}

#[derive(Debug, Args)]
struct RegisterArgs {
    #[arg(long)]
    card: PathBuf,
    #[arg(long)]
    title: String,
    #[arg(long)]
    student: String,
    #[arg(long, value_enum, default_value = "certificate")]
    kind: KindArg,
    #[arg(long)]
    institution: String,
    #[arg(long)]
    course: String,
    /// ISO-8601 date.
    #[arg(long)]
    issued_on: String,
    /// Use this identifier instead of a generated one.
    #[arg(long)]
    record_id: Option<String>,
    /// The certificate file; only its SHA-256 goes on the chain.
    #[arg(long)]
    document: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum ChainCommand {
    /// Full validation; prints the first broken height.
    Validate,
    /// Cut a torn final line left by a crash.
    Repair {
        /// Also cut complete blocks that fail validation.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Debug, Subcommand)]
enum PocCommand {
    /// Register N records on an M-validator network, verify them all, and
    /// attempt registrations without adequate credentials.
    Run {
        #[arg(long, default_value_t = 10)]
        records: usize,
        #[arg(long, default_value_t = 11)]
        validators: usize,
        #[arg(long, default_value_t = 2018)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(output::EXIT_USAGE);
        }
    };
    let out = Output { json: cli.json };
    match commands::run(&cli, &out) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            out.failure(&f);
            ExitCode::from(f.exit)
        }
    }
}
