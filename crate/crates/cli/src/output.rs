use bcer2_core::records::RecordsError;
use serde_json::{json, Value};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_UNAUTHORIZED: u8 = 2;
pub const EXIT_NOT_FOUND: u8 = 3;
pub const EXIT_INTEGRITY: u8 = 4;

/// A failed command: exit class, machine code and message.
#[derive(Debug)]
pub struct Failure {
    pub exit: u8,
    pub code: String,
    pub message: String,
}

impl Failure {
    pub fn new(exit: u8, code: &str, message: impl Into<String>) -> Self {
        Failure { exit, code: code.to_owned(), message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, "usage", message)
    }

    /// Exit class for an error code shared by the library and the HTTP API.
    pub fn from_code(code: &str, message: impl Into<String>) -> Self {
        let exit = match code {
            "invalid-card" | "unauthorized" => EXIT_UNAUTHORIZED,
            "not-found" => EXIT_NOT_FOUND,
            "integrity-failure" => EXIT_INTEGRITY,
            _ => EXIT_USAGE,
        };
        Self::new(exit, code, message)
    }
}

impl From<RecordsError> for Failure {
    fn from(e: RecordsError) -> Self {
        Failure::from_code(e.code(), e.to_string())
    }
}

impl From<bcer2_node::config::ConfigError> for Failure {
    fn from(e: bcer2_node::config::ConfigError) -> Self {
        Failure::new(EXIT_USAGE, "config", e.to_string())
    }
}

impl From<bcer2_node::NodeError> for Failure {
    fn from(e: bcer2_node::NodeError) -> Self {
        match e {
            bcer2_node::NodeError::CorruptChain { .. } => {
                Failure::new(EXIT_INTEGRITY, "integrity-failure", e.to_string())
            }
            bcer2_node::NodeError::Records(r) => r.into(),
            other => Failure::new(EXIT_USAGE, "node", other.to_string()),
        }
    }
}

impl From<bcer2_core::store::StoreError> for Failure {
    fn from(e: bcer2_core::store::StoreError) -> Self {
        match e {
            bcer2_core::store::StoreError::Corrupt { .. } => {
                Failure::new(EXIT_INTEGRITY, "integrity-failure", e.to_string())
            }
            other => Failure::new(EXIT_USAGE, "store", other.to_string()),
        }
    }
}

impl From<reqwest::Error> for Failure {
    fn from(e: reqwest::Error) -> Self {
        Failure::new(EXIT_USAGE, "http", e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_USAGE, "io", e.to_string())
    }
}

pub struct Output {
    pub json: bool,
}

impl Output {
    /// Success: the JSON object in `--json` mode, otherwise the human text.
    pub fn emit(&self, value: Value, human: &str) {
        if self.json {
            eprint!("{human}");
            println!("{value}");
        } else {
            print!("{human}");
        }
    }

    pub fn failure(&self, f: &Failure) {
        if self.json {
            println!("{}", json!({ "error": f.code, "message": f.message, "exit_code": f.exit }));
        }
        eprintln!("error: {}: {}", f.code, f.message);
    }
}
