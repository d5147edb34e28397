//! Educational-record business layer: the record asset, transaction
//! handlers, and the registration and verification pipelines.

mod handlers;
mod network;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{DecodeError, Fields, Value};
use crate::identity::{IdCard, Role};
use crate::model::{parse_acl, parse_model, AclRuleSet, ModelDefinition};
use crate::{hash_digest, HashDigest};

pub use handlers::{dispatch_transaction, record_register_body, Handler, HandlerRegistry};
pub use network::{
    DocumentCheck, NetworkParams, ProvenanceEntry, RecordSummary, RecordsNetwork, RegistrationReceipt,
    VerificationResult, VerificationStatus,
};

pub const RECORD_TYPE: &str = "EducationalRecord";
pub const STUDENT_TYPE: &str = "Student";
pub const REGISTER_RECORD_TX: &str = "RegisterRecord";
pub const ENROLL_STUDENT_TX: &str = "EnrollStudent";

pub const DEFAULT_MODEL_SOURCE: &str = include_str!("../../fixtures/network.model");
pub const DEFAULT_ACL_SOURCE: &str = include_str!("../../fixtures/network.acl");

/// The shipped business network model.
pub fn default_model() -> &'static ModelDefinition {
    static MODEL: OnceLock<ModelDefinition> = OnceLock::new();
    MODEL.get_or_init(|| parse_model(DEFAULT_MODEL_SOURCE).expect("bundled model parses"))
}

pub fn default_acl() -> &'static AclRuleSet {
    static ACL: OnceLock<AclRuleSet> = OnceLock::new();
    ACL.get_or_init(|| parse_acl(DEFAULT_ACL_SOURCE, default_model()).expect("bundled acl parses"))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordsError {
    #[error("invalid card: {0}")]
    InvalidCard(String),
    #[error("card `{card_id}` ({participant}) may not {operation} {resource}")]
    Unauthorized { card_id: String, participant: String, operation: String, resource: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("record id `{0}` is already on the chain")]
    DuplicateRecordId(String),
    #[error("consensus did not commit the register")]
    ConsensusTimeout,
    #[error("record `{0}` not found")]
    NotFound(String),
    #[error("no handler for transaction `{0}`")]
    NoHandler(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("chain integrity failure: {0}")]
    Integrity(String),
    #[error("network configuration: {0}")]
    Config(String),
}

impl RecordsError {
    pub fn code(&self) -> &'static str {
        match self {
            RecordsError::InvalidCard(_) => "invalid-card",
            RecordsError::Unauthorized { .. } => "unauthorized",
            RecordsError::SchemaViolation(_) => "schema-violation",
            RecordsError::DuplicateRecordId(_) => "duplicate-record-id",
            RecordsError::ConsensusTimeout => "consensus-timeout",
            RecordsError::NotFound(_) => "not-found",
            RecordsError::NoHandler(_) => "no-handler",
            RecordsError::Unsupported(_) => "unsupported",
            RecordsError::Integrity(_) => "integrity-failure",
            RecordsError::Config(_) => "config",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Certificate,
    Diploma,
}

impl RecordKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RecordKind::Certificate => "certificate",
            RecordKind::Diploma => "diploma",
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecordKind {
    type Err = RecordsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "certificate" => Ok(RecordKind::Certificate),
            "diploma" => Ok(RecordKind::Diploma),
            other => {
                Err(RecordsError::SchemaViolation(format!("kind must be certificate or diploma, found `{other}`")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EducationalRecord {
    pub record_id: String,
    pub kind: RecordKind,
    pub title: String,
    pub student_ref: String,
    pub institution: String,
    pub course: String,
    pub issued_on: String,
    pub issuer_card_id: String,
    pub document_hash: HashDigest,
}

const RECORD_FIELDS: &[&str] = &[
    "record_id",
    "kind",
    "title",
    "student_ref",
    "institution",
    "course",
    "issued_on",
    "issuer_card_id",
    "document_hash",
];

impl EducationalRecord {
    /// Model instance; the document hash is carried as lowercase hex.
    pub fn to_instance(&self) -> Value {
        Value::map([
            ("record_id", Value::str(&self.record_id)),
            ("kind", Value::str(self.kind.as_str())),
            ("title", Value::str(&self.title)),
            ("student_ref", Value::str(&self.student_ref)),
            ("institution", Value::str(&self.institution)),
            ("course", Value::str(&self.course)),
            ("issued_on", Value::str(&self.issued_on)),
            ("issuer_card_id", Value::str(&self.issuer_card_id)),
            ("document_hash", Value::str(self.document_hash.to_hex())),
        ])
    }

    pub fn from_instance(value: &Value) -> Result<Self, DecodeError> {
        let f = Fields::of(value, "record")?;
        f.only(RECORD_FIELDS)?;
        let bad = |field: &str, problem: String| DecodeError::Field { field: field.into(), problem };
        Ok(EducationalRecord {
            record_id: f.str("record_id")?.to_owned(),
            kind: f.str("kind")?.parse().map_err(|e: RecordsError| bad("kind", e.to_string()))?,
            title: f.str("title")?.to_owned(),
            student_ref: f.str("student_ref")?.to_owned(),
            institution: f.str("institution")?.to_owned(),
            course: f.str("course")?.to_owned(),
            issued_on: f.str("issued_on")?.to_owned(),
            issuer_card_id: f.str("issuer_card_id")?.to_owned(),
            document_hash: f
                .str("document_hash")?
                .parse()
                .map_err(|e: crate::hash::ParseDigestError| bad("document_hash", e.to_string()))?,
        })
    }
}

/// Record fields as entered by a coordinator. The id is generated when
/// absent; issuer and document hash are filled in at registration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDraft {
    #[serde(default)]
    pub record_id: Option<String>,
    pub kind: RecordKind,
    pub title: String,
    pub student_ref: String,
    pub institution: String,
    pub course: String,
    pub issued_on: String,
}

impl RecordDraft {
    pub fn into_record(self, record_id: String, issuer_card_id: &str, document: &[u8]) -> EducationalRecord {
        EducationalRecord {
            record_id,
            kind: self.kind,
            title: self.title,
            student_ref: self.student_ref,
            institution: self.institution,
            course: self.course,
            issued_on: self.issued_on,
            issuer_card_id: issuer_card_id.to_owned(),
            document_hash: hash_digest(document),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegistrationRequest {
    pub draft: RecordDraft,
    /// Holder copy of the submitter's card, secret key included.
    pub card: IdCard,
    /// Hashed into the record; never stored on chain.
    pub document: Option<Vec<u8>>,
}

/// Participant types a role may hold.
pub fn role_allows(role: Role, participant_type: &str) -> bool {
    match role {
        Role::Coordinator => participant_type == "Coordinator",
        Role::User => participant_type != "Coordinator",
    }
}

/// Fresh 128-bit identifier as 32 lowercase hex characters.
pub fn new_record_id(rng: &mut impl rand::RngCore) -> String {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}
