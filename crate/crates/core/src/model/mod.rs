//! Business-network modeling language: the `.model` declarations (assets,
//! participants, transactions, events) and the `.acl` permission rules.

mod acl;
mod format;
mod instance;
mod lexer;
mod parse;

use std::fmt;

use thiserror::Error;

pub use acl::{authorize, parse_acl, AclRule, AclRuleSet, Action, Operation, TypeRef};
pub use format::{format_acl, format_model};
pub use instance::{validate_instance, InstanceError};
pub use parse::{parse_model, parse_model_bytes};

/// A 1-based source position. Positions are informational: they never take
/// part in equality, so re-parsed formatted output compares equal to the
/// original definition.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl Pos {
    pub fn new(line: u32, col: u32) -> Self {
        Pos { line, col }
    }
}

impl PartialEq for Pos {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for Pos {}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    String,
    Integer,
    Boolean,
    DateTime,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::String => "String",
            Primitive::Integer => "Integer",
            Primitive::Boolean => "Boolean",
            Primitive::DateTime => "DateTime",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "String" => Primitive::String,
            "Integer" => Primitive::Integer,
            "Boolean" => Primitive::Boolean,
            "DateTime" => Primitive::DateTime,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldType {
    Primitive(Primitive),
    /// `--> Target name`: holds the identifier of a declared asset or participant.
    Reference(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDef {
    pub name: String,
    pub ty: FieldType,
    pub optional: bool,
    pub pos: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeclKind {
    Asset,
    Participant,
    Transaction,
    Event,
}

impl DeclKind {
    pub fn keyword(&self) -> &'static str {
        match self {
            DeclKind::Asset => "asset",
            DeclKind::Participant => "participant",
            DeclKind::Transaction => "transaction",
            DeclKind::Event => "event",
        }
    }

    pub fn is_identified(&self) -> bool {
        matches!(self, DeclKind::Asset | DeclKind::Participant)
    }
}

/// One resource declaration. `identified_by` is set for assets and
/// participants only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeDecl {
    pub name: String,
    pub identified_by: Option<String>,
    pub fields: Vec<FieldDef>,
    pub pos: Pos,
}

impl TypeDecl {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }
}

pub type AssetDef = TypeDecl;
pub type ParticipantDef = TypeDecl;
pub type TransactionDef = TypeDecl;
pub type EventDef = TypeDecl;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDefinition {
    pub namespace: String,
    pub assets: Vec<AssetDef>,
    pub participants: Vec<ParticipantDef>,
    pub transactions: Vec<TransactionDef>,
    pub events: Vec<EventDef>,
}

impl ModelDefinition {
    pub fn declarations(&self) -> impl Iterator<Item = (DeclKind, &TypeDecl)> {
        let assets = self.assets.iter().map(|d| (DeclKind::Asset, d));
        let participants = self.participants.iter().map(|d| (DeclKind::Participant, d));
        let transactions = self.transactions.iter().map(|d| (DeclKind::Transaction, d));
        let events = self.events.iter().map(|d| (DeclKind::Event, d));
        assets.chain(participants).chain(transactions).chain(events)
    }

    pub fn lookup(&self, name: &str) -> Option<(DeclKind, &TypeDecl)> {
        self.declarations().find(|(_, d)| d.name == name)
    }

    pub fn participant(&self, name: &str) -> Option<&ParticipantDef> {
        self.participants.iter().find(|d| d.name == name)
    }

    pub fn transaction(&self, name: &str) -> Option<&TransactionDef> {
        self.transactions.iter().find(|d| d.name == name)
    }

    /// Accepts `Name` or `<namespace>.Name` and returns the bare name.
    pub fn local_name<'a>(&self, qualified: &'a str) -> &'a str {
        qualified.strip_prefix(self.namespace.as_str()).and_then(|rest| rest.strip_prefix('.')).unwrap_or(qualified)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelErrorKind {
    #[error("expected {}, found {found}", expected_list(.expected))]
    Syntax { expected: Vec<String>, found: String },
    #[error("duplicate declaration `{0}`")]
    DuplicateDeclaration(String),
    #[error("duplicate field `{field}` in `{decl}`")]
    DuplicateField { decl: String, field: String },
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("`{0}` cannot be referenced: only assets and participants are identifiable")]
    NotReferenceable(String),
    #[error("`{decl}` is identified by `{field}`, which it does not declare")]
    MissingIdentifiedBy { decl: String, field: String },
    #[error("identifying field `{field}` of `{decl}` must be a String")]
    IdentifierNotString { decl: String, field: String },
    #[error("duplicate rule `{0}`")]
    DuplicateRule(String),
    #[error("rule `{0}` has an empty operation set")]
    EmptyOperations(String),
    #[error("`{found}` is not a participant type")]
    NotAParticipant { found: String },
    #[error("source is not valid UTF-8")]
    InvalidUtf8,
}

fn expected_list(expected: &[String]) -> String {
    match expected {
        [] => "something else".to_owned(),
        [one] => one.clone(),
        many => format!("one of {}", many.join(", ")),
    }
}

/// A model or ACL error with the source position it refers to.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}:{}: {kind}", pos.line, pos.col)]
pub struct ModelError {
    pub kind: ModelErrorKind,
    pub pos: Pos,
}

impl ModelError {
    pub(crate) fn new(kind: ModelErrorKind, pos: Pos) -> Self {
        ModelError { kind, pos }
    }
}
