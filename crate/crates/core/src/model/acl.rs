//! Declarative access-control rules with first-match semantics.
//!
//! ```text
//! rule CoordinatorIssues {
//!   participant: "Coordinator"
//!   operation: CREATE, READ
//!   resource: "EducationalRecord"
//!   action: ALLOW
//! }
//! ```
//!
//! Rules are evaluated in source order; the first rule whose participant,
//! resource and operation set all match decides. No match means deny.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use super::lexer::Tok;
use super::parse::Parser;
use super::{DeclKind, ModelDefinition, ModelError, ModelErrorKind, Pos};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Operation {
    Create,
    Read,
    Update,
    Delete,
}

impl Operation {
    pub const ALL: [Operation; 4] = [Operation::Create, Operation::Read, Operation::Update, Operation::Delete];

    pub fn keyword(&self) -> &'static str {
        match self {
            Operation::Create => "CREATE",
            Operation::Read => "READ",
            Operation::Update => "UPDATE",
            Operation::Delete => "DELETE",
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

impl FromStr for Operation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "CREATE" => Ok(Operation::Create),
            "READ" => Ok(Operation::Read),
            "UPDATE" => Ok(Operation::Update),
            "DELETE" => Ok(Operation::Delete),
            other => Err(format!("unknown operation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Action {
    Allow,
    Deny,
}

impl Action {
    pub fn keyword(&self) -> &'static str {
        match self {
            Action::Allow => "ALLOW",
            Action::Deny => "DENY",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TypeRef {
    Any,
    Named(String),
}

impl TypeRef {
    fn matches(&self, name: &str) -> bool {
        match self {
            TypeRef::Any => true,
            TypeRef::Named(n) => n == name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AclRule {
    pub name: String,
    pub participant: TypeRef,
    pub operations: BTreeSet<Operation>,
    pub resource: TypeRef,
    pub action: Action,
    pub pos: Pos,
}

impl AclRule {
    pub fn matches(&self, participant_type: &str, op: Operation, resource_type: &str) -> bool {
        self.participant.matches(participant_type)
            && self.resource.matches(resource_type)
            && self.operations.contains(&op)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AclRuleSet {
    pub rules: Vec<AclRule>,
}

pub fn authorize(rules: &AclRuleSet, participant_type: &str, op: Operation, resource_type: &str) -> Action {
    rules.rules.iter().find(|r| r.matches(participant_type, op, resource_type)).map_or(Action::Deny, |r| r.action)
}

/// Parses a `.acl` source and resolves its type names against `model`.
pub fn parse_acl(source: &str, model: &ModelDefinition) -> Result<AclRuleSet, ModelError> {
    let mut p = Parser::new(source)?;
    let mut rules = Vec::new();
    let mut names = HashSet::new();
    while !matches!(p.peek().tok, Tok::Eof) {
        if !p.at_keyword("rule") {
            return Err(p.error(&["rule", "end of input"]));
        }
        let pos = p.next().pos;
        let (name, _) = p.ident("rule name")?;
        if !names.insert(name.clone()) {
            return Err(ModelError::new(ModelErrorKind::DuplicateRule(name), pos));
        }
        p.punct(Tok::LBrace, "`{`")?;

        field_label(&mut p, "participant")?;
        let participant = type_ref(&mut p, model, true)?;

        field_label(&mut p, "operation")?;
        let mut operations = BTreeSet::new();
        loop {
            let t = p.peek().clone();
            match &t.tok {
                Tok::Ident(s) => match s.parse::<Operation>() {
                    Ok(op) => {
                        p.next();
                        operations.insert(op);
                    }
                    Err(_) if operations.is_empty() => {
                        return Err(ModelError::new(ModelErrorKind::EmptyOperations(name), t.pos));
                    }
                    Err(_) => return Err(p.error(&["CREATE", "READ", "UPDATE", "DELETE"])),
                },
                _ if operations.is_empty() => {
                    return Err(ModelError::new(ModelErrorKind::EmptyOperations(name), t.pos));
                }
                _ => return Err(p.error(&["CREATE", "READ", "UPDATE", "DELETE"])),
            }
            if p.peek().tok != Tok::Comma {
                break;
            }
            p.next();
        }

        field_label(&mut p, "resource")?;
        let resource = type_ref(&mut p, model, false)?;

        field_label(&mut p, "action")?;
        let action = if p.at_keyword("ALLOW") {
            Action::Allow
        } else if p.at_keyword("DENY") {
            Action::Deny
        } else {
            return Err(p.error(&["ALLOW", "DENY"]));
        };
        p.next();
        p.punct(Tok::RBrace, "`}`")?;
        rules.push(AclRule { name, participant, operations, resource, action, pos });
    }
    Ok(AclRuleSet { rules })
}

fn field_label(p: &mut Parser, label: &str) -> Result<(), ModelError> {
    p.keyword(label)?;
    p.punct(Tok::Colon, "`:`")?;
    Ok(())
}

fn type_ref(p: &mut Parser, model: &ModelDefinition, participant: bool) -> Result<TypeRef, ModelError> {
    let t = p.peek().clone();
    match &t.tok {
        Tok::Ident(s) if s == "ANY" => {
            p.next();
            Ok(TypeRef::Any)
        }
        Tok::Str(s) => {
            p.next();
            let name = model.local_name(s);
            match model.lookup(name) {
                None => Err(ModelError::new(ModelErrorKind::UnknownType(name.to_owned()), t.pos)),
                Some((kind, _)) if participant && kind != DeclKind::Participant => {
                    Err(ModelError::new(ModelErrorKind::NotAParticipant { found: name.to_owned() }, t.pos))
                }
                Some(_) => Ok(TypeRef::Named(name.to_owned())),
            }
        }
        _ => Err(p.error(&["quoted type name", "ANY"])),
    }
}
