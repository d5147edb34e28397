use std::collections::HashSet;

use super::lexer::{tokenize, Tok, Token};
use super::{DeclKind, FieldDef, FieldType, ModelDefinition, ModelError, ModelErrorKind, Pos, Primitive, TypeDecl};

pub(crate) struct Parser {
    tokens: Vec<Token>,
    at: usize,
}

impl Parser {
    pub(crate) fn new(src: &str) -> Result<Self, ModelError> {
        Ok(Parser { tokens: tokenize(src)?, at: 0 })
    }

    pub(crate) fn peek(&self) -> &Token {
        &self.tokens[self.at]
    }

    pub(crate) fn next(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    pub(crate) fn error(&self, expected: &[&str]) -> ModelError {
        let t = self.peek();
        ModelError::new(
            ModelErrorKind::Syntax {
                expected: expected.iter().map(|s| (*s).to_owned()).collect(),
                found: t.tok.describe(),
            },
            t.pos,
        )
    }

    pub(crate) fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    pub(crate) fn keyword(&mut self, kw: &str) -> Result<Pos, ModelError> {
        if self.at_keyword(kw) {
            Ok(self.next().pos)
        } else {
            Err(self.error(&[kw]))
        }
    }

    pub(crate) fn punct(&mut self, tok: Tok, name: &str) -> Result<Pos, ModelError> {
        if self.peek().tok == tok {
            Ok(self.next().pos)
        } else {
            Err(self.error(&[name]))
        }
    }

    pub(crate) fn ident(&mut self, what: &str) -> Result<(String, Pos), ModelError> {
        match &self.peek().tok {
            Tok::Ident(_) => {
                let t = self.next();
                let Tok::Ident(s) = t.tok else { unreachable!() };
                Ok((s, t.pos))
            }
            _ => Err(self.error(&[what])),
        }
    }

    fn dotted_ident(&mut self, what: &str) -> Result<(String, Pos), ModelError> {
        let (mut name, pos) = self.ident(what)?;
        while self.peek().tok == Tok::Dot {
            self.next();
            let (part, _) = self.ident("identifier")?;
            name.push('.');
            name.push_str(&part);
        }
        Ok((name, pos))
    }
}

pub fn parse_model_bytes(source: &[u8]) -> Result<ModelDefinition, ModelError> {
    let src = std::str::from_utf8(source).map_err(|_| ModelError::new(ModelErrorKind::InvalidUtf8, Pos::new(1, 1)))?;
    parse_model(src)
}

/// Parses and checks a `.model` source.
pub fn parse_model(source: &str) -> Result<ModelDefinition, ModelError> {
    let mut p = Parser::new(source)?;
    p.keyword("namespace")?;
    let (namespace, _) = p.dotted_ident("namespace name")?;
    let mut def = ModelDefinition {
        namespace,
        assets: Vec::new(),
        participants: Vec::new(),
        transactions: Vec::new(),
        events: Vec::new(),
    };
    loop {
        let kind = match &p.peek().tok {
            Tok::Eof => break,
            Tok::Ident(s) if s == "asset" => DeclKind::Asset,
            Tok::Ident(s) if s == "participant" => DeclKind::Participant,
            Tok::Ident(s) if s == "transaction" => DeclKind::Transaction,
            Tok::Ident(s) if s == "event" => DeclKind::Event,
            _ => return Err(p.error(&["asset", "participant", "transaction", "event", "end of input"])),
        };
        let decl = declaration(&mut p, kind)?;
        match kind {
            DeclKind::Asset => def.assets.push(decl),
            DeclKind::Participant => def.participants.push(decl),
            DeclKind::Transaction => def.transactions.push(decl),
            DeclKind::Event => def.events.push(decl),
        }
    }
    check_model(&def)?;
    Ok(def)
}

fn declaration(p: &mut Parser, kind: DeclKind) -> Result<TypeDecl, ModelError> {
    let pos = p.next().pos;
    let (name, _) = p.ident("type name")?;
    let identified_by = if kind.is_identified() {
        p.keyword("identified")?;
        p.keyword("by")?;
        Some(p.ident("identifying field name")?.0)
    } else {
        None
    };
    p.punct(Tok::LBrace, "`{`")?;
    let mut fields = Vec::new();
    loop {
        match &p.peek().tok {
            Tok::RBrace => {
                p.next();
                break;
            }
            Tok::Arrow => {
                let pos = p.next().pos;
                let (target, _) = p.ident("referenced type name")?;
                let (fname, _) = p.ident("field name")?;
                fields.push(FieldDef { name: fname, ty: FieldType::Reference(target), optional: false, pos });
            }
            Tok::Ident(s) if s == "o" => {
                let pos = p.next().pos;
                let ty = match &p.peek().tok {
                    Tok::Ident(t) => match Primitive::from_name(t) {
                        Some(prim) => {
                            p.next();
                            prim
                        }
                        None => return Err(p.error(&["String", "Integer", "Boolean", "DateTime"])),
                    },
                    _ => return Err(p.error(&["String", "Integer", "Boolean", "DateTime"])),
                };
                let (fname, _) = p.ident("field name")?;
                let optional = if p.at_keyword("optional") {
                    p.next();
                    true
                } else {
                    false
                };
                fields.push(FieldDef { name: fname, ty: FieldType::Primitive(ty), optional, pos });
            }
            _ => return Err(p.error(&["o", "-->", "}"])),
        }
    }
    Ok(TypeDecl { name, identified_by, fields, pos })
}

fn check_model(def: &ModelDefinition) -> Result<(), ModelError> {
    let mut in_source_order: Vec<_> = def.declarations().map(|(_, d)| d).collect();
    in_source_order.sort_by_key(|d| (d.pos.line, d.pos.col));
    let mut names = HashSet::new();
    for decl in &in_source_order {
        if !names.insert(decl.name.as_str()) {
            return Err(ModelError::new(ModelErrorKind::DuplicateDeclaration(decl.name.clone()), decl.pos));
        }
    }
    for decl in in_source_order {
        let mut fields = HashSet::new();
        for f in &decl.fields {
            if !fields.insert(f.name.as_str()) {
                return Err(ModelError::new(
                    ModelErrorKind::DuplicateField { decl: decl.name.clone(), field: f.name.clone() },
                    f.pos,
                ));
            }
            if let FieldType::Reference(target) = &f.ty {
                match def.lookup(target) {
                    None => return Err(ModelError::new(ModelErrorKind::UnknownType(target.clone()), f.pos)),
                    Some((k, _)) if !k.is_identified() => {
                        return Err(ModelError::new(ModelErrorKind::NotReferenceable(target.clone()), f.pos))
                    }
                    Some(_) => {}
                }
            }
        }
        if let Some(id) = &decl.identified_by {
            match decl.field(id) {
                None => {
                    return Err(ModelError::new(
                        ModelErrorKind::MissingIdentifiedBy { decl: decl.name.clone(), field: id.clone() },
                        decl.pos,
                    ))
                }
                Some(f) if f.ty != FieldType::Primitive(Primitive::String) => {
                    return Err(ModelError::new(
                        ModelErrorKind::IdentifierNotString { decl: decl.name.clone(), field: id.clone() },
                        f.pos,
                    ))
                }
                Some(_) => {}
            }
        }
    }
    Ok(())
}
