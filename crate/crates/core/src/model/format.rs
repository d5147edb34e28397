use std::fmt::Write;

use super::{AclRuleSet, FieldType, ModelDefinition, TypeRef};

/// Canonical source text for a model. Declarations are grouped by kind
/// (assets, participants, transactions, events), one field per line.
pub fn format_model(def: &ModelDefinition) -> String {
    let mut out = format!("namespace {}\n", def.namespace);
    for (kind, decl) in def.declarations() {
        out.push('\n');
        let _ = write!(out, "{} {}", kind.keyword(), decl.name);
        if let Some(id) = &decl.identified_by {
            let _ = write!(out, " identified by {id}");
        }
        out.push_str(" {\n");
        for f in &decl.fields {
            match &f.ty {
                FieldType::Primitive(p) => {
                    let _ = write!(out, "  o {} {}", p.name(), f.name);
                    if f.optional {
                        out.push_str(" optional");
                    }
                }
                FieldType::Reference(target) => {
                    let _ = write!(out, "  --> {target} {}", f.name);
                }
            }
            out.push('\n');
        }
        out.push_str("}\n");
    }
    out
}

pub fn format_acl(rules: &AclRuleSet) -> String {
    let type_ref = |t: &TypeRef| match t {
        TypeRef::Any => "ANY".to_owned(),
        TypeRef::Named(n) => format!("\"{n}\""),
    };
    let mut out = String::new();
    for (i, r) in rules.rules.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let ops: Vec<_> = r.operations.iter().map(|o| o.keyword()).collect();
        let _ = write!(
            out,
            "rule {} {{\n  participant: {}\n  operation: {}\n  resource: {}\n  action: {}\n}}\n",
            r.name,
            type_ref(&r.participant),
            ops.join(", "),
            type_ref(&r.resource),
            r.action.keyword(),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_acl, parse_model};

    #[test]
    fn namespace_only_is_one_line() {
        let def = parse_model("namespace   org.x // c").unwrap();
        let text = format_model(&def);
        assert_eq!(text, "namespace org.x\n");
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn format_is_idempotent() {
        let src =
            "namespace n\nevent E { o String a optional --> P p }\nparticipant P identified by id { o String id }";
        let once = format_model(&parse_model(src).unwrap());
        let twice = format_model(&parse_model(&once).unwrap());
        assert_eq!(once, twice);
        assert!(once.find("participant").unwrap() < once.find("event").unwrap());
    }

    #[test]
    fn acl_round_trip() {
        let model = parse_model("namespace n\nparticipant P identified by id { o String id }").unwrap();
        let src = "rule A { participant: \"n.P\" operation: READ, CREATE resource: ANY action: ALLOW }";
        let acl = parse_acl(src, &model).unwrap();
        let text = format_acl(&acl);
        assert!(text.contains("operation: CREATE, READ"));
        assert_eq!(parse_acl(&text, &model).unwrap(), acl);
    }
}
