use thiserror::Error;

use super::{FieldType, ModelDefinition, Primitive};
use crate::canonical::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstanceError {
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("instance must be a map, found {0}")]
    NotAMap(&'static str),
    #[error("{0} required")]
    Missing(String),
    #[error("field `{field}`: expected {expected}, found {found}")]
    TypeMismatch { field: String, expected: String, found: String },
    #[error("identifying field `{0}` must not be empty")]
    EmptyIdentifier(String),
    #[error("field `{0}` is not declared")]
    UnknownField(String),
}

/// DateTime values are RFC 3339 timestamps or plain `YYYY-MM-DD` dates.
pub(crate) fn is_datetime(s: &str) -> bool {
    chrono::DateTime::parse_from_rfc3339(s).is_ok() || chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok()
}

/// Checks an instance against a declared type. All problems are reported,
/// in field declaration order, followed by undeclared fields.
pub fn validate_instance(def: &ModelDefinition, type_name: &str, instance: &Value) -> Result<(), Vec<InstanceError>> {
    let Some((_, decl)) = def.lookup(def.local_name(type_name)) else {
        return Err(vec![InstanceError::UnknownType(type_name.to_owned())]);
    };
    let Some(map) = instance.as_map() else {
        return Err(vec![InstanceError::NotAMap(instance.kind_name())]);
    };
    let mut errors = Vec::new();
    for field in &decl.fields {
        let Some(value) = map.get(&field.name) else {
            if !field.optional {
                errors.push(InstanceError::Missing(field.name.clone()));
            }
            continue;
        };
        let mismatch = |expected: &str| InstanceError::TypeMismatch {
            field: field.name.clone(),
            expected: expected.to_owned(),
            found: match value {
                Value::Int(i) => format!("integer {i}"),
                Value::Str(s) => format!("string {s:?}"),
                other => other.kind_name().to_owned(),
            },
        };
        let ok = match (&field.ty, value) {
            (FieldType::Primitive(Primitive::String), Value::Str(_)) => true,
            (FieldType::Primitive(Primitive::Integer), Value::Int(_)) => true,
            (FieldType::Primitive(Primitive::Boolean), Value::Int(0 | 1)) => true,
            (FieldType::Primitive(Primitive::DateTime), Value::Str(s)) => is_datetime(s),
            (FieldType::Reference(_), Value::Str(s)) => !s.trim().is_empty(),
            _ => false,
        };
        if !ok {
            errors.push(match &field.ty {
                FieldType::Primitive(p) => mismatch(p.name()),
                FieldType::Reference(t) => mismatch(&format!("identifier of {t}")),
            });
        }
    }
    if let Some(id) = &decl.identified_by {
        if let Some(Value::Str(s)) = map.get(id) {
            if s.trim().is_empty() {
                errors.push(InstanceError::EmptyIdentifier(id.clone()));
            }
        }
    }
    for key in map.keys() {
        if decl.field(key).is_none() {
            errors.push(InstanceError::UnknownField(key.clone()));
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model;

    fn model() -> ModelDefinition {
        parse_model(
            "namespace n\n\
             participant Student identified by studentId { o String studentId }\n\
             asset EducationalRecord identified by recordId {\n\
               o String recordId\n  o Integer credits\n  o Boolean honours\n  o DateTime issuedOn\n\
               --> Student student\n  o String note optional\n}",
        )
        .unwrap()
    }

    fn good() -> Value {
        Value::map([
            ("recordId", Value::str("r-1")),
            ("credits", Value::Int(60)),
            ("honours", Value::Int(1)),
            ("issuedOn", Value::str("2018-12-10")),
            ("student", Value::str("s-1")),
        ])
    }

    #[test]
    fn well_formed_instance() {
        assert_eq!(validate_instance(&model(), "EducationalRecord", &good()), Ok(()));
        let mut with_time = good();
        if let Value::Map(m) = &mut with_time {
            m.insert("issuedOn".into(), Value::str("2018-12-10T09:30:00Z"));
            m.insert("note".into(), Value::str("cum laude"));
        }
        assert_eq!(validate_instance(&model(), "n.EducationalRecord", &with_time), Ok(()));
    }

    #[test]
    fn missing_identifier() {
        let mut v = good();
        if let Value::Map(m) = &mut v {
            m.remove("recordId");
        }
        let errs = validate_instance(&model(), "EducationalRecord", &v).unwrap_err();
        assert_eq!(errs, vec![InstanceError::Missing("recordId".into())]);
        assert_eq!(errs[0].to_string(), "recordId required");
    }

    #[test]
    fn type_mismatches() {
        let mut v = good();
        if let Value::Map(m) = &mut v {
            m.insert("credits".into(), Value::str("sixty"));
            m.insert("honours".into(), Value::Int(2));
            m.insert("issuedOn".into(), Value::str("yesterday"));
            m.insert("recordId".into(), Value::str(" "));
            m.insert("extra".into(), Value::Int(0));
        }
        let errs = validate_instance(&model(), "EducationalRecord", &v).unwrap_err();
        assert!(matches!(&errs[0], InstanceError::TypeMismatch { field, .. } if field == "credits"));
        assert!(matches!(&errs[1], InstanceError::TypeMismatch { field, .. } if field == "honours"));
        assert!(matches!(&errs[2], InstanceError::TypeMismatch { field, .. } if field == "issuedOn"));
        assert_eq!(errs[3], InstanceError::EmptyIdentifier("recordId".into()));
        assert_eq!(errs[4], InstanceError::UnknownField("extra".into()));
    }

    #[test]
    fn unknown_type_and_non_map() {
        assert!(validate_instance(&model(), "Diploma", &good()).is_err());
        assert_eq!(
            validate_instance(&model(), "EducationalRecord", &Value::Int(1)),
            Err(vec![InstanceError::NotAMap("int")])
        );
    }
}
