use std::collections::BTreeMap;

use super::{EducationalRecord, RecordsError, ENROLL_STUDENT_TX, RECORD_TYPE, REGISTER_RECORD_TX, STUDENT_TYPE};
use crate::canonical::{self, Value};
use crate::ledger::{RegisterBody, RegisterKind};
use crate::model::{validate_instance, ModelDefinition};

/// Turns a validated transaction instance into unsigned registers.
pub type Handler = fn(&ModelDefinition, &Value) -> Result<Vec<RegisterBody>, RecordsError>;

#[derive(Debug, Clone, Default)]
pub struct HandlerRegistry {
    handlers: BTreeMap<String, Handler>,
}

impl HandlerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Handlers for the bundled network's transactions.
    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        r.register(REGISTER_RECORD_TX, register_record);
        r.register(ENROLL_STUDENT_TX, enroll_student);
        r
    }

    pub fn register(&mut self, tx_type: &str, handler: Handler) {
        self.handlers.insert(tx_type.to_owned(), handler);
    }

    pub fn get(&self, tx_type: &str) -> Option<Handler> {
        self.handlers.get(tx_type).copied()
    }

    /// Every transaction declared in `model` must have a handler.
    pub fn check_complete(&self, model: &ModelDefinition) -> Result<(), RecordsError> {
        match model.transactions.iter().find(|t| !self.handlers.contains_key(&t.name)) {
            Some(t) => Err(RecordsError::NoHandler(t.name.clone())),
            None => Ok(()),
        }
    }
}

fn schema_errors(errs: Vec<crate::model::InstanceError>) -> RecordsError {
    RecordsError::SchemaViolation(errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))
}

/// Validates `instance` against the declared transaction type and runs its
/// handler.
pub fn dispatch_transaction(
    tx_type: &str,
    instance: &Value,
    registry: &HandlerRegistry,
    model: &ModelDefinition,
) -> Result<Vec<RegisterBody>, RecordsError> {
    let name = model.local_name(tx_type);
    if model.transaction(name).is_none() {
        return Err(RecordsError::NoHandler(tx_type.to_owned()));
    }
    validate_instance(model, name, instance).map_err(schema_errors)?;
    let handler = registry.get(name).ok_or_else(|| RecordsError::NoHandler(name.to_owned()))?;
    handler(model, instance)
}

fn register_record(model: &ModelDefinition, tx: &Value) -> Result<Vec<RegisterBody>, RecordsError> {
    let record = EducationalRecord::from_instance(tx).map_err(|e| RecordsError::SchemaViolation(e.to_string()))?;
    let asset = record.to_instance();
    validate_instance(model, RECORD_TYPE, &asset).map_err(schema_errors)?;
    Ok(vec![record_register_body(&record)])
}

/// The unsigned register a record registration produces. Detached-signature
/// clients sign its signing bytes.
pub fn record_register_body(record: &EducationalRecord) -> RegisterBody {
    RegisterBody {
        register_id: record.record_id.clone(),
        kind: RegisterKind::AssetCreate,
        resource_type: RECORD_TYPE.to_owned(),
        payload: canonical::encode(&record.to_instance()),
    }
}

fn enroll_student(model: &ModelDefinition, tx: &Value) -> Result<Vec<RegisterBody>, RecordsError> {
    validate_instance(model, STUDENT_TYPE, tx).map_err(schema_errors)?;
    let id = tx.as_map().and_then(|m| m.get("student_id")).and_then(Value::as_str).unwrap_or_default();
    Ok(vec![RegisterBody {
        register_id: format!("student:{id}"),
        kind: RegisterKind::ParticipantCreate,
        resource_type: STUDENT_TYPE.to_owned(),
        payload: canonical::encode(tx),
    }])
}
