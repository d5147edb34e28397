//! HTTP routes. Handlers are thin adapters over `RecordsNetwork`.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bcer2_core::identity::IdCard;
use bcer2_core::records::{
    RecordDraft, RecordKind, RecordsError, RecordsNetwork, RegistrationRequest, VerificationStatus,
};
use bcer2_core::{Block, HashDigest};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::state::Node;

pub const CARD_ID_HEADER: &str = "x-card-id";
pub const SIGNATURE_HEADER: &str = "x-signature";
const MAX_UPLOAD: usize = 32 * 1024 * 1024;

pub fn router(node: Arc<Node>) -> Router {
    Router::new()
        .route("/records", post(register).get(list))
        .route("/verify/{record_id}", get(verify))
        .route("/verify/{record_id}/document", post(verify_document))
        .route("/chain/head", get(head))
        .route("/chain/blocks/{height}", get(block))
        .route("/healthz", get(healthz))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(node)
}

async fn blocking<T: Send + 'static>(
    node: &Arc<Node>,
    op: impl FnOnce(&Node) -> Result<T, RecordsError> + Send + 'static,
) -> Result<T, ApiError> {
    let node = node.clone();
    tokio::task::spawn_blocking(move || op(&node))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Default)]
struct Form {
    text: HashMap<String, String>,
    document: Option<Vec<u8>>,
    card: Option<Vec<u8>>,
}

impl Form {
    async fn read(mut multipart: Multipart) -> Result<Self, ApiError> {
        let mut form = Form::default();
        while let Some(field) = multipart.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
            let name = field.name().unwrap_or_default().to_owned();
            let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
            match name.as_str() {
                "document" => form.document = Some(bytes.to_vec()),
                "card" => form.card = Some(bytes.to_vec()),
                _ => {
                    let text = String::from_utf8(bytes.to_vec())
                        .map_err(|_| ApiError::schema(format!("field `{name}` is not UTF-8")))?;
                    form.text.insert(name, text);
                }
            }
        }
        Ok(form)
    }

    fn optional(&self, name: &str) -> Option<String> {
        self.text.get(name).map(|s| s.trim().to_owned()).filter(|s| !s.is_empty())
    }

    fn required(&self, name: &str) -> Result<String, ApiError> {
        self.optional(name).ok_or_else(|| ApiError::schema(format!("{name} required")))
    }

    fn draft(&self) -> Result<RecordDraft, ApiError> {
        Ok(RecordDraft {
            record_id: self.optional("record_id"),
            kind: self.required("kind")?.parse::<RecordKind>().map_err(ApiError::from)?,
            title: self.required("title")?,
            student_ref: match self.optional("student_ref") {
                Some(s) => s,
                None => self.required("student")?,
            },
            institution: self.required("institution")?,
            course: self.required("course")?,
            issued_on: self.required("issued_on")?,
        })
    }
}

/// `POST /records`: multipart record fields, optional `document`, and
/// either a `card` file or the `X-Card-Id` and `X-Signature` headers.
async fn register(
    State(node): State<Arc<Node>>,
    headers: HeaderMap,
    multipart: Multipart,
) -> Result<Response, ApiError> {
    let form = Form::read(multipart).await?;
    let header = |name: &str| headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_owned);

    let receipt = match (form.card.as_deref(), header(CARD_ID_HEADER)) {
        (Some(card_bytes), _) => {
            let text = std::str::from_utf8(card_bytes).map_err(|_| ApiError::invalid_card("card file is not UTF-8"))?;
            let card = IdCard::from_file_text(text).map_err(|e| ApiError::invalid_card(e.to_string()))?;
            let request = RegistrationRequest { draft: form.draft()?, card: card.clone(), document: form.document };
            let receipt = blocking(&node, move |n| n.write(|net| net.register_certificate(request))).await?;
            if let Err(e) = node.config().remember_card(&card) {
                tracing::warn!(error = %e, "could not store card");
            }
            receipt
        }
        (None, Some(card_id)) => {
            let signature = header(SIGNATURE_HEADER)
                .and_then(|s| hex::decode(s.trim()).ok())
                .ok_or_else(|| ApiError::invalid_card("X-Signature must be hex"))?;
            let draft = form.draft()?;
            let record_id = draft
                .record_id
                .clone()
                .ok_or_else(|| ApiError::schema("record_id required with a detached signature"))?;
            let mut record = draft.into_record(record_id, &card_id, form.document.as_deref().unwrap_or_default());
            if form.document.is_none() {
                if let Some(h) = form.optional("document_hash") {
                    record.document_hash =
                        h.parse::<HashDigest>().map_err(|e| ApiError::schema(format!("document_hash: {e}")))?;
                }
            }
            blocking(&node, move |n| n.write(|net| net.register_presigned(&card_id, record, &signature))).await?
        }
        (None, None) => return Err(ApiError::invalid_card("no card supplied")),
    };
    tracing::info!(record_id = %receipt.record_id, height = receipt.height, "record registered");
    Ok((StatusCode::CREATED, Json(receipt)).into_response())
}

fn verification_status(status: VerificationStatus) -> StatusCode {
    match status {
        VerificationStatus::NotFound => StatusCode::NOT_FOUND,
        VerificationStatus::Authentic | VerificationStatus::IntegrityFailure => StatusCode::OK,
    }
}

async fn verify(State(node): State<Arc<Node>>, Path(record_id): Path<String>) -> Response {
    let result = node.snapshot().verify_certificate(&record_id);
    (verification_status(result.status), Json(result)).into_response()
}

async fn verify_document(
    State(node): State<Arc<Node>>,
    Path(record_id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let net = node.snapshot();
    match net.verify_document(&record_id, &body) {
        Ok(check) => Ok((StatusCode::OK, Json(check)).into_response()),
        Err(RecordsError::NotFound(_)) => {
            let result = net.verify_certificate(&record_id);
            Ok((verification_status(result.status), Json(result)).into_response())
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    student: Option<String>,
    institution: Option<String>,
    kind: Option<String>,
}

async fn list(State(node): State<Arc<Node>>, Query(q): Query<ListQuery>) -> Result<Response, ApiError> {
    let kind = match q.kind.as_deref().filter(|k| !k.is_empty()) {
        Some(k) => Some(k.parse::<RecordKind>()?),
        None => None,
    };
    let net = node.snapshot();
    let records = net.list_records(q.student.as_deref(), q.institution.as_deref(), kind);
    Ok(Json(records).into_response())
}

#[derive(Debug, Serialize)]
pub struct ChainHead {
    pub network_id: String,
    pub height: u64,
    pub tip_hash: HashDigest,
    pub timestamp_ms: u64,
    pub chain_valid: bool,
    pub integrity_fault: Option<String>,
}

fn chain_head(net: &RecordsNetwork) -> ChainHead {
    let chain = net.chain();
    ChainHead {
        network_id: chain.network_id.clone(),
        height: chain.height(),
        tip_hash: chain.tip_hash(),
        timestamp_ms: chain.tip().map_or(0, |b| b.header.timestamp_ms),
        chain_valid: net.integrity_fault().is_none(),
        integrity_fault: net.integrity_fault().map(str::to_owned),
    }
}

async fn head(State(node): State<Arc<Node>>) -> Json<ChainHead> {
    Json(chain_head(&node.snapshot()))
}

#[derive(Debug, Serialize)]
pub struct BlockView<'a> {
    pub hash: HashDigest,
    #[serde(flatten)]
    pub block: &'a Block,
}

async fn block(State(node): State<Arc<Node>>, Path(height): Path<String>) -> Result<Response, ApiError> {
    let height: u64 = height.parse().map_err(|_| ApiError::bad_request(format!("`{height}` is not a block height")))?;
    let chain = node.chain();
    let block = chain
        .block(height)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not-found", format!("no block at height {height}")))?;
    Ok(Json(BlockView { hash: block.hash(), block }).into_response())
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    #[serde(flatten)]
    head: ChainHead,
}

async fn healthz(State(node): State<Arc<Node>>) -> Json<impl Serialize> {
    let head = chain_head(&node.snapshot());
    Json(Health { status: if head.chain_valid { "ok" } else { "degraded" }, head })
}
