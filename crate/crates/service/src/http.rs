//! JSON over HTTP. Every response body carries `schema_version`; errors look
//! like `{"schema_version":1,"error":{"code":"...","message":"..."}}`.
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/session` | `{condition, seed}` |
//! | GET | `/session/{id}` | |
//! | GET | `/session/{id}/task/{tid}` | |
//! | GET | `/session/{id}/task/{tid}/suggestions?span=i-j` | |
//! | POST | `/session/{id}/task/{tid}/move` | `{target}` |
//! | POST | `/session/{id}/task/{tid}/check` | |
//! | POST | `/session/{id}/task/{tid}/apply` | `{span, candidate, target?}` |
//! | POST | `/session/{id}/task/{tid}/revert` | |
//! | POST | `/session/{id}/task/{tid}/rating` | `{easy_to_follow, confident, mental_demand}` |
//! | POST | `/session/{id}/task/{tid}/submit` | |
//! | GET | `/export?session=id` | |
//!
//! Mutating requests and the suggestion request accept an optional `seq`
//! (in the body, or the query for suggestions). When present it must equal the
//! session's next sequence number.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use hear_core::remedy::TokenRange;
use hear_core::speaker::Correction;
use hear_core::suite::Condition;

use crate::error::{Result, ServiceError};
use crate::session::{Action, Event, RatingForm, TaskView};
use crate::store::Store;
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub condition: String,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPayload {
    pub schema_version: u32,
    pub id: String,
    pub condition: Condition,
    pub seed: u64,
    pub created_at: u64,
    pub task_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionItem {
    pub candidate: String,
    /// Tokens the candidate replaces, as `i-j`.
    pub target: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionsPayload {
    pub schema_version: u32,
    pub span: String,
    pub items: Vec<SuggestionItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPayload {
    pub schema_version: u32,
    pub event: Event,
    pub task: TaskView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub schema_version: u32,
    pub error: ErrorDetail,
}

#[derive(Deserialize)]
struct Seq {
    seq: Option<u64>,
}

#[derive(Deserialize)]
struct MoveBody {
    target: String,
    seq: Option<u64>,
}

#[derive(Deserialize)]
struct ApplyBody {
    span: String,
    candidate: String,
    target: Option<String>,
    seq: Option<u64>,
}

#[derive(Deserialize)]
struct RatingBody {
    #[serde(flatten)]
    form: RatingForm,
    seq: Option<u64>,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        let body = ErrorPayload {
            schema_version: SCHEMA_VERSION,
            error: ErrorDetail { code: self.code().to_owned(), message: self.to_string() },
        };
        (status, Json(body)).into_response()
    }
}

type AppState = Arc<Store>;

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/session", post(create_session))
        .route("/session/{id}", get(get_session))
        .route("/session/{id}/task/{tid}", get(get_task))
        .route("/session/{id}/task/{tid}/suggestions", get(get_suggestions))
        .route("/session/{id}/task/{tid}/{action}", post(post_action))
        .route("/export", get(export))
        .fallback(|| async { ServiceError::BadRequest("no such endpoint".into()).with_status(StatusCode::NOT_FOUND) })
        .with_state(store)
}

pub async fn serve(store: Arc<Store>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(store)).await
}

impl ServiceError {
    fn with_status(self, status: StatusCode) -> Response {
        let mut r = self.into_response();
        *r.status_mut() = status;
        r
    }
}

/// Session work can score many candidates, so it runs off the async workers.
async fn blocking<R: Send + 'static>(f: impl FnOnce() -> Result<R> + Send + 'static) -> Result<R> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServiceError::Io(std::io::Error::other(e)))?
}

/// Reads a JSON body. An empty body or `null` counts as `{}`.
fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T> {
    let bad = |e: serde_json::Error| ServiceError::BadRequest(e.to_string());
    let value = if body.iter().all(u8::is_ascii_whitespace) { Value::Null } else { serde_json::from_slice(body).map_err(bad)? };
    let value = if value.is_null() { Value::Object(Default::default()) } else { value };
    serde_json::from_value(value).map_err(bad)
}

fn span(s: &str) -> Result<TokenRange> {
    s.parse().map_err(|e: hear_core::Error| ServiceError::BadRequest(e.to_string()))
}

fn session_payload(store: &Store, id: &str) -> Result<SessionPayload> {
    store.read(id, |s| {
        Ok(SessionPayload {
            schema_version: SCHEMA_VERSION,
            id: s.meta.id.clone(),
            condition: s.meta.condition,
            seed: s.meta.seed,
            created_at: s.meta.created_at,
            task_ids: s.meta.tasks.iter().map(|t| t.id.clone()).collect(),
        })
    })
}

async fn create_session(State(store): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<SessionPayload>)> {
    let req: CreateSession = parse(&body)?;
    let condition: Condition = req.condition.parse().map_err(|_| ServiceError::UnknownCondition(req.condition.clone()))?;
    let payload = blocking(move || {
        let meta = store.create(condition, req.seed)?;
        session_payload(&store, &meta.id)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(payload)))
}

async fn get_session(State(store): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionPayload>> {
    session_payload(&store, &id).map(Json)
}

async fn get_task(State(store): State<AppState>, Path((id, tid)): Path<(String, String)>) -> Result<Json<TaskView>> {
    blocking(move || store.read(&id, |s| s.view(store.study(), &tid))).await.map(Json)
}

async fn get_suggestions(
    State(store): State<AppState>,
    Path((id, tid)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<SuggestionsPayload>> {
    let raw = q.get("span").ok_or_else(|| ServiceError::BadRequest("missing `span` query parameter".into()))?;
    let at = span(raw)?;
    let seq = match q.get("seq") {
        Some(s) => Some(s.parse().map_err(|_| ServiceError::BadRequest(format!("bad seq `{s}`")))?),
        None => None,
    };
    blocking(move || {
        store.act_then(&id, &tid, seq, Action::OpenMenu { span: at }, |s, _| {
            let list = s.task(&tid)?.served.get(&at).ok_or_else(|| ServiceError::Corrupt("menu vanished".into()))?;
            Ok(SuggestionsPayload {
                schema_version: SCHEMA_VERSION,
                span: at.to_string(),
                items: list
                    .items
                    .iter()
                    .map(|s| SuggestionItem { candidate: s.candidate.as_str().to_owned(), target: s.target.to_string(), score: s.score })
                    .collect(),
            })
        })
    })
    .await
    .map(Json)
}

async fn post_action(
    State(store): State<AppState>,
    Path((id, tid, action)): Path<(String, String, String)>,
    body: Bytes,
) -> Result<Json<ActionPayload>> {
    let (seq, action) = match action.as_str() {
        "move" => {
            let b: MoveBody = parse(&body)?;
            (b.seq, Action::Move { target: b.target })
        }
        "check" => (parse::<Seq>(&body)?.seq, Action::Check),
        "apply" => {
            let b: ApplyBody = parse(&body)?;
            let target = b.target.as_deref().map(span).transpose()?;
            (b.seq, Action::Apply { span: span(&b.span)?, candidate: Correction::parse(&b.candidate), target })
        }
        "revert" => (parse::<Seq>(&body)?.seq, Action::Revert),
        "rating" => {
            let b: RatingBody = parse(&body)?;
            (b.seq, Action::Rate(b.form))
        }
        "submit" => (parse::<Seq>(&body)?.seq, Action::Submit),
        other => return Err(ServiceError::BadRequest(format!("unknown action `{other}`"))),
    };
    blocking(move || {
        store.act_then(&id, &tid, seq, action, |s, ev| {
            Ok(ActionPayload { schema_version: SCHEMA_VERSION, event: ev.clone(), task: s.view(store.study(), &tid)? })
        })
    })
    .await
    .map(Json)
}

async fn export(State(store): State<AppState>, Query(q): Query<HashMap<String, String>>) -> Result<Json<crate::Export>> {
    blocking(move || store.export(q.get("session").map(String::as_str))).await.map(Json)
}
