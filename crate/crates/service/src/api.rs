//! HTTP/JSON routes.

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};
use crate::service::SessionService;
use crate::session::{AnswerEntry, PatientSessions, Question};
use crate::users::User;

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).expect("valid status");
        let body = ErrorBody { code: self.code().to_string(), message: self.to_string() };
        (status, Json(body)).into_response()
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    patient_user_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRequest {
    pub question_id: u32,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub answer: AnswerEntry,
    /// Next question to ask, or the same one again after an ambiguous reply.
    pub pending_question: Option<Question>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionList {
    pub patients: Vec<PatientSessions>,
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    patient_id: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRequest {
    path: PathBuf,
}

type AppState = Arc<SessionService>;

fn authenticate(state: &SessionService, headers: &HeaderMap) -> ServiceResult<User> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or(ServiceError::Unauthorized)?;
    state.users().by_token(token).cloned().ok_or(ServiceError::Unauthorized)
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ServiceResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("invalid request body: {e}")))
}

/// Runs a blocking service call off the async executor.
async fn blocking<T, F>(state: AppState, f: F) -> ServiceResult<T>
where
    T: Send + 'static,
    F: FnOnce(&SessionService) -> ServiceResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

async fn healthz(State(state): State<AppState>) -> Json<serde_json::Value> {
    let model = state.models().current();
    Json(serde_json::json!({
        "status": "ok",
        "template": model.template(),
        "base_fingerprint": model.manifest.base_fingerprint,
        "adapter": model.manifest.adapter,
    }))
}

async fn questions(State(state): State<AppState>, headers: HeaderMap) -> ServiceResult<Json<Vec<Question>>> {
    authenticate(&state, &headers)?;
    Ok(Json(state.questions()))
}

async fn create(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ServiceResult<Response> {
    let user = authenticate(&state, &headers)?;
    let req: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) { CreateRequest::default() } else { parse_body(&body)? };
    if req.patient_user_id.as_deref().is_some_and(|p| p != user.id) {
        return Err(ServiceError::Forbidden("sessions can only be opened for yourself".into()));
    }
    let created = blocking(state, move |s| s.create_session(&user.id)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn answer(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> ServiceResult<Json<AnswerResponse>> {
    let user = authenticate(&state, &headers)?;
    let req: AnswerRequest = parse_body(&body)?;
    let response = blocking(state, move |s| {
        let answer = s.submit_answer(&user, &id, req.question_id, &req.text)?;
        let session = s.get_session(&user, &id)?;
        let schema = s.models().current().schema.clone();
        let pending_question = SessionService::pending_question(&schema, &session)
            .and_then(|q| s.questions().into_iter().find(|x| x.id == q));
        Ok(AnswerResponse { answer, pending_question })
    })
    .await?;
    Ok(Json(response))
}

async fn complete(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ServiceResult<Json<crate::session::Assessment>> {
    let user = authenticate(&state, &headers)?;
    Ok(Json(blocking(state, move |s| s.complete_session(&user, &id)).await?))
}

async fn list(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<ListQuery>,
) -> ServiceResult<Json<SessionList>> {
    let user = authenticate(&state, &headers)?;
    let patients = state.list_sessions(&user, q.patient_id.as_deref())?;
    Ok(Json(SessionList { patients }))
}

async fn fetch(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ServiceResult<Json<crate::session::Session>> {
    let user = authenticate(&state, &headers)?;
    Ok(Json(state.get_session(&user, &id)?))
}

async fn reload_model(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ServiceResult<StatusCode> {
    let user = authenticate(&state, &headers)?;
    if !user.is_admin {
        return Err(ServiceError::Forbidden("only clinicians may replace the model".into()));
    }
    let req: ModelRequest = parse_body(&body)?;
    blocking(state, move |s| s.models().load(&req.path)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn fallback() -> ServiceError {
    ServiceError::NotFound("no such route".into())
}

pub fn router(state: Arc<SessionService>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/questions", get(questions))
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(fetch))
        .route("/sessions/{id}/answers", post(answer))
        .route("/sessions/{id}/complete", post(complete))
        .route("/admin/model", post(reload_model))
        .fallback(fallback)
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<SessionService>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}
