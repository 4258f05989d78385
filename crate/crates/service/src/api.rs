use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use vip_core::trajectory::StopReason;

use crate::error::{ErrorBody, ServiceError};
use crate::registry::{ModelRegistry, ModelSummary};
use crate::session::{
    lock_session, AnswerValue, InterventionMode, Session, SessionMode, SessionStatus, SessionStore,
};

/// Manual answers and echoed answers are always on this scale.
pub const ANSWER_SCALE: &str = "standardized";

#[derive(Clone)]
pub struct AppState {
    pub registry: Arc<ModelRegistry>,
    pub sessions: Arc<SessionStore>,
}

impl AppState {
    pub fn new(registry: ModelRegistry, sessions: SessionStore) -> Self {
        AppState {
            registry: Arc::new(registry),
            sessions: Arc::new(sessions),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub model: String,
    #[serde(default = "manual")]
    pub mode: SessionMode,
    pub threshold: f64,
    #[serde(default)]
    pub budget: Option<usize>,
}

fn manual() -> SessionMode {
    SessionMode::Manual
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitAnswerRequest {
    pub query_id: usize,
    pub answer: AnswerValue,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterveneRequest {
    pub step: usize,
    pub new_answer: AnswerValue,
    pub mode: InterventionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub id: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionView {
    pub class: usize,
    pub name: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub model: String,
    pub mode: SessionMode,
    pub threshold: f64,
    pub budget: usize,
    pub status: SessionStatus,
    pub stop_reason: Option<StopReason>,
    pub n_steps: usize,
    pub posterior: Vec<f64>,
    pub class_names: Vec<String>,
    pub prediction: Option<PredictionView>,
    pub next_query: Option<QueryView>,
    pub answer_scale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub query_id: usize,
    pub answer: f64,
    pub posterior: Vec<f64>,
    pub stopped: bool,
    pub stop_reason: Option<StopReason>,
    pub prediction: Option<PredictionView>,
    pub next_query: Option<QueryView>,
    pub answer_scale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub step: usize,
    pub query_id: usize,
    pub query_text: String,
    pub answer: f64,
    pub posterior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryView {
    pub session_id: String,
    pub status: SessionStatus,
    pub stop_reason: Option<StopReason>,
    pub prediction: PredictionView,
    pub steps: Vec<StepView>,
    pub next_query: Option<QueryView>,
    pub answer_scale: String,
}

fn prediction(session: &Session) -> PredictionView {
    let run = session.run();
    let class = run.prediction();
    PredictionView {
        class,
        name: session.model.class_names()[class].clone(),
        probability: run.posterior()[class],
    }
}

fn next_query(session: &Session) -> Result<Option<QueryView>, ServiceError> {
    Ok(session.pending()?.map(|id| QueryView {
        id,
        text: session.model.query_text(id),
    }))
}

fn session_view(session: &Session) -> Result<SessionView, ServiceError> {
    let run = session.run();
    let stopped = run.is_stopped();
    Ok(SessionView {
        session_id: session.id.clone(),
        model: session.model.name.clone(),
        mode: session.mode,
        threshold: run.rule().threshold,
        budget: run.rule().budget,
        status: session.status(),
        stop_reason: session.stop_reason(),
        n_steps: run.steps().len(),
        posterior: run.posterior().to_vec(),
        class_names: session.model.class_names(),
        prediction: stopped.then(|| prediction(session)),
        next_query: next_query(session)?,
        answer_scale: ANSWER_SCALE.into(),
    })
}

fn trajectory_view(session: &Session) -> Result<TrajectoryView, ServiceError> {
    let steps = session
        .run()
        .steps()
        .iter()
        .enumerate()
        .map(|(i, s)| StepView {
            step: i,
            query_id: s.query,
            query_text: session.model.query_text(s.query),
            answer: s.answer,
            posterior: s.posterior.clone(),
        })
        .collect();
    Ok(TrajectoryView {
        session_id: session.id.clone(),
        status: session.status(),
        stop_reason: session.stop_reason(),
        prediction: prediction(session),
        steps,
        next_query: next_query(session)?,
        answer_scale: ANSWER_SCALE.into(),
    })
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::InvalidRequest(e.body_text()))
}

async fn list_models(State(state): State<AppState>) -> Json<Vec<ModelSummary>> {
    Json(state.registry.summaries())
}

async fn create_session(
    State(state): State<AppState>,
    payload: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ServiceError> {
    let req = body(payload)?;
    let model = state
        .registry
        .get(&req.model)
        .ok_or_else(|| ServiceError::UnknownModel(req.model.clone()))?;
    let session = Session::new(SessionStore::new_id(), model, req.mode, req.threshold, req.budget)?;
    let view = session_view(&session)?;
    state.sessions.insert(session);
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ServiceError> {
    let handle = state.sessions.get(&id)?;
    let session = lock_session(&handle);
    Ok(Json(session_view(&session)?))
}

async fn submit_answer(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<SubmitAnswerRequest>, JsonRejection>,
) -> Result<Json<AnswerResponse>, ServiceError> {
    let handle = state.sessions.get(&id)?;
    let req = body(payload)?;
    let mut session = lock_session(&handle);
    let answer = session.submit(req.query_id, &req.answer)?;
    let stopped = session.run().is_stopped();
    Ok(Json(AnswerResponse {
        query_id: req.query_id,
        answer,
        posterior: session.run().posterior().to_vec(),
        stopped,
        stop_reason: session.stop_reason(),
        prediction: stopped.then(|| prediction(&session)),
        next_query: next_query(&session)?,
        answer_scale: ANSWER_SCALE.into(),
    }))
}

async fn intervene_answer(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<InterveneRequest>, JsonRejection>,
) -> Result<Json<TrajectoryView>, ServiceError> {
    let handle = state.sessions.get(&id)?;
    let req = body(payload)?;
    let mut session = lock_session(&handle);
    session.intervene(req.step, &req.new_answer, req.mode)?;
    Ok(Json(trajectory_view(&session)?))
}

async fn get_trajectory(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<TrajectoryView>, ServiceError> {
    let handle = state.sessions.get(&id)?;
    let session = lock_session(&handle);
    Ok(Json(trajectory_view(&session)?))
}

async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ServiceError> {
    state.sessions.remove(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn fallback() -> (StatusCode, Json<ErrorBody>) {
    let body = ErrorBody {
        code: "not_found".into(),
        message: "no such route".into(),
    };
    (StatusCode::NOT_FOUND, Json(body))
}

pub fn routes(state: AppState) -> Router {
    Router::new()
        .route("/models", get(list_models))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/answers", post(submit_answer))
        .route("/sessions/{id}/intervene", post(intervene_answer))
        .route("/sessions/{id}/trajectory", get(get_trajectory))
        .fallback(fallback)
        .with_state(state)
}
