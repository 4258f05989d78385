//! Stateful HTTP sessions over a trained querier/predictor checkpoint.
//!
//! A client creates a session, receives the querier's proposal, answers it
//! (or asks for the stored answer of a dataset row with `"auto"`) and gets
//! the updated posterior back, until the stopping rule fires. Any recorded
//! answer can later be edited through the intervention endpoint.

mod api;
mod error;
mod registry;
mod session;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use axum::Router;
use tower_http::cors::{Any, CorsLayer};

pub use api::{
    routes, AnswerResponse, AppState, CreateSessionRequest, InterveneRequest, PredictionView, QueryView,
    SessionView, StepView, SubmitAnswerRequest, TrajectoryView, ANSWER_SCALE,
};
pub use error::{ErrorBody, ServiceError};
pub use registry::{LoadedModel, ModelRegistry, ModelSummary, CHECKPOINT_EXT};
pub use session::{
    AnswerValue, InterventionMode, Session, SessionMode, SessionStatus, SessionStore, DEFAULT_SESSION_TIMEOUT,
};

#[derive(Debug, Clone, clap::Args)]
pub struct ServeArgs {
    /// Address to listen on.
    #[arg(long, env = "VIP_BIND", default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,

    /// Directory holding `<name>.vipckpt` checkpoints, with optional
    /// `<name>.queries.json` and `<name>.samples/` next to them.
    #[arg(long, env = "VIP_MODEL_DIR", default_value = "models")]
    pub model_dir: PathBuf,

    /// Idle time in seconds after which a session is dropped.
    #[arg(long, env = "VIP_SESSION_TIMEOUT", default_value_t = DEFAULT_SESSION_TIMEOUT.as_secs())]
    pub session_timeout: u64,
}

/// The full application: routes plus a permissive CORS layer so a browser
/// UI served from elsewhere can call it.
pub fn app(state: AppState) -> Router {
    let cors = CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any);
    routes(state).layer(cors)
}

fn spawn_evictor(state: &AppState) {
    let sessions = state.sessions.clone();
    let period = (sessions.timeout() / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            let n = sessions.evict_idle(Instant::now());
            if n > 0 {
                tracing::info!(evicted = n, "dropped idle sessions");
            }
        }
    });
}

/// Load the model directory and serve until interrupted.
pub async fn serve(args: &ServeArgs) -> Result<(), ServiceError> {
    let registry = ModelRegistry::load_dir(&args.model_dir)?;
    if registry.is_empty() {
        tracing::warn!(dir = %args.model_dir.display(), "no checkpoints found");
    }
    let state = AppState::new(registry, SessionStore::new(Duration::from_secs(args.session_timeout)));
    spawn_evictor(&state);
    let listener = tokio::net::TcpListener::bind(args.bind)
        .await
        .map_err(vip_core::Error::from)?;
    tracing::info!(addr = %args.bind, "listening");
    axum::serve(listener, app(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(vip_core::Error::from)?;
    Ok(())
}
