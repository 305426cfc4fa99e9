//! Rating-collection service: hands out anonymized side-by-side and
//! counting tasks, records answers in an append-only log and serves
//! leaderboard snapshots.

pub mod assets;
pub mod clock;
pub mod config;
pub mod eventlog;
pub mod state;

use std::path::Path;
use std::sync::{Arc, Mutex};

use arena_eval_core::api::{ErrorBody, ErrorCode, Health, LeaderboardResponse, SubmitRequest};
use arena_eval_core::elo::{bootstrap_leaderboard, EloConfig, EloError};
use arena_eval_core::io::{read_json, IoError};
use arena_eval_core::model::{Aspect, PromptSet};
use arena_eval_core::scheduler::{SchedulerError, TournamentPlan};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use thiserror::Error;
use tower_http::services::ServeDir;

use crate::assets::{content_type, AssetStore};
use crate::clock::{Clock, SystemClock};
use crate::config::ServiceConfig;
use crate::state::Core;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
}

impl From<IoError> for ServiceError {
    fn from(e: IoError) -> Self {
        ServiceError::Io(e.to_string())
    }
}

#[derive(Clone)]
pub struct AppState {
    core: Arc<Mutex<Core>>,
    clock: Arc<dyn Clock>,
}

impl AppState {
    pub fn new(core: Core, clock: Arc<dyn Clock>) -> Self {
        Self { core: Arc::new(Mutex::new(core)), clock }
    }

    /// Loads plan, prompt sets and assets named by `config`, then replays
    /// the log.
    pub fn from_config(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        let plan: TournamentPlan = read_json(config.plan_path())?;
        let sets = config.prompt_sets.iter().map(read_json::<PromptSet>).collect::<Result<Vec<_>, _>>()?;
        let assets = match &config.assets {
            Some(p) => AssetStore::load(config.seed, p)?,
            None => AssetStore::new(config.seed),
        };
        Ok(Self::new(Core::new(config, plan, sets, assets)?, clock))
    }

    /// Runs `f` with exclusive access to the service state.
    pub fn with_core<T>(&self, f: impl FnOnce(&mut Core) -> T) -> T {
        let mut core = self.core.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut core)
    }
}

fn error(status: StatusCode, code: ErrorCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { code, message: message.into(), components: Vec::new() })).into_response()
}

fn internal(e: impl std::fmt::Display) -> Response {
    error(StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::Internal, e.to_string())
}

#[derive(Deserialize)]
struct NextQuery {
    rater: Option<String>,
}

async fn next_task(State(app): State<AppState>, Query(q): Query<NextQuery>) -> Response {
    let rater = match q.rater.as_deref().map(str::trim) {
        Some(r) if !r.is_empty() => r.to_string(),
        _ => return error(StatusCode::BAD_REQUEST, ErrorCode::BadRequest, "missing rater"),
    };
    let now = app.clock.now();
    Json(app.with_core(|c| c.next_task(&rater, now))).into_response()
}

async fn submit(State(app): State<AppState>, Json(req): Json<SubmitRequest>) -> Response {
    let now = app.clock.now();
    match app.with_core(|c| c.submit(&req, now)) {
        Ok(ack) => Json(ack).into_response(),
        Err(e) => internal(e),
    }
}

#[derive(Deserialize)]
struct LeaderboardQuery {
    aspect: String,
    set: String,
    level: Option<f64>,
}

async fn leaderboard(State(app): State<AppState>, Query(q): Query<LeaderboardQuery>) -> Response {
    let aspect: Aspect = match q.aspect.parse() {
        Ok(a) => a,
        Err(e) => return error(StatusCode::BAD_REQUEST, ErrorCode::BadRequest, format!("{e}")),
    };
    let level = q.level.unwrap_or(0.99);
    let (snap, n_boot, seed) = app.with_core(|c| (c.scope_snapshot(aspect, &q.set), c.config().n_boot, c.config().seed));
    if snap.records.is_empty() {
        return error(StatusCode::NOT_FOUND, ErrorCode::NoData, "no data");
    }
    let result = tokio::task::spawn_blocking(move || {
        let fit = bootstrap_leaderboard(&snap.records, &snap.studies, &EloConfig::default(), level, n_boot, seed);
        (fit, snap)
    })
    .await;
    let (fit, snap) = match result {
        Ok(r) => r,
        Err(e) => return internal(e),
    };
    match fit {
        Ok(mut lb) => {
            lb.metadata.log_offset = Some(snap.log_offset);
            Json(LeaderboardResponse {
                leaderboard: lb,
                log_offset: snap.log_offset,
                studies_used: snap.studies.len(),
                studies_withheld: snap.withheld,
            })
            .into_response()
        }
        Err(EloError::Disconnected { components }) => (
            StatusCode::CONFLICT,
            Json(ErrorBody { code: ErrorCode::Disconnected, message: "comparison graph is disconnected".into(), components }),
        )
            .into_response(),
        Err(EloError::NoData) => error(StatusCode::NOT_FOUND, ErrorCode::NoData, "no data"),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::BadRequest, e.to_string()),
    }
}

async fn study_status(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    match app.with_core(|c| c.status(&id)) {
        Some(s) => Json(s).into_response(),
        None => error(StatusCode::NOT_FOUND, ErrorCode::NotFound, "unknown study"),
    }
}

async fn health(State(app): State<AppState>) -> Json<Health> {
    Json(app.with_core(|c| Health { status: "ok".into(), log_entries: c.log_entries(), open_leases: c.open_leases() }))
}

async fn asset(State(app): State<AppState>, UrlPath(token): UrlPath<String>) -> Response {
    let Some(path) = app.with_core(|c| c.assets().resolve(&token).map(Path::to_path_buf)) else {
        return error(StatusCode::NOT_FOUND, ErrorCode::NotFound, "unknown asset");
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => error(StatusCode::NOT_FOUND, ErrorCode::NotFound, "asset unavailable"),
    }
}

pub fn router(app: AppState, ui_dir: Option<&Path>) -> Router {
    let mut r = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/ratings", post(submit))
        .route("/api/leaderboard", get(leaderboard))
        .route("/api/studies/{id}/status", get(study_status))
        .route("/assets/{token}", get(asset))
        .route("/healthz", get(health));
    if let Some(dir) = ui_dir {
        r = r.nest_service("/ui", ServeDir::new(dir));
    }
    r.with_state(app)
}

/// Serves on a bound listener until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: AppState,
    ui_dir: Option<&Path>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    axum::serve(listener, router(app, ui_dir)).with_graceful_shutdown(shutdown).await.map_err(|e| ServiceError::Io(e.to_string()))
}

/// Binds and serves until ctrl-c, then writes a final progress snapshot.
pub async fn run(config: ServiceConfig) -> Result<(), ServiceError> {
    let addr = format!("{}:{}", config.bind, config.port);
    let ui = config.ui_dir.clone();
    let app = AppState::from_config(config, Arc::new(SystemClock))?;
    app.with_core(|c| c.write_progress())?;
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| ServiceError::Io(format!("{addr}: {e}")))?;
    tracing::info!("listening on {addr}");
    serve(listener, app.clone(), ui.as_deref(), async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    app.with_core(|c| c.write_progress())
}
