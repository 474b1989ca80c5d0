//! Local HTTP service over a scene directory.
//!
//! Reads are served from memory. Mutations run one at a time; a second
//! request arriving while one is in progress gets 409.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Mutex;

use sceneforge::constraints::{check_ids, parse_constraints};
use sceneforge::edit::{apply_command, parse_command, EditCommand, EditState};
use sceneforge::export::export_scene;
use sceneforge::project::SceneDir;
use sceneforge::refine::Proposer;
use sceneforge::services::Services;
use sceneforge::solver::solve;
use sceneforge::{EditError, SolverConfig, Thresholds};

pub struct AppState {
    dir: SceneDir,
    state: RwLock<EditState>,
    writer: Mutex<()>,
    version: AtomicU64,
    proposer: Arc<dyn Proposer>,
    services: Option<Arc<Services>>,
    config: SolverConfig,
    th: Thresholds,
}

impl AppState {
    /// Loads a scene directory; the backends follow [`crate::commands::edit_backends`].
    pub fn open(root: &Path, mock: bool, config: SolverConfig) -> anyhow::Result<Arc<Self>> {
        let (proposer, services) = crate::commands::edit_backends(root, mock)?;
        Self::with_backends(root, proposer, services, config)
    }

    pub fn with_backends(
        root: &Path,
        proposer: Arc<dyn Proposer>,
        services: Option<Arc<Services>>,
        config: SolverConfig,
    ) -> anyhow::Result<Arc<Self>> {
        let dir = SceneDir::new(root);
        let state = dir.load_state()?;
        Ok(Arc::new(AppState {
            dir,
            state: RwLock::new(state),
            writer: Mutex::new(()),
            version: AtomicU64::new(0),
            proposer,
            services,
            config,
            th: Thresholds::default(),
        }))
    }

    pub fn version(&self) -> u64 {
        self.version.load(Ordering::SeqCst)
    }

    /// Holds off mutations until the guard is dropped.
    pub async fn pause_writes(&self) -> tokio::sync::MutexGuard<'_, ()> {
        self.writer.lock().await
    }

    fn snapshot(&self) -> EditState {
        self.state.read().expect("state lock").clone()
    }

    fn commit(&self, state: EditState) -> Result<u64, ApiError> {
        self.dir.save_state(&state).map_err(ApiError::internal)?;
        *self.state.write().expect("state lock") = state;
        Ok(self.version.fetch_add(1, Ordering::SeqCst) + 1)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl ToString) -> Self {
        ApiError {
            status,
            message: message.to_string(),
        }
    }

    fn bad_request(message: impl ToString) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(message: impl ToString) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }

    fn busy() -> Self {
        Self::new(StatusCode::CONFLICT, "another change is in progress")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            warn!("{}", self.message);
        }
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<EditError> for ApiError {
    fn from(e: EditError) -> Self {
        match e {
            EditError::Ambiguous(_) | EditError::Validation(_) | EditError::Precondition(_) => Self::bad_request(e),
            EditError::UnknownObject(_) => Self::new(StatusCode::NOT_FOUND, e),
            _ => Self::new(StatusCode::BAD_GATEWAY, e),
        }
    }
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/scene", get(scene))
        .route("/solve", post(solve_route))
        .route("/edit", post(edit))
        .route("/assets/{id}", get(asset))
        .with_state(app)
}

pub async fn serve(app: Arc<AppState>, host: &str, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

async fn health(State(app): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({ "status": "ok", "version": app.version() }))
}

async fn scene(State(app): State<Arc<AppState>>) -> Json<Value> {
    let state = app.snapshot();
    // placed objects carry their solved pose
    let scene = export_scene(&state.scene, &state.layout).unwrap_or_else(|_| state.scene.clone());
    Json(json!({
        "version": app.version(),
        "scene": scene,
        "layout": state.layout,
        "constraints": state.constraints,
    }))
}

async fn solve_route(State(app): State<Arc<AppState>>, body: String) -> Result<Response, ApiError> {
    let constraints = parse_constraints(&body).map_err(ApiError::bad_request)?;
    let _guard = app.writer.try_lock().map_err(|_| ApiError::busy())?;
    let mut state = app.snapshot();
    check_ids(&constraints, &state.scene).map_err(ApiError::bad_request)?;
    let worker = app.clone();
    let scene = state.scene.clone();
    let solver_input = constraints.clone();
    let report = tokio::task::spawn_blocking(move || solve(&scene, &solver_input, &worker.config, &worker.th))
        .await
        .map_err(ApiError::internal)?
        .map_err(ApiError::bad_request)?;
    state.constraints = constraints;
    state.layout = report.layout.clone();
    app.dir.save_report(&report).map_err(ApiError::internal)?;
    let version = app.commit(state)?;
    let mut body = serde_json::to_value(&report).map_err(ApiError::internal)?;
    body["version"] = json!(version);
    Ok(Json(body).into_response())
}

#[derive(Deserialize)]
struct InstructionBody {
    instruction: String,
    #[serde(default)]
    version: Option<u64>,
}

#[derive(Deserialize)]
struct CommandBody {
    #[serde(flatten)]
    command: EditCommand,
    #[serde(default)]
    version: Option<u64>,
}

enum EditInput {
    Command(EditCommand),
    Text(String),
}

/// Accepts an edit command object, `{"instruction": ...}`, a JSON string,
/// or plain text.
fn edit_input(body: &str) -> Result<(EditInput, Option<u64>), ApiError> {
    let value: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(_) => return Ok((EditInput::Text(body.to_string()), None)),
    };
    match value {
        Value::String(s) => Ok((EditInput::Text(s), None)),
        Value::Object(ref map) if map.contains_key("kind") => {
            let c: CommandBody = serde_json::from_value(value).map_err(ApiError::bad_request)?;
            Ok((EditInput::Command(c.command), c.version))
        }
        Value::Object(_) => {
            let c: InstructionBody = serde_json::from_value(value).map_err(ApiError::bad_request)?;
            Ok((EditInput::Text(c.instruction), c.version))
        }
        _ => Err(ApiError::bad_request("expected an edit command, an instruction or text")),
    }
}

async fn edit(State(app): State<Arc<AppState>>, body: String) -> Result<Response, ApiError> {
    let (input, expected) = edit_input(&body)?;
    let _guard = app.writer.try_lock().map_err(|_| ApiError::busy())?;
    if let Some(v) = expected {
        if v != app.version() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("scene is at version {}, not {v}", app.version()),
            ));
        }
    }
    let state = app.snapshot();
    let command = match input {
        EditInput::Command(c) => c,
        EditInput::Text(text) => parse_command(&state.scene, &text)?,
    };
    let worker = app.clone();
    let result = tokio::task::spawn_blocking(move || {
        apply_command(
            &state,
            &command,
            worker.proposer.as_ref(),
            worker.services.as_deref(),
            &worker.config,
            &worker.th,
        )
    })
    .await
    .map_err(ApiError::internal)??;
    let version = if result.applied {
        if let Some(report) = &result.report {
            app.dir.save_report(report).map_err(ApiError::internal)?;
        }
        app.commit(result.state.clone())?
    } else {
        app.version()
    };
    let mut body = serde_json::to_value(&result).map_err(ApiError::internal)?;
    body["version"] = json!(version);
    let status = if result.applied {
        StatusCode::OK
    } else {
        StatusCode::UNPROCESSABLE_ENTITY
    };
    Ok((status, Json(body)).into_response())
}

async fn asset(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("no asset for {id}"));
    let reference = {
        let state = app.state.read().expect("state lock");
        state.scene.get(&id).and_then(|s| s.asset_ref.clone()).ok_or_else(not_found)?
    };
    let bytes = tokio::fs::read(app.dir.resolve(&reference)).await.map_err(|_| not_found())?;
    Ok(([(header::CONTENT_TYPE, "model/gltf-binary")], Bytes::from(bytes)).into_response())
}
