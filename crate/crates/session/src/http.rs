//! HTTP JSON API over a registry of sessions.
//!
//! Each session has one writer lock held for the duration of a step or
//! edit; readers clone the current `Arc<SessionState>` and never wait on a
//! running step. When a data directory is configured, every new state is
//! written to `<data_dir>/<id>.smbn` before it becomes visible.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde_json::json;

use scenemem_core::io::{rgb_to_png, spcl_bytes};

use crate::api::{ClipResponse, CreateRequest, EditRequest, EditResponse, SessionInfo, StepResponse};
use crate::bundle;
use crate::config::{GeneratorSpec, ServiceConfig, SessionConfig};
use crate::error::Error;
use crate::generators::GeneratorFactory;
use crate::state::SessionState;
use crate::step::{apply_edits, step, StepRequest};

pub const BUNDLE_EXT: &str = "smbn";

struct Entry {
    writer: tokio::sync::Mutex<()>,
    state: RwLock<Arc<SessionState>>,
    generator: RwLock<GeneratorSpec>,
}

impl Entry {
    fn new(state: SessionState, generator: GeneratorSpec) -> Arc<Self> {
        Arc::new(Self {
            writer: tokio::sync::Mutex::new(()),
            state: RwLock::new(Arc::new(state)),
            generator: RwLock::new(generator),
        })
    }

    fn snapshot(&self) -> Arc<SessionState> {
        self.state.read().expect("state lock poisoned").clone()
    }

    fn generator(&self) -> GeneratorSpec {
        self.generator.read().expect("generator lock poisoned").clone()
    }
}

pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Entry>>>,
    factory: GeneratorFactory,
    defaults: SessionConfig,
    default_generator: GeneratorSpec,
    data_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(defaults: SessionConfig, default_generator: GeneratorSpec, data_dir: Option<PathBuf>) -> Self {
        Self {
            sessions: RwLock::new(HashMap::new()),
            factory: GeneratorFactory::new(),
            defaults,
            default_generator,
            data_dir,
        }
    }

    pub fn from_config(cfg: &ServiceConfig) -> Self {
        Self::new(cfg.session.clone(), cfg.generator.clone(), Some(cfg.data_dir.clone()))
    }

    /// Loads every bundle found in the data directory.
    pub fn restore(&self) -> crate::Result<usize> {
        let Some(dir) = &self.data_dir else { return Ok(0) };
        if !dir.exists() {
            return Ok(0);
        }
        let mut n = 0;
        for e in std::fs::read_dir(dir)? {
            let path = e?.path();
            if path.extension().is_none_or(|x| x != BUNDLE_EXT) {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            match bundle::load(&path) {
                Ok(state) => {
                    self.insert(id.to_string(), Entry::new(state, self.default_generator.clone()));
                    n += 1;
                }
                Err(e) => warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(n)
    }

    fn insert(&self, id: String, entry: Arc<Entry>) {
        self.sessions.write().expect("registry poisoned").insert(id, entry);
    }

    fn get(&self, id: &str) -> Result<Arc<Entry>, ApiError> {
        self.sessions
            .read()
            .expect("registry poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    fn persist(&self, id: &str, state: &SessionState) -> crate::Result<()> {
        if let Some(dir) = &self.data_dir {
            std::fs::create_dir_all(dir)?;
            let tmp = dir.join(format!("{id}.{BUNDLE_EXT}.tmp"));
            bundle::save(state, &tmp)?;
            std::fs::rename(&tmp, dir.join(format!("{id}.{BUNDLE_EXT}")))?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn not_found(message: String) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message,
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::TrajectoryLength { .. }
            | Error::PoseGap { .. }
            | Error::InvalidRequest(_)
            | Error::CorruptBundle(_)
            | Error::BundleVersion(_)
            | Error::Config(_)
            | Error::Core(_)
            | Error::Json(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Generator(_) | Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl From<scenemem_core::Error> for ApiError {
    fn from(e: scenemem_core::Error) -> Self {
        Error::from(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type Shared = Arc<AppState>;
type ApiResult<T> = Result<T, ApiError>;

fn join_error(e: tokio::task::JoinError) -> ApiError {
    ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: format!("worker failed: {e}"),
    }
}

pub fn router(app: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(info_handler))
        .route("/sessions/{id}/memory", get(memory))
        .route("/sessions/{id}/step", post(step_handler))
        .route("/sessions/{id}/edit", post(edit))
        .route("/sessions/{id}/clips/{k}", get(clip))
        .route("/sessions/{id}/clips/{k}/{i}", get(clip_frame))
        .route("/sessions/{id}/bundle", get(get_bundle).put(put_bundle))
        .with_state(app)
}

async fn create(
    State(app): State<Shared>,
    Json(req): Json<CreateRequest>,
) -> ApiResult<(StatusCode, Json<SessionInfo>)> {
    let config = req.config.unwrap_or_else(|| app.defaults.clone());
    let generator = req.generator.unwrap_or_else(|| app.default_generator.clone());
    let init = req.init.into_init()?;
    let state = tokio::task::spawn_blocking(move || SessionState::create(init, config))
        .await
        .map_err(join_error)??;
    let id = uuid::Uuid::new_v4().simple().to_string();
    app.persist(&id, &state)?;
    let info = SessionInfo::new(&id, &state, &generator);
    app.insert(id.clone(), Entry::new(state, generator));
    info!("created session {id}");
    Ok((StatusCode::CREATED, Json(info)))
}

async fn list(State(app): State<Shared>) -> Json<Vec<String>> {
    let mut ids: Vec<String> = app
        .sessions
        .read()
        .expect("registry poisoned")
        .keys()
        .cloned()
        .collect();
    ids.sort();
    Json(ids)
}

async fn info_handler(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<SessionInfo>> {
    let entry = app.get(&id)?;
    Ok(Json(SessionInfo::new(&id, &entry.snapshot(), &entry.generator())))
}

async fn memory(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let state = app.get(&id)?.snapshot();
    let bytes = spcl_bytes(&state.memory.snapshot());
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

async fn step_handler(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<StepRequest>,
) -> ApiResult<Json<StepResponse>> {
    let entry = app.get(&id)?;
    let _guard = entry.writer.lock().await;
    let current = entry.snapshot();
    let spec = entry.generator();
    let app2 = app.clone();
    let (next, resp) = tokio::task::spawn_blocking(move || -> crate::Result<_> {
        let generator = app2.factory.build(&spec, &current)?;
        let (next, out) = step(&current, &req, generator.as_ref())?;
        let resp = StepResponse::new(req.trajectory, &out, &next)?;
        Ok((next, resp))
    })
    .await
    .map_err(join_error)??;
    app.persist(&id, &next)?;
    *entry.state.write().expect("state lock poisoned") = Arc::new(next);
    Ok(Json(resp))
}

async fn edit(
    State(app): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<EditRequest>,
) -> ApiResult<Json<EditResponse>> {
    let entry = app.get(&id)?;
    let _guard = entry.writer.lock().await;
    let current = entry.snapshot();
    let (next, touched) = apply_edits(&current, &req.edits)?;
    app.persist(&id, &next)?;
    let resp = EditResponse {
        touched,
        cells: next.memory.len(),
        checksum: next.checksum(),
    };
    *entry.state.write().expect("state lock poisoned") = Arc::new(next);
    Ok(Json(resp))
}

async fn clip(State(app): State<Shared>, Path((id, k)): Path<(String, usize)>) -> ApiResult<Json<ClipResponse>> {
    let state = app.get(&id)?.snapshot();
    ClipResponse::new(&state, k)?
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("session {id} has no clip {k}")))
}

async fn clip_frame(State(app): State<Shared>, Path((id, k, i)): Path<(String, usize, usize)>) -> ApiResult<Response> {
    let state = app.get(&id)?.snapshot();
    let frame = state
        .clip_frames(k)
        .nth(i)
        .ok_or_else(|| ApiError::not_found(format!("session {id} has no frame {i} in clip {k}")))?;
    let png = rgb_to_png(&frame.rgb)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn get_bundle(State(app): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let state = app.get(&id)?.snapshot();
    Ok((
        [(header::CONTENT_TYPE, "application/octet-stream")],
        bundle::export(&state),
    )
        .into_response())
}

/// Replaces (or creates) session `id` from a bundle.
async fn put_bundle(State(app): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<SessionInfo>> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        return Err(Error::InvalidRequest("session ids are alphanumeric".into()).into());
    }
    let state = bundle::import(&body)?;
    let existing = app.sessions.read().expect("registry poisoned").get(&id).cloned();
    match existing {
        Some(entry) => {
            let _guard = entry.writer.lock().await;
            app.persist(&id, &state)?;
            let info = SessionInfo::new(&id, &state, &entry.generator());
            *entry.state.write().expect("state lock poisoned") = Arc::new(state);
            Ok(Json(info))
        }
        None => {
            app.persist(&id, &state)?;
            let info = SessionInfo::new(&id, &state, &app.default_generator);
            app.insert(id, Entry::new(state, app.default_generator.clone()));
            Ok(Json(info))
        }
    }
}

/// Binds and serves until the process is stopped.
pub async fn serve(cfg: ServiceConfig) -> crate::Result<()> {
    let app = Arc::new(AppState::from_config(&cfg));
    let restored = app.restore()?;
    if restored > 0 {
        info!("restored {restored} sessions from {}", cfg.data_dir.display());
    }
    let listener = tokio::net::TcpListener::bind((cfg.bind.as_str(), cfg.port)).await?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app)).await?;
    Ok(())
}
