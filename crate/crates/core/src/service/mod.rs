//! Local HTTP service backing the segment review UI.

mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{RwLock, Semaphore};

pub use session::{
    resegment, ReviewAction, ReviewSession, SegmentView, SessionState, TrialSignal, REVIEW_LOG,
    REVIEW_SNAPSHOT, SNAPSHOT_EVERY,
};

use crate::class::ContactClass;
use crate::dataset::{discover_trials, Embodiment, TrialRecording};
use crate::error::Error;
use crate::segmentation::{ParamsRecord, SegmentDocument, SegmentationParams, Thresholds};
use crate::workspace::{ProjectConfig, Workspace};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8765";
pub const DEFAULT_ENVELOPE_POINTS: usize = 2000;
pub const MAX_ENVELOPE_POINTS: usize = 4000;

/// Error body: `{"error": "...", "fields": [...]}` with a status derived
/// from the error kind.
#[derive(Debug)]
pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, fields) = match self.0.root() {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, vec![]),
            Error::Conflict(_) => (StatusCode::CONFLICT, vec![]),
            Error::InvalidParameter { field, .. } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                field.split(',').map(str::to_string).collect(),
            ),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, vec![]),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{}", self.0);
        }
        let body = ErrorBody {
            error: self.0.to_string(),
            fields,
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

/// Per-trial session slot: the session behind a reader/writer guard, and a
/// one-permit gate plus generation counter for resegmentation.
struct TrialSlot {
    session: RwLock<Option<ReviewSession>>,
    reseg_gate: Semaphore,
    reseg_generation: AtomicU64,
}

impl TrialSlot {
    fn new() -> Self {
        TrialSlot {
            session: RwLock::new(None),
            reseg_gate: Semaphore::new(1),
            reseg_generation: AtomicU64::new(0),
        }
    }
}

pub struct AppState {
    ws: Workspace,
    config: ProjectConfig,
    slots: Mutex<HashMap<String, Arc<TrialSlot>>>,
}

impl AppState {
    pub fn new(ws: Workspace, config: ProjectConfig) -> Self {
        AppState {
            ws,
            config,
            slots: Mutex::new(HashMap::new()),
        }
    }

    fn slot(&self, trial_id: &str) -> Arc<TrialSlot> {
        self.slots
            .lock()
            .expect("slot map poisoned")
            .entry(trial_id.to_string())
            .or_insert_with(|| Arc::new(TrialSlot::new()))
            .clone()
    }

    /// The trial's slot with its session opened.
    async fn open(&self, trial_id: &str) -> ApiResult<(TrialRecording, Arc<TrialSlot>)> {
        let trial = self.ws.open_trial(trial_id)?;
        let slot = self.slot(trial_id);
        if slot.session.read().await.is_none() {
            let mut guard = slot.session.write().await;
            if guard.is_none() {
                *guard = Some(ReviewSession::open(&self.ws, &self.config, &trial)?);
            }
        }
        Ok((trial, slot))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial_id: String,
    pub embodiment: Embodiment,
    pub declared_class: ContactClass,
    pub n_frames: usize,
    pub has_segments: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub params: ParamsRecord,
    pub thresholds: Thresholds,
    pub segments: Vec<SegmentView>,
    pub dirty: bool,
    pub last_export_path: Option<PathBuf>,
}

impl From<&SessionState> for SessionView {
    fn from(s: &SessionState) -> Self {
        SessionView {
            session_id: s.session_id.clone(),
            params: ParamsRecord::from(&s.params),
            thresholds: s.thresholds,
            segments: s.views(),
            dirty: s.dirty,
            last_export_path: s.last_export_path.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDetail {
    #[serde(flatten)]
    pub summary: TrialSummary,
    pub duration_s: f64,
    pub audio_start_ns: i64,
    pub session: SessionView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeResponse {
    /// `[time_s, value]` pairs, bucket maxima when downsampled.
    pub points: Vec<[f64; 2]>,
    pub hop_s: f64,
    pub duration_s: f64,
    pub thresholds: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub name: String,
    pub timestamp_ns: i64,
    pub timestamp_s: f64,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportResponse {
    pub path: PathBuf,
    pub document: SegmentDocument,
}

/// Parameter body for resegmentation; omitted fields keep the session's
/// current values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamsPatch {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub delta_min: Option<f64>,
    pub gamma_squeeze: Option<f64>,
    pub percentiles: Option<[f64; 2]>,
    pub min_ambient: Option<f64>,
}

impl ParamsPatch {
    pub fn apply(&self, base: &SegmentationParams) -> SegmentationParams {
        let mut p = *base;
        if let Some(v) = self.alpha {
            p.alpha_offset = v;
        }
        if let Some(v) = self.beta {
            p.beta_factor = v;
        }
        if let Some(v) = self.delta_min {
            p.delta_min_seconds = v;
        }
        if let Some(v) = self.gamma_squeeze {
            p.gamma_squeeze_seconds = v;
        }
        if let Some([a, b]) = self.percentiles {
            p.noise_percentile = a;
            p.signal_percentile = b;
        }
        if let Some(v) = self.min_ambient {
            p.min_ambient_seconds = v;
        }
        p
    }
}

fn summary(ws: &Workspace, t: &TrialRecording) -> TrialSummary {
    TrialSummary {
        trial_id: t.trial_id.clone(),
        embodiment: t.meta.embodiment,
        declared_class: t.meta.declared_class,
        n_frames: t.frames.len(),
        has_segments: ws.segments_path(&t.trial_id).is_file(),
    }
}

async fn list_trials(State(app): State<Arc<AppState>>) -> ApiResult<Json<Vec<TrialSummary>>> {
    let trials = discover_trials(&app.ws.trials_dir())?;
    Ok(Json(trials.iter().map(|t| summary(&app.ws, t)).collect()))
}

async fn get_trial(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<TrialDetail>> {
    let (trial, slot) = app.open(&id).await?;
    let guard = slot.session.read().await;
    let s = guard.as_ref().expect("session opened");
    Ok(Json(TrialDetail {
        summary: summary(&app.ws, &trial),
        duration_s: s.signal().duration_s,
        audio_start_ns: trial.meta.audio_start_ns,
        session: SessionView::from(s.state()),
    }))
}

#[derive(Debug, Deserialize)]
struct EnvelopeQuery {
    points: Option<usize>,
}

async fn get_envelope(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EnvelopeQuery>,
) -> ApiResult<Json<EnvelopeResponse>> {
    let n = q.points.unwrap_or(DEFAULT_ENVELOPE_POINTS);
    if n == 0 || n > MAX_ENVELOPE_POINTS {
        return Err(Error::InvalidParameter {
            field: "points".into(),
            reason: format!("must be in [1, {MAX_ENVELOPE_POINTS}]"),
        }
        .into());
    }
    let (_, slot) = app.open(&id).await?;
    let guard = slot.session.read().await;
    let s = guard.as_ref().expect("session opened");
    let env = &s.signal().envelope;
    Ok(Json(EnvelopeResponse {
        points: env
            .downsample_max(n)
            .into_iter()
            .map(|(t, v)| [t, v])
            .collect(),
        hop_s: env.hop_seconds,
        duration_s: s.signal().duration_s,
        thresholds: s.state().thresholds,
    }))
}

#[derive(Debug, Deserialize)]
struct FrameQuery {
    from: Option<f64>,
    to: Option<f64>,
}

async fn get_frames(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<FrameQuery>,
) -> ApiResult<Json<Vec<FrameRef>>> {
    let trial = app.ws.open_trial(&id)?;
    let from = q.from.unwrap_or(f64::NEG_INFINITY);
    let to = q.to.unwrap_or(f64::INFINITY);
    let frames = trial
        .frames
        .iter()
        .filter_map(|f| {
            let t = trial.frame_time(f);
            let name = f.path.file_name()?.to_string_lossy().into_owned();
            (from <= t && t <= to).then(|| FrameRef {
                url: format!("/trials/{id}/frames/{name}"),
                name,
                timestamp_ns: f.timestamp_ns,
                timestamp_s: t,
            })
        })
        .collect();
    Ok(Json(frames))
}

async fn get_frame_image(
    State(app): State<Arc<AppState>>,
    Path((id, name)): Path<(String, String)>,
) -> ApiResult<Response> {
    let trial = app.ws.open_trial(&id)?;
    let frame = trial
        .frames
        .iter()
        .find(|f| {
            f.path
                .file_name()
                .is_some_and(|n| n.to_string_lossy() == name)
        })
        .ok_or_else(|| Error::NotFound(format!("frame `{name}` of trial `{id}`")))?;
    let bytes = tokio::fs::read(&frame.path)
        .await
        .map_err(|e| Error::from(e).at(&frame.path))?;
    let mime = match frame
        .path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
    {
        Some(e) if e == "png" => "image/png",
        _ => "image/jpeg",
    };
    Ok(([(header::CONTENT_TYPE, mime)], Body::from(bytes)).into_response())
}

async fn post_resegment(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(patch): Json<ParamsPatch>,
) -> ApiResult<Json<SegmentDocument>> {
    let (_, slot) = app.open(&id).await?;
    let generation = slot.reseg_generation.fetch_add(1, Ordering::SeqCst) + 1;
    let _permit = slot.reseg_gate.acquire().await.expect("gate never closed");
    if slot.reseg_generation.load(Ordering::SeqCst) != generation {
        return Err(Error::Conflict("superseded by a newer resegment request".into()).into());
    }
    let (params, signal, declared) = {
        let guard = slot.session.read().await;
        let s = guard.as_ref().expect("session opened");
        (
            patch.apply(&s.state().params),
            s.signal().clone(),
            s.declared_class(),
        )
    };
    params.validate()?;
    let trial_id = id.clone();
    let doc = tokio::task::spawn_blocking(move || resegment(&signal, &trial_id, declared, &params))
        .await
        .map_err(|e| Error::Conflict(format!("resegmentation task failed: {e}")))??;
    let mut guard = slot.session.write().await;
    let s = guard.as_mut().expect("session opened");
    s.resegment(params)?;
    Ok(Json(doc))
}

async fn post_review(
    State(app): State<Arc<AppState>>,
    Path((id, sid)): Path<(String, usize)>,
    Json(action): Json<ReviewAction>,
) -> ApiResult<Json<SegmentView>> {
    let (_, slot) = app.open(&id).await?;
    let mut guard = slot.session.write().await;
    let s = guard.as_mut().expect("session opened");
    Ok(Json(s.review(sid, action)?))
}

async fn post_export(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<ExportResponse>> {
    let (_, slot) = app.open(&id).await?;
    let path = app.ws.segments_path(&id);
    let mut guard = slot.session.write().await;
    let s = guard.as_mut().expect("session opened");
    let document = s.export(&path)?;
    Ok(Json(ExportResponse { path, document }))
}

/// The service router. `ui_dir`, when given, is served as static files for
/// every path not matched by the API.
pub fn router(state: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/trials", get(list_trials))
        .route("/trials/{id}", get(get_trial))
        .route("/trials/{id}/envelope", get(get_envelope))
        .route("/trials/{id}/frames", get(get_frames))
        .route("/trials/{id}/frames/{name}", get(get_frame_image))
        .route("/trials/{id}/resegment", post(post_resegment))
        .route("/trials/{id}/segments/{sid}/review", post(post_review))
        .route("/trials/{id}/export", post(post_export))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Serve until ctrl-c.
pub async fn serve(
    state: Arc<AppState>,
    addr: SocketAddr,
    ui_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!(
        "review service listening on http://{}",
        listener.local_addr()?
    );
    axum::serve(listener, router(state, ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
