//! HTTP/JSON session API over an [`Advisor`].
//!
//! Sessions live in memory. Every recommendation runs on the blocking pool
//! while holding its session's lock, so concurrent calls on one session are
//! serialized and calls on different sessions are not.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};
use unic_core::advisor::{fit_viewport, Advisor, Operation, Proposer, Session, TrajectoryStep};
use unic_core::{BBox, Orientation};

/// Upload limit for world images.
pub const MAX_UPLOAD_BYTES: usize = 32 << 20;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("unknown session `{0}`")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl From<unic_core::Error> for ApiError {
    fn from(e: unic_core::Error) -> Self {
        use unic_core::Error as E;
        match e {
            E::UnknownSession(id) => ApiError::NotFound(id),
            E::MaxSteps(_) => ApiError::Conflict(e.to_string()),
            E::DegenerateBox { .. } | E::InvalidArgument(_) | E::Image(_) => ApiError::BadRequest(e.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

impl From<MultipartRejection> for ApiError {
    fn from(e: MultipartRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

struct Entry {
    session: Session,
    world: Arc<RgbImage>,
}

pub struct AppState<P> {
    advisor: Arc<Advisor<P>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Entry>>>>,
}

impl<P: Proposer + 'static> AppState<P> {
    pub fn new(advisor: Advisor<P>) -> Arc<Self> {
        Arc::new(AppState { advisor: Arc::new(advisor), sessions: RwLock::new(HashMap::new()) })
    }

    async fn entry(&self, id: &str) -> Result<Arc<Mutex<Entry>>, ApiError> {
        self.sessions.read().await.get(id).cloned().ok_or_else(|| ApiError::NotFound(id.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub world_w: u32,
    pub world_h: u32,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecommendRequest {
    /// World-normalized viewport; the largest centered camera box by default.
    pub viewport: Option<BBox>,
    /// Defaults to the orientation of the viewport's pixel extent.
    pub orientation: Option<Orientation>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub operations: Vec<Operation>,
    pub view: BBox,
    pub crop: BBox,
    pub confidence: f64,
    pub converged: bool,
    pub step_index: usize,
    pub next_viewport: BBox,
}

impl From<TrajectoryStep> for RecommendResponse {
    fn from(s: TrajectoryStep) -> Self {
        let r = s.recommendation;
        RecommendResponse {
            operations: r.operations,
            view: r.view,
            crop: r.crop,
            confidence: r.confidence,
            converged: r.converged,
            step_index: s.index,
            next_viewport: s.next_viewport,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub world_w: u32,
    pub world_h: u32,
    pub trajectory: Vec<TrajectoryStep>,
}

pub fn router<P: Proposer + 'static>(state: Arc<AppState<P>>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create::<P>))
        .route("/v1/sessions/{id}", get(fetch::<P>).delete(remove::<P>))
        .route("/v1/sessions/{id}/recommend", post(recommend::<P>))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

async fn create<P: Proposer + 'static>(
    State(state): State<Arc<AppState<P>>>,
    form: Result<Multipart, MultipartRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let mut form = form?;
    let mut bytes = None;
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::BadRequest(e.to_string()))? {
        if field.name() == Some("image") {
            bytes = Some(field.bytes().await.map_err(|e| ApiError::BadRequest(e.to_string()))?);
        }
    }
    let bytes = bytes.ok_or_else(|| ApiError::BadRequest("multipart field `image` is required".into()))?;
    let world = tokio::task::spawn_blocking(move || image::load_from_memory(&bytes).map(|i| i.to_rgb8()))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
        .map_err(|e| ApiError::BadRequest(format!("unreadable image: {e}")))?;
    let id = uuid::Uuid::new_v4().to_string();
    let session = Session::new(id.clone(), &world);
    let created = Created { session_id: id.clone(), world_w: session.world_w, world_h: session.world_h };
    let entry = Entry { session, world: Arc::new(world) };
    state.sessions.write().await.insert(id, Arc::new(Mutex::new(entry)));
    Ok((StatusCode::CREATED, Json(created)))
}

async fn recommend<P: Proposer + 'static>(
    State(state): State<Arc<AppState<P>>>,
    Path(id): Path<String>,
    req: Result<Json<RecommendRequest>, JsonRejection>,
) -> Result<Json<RecommendResponse>, ApiError> {
    let Json(req) = req?;
    let entry = state.entry(&id).await?;
    let mut guard = entry.lock_owned().await;
    let (ww, wh) = (guard.session.world_w, guard.session.world_h);
    let viewport = match req.viewport {
        Some(v) => v,
        None => fit_viewport(ww, wh, req.orientation.unwrap_or(Orientation::of_extent(ww as f64, wh as f64)))?,
    };
    viewport.validate()?;
    let orientation = req
        .orientation
        .unwrap_or_else(|| Orientation::of_extent(viewport.w * ww as f64, viewport.h * wh as f64));
    let advisor = state.advisor.clone();
    let step = tokio::task::spawn_blocking(move || {
        let world = guard.world.clone();
        advisor.step(&mut guard.session, &world, &viewport, orientation)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(step.into()))
}

async fn fetch<P: Proposer + 'static>(
    State(state): State<Arc<AppState<P>>>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let entry = state.entry(&id).await?;
    let e = entry.lock().await;
    Ok(Json(SessionView {
        session_id: e.session.id.clone(),
        world_w: e.session.world_w,
        world_h: e.session.world_h,
        trajectory: e.session.trajectory.clone(),
    }))
}

async fn remove<P: Proposer + 'static>(
    State(state): State<Arc<AppState<P>>>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    match state.sessions.write().await.remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::NotFound(id)),
    }
}
