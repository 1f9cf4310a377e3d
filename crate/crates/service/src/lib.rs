//! HTTP front end over the codec: upload an image, get its base-layer
//! reconstruction, then request enhancement for regions of interest.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/sessions` | PPM or PNG bytes | session JSON with the base image |
//! | GET | `/sessions/{id}` | | stats JSON |
//! | POST | `/sessions/{id}/enhance` | `{"rois": [[x, y, w, h], ...]}` | enhance JSON with the current image |
//! | GET | `/sessions/{id}/image` | `mode=base\|current\|full` | PNG |
//! | GET | `/sessions/{id}/spectrum` | `mode=base\|current\|full` | PNG |
//!
//! Images inside JSON are base64 PNG.

pub mod session;

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use flic_core::codec::spectrum::spectrum;
use flic_core::codec::RgbImage;
use flic_core::model::FlicModel;
use flic_core::roi::ImageRect;
use flic_core::FlicError;
use serde::{Deserialize, Serialize};

pub use session::{Session, SessionStore, Stats, View};

pub const DEFAULT_CAPACITY: usize = 32;
const MAX_UPLOAD: usize = 64 << 20;

#[derive(Clone)]
pub struct AppState {
    pub model: Arc<FlicModel<f32>>,
    pub sessions: Arc<Mutex<SessionStore>>,
}

impl AppState {
    pub fn new(model: FlicModel<f32>, capacity: usize) -> Self {
        AppState {
            model: Arc::new(model),
            sessions: Arc::new(Mutex::new(SessionStore::new(capacity))),
        }
    }
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Internal(String),
}

impl From<FlicError> for ApiError {
    fn from(e: FlicError) -> Self {
        match e {
            FlicError::Io(_) => ApiError::Internal(e.to_string()),
            _ => ApiError::BadRequest(e.to_string()),
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, error) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(ErrorBody { error })).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionResponse {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub bpp_base: f64,
    pub bpp_enh_total: f64,
    pub bpp_enh_sent: f64,
    pub rois: Vec<[usize; 4]>,
    /// Base-layer reconstruction, base64 PNG.
    pub image: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EnhanceRequest {
    pub rois: Vec<[usize; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EnhanceResponse {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub bpp_base: f64,
    pub bpp_enh_sent: f64,
    pub bpp_enh_sent_delta: f64,
    pub new_tiles: usize,
    /// Every ROI received so far.
    pub rois: Vec<[usize; 4]>,
    /// Current reconstruction, base64 PNG.
    pub image: String,
}

#[derive(Debug, Deserialize)]
struct ModeQuery {
    mode: Option<String>,
}

fn png_base64(img: &RgbImage) -> ApiResult<String> {
    Ok(base64::engine::general_purpose::STANDARD.encode(img.to_png()?))
}

fn png_response(img: &RgbImage) -> ApiResult<Response> {
    Ok(([(header::CONTENT_TYPE, "image/png")], img.to_png()?).into_response())
}

fn lookup(state: &AppState, id: &str) -> ApiResult<session::SharedSession> {
    state
        .sessions
        .lock()
        .expect("session store lock")
        .get(id)
        .ok_or_else(|| ApiError::NotFound(format!("no session {id:?}")))
}

/// Runs codec work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<Json<SessionResponse>> {
    blocking(move || {
        let image = RgbImage::decode(&body)?;
        let id = state.sessions.lock().expect("session store lock").new_id();
        let s = Session::create(id, image, &state.model)?;
        let response = SessionResponse {
            id: s.id.clone(),
            width: s.width(),
            height: s.height(),
            bpp_base: s.report.bpp_base,
            bpp_enh_total: s.report.bpp_enh,
            bpp_enh_sent: 0.0,
            rois: Vec::new(),
            image: png_base64(&s.base)?,
        };
        log::info!("session {} created, {}x{}", s.id, s.width(), s.height());
        state.sessions.lock().expect("session store lock").insert(s);
        Ok(Json(response))
    })
    .await
}

async fn get_stats(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Stats>> {
    let shared = lookup(&state, &id)?;
    blocking(move || {
        let s = shared.lock().expect("session lock");
        Ok(Json(s.stats(&state.model)?))
    })
    .await
}

async fn enhance(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<EnhanceRequest>,
) -> ApiResult<Json<EnhanceResponse>> {
    let shared = lookup(&state, &id)?;
    blocking(move || {
        let rects: Vec<ImageRect> = req.rois.iter().map(|r| ImageRect::new(r[0], r[1], r[2], r[3])).collect();
        let mut s = shared.lock().expect("session lock");
        let e = s.enhance(&rects, &state.model)?;
        Ok(Json(EnhanceResponse {
            id: s.id.clone(),
            width: s.width(),
            height: s.height(),
            bpp_base: s.report.bpp_base,
            bpp_enh_sent: s.bpp_enh_sent(),
            bpp_enh_sent_delta: s.delta_bpp(e.delta_bytes),
            new_tiles: e.new_tiles,
            rois: s.rois().iter().map(|r| [r.x, r.y, r.w, r.h]).collect(),
            image: png_base64(&s.current)?,
        }))
    })
    .await
}

fn parse_view(q: &ModeQuery) -> ApiResult<View> {
    Ok(q.mode.as_deref().unwrap_or("current").parse()?)
}

async fn get_image(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ModeQuery>,
) -> ApiResult<Response> {
    let view = parse_view(&q)?;
    let shared = lookup(&state, &id)?;
    blocking(move || {
        let s = shared.lock().expect("session lock");
        png_response(&s.view(view, &state.model)?)
    })
    .await
}

async fn get_spectrum(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ModeQuery>,
) -> ApiResult<Response> {
    let view = parse_view(&q)?;
    let shared = lookup(&state, &id)?;
    blocking(move || {
        let s = shared.lock().expect("session lock");
        png_response(&spectrum(&s.view(view, &state.model)?)?.to_image()?)
    })
    .await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_stats))
        .route("/sessions/{id}/enhance", post(enhance))
        .route("/sessions/{id}/image", get(get_image))
        .route("/sessions/{id}/spectrum", get(get_spectrum))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
