//! HTTP facade: an upload computes the spectral stack once, later requests
//! re-integrate it with different bands, strata and gains.
//!
//! Endpoints:
//!
//! * `POST /sessions` with the raw image as body; optional query parameters
//!   `grid`, `t_min`, `t_max`, `steps`. Returns the session id and spectrum.
//! * `GET /sessions/{id}/spectrum`
//! * `POST /sessions/{id}/filter` with `{"t1", "t2", "include_residual"}`;
//!   returns a PNG, band statistics in the `x-band-stats` header.
//! * `POST /sessions/{id}/stratum` with `{"t1", "t2", "fit", "alpha", ...}`;
//!   returns JSON with base64 PNGs and raw `f32` rasters.
//! * `POST /sessions/{id}/manipulate` with `{"t1", "t2", "gain", "mask_png", ...}`;
//!   returns a PNG.
//!
//! Errors are JSON objects `{"error": kind, "detail": message}`.

mod error;
mod session;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderValue};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use tvstrata::config::{GridKind, RunConfig};
use tvstrata::imagecore::io::{decode_image_bytes, encode_f32_raw};
use tvstrata::pipeline::{self, FitManifest};
use tvstrata::spectv::spectrum;
use tvstrata::surface::FitKind;

pub use error::ApiError;
pub use session::{Session, SessionStore};

pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 16 * 1024 * 1024;
pub const DEFAULT_TTL: Duration = Duration::from_secs(30 * 60);

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub max_upload_bytes: usize,
    pub ttl: Duration,
    /// Defaults for every session; requests override parts of it.
    pub run: RunConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES, ttl: DEFAULT_TTL, run: RunConfig::default() }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub store: SessionStore,
    pub run: Arc<RunConfig>,
}

pub fn router(config: &ServiceConfig) -> (Router, SessionStore) {
    let store = SessionStore::new(config.ttl);
    let state = AppState { store: store.clone(), run: Arc::new(config.run.clone()) };
    let app = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/spectrum", get(get_spectrum))
        .route("/sessions/{id}/filter", post(band_filter))
        .route("/sessions/{id}/stratum", post(stratum))
        .route("/sessions/{id}/manipulate", post(manipulate))
        .layer(DefaultBodyLimit::max(config.max_upload_bytes))
        .with_state(state);
    (app, store)
}

/// Serve until the process is stopped, purging idle sessions periodically.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let (app, store) = router(&config);
    let period = (config.ttl / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            store.purge_expired(Instant::now());
        }
    });
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await
}

#[derive(Debug, Default, Deserialize)]
pub struct GridQuery {
    pub grid: Option<GridKind>,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub steps: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SpectrumPoint {
    pub t: f64,
    #[serde(rename = "S")]
    pub s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub capped_steps: usize,
    pub spectrum: Vec<SpectrumPoint>,
}

fn session_info(s: &Session) -> SessionInfo {
    let sp = spectrum(&s.stack);
    let (width, height) = s.stack.dims();
    SessionInfo {
        id: s.id.clone(),
        width,
        height,
        capped_steps: s.capped_steps,
        spectrum: sp.times.iter().zip(&sp.values).map(|(&t, &s)| SpectrumPoint { t, s }).collect(),
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> tvstrata::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(e.to_string()))?.map_err(ApiError::from)
}

async fn create_session(
    State(app): State<AppState>,
    query: Result<Query<GridQuery>, QueryRejection>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<SessionInfo>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::new(e.status(), "bad_request", e.body_text()))?;
    let body = body.map_err(|e| ApiError::new(e.status(), "body", e.body_text()))?;
    let mut config = (*app.run).clone();
    if let Some(g) = q.grid {
        config.grid.kind = g;
    }
    if let Some(v) = q.t_min {
        config.grid.t_min = v;
    }
    if let Some(v) = q.t_max {
        config.grid.t_max = v;
    }
    if let Some(v) = q.steps {
        config.grid.steps = v;
    }
    config.validate()?;
    let image = decode_image_bytes(&body).map_err(|e| ApiError::unprocessable("image", e.to_string()))?;
    let session = blocking(move || {
        let (stack, capped) = pipeline::run_transform(image.luma(), &config)?;
        Ok(Session::new(image, stack, config, capped))
    })
    .await?;
    let session = app.store.insert(session);
    Ok(Json(session_info(&session)))
}

fn lookup(app: &AppState, id: &str) -> Result<Arc<Session>, ApiError> {
    app.store.get(id).ok_or_else(|| ApiError::not_found(format!("no session {id}")))
}

async fn get_spectrum(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionInfo>, ApiError> {
    let s = lookup(&app, &id)?;
    Ok(Json(session_info(&s)))
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v).map_err(|e| ApiError::new(e.status(), "bad_request", e.body_text()))
}

fn png_response(png: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static("image/png"))], png).into_response()
}

#[derive(Debug, Deserialize)]
pub struct FilterRequest {
    pub t1: f64,
    pub t2: f64,
    #[serde(default)]
    pub include_residual: bool,
}

async fn band_filter(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<FilterRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = json_body(body)?;
    let s = lookup(&app, &id)?;
    let out = blocking(move || pipeline::band_filter(&s.stack, req.t1, req.t2, req.include_residual)).await?;
    let stats = serde_json::to_string(&out.stats).map_err(|e| ApiError::internal(e.to_string()))?;
    let mut resp = png_response(out.png);
    resp.headers_mut().insert(
        "x-band-stats",
        HeaderValue::from_str(&stats).map_err(|e| ApiError::internal(e.to_string()))?,
    );
    Ok(resp)
}

/// Surface parameters; absent fields keep the session's configuration.
#[derive(Debug, Default, Deserialize)]
pub struct StratumParams {
    pub t1: f64,
    pub t2: f64,
    pub fit: Option<FitKind>,
    pub alpha: Option<f64>,
    pub pct_lo: Option<f64>,
    pub pct_hi: Option<f64>,
    pub margin: Option<usize>,
    pub bandwidth: Option<f64>,
}

impl StratumParams {
    fn apply(&self, base: &RunConfig) -> Result<RunConfig, ApiError> {
        let mut c = base.clone();
        c.band_lo = Some(self.t1);
        c.band_hi = Some(self.t2);
        let s = &mut c.surface;
        s.fit = self.fit.unwrap_or(s.fit);
        s.alpha = self.alpha.unwrap_or(s.alpha);
        s.pct_lo = self.pct_lo.unwrap_or(s.pct_lo);
        s.pct_hi = self.pct_hi.unwrap_or(s.pct_hi);
        s.margin = self.margin.unwrap_or(s.margin);
        if self.bandwidth.is_some() {
            s.bandwidth = self.bandwidth;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StratumResponse {
    pub manifest: serde_json::Value,
    /// Base64 PNGs.
    pub texture_png: String,
    pub residual_png: String,
    /// Base64 raw little-endian `f32` rasters, `width·height` values each.
    pub surface_f32: String,
    pub stratum_lo_f32: String,
    pub stratum_hi_f32: String,
    pub time_map_f32: String,
}

async fn stratum(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<StratumParams>, JsonRejection>,
) -> Result<Json<StratumResponse>, ApiError> {
    let req = json_body(body)?;
    let s = lookup(&app, &id)?;
    let config = req.apply(&s.config)?;
    let out = blocking(move || pipeline::decompose_image(&s.image, &s.stack, &config)).await?;
    let d = &out.decomposition.diagnostics;
    let manifest: &FitManifest = &out.manifest;
    Ok(Json(StratumResponse {
        manifest: serde_json::to_value(manifest).map_err(|e| ApiError::internal(e.to_string()))?,
        texture_png: B64.encode(&out.texture_png),
        residual_png: B64.encode(&out.residual_png),
        surface_f32: B64.encode(encode_f32_raw(&d.surface.times)),
        stratum_lo_f32: B64.encode(encode_f32_raw(&d.stratum.lo)),
        stratum_hi_f32: B64.encode(encode_f32_raw(&d.stratum.hi)),
        time_map_f32: B64.encode(encode_f32_raw(&d.time_map.to_field(f64::NAN))),
    }))
}

#[derive(Debug, Deserialize)]
pub struct ManipulateRequest {
    #[serde(flatten)]
    pub stratum: StratumParams,
    pub gain: f64,
    pub clamp: Option<bool>,
    /// Base64 PNG; pixels at or above half intensity are inside the mask.
    pub mask_png: Option<String>,
}

async fn manipulate(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ManipulateRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let req = json_body(body)?;
    let s = lookup(&app, &id)?;
    let mut config = req.stratum.apply(&s.config)?;
    config.manipulate.gain = req.gain;
    if let Some(c) = req.clamp {
        config.manipulate.clamp = c;
    }
    config.validate()?;
    let mask = match &req.mask_png {
        Some(text) => {
            let bytes = B64.decode(text).map_err(|e| ApiError::unprocessable("mask", e.to_string()))?;
            let img = decode_image_bytes(&bytes).map_err(|e| ApiError::unprocessable("mask", e.to_string()))?;
            Some(img.luma().clone())
        }
        None => None,
    };
    let (_, png) = blocking(move || pipeline::manipulate_image(&s.image, &s.stack, &config, mask)).await?;
    Ok(png_response(png))
}
