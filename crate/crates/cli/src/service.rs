//! HTTP API over one loaded generator.

use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::{rejection::JsonRejection, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use motionbank_core::experiment::{top_directions, DirectionSummary, GenerateRequest, ALPHA_BASE_SEED};
use motionbank_core::interpret::colorwheel::magnitude_quantile;
use motionbank_core::interpret::{alpha_stats, estimate_flow, quantize_flow, BlockMatching, ColorwheelConfig};
use motionbank_core::latent::TrajectorySpec;
use motionbank_core::{ExperimentConfig, Generator, VideoTensor};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::media::{encode_gif, png_base64, video_from_base64};

pub const BIND_ENV: &str = "MOTIONBANK_BIND";

/// Read-only state shared by every request.
pub struct Model {
    pub config: ExperimentConfig,
    pub generator: Generator<f32>,
    pub top: Vec<DirectionSummary>,
}

impl Model {
    /// Direction ranking uses the same evaluation set as `alpha-stats`.
    pub fn new(config: ExperimentConfig, generator: Generator<f32>) -> Result<Self> {
        let g = generator.config();
        let stats = alpha_stats(&generator, config.eval.num_samples, ALPHA_BASE_SEED, g.video_length)
            .context("computing direction statistics")?;
        let top = top_directions(&stats, config.eval.top_k.min(g.n));
        Ok(Model {
            config,
            generator,
            top,
        })
    }
}

struct AppState {
    model: Model,
    permits: Semaphore,
}

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<motionbank_core::Error> for ApiError {
    fn from(e: motionbank_core::Error) -> Self {
        use motionbank_core::Error as E;
        match e {
            E::InvalidArgument(_) | E::Dimension { .. } | E::NonFinite(_) | E::Config(_) => ApiError::bad(e.to_string()),
            other => ApiError(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad(r.body_text())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelInfo {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T_trained")]
    pub t_trained: usize,
    pub resolution: usize,
    pub top_directions: Vec<DirectionSummary>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Frames,
    Gif,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateBody {
    pub appearance_seed: u64,
    pub motion_seed: u64,
    pub length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_dims: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<Vec<TrajectorySpec>>,
    #[serde(default)]
    pub format: Format,
}

impl GenerateBody {
    pub fn request(&self) -> GenerateRequest {
        GenerateRequest {
            appearance_seed: self.appearance_seed,
            motion_seed: self.motion_seed,
            length: self.length,
            active_dims: self.active_dims.clone(),
            trajectories: self.trajectories.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub length: usize,
    pub format: Format,
    /// Base64 PNG per frame (`frames` format).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<String>>,
    /// Base64 animated GIF (`gif` format).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gif: Option<String>,
    /// Realized magnitudes, one row per transition.
    pub alphas: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizeBody {
    /// Base64 PNG frames of an uploaded video.
    #[serde(default)]
    pub frames: Option<Vec<String>>,
    /// Or a request to render first.
    #[serde(default)]
    pub generate: Option<GenerateRequest>,
    #[serde(default)]
    pub h_norm: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QuantizeResponse {
    pub phi: Vec<f64>,
    pub total: f64,
    pub counts: Vec<usize>,
    pub h_norm: f64,
    pub bins: Vec<[f64; 2]>,
}

pub fn router(model: Model) -> Router {
    let permits = Semaphore::new(model.config.serve.max_concurrent.max(1));
    let state = Arc::new(AppState { model, permits });
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/model", get(model_info))
        .route("/generate", post(generate))
        .route("/quantize", post(quantize))
        .with_state(state)
}

async fn model_info(State(s): State<Shared>) -> Json<ModelInfo> {
    let g = s.model.generator.config();
    Json(ModelInfo {
        n: g.n,
        t_trained: g.video_length,
        resolution: g.resolution,
        top_directions: s.model.top.clone(),
    })
}

fn check_length(s: &AppState, length: usize) -> Result<(), ApiError> {
    let max = s.model.config.serve.max_length;
    if length < 1 || length > max {
        return Err(ApiError::bad(format!("length must lie in [1, {max}], got {length}")));
    }
    Ok(())
}

/// Runs CPU-bound work off the async workers, bounded by the permit pool.
async fn blocking<R: Send + 'static>(
    s: &Shared,
    f: impl FnOnce(&AppState) -> Result<R, ApiError> + Send + 'static,
) -> Result<R, ApiError> {
    let _permit = s
        .permits
        .acquire()
        .await
        .map_err(|_| ApiError(StatusCode::SERVICE_UNAVAILABLE, "shutting down".into()))?;
    let st = s.clone();
    tokio::task::spawn_blocking(move || f(&st))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn generate(State(s): State<Shared>, body: Result<Json<GenerateBody>, JsonRejection>) -> Result<Json<GenerateResponse>, ApiError> {
    let Json(body) = body?;
    check_length(&s, body.length)?;
    let resp = blocking(&s, move |st| {
        let out = body.request().run(&st.model.generator)?;
        let (frames, gif) = match body.format {
            Format::Frames => (Some(png_base64(&out.video)), None),
            Format::Gif => (None, Some(STANDARD.encode(encode_gif(&out.video, 80)))),
        };
        Ok(GenerateResponse {
            length: out.video.frames,
            format: body.format,
            frames,
            gif,
            alphas: out.alphas.to_rows(),
        })
    })
    .await?;
    Ok(Json(resp))
}

/// φ/Φ of one video. Without `h_norm` in the request or the config, the
/// 0.99 magnitude quantile of this video's flow is used.
pub fn quantize_video(config: &ExperimentConfig, video: &VideoTensor, h_norm: Option<f64>, epsilon: Option<f64>) -> Result<QuantizeResponse, ApiError> {
    let flow = estimate_flow(video, &BlockMatching::default())?;
    let eps = epsilon.unwrap_or(config.eval.epsilon);
    let h = h_norm
        .or(config.eval.h_norm)
        .or_else(|| magnitude_quantile([&flow], eps, 0.99))
        .unwrap_or(1.0);
    let wheel = ColorwheelConfig {
        epsilon: eps,
        ..ColorwheelConfig::default()
    }
    .with_h_norm(h);
    let q = quantize_flow(&flow, &wheel)?;
    Ok(QuantizeResponse {
        phi: q.phi,
        total: q.total,
        counts: q.counts,
        h_norm: h,
        bins: wheel.bins.iter().map(|b| [b.start, b.end]).collect(),
    })
}

async fn quantize(State(s): State<Shared>, body: Result<Json<QuantizeBody>, JsonRejection>) -> Result<Json<QuantizeResponse>, ApiError> {
    let Json(body) = body?;
    if let Some(req) = &body.generate {
        check_length(&s, req.length)?;
    }
    let resp = blocking(&s, move |st| {
        let video = match (&body.frames, &body.generate) {
            (Some(frames), None) => {
                video_from_base64(frames).map_err(|e| ApiError::bad(format!("{e:#}")))?
            }
            (None, Some(req)) => req.run(&st.model.generator)?.video,
            _ => return Err(ApiError::bad("give exactly one of `frames` or `generate`")),
        };
        if video.frames < 2 {
            return Err(ApiError::bad("flow needs at least 2 frames"));
        }
        quantize_video(&st.model.config, &video, body.h_norm, body.epsilon)
    })
    .await?;
    Ok(Json(resp))
}

/// Flag, then environment, then config.
pub fn resolve_bind(flag: Option<&str>, config: &ExperimentConfig) -> String {
    flag.map(str::to_string)
        .or_else(|| std::env::var(BIND_ENV).ok().filter(|v| !v.is_empty()))
        .unwrap_or_else(|| config.serve.bind.clone())
}

pub async fn serve(model: Model, bind: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .with_context(|| format!("binding {bind}"))?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(model))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .context("serving")
}
