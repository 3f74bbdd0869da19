//! Stateless JSON API over the segmentation engine.
//!
//! ```text
//! GET  /api/health   {status, embedding_dim, providers}
//! POST /api/segment  multipart: `image` file + `request` JSON part
//!                    {prompts, scales?, global_scale0?, ablation?, logit_scale?}
//!                    ?probabilities=true adds the CDIY probability tensor
//! GET  /             static UI bundle, when configured
//! ```

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Query, State};
use axum::http::{header, Method, StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use clap::Args;
use ovseg_core::export::{decode_image, LabelRle, MaskRle};
use ovseg_core::fusion::{Ablation, Fingerprint};
use ovseg_core::partition::ScaleConfig;
use ovseg_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::{EngineArgs, FileConfig, Settings, DEFAULT_PORT};
use crate::engine::{probabilities_tensor, render, segment_image, Engine};
use crate::providers::ProviderNames;
use crate::Failure;

pub const BODY_LIMIT: usize = 64 * 1024 * 1024;
/// Saliency key used when an upload carries no file name.
pub const UPLOAD_KEY: &str = "upload";
const REQUEST_PARTS: [&str; 3] = ["request", "params", "config"];

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long, short)]
    pub port: Option<u16>,
    /// Directory with the UI bundle served at /
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

pub struct AppState {
    pub engine: Engine,
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    pub prompts: Vec<String>,
    #[serde(default)]
    pub scales: Option<Vec<usize>>,
    #[serde(default)]
    pub global_scale0: Option<bool>,
    #[serde(default)]
    pub ablation: Option<String>,
    #[serde(default)]
    pub logit_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMask {
    pub name: String,
    pub mask_rle: MaskRle,
    pub pixel_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityPayload {
    /// `[height, width, classes]`
    pub dims: Vec<usize>,
    pub cdiy_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub classes: Vec<String>,
    pub labels_rle: LabelRle,
    pub per_class: Vec<ClassMask>,
    pub overlay_png_b64: String,
    pub config_fingerprint: String,
    pub config: Fingerprint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<ProbabilityPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub embedding_dim: usize,
    pub providers: ProviderNames,
}

#[derive(Debug, Default, Deserialize)]
pub struct SegmentQuery {
    #[serde(default)]
    pub probabilities: bool,
}

/// An error response: `{"error": kind, "detail": message}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub detail: String,
}

impl ApiError {
    fn invalid(detail: impl Into<String>) -> Self {
        Self {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            detail: detail.into(),
        }
    }

    fn from_engine(e: Error) -> Self {
        let status = match root_cause(&e) {
            Error::Validation(_) | Error::Config(_) | Error::Shape(_) | Error::Codec { .. } | Error::Miss(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            detail: e.to_string(),
        }
    }
}

fn root_cause(e: &Error) -> &Error {
    match e {
        Error::Stage { source, .. } => root_cause(source),
        other => other,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let kind = if self.status.is_client_error() {
            "validation"
        } else {
            "internal"
        };
        let body = serde_json::json!({ "error": kind, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/segment", post(segment))
        .fallback(static_asset)
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        embedding_dim: state.engine.providers.image.embedding_dim(),
        providers: state.engine.providers.names(),
    })
}

struct Upload {
    image: Vec<u8>,
    key: String,
    request: SegmentRequest,
}

async fn read_upload(mut multipart: Multipart) -> Result<Upload, ApiError> {
    let mut image = None;
    let mut key = UPLOAD_KEY.to_string();
    let mut request = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::invalid(format!("multipart: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let is_json = field.content_type().is_some_and(|c| c.starts_with("application/json"));
        if name == "image" || (field.file_name().is_some() && !is_json) {
            if let Some(stem) = field.file_name().and_then(|f| Path::new(f).file_stem()) {
                key = stem.to_string_lossy().into_owned();
            }
            let bytes = field
                .bytes()
                .await
                .map_err(|e| ApiError::invalid(format!("image part: {e}")))?;
            image = Some(bytes.to_vec());
        } else if is_json || REQUEST_PARTS.contains(&name.as_str()) {
            let bytes = field
                .bytes()
                .await
                .map_err(|e| ApiError::invalid(format!("request part: {e}")))?;
            let parsed: SegmentRequest =
                serde_json::from_slice(&bytes).map_err(|e| ApiError::invalid(format!("request part: {e}")))?;
            request = Some(parsed);
        }
    }
    Ok(Upload {
        image: image.ok_or_else(|| ApiError::invalid("missing image part"))?,
        key,
        request: request.ok_or_else(|| ApiError::invalid("missing JSON request part"))?,
    })
}

async fn segment(
    State(state): State<Arc<AppState>>,
    Query(query): Query<SegmentQuery>,
    multipart: Multipart,
) -> Result<Json<SegmentResponse>, ApiError> {
    let upload = read_upload(multipart).await?;
    let response = tokio::task::spawn_blocking(move || compute(&state.engine, &upload, query.probabilities))
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            detail: e.to_string(),
        })??;
    Ok(Json(response))
}

fn compute(engine: &Engine, upload: &Upload, with_probabilities: bool) -> Result<SegmentResponse, ApiError> {
    let req = &upload.request;
    let prompts: Vec<&str> = req.prompts.iter().map(|p| p.trim()).filter(|p| !p.is_empty()).collect();
    if prompts.is_empty() {
        return Err(ApiError::invalid("prompts must contain at least one non-empty string"));
    }
    let vocab = engine
        .vocabulary(&prompts)
        .map_err(|f| ApiError::invalid(f.to_string()))?;
    let ablation = match &req.ablation {
        Some(a) => a.parse::<Ablation>().map_err(|e| ApiError::invalid(e.to_string()))?,
        None => Ablation::Full,
    };
    let mut cfg = engine.config.clone();
    if req.scales.is_some() || req.global_scale0.is_some() {
        let sizes = req.scales.clone().unwrap_or_else(|| cfg.scales.patch_sizes().to_vec());
        let global = req.global_scale0.unwrap_or(cfg.scales.global_scale0());
        cfg.scales = ScaleConfig::new(sizes, global).map_err(|e| ApiError::invalid(e.to_string()))?;
    }
    if let Some(l) = req.logit_scale {
        cfg.logit_scale = l;
    }
    cfg.validate().map_err(|e| ApiError::invalid(e.to_string()))?;

    let image = decode_image(&upload.image).map_err(|e| ApiError::invalid(e.to_string()))?;
    let seg = engine.segmenter(vocab, Some(cfg)).map_err(ApiError::from_engine)?;
    let out = segment_image(&seg, &image, &upload.key, ablation).map_err(ApiError::from_engine)?;
    let art = render(&out, &engine.palette).map_err(ApiError::from_engine)?;

    let labels = &out.result.labels;
    let (h, w) = (labels.height(), labels.width());
    let coverage = out.result.coverage();
    let per_class = seg
        .vocabulary()
        .names()
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let mask: Vec<bool> = labels.data().iter().map(|&l| usize::from(l) == k).collect();
            Ok(ClassMask {
                name: name.clone(),
                mask_rle: MaskRle::encode(h, w, &mask)?,
                pixel_fraction: coverage[k],
            })
        })
        .collect::<ovseg_core::Result<Vec<_>>>()
        .map_err(ApiError::from_engine)?;
    let probabilities = if with_probabilities {
        let t = probabilities_tensor(&out.result).map_err(ApiError::from_engine)?;
        Some(ProbabilityPayload {
            dims: t.dims().to_vec(),
            cdiy_b64: BASE64.encode(&art.probabilities_cdiy),
        })
    } else {
        None
    };
    Ok(SegmentResponse {
        classes: seg.vocabulary().names().to_vec(),
        labels_rle: LabelRle::encode(labels),
        per_class,
        overlay_png_b64: BASE64.encode(&art.overlay_png),
        config_fingerprint: art.config_fingerprint,
        config: out.fingerprint,
        probabilities,
    })
}

const PLACEHOLDER_PAGE: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>ovseg</title></head>
<body>
<h1>ovseg</h1>
<p>No UI bundle is configured. Start the service with <code>--static-dir</code> to serve one.</p>
<p>API: <code>GET /api/health</code>, <code>POST /api/segment</code>.</p>
</body></html>
";

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or_default() {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript",
        "css" => "text/css",
        "json" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        "wasm" => "application/wasm",
        _ => "application/octet-stream",
    }
}

async fn static_asset(State(state): State<Arc<AppState>>, method: Method, uri: Uri) -> Response {
    let not_found = || {
        (
            StatusCode::NOT_FOUND,
            Json(serde_json::json!({"error": "not_found", "detail": uri.path()})),
        )
    };
    if method != Method::GET || uri.path().starts_with("/api/") {
        return not_found().into_response();
    }
    let Some(root) = &state.static_dir else {
        return if uri.path() == "/" {
            Html(PLACEHOLDER_PAGE).into_response()
        } else {
            not_found().into_response()
        };
    };
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = Path::new(rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return not_found().into_response();
    }
    match tokio::fs::read(root.join(rel)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(rel))], bytes).into_response(),
        Err(_) => not_found().into_response(),
    }
}

async fn shutdown_signal() {
    if tokio::signal::ctrl_c().await.is_err() {
        std::future::pending::<()>().await;
    }
    log::info!("shutting down");
}

pub fn run(args: ServeArgs, file: &FileConfig) -> Result<(), Failure> {
    let settings = Settings::resolve(&args.engine, file);
    let host = args
        .host
        .clone()
        .or_else(|| file.host.clone())
        .unwrap_or_else(|| "127.0.0.1".into());
    let port = args.port.or(file.port).unwrap_or(DEFAULT_PORT);
    let static_dir = args.static_dir.clone().or_else(|| file.static_dir.clone());
    if let Some(d) = &static_dir {
        if !d.is_dir() {
            return Err(Failure::Usage(format!("static directory {} not found", d.display())));
        }
    }
    let engine = Engine::new(settings)?;
    let state = Arc::new(AppState { engine, static_dir });
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Failure::runtime)?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port))
            .await
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AddrInUse => Failure::PortInUse(format!("{host}:{port} is already in use")),
                _ => Failure::Runtime(format!("cannot listen on {host}:{port}: {e}")),
            })?;
        let addr = listener.local_addr().map_err(Failure::runtime)?;
        eprintln!("listening on http://{addr}");
        axum::serve(listener, router(state))
            .with_graceful_shutdown(shutdown_signal())
            .await
            .map_err(Failure::runtime)
    })
}
