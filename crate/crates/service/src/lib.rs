//! HTTP inference service for layout completion and generation.
//!
//! Endpoints:
//! - `POST /api/complete`: fill in a layout around locked elements
//! - `POST /api/generate`: unconditional or label/size conditioned generation
//! - `GET /api/meta`: labels, capacity and step count of the loaded model
//!
//! Generation runs on the blocking pool against an immutable model snapshot.
//! [`AppState::swap`] replaces the snapshot between requests.

mod model;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use diffgan_api::{CompletionRequest, CompletionResponse, ErrorBody, GenerateRequest, ModelMeta};
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};
use tracing::{info, warn};

pub use model::LoadedModel;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    TooManyElements(String),
    #[error("no model loaded")]
    NotLoaded,
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::Invalid(_) => StatusCode::BAD_REQUEST,
            ServiceError::TooManyElements(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::NotLoaded => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() && status != StatusCode::SERVICE_UNAVAILABLE {
            warn!(error = %self, "request failed");
        }
        (status, Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

impl From<JsonRejection> for ServiceError {
    fn from(r: JsonRejection) -> Self {
        ServiceError::Invalid(r.body_text())
    }
}

/// Shared handler state holding the current model snapshot, if any.
#[derive(Debug, Clone, Default)]
pub struct AppState {
    model: Arc<RwLock<Option<Arc<LoadedModel>>>>,
}

impl AppState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_model(model: LoadedModel) -> Self {
        let state = Self::default();
        state.swap(model);
        state
    }

    pub fn load(path: &Path) -> diffgan_core::Result<Self> {
        Ok(Self::with_model(LoadedModel::load(path)?))
    }

    /// Replaces the model. Requests already running keep the old snapshot.
    pub fn swap(&self, model: LoadedModel) {
        let model = Arc::new(model);
        info!(checkpoint = %model.meta().checkpoint_hash, "model loaded");
        *self.model.write().unwrap_or_else(|e| e.into_inner()) = Some(model);
    }

    pub fn snapshot(&self) -> Result<Arc<LoadedModel>, ServiceError> {
        self.model.read().unwrap_or_else(|e| e.into_inner()).clone().ok_or(ServiceError::NotLoaded)
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("generation task failed: {e}")))?
}

async fn complete(
    State(state): State<AppState>,
    body: Result<Json<CompletionRequest>, JsonRejection>,
) -> Result<Json<CompletionResponse>, ServiceError> {
    let model = state.snapshot()?;
    let Json(req) = body?;
    Ok(Json(blocking(move || model.complete(&req)).await?))
}

async fn generate(
    State(state): State<AppState>,
    body: Result<Json<GenerateRequest>, JsonRejection>,
) -> Result<Json<CompletionResponse>, ServiceError> {
    let model = state.snapshot()?;
    let Json(req) = body?;
    Ok(Json(blocking(move || model.generate(&req)).await?))
}

async fn meta(State(state): State<AppState>) -> Result<Json<ModelMeta>, ServiceError> {
    Ok(Json(state.snapshot()?.meta().clone()))
}

/// Builds the router. `allow_origin` restricts CORS to one origin; `None`
/// allows any.
pub fn router(state: AppState, allow_origin: Option<&str>) -> Result<Router, ServiceError> {
    let origin = match allow_origin {
        Some(o) => AllowOrigin::exact(
            HeaderValue::from_str(o).map_err(|e| ServiceError::Invalid(format!("CORS origin {o:?}: {e}")))?,
        ),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    Ok(Router::new()
        .route(diffgan_api::COMPLETE_PATH, post(complete))
        .route(diffgan_api::GENERATE_PATH, post(generate))
        .route(diffgan_api::META_PATH, get(meta))
        .layer(cors)
        .with_state(state))
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, app: Router) -> std::io::Result<()> {
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    info!(?addr, "listening");
    axum::serve(listener, app).await
}
