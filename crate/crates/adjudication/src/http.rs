use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use labelcraft::annotation::Label;
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::service::{Service, ServiceError, ServiceOptions};
use crate::state::StateError;

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<StateError> for ApiError {
    fn from(e: StateError) -> Self {
        let status = match e {
            StateError::UnknownExpert(_) => StatusCode::FORBIDDEN,
            StateError::UnknownItem(_) => StatusCode::NOT_FOUND,
            StateError::AlreadyClosed(..) | StateError::ConflictingLabel { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::State(s) => s.into(),
            other => {
                log::error!("{other}");
                ApiError(StatusCode::INTERNAL_SERVER_ERROR, other.to_string())
            }
        }
    }
}

#[derive(Deserialize)]
struct NextQuery {
    expert: String,
}

async fn next_item(State(svc): State<Arc<Service>>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    Ok(match svc.next_item(&q.expert)? {
        Some(item) => Json(item).into_response(),
        None => Json(json!({ "done": true })).into_response(),
    })
}

#[derive(Deserialize)]
struct LabelBody {
    expert: String,
    label: String,
}

async fn submit_label(
    State(svc): State<Arc<Service>>,
    Path(item_id): Path<String>,
    Json(body): Json<LabelBody>,
) -> Result<Response, ApiError> {
    let label: Label = body
        .label
        .parse()
        .map_err(|_| ApiError(StatusCode::BAD_REQUEST, format!("label must be one of A, B, C, D; got {:?}", body.label)))?;
    // The write path fsyncs the log; keep it off the async workers.
    let outcome = tokio::task::spawn_blocking(move || svc.submit(&body.expert, &item_id, label))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(outcome).into_response())
}

async fn stats(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.stats()).into_response()
}

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default)]
    dropped: bool,
}

async fn export(State(svc): State<Arc<Service>>, Query(q): Query<ExportQuery>) -> Response {
    (
        [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
        svc.export_csv(q.dropped),
    )
        .into_response()
}

/// API routes, plus static files from `static_dir` at `/` when given.
pub fn router(service: Arc<Service>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/queue/next", get(next_item))
        .route("/api/items/{item_id}/labels", post(submit_label))
        .route("/api/stats", get(stats))
        .route("/api/export", get(export))
        .with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves on `listener` until `shutdown` resolves, then appends new expert
/// labels to the annotations file.
pub async fn serve_on(
    listener: TcpListener,
    service: Arc<Service>,
    static_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<usize, ServiceError> {
    let app = router(service.clone(), static_dir);
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServiceError::Server)?;
    service.persist_annotations()
}

pub async fn serve(
    opts: &ServiceOptions,
    addr: &str,
    static_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<usize, ServiceError> {
    let service = Arc::new(Service::open(opts)?);
    let listener = TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    log::info!("adjudication service listening on {}", listener.local_addr().map_err(ServiceError::Server)?);
    serve_on(listener, service, static_dir, shutdown).await
}
