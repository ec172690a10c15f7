//! HTTP front end. Handlers share one immutable bundle and keep no state.

use std::process::Stdio;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;
use tokio::net::TcpListener;
use trustgate_core::backend::formats::parse_row;
use trustgate_core::TaxonRecord;

use crate::bundle::{Bundle, ModelMetadata};
use crate::pipeline::{predict_features, predict_pipeline};
use crate::ServiceError;

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Program and arguments mapping image bytes on stdin to a logit row on
    /// stdout. Without one, image requests get 501.
    pub image_command: Option<Vec<String>>,
    pub image_timeout: Option<Duration>,
}

struct AppState {
    bundle: Arc<Bundle>,
    config: ServiceConfig,
}

type Shared = State<Arc<AppState>>;

fn json(status: StatusCode, text: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Wrapped {
            error: crate::error::ErrorBody,
        }
        let text = serde_json::to_string(&Wrapped { error: self.body() }).expect("error serializes");
        json(self.status(), text)
    }
}

fn ok<T: Serialize>(value: &T) -> Response {
    json(StatusCode::OK, serde_json::to_string(value).expect("response serializes"))
}

pub fn router(bundle: Arc<Bundle>, config: ServiceConfig) -> Router {
    let state = Arc::new(AppState { bundle, config });
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/model", get(model))
        .route("/v1/predict", post(predict))
        .route("/v1/taxa/{id}", get(taxon))
        .route(
            "/v1/predict-image",
            post(predict_image).layer(DefaultBodyLimit::max(32 * 1024 * 1024)),
        )
        .fallback(|| async { ServiceError::NotFound("no such endpoint".into()) })
        .with_state(state)
}

/// Serves until the listener fails or the process receives Ctrl-C.
pub async fn serve(listener: TcpListener, bundle: Arc<Bundle>, config: ServiceConfig) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(bundle, config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Serialize)]
struct Health<'a> {
    status: &'a str,
    model_metadata: ModelMetadata,
}

async fn health(State(s): Shared) -> Response {
    ok(&Health {
        status: "ok",
        model_metadata: s.bundle.metadata(),
    })
}

async fn model(State(s): Shared) -> Response {
    ok(&s.bundle.metadata())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictRequest {
    logits: Option<Vec<f64>>,
    features: Option<Vec<f64>>,
}

async fn predict(State(s): Shared, body: Bytes) -> Result<Response, ServiceError> {
    let req: PredictRequest =
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("request body: {e}")))?;
    let report = match (req.logits, req.features) {
        (Some(z), None) => predict_pipeline(&z, &s.bundle)?,
        (None, Some(x)) => predict_features(&x, &s.bundle)?,
        _ => {
            return Err(ServiceError::BadRequest(
                "body must contain exactly one of `logits` or `features`".into(),
            ))
        }
    };
    Ok(json(StatusCode::OK, report.render()))
}

#[derive(Serialize)]
struct TaxonResponse<'a> {
    #[serde(flatten)]
    taxon: &'a TaxonRecord,
    class_index: Option<usize>,
}

async fn taxon(State(s): Shared, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let id: i64 = id
        .parse()
        .map_err(|_| ServiceError::BadRequest(format!("taxon id {id:?} is not an integer")))?;
    let taxon = s
        .bundle
        .taxa()
        .get(id)
        .ok_or_else(|| ServiceError::NotFound(format!("taxon {id} not found")))?;
    Ok(ok(&TaxonResponse {
        taxon,
        class_index: s.bundle.class_map().class_of(id),
    }))
}

async fn predict_image(State(s): Shared, body: Bytes) -> Result<Response, ServiceError> {
    let Some(cmd) = s.config.image_command.as_ref().filter(|c| !c.is_empty()) else {
        return Err(ServiceError::NotImplemented(
            "image prediction needs an external inference command".into(),
        ));
    };
    let timeout = s.config.image_timeout.unwrap_or(Duration::from_secs(60));
    let logits = tokio::time::timeout(timeout, run_command(cmd, body))
        .await
        .map_err(|_| ServiceError::ImageCommand(format!("timed out after {timeout:?}")))??;
    Ok(json(StatusCode::OK, predict_pipeline(&logits, &s.bundle)?.render()))
}

async fn run_command(cmd: &[String], input: Bytes) -> Result<Vec<f64>, ServiceError> {
    let fail = |m: String| ServiceError::ImageCommand(m);
    let mut child = tokio::process::Command::new(&cmd[0])
        .args(&cmd[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .kill_on_drop(true)
        .spawn()
        .map_err(|e| fail(format!("{}: {e}", cmd[0])))?;
    let mut stdin = child.stdin.take().expect("stdin piped");
    let feed = tokio::spawn(async move {
        // the command may exit without reading everything; that is its call
        let _ = stdin.write_all(&input).await;
    });
    let out = child.wait_with_output().await.map_err(|e| fail(e.to_string()))?;
    let _ = feed.await;
    if !out.status.success() {
        let stderr = String::from_utf8_lossy(&out.stderr);
        return Err(fail(format!("exited with {}: {}", out.status, stderr.trim())));
    }
    let text = String::from_utf8(out.stdout).map_err(|_| fail("output is not UTF-8".into()))?;
    parse_row(&text).map_err(|e| fail(format!("output: {e}")))
}
