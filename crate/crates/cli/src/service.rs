//! HTTP API: scoring for uploaded images and the reviewer annotation store.
//!
//! The listener comes up before the models finish loading; scoring endpoints
//! answer 503 until they have.

use std::sync::{Arc, Mutex, OnceLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dermtriage::classifier::predict_roi;
use dermtriage::clinical::{predict_combined, CovariateRow};
use dermtriage::data::{ImageRecord, Pixels, Roi};
use dermtriage::detector::DetectorBackend;
use dermtriage::scorer::{AggregationKind, StrategyKind};
use dermtriage::Error;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::annotations::AnnotationStore;
use crate::args::ServeArgs;
use crate::error_kind;
use crate::models::LoadedModels;

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
const BODY_LIMIT: usize = 32 << 20;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            kind,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Decode(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Schema { .. }
            | Error::Json(_)
            | Error::InvalidInput(_)
            | Error::InvalidRoi(_)
            | Error::EmptyIntersection
            | Error::UnknownLabel(_)
            | Error::RejectedRecord { .. }
            | Error::DuplicateImage(_)
            | Error::Config(_)
            | Error::ModelMismatch(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, error_kind(&e), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"kind": self.kind, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Inner {
    models: OnceLock<Result<LoadedModels, String>>,
    store: Mutex<AnnotationStore>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(store: AnnotationStore) -> Self {
        AppState(Arc::new(Inner {
            models: OnceLock::new(),
            store: Mutex::new(store),
        }))
    }

    /// Publishes the outcome of model loading; later calls are ignored.
    pub fn set_models(&self, loaded: dermtriage::Result<LoadedModels>) {
        let _ = self.0.models.set(loaded.map_err(|e| e.to_string()));
    }

    fn models(&self) -> ApiResult<&LoadedModels> {
        match self.0.models.get() {
            None => Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "loading",
                "models are still loading",
            )),
            Some(Err(msg)) => Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "load_failed",
                format!("models failed to load: {msg}"),
            )),
            Some(Ok(m)) => Ok(m),
        }
    }

    fn store(&self) -> std::sync::MutexGuard<'_, AnnotationStore> {
        // A panic mid-append leaves the log itself intact, so keep serving.
        self.0.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model-info", get(model_info))
        .route("/predict", post(predict))
        .route("/score-roi", post(score_roi))
        .route("/annotations", get(list_annotations).post(post_annotation))
        .route("/annotations/{image_id}", get(annotation_history))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    Json(match state.0.models.get() {
        None => json!({"status": "loading"}),
        Some(Ok(_)) => json!({"status": "ok"}),
        Some(Err(msg)) => json!({"status": "error", "message": msg}),
    })
}

async fn model_info(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    Ok(Json(state.models()?.info()))
}

/// Text and file parts of a multipart upload.
#[derive(Default)]
struct Upload {
    image: Option<Bytes>,
    fields: std::collections::BTreeMap<String, String>,
}

async fn read_upload(mut multipart: Multipart) -> ApiResult<Upload> {
    let mut upload = Upload::default();
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::bad_request(format!("malformed multipart body: {e}")))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::bad_request(format!("reading field {name:?}: {e}")))?;
        if name == "image" {
            upload.image = Some(bytes);
        } else {
            let text = String::from_utf8(bytes.to_vec())
                .map_err(|_| ApiError::bad_request(format!("field {name:?} is not UTF-8 text")))?;
            upload.fields.insert(name, text);
        }
    }
    Ok(upload)
}

impl Upload {
    fn image(&self) -> ApiResult<Pixels> {
        let bytes = self
            .image
            .as_ref()
            .ok_or_else(|| ApiError::bad_request("missing multipart field \"image\""))?;
        Ok(Pixels::decode(bytes)?)
    }

    fn parsed<T: std::str::FromStr<Err = Error>>(&self, name: &str) -> ApiResult<Option<T>> {
        self.fields.get(name).map(|v| v.parse::<T>()).transpose().map_err(ApiError::from)
    }

    fn image_id(&self) -> String {
        self.fields.get("image_id").cloned().unwrap_or_else(|| "upload".into())
    }
}

fn covariate_row(image_id: &str, text: &str) -> ApiResult<CovariateRow> {
    let obj: serde_json::Map<String, Value> = serde_json::from_str(text)
        .map_err(|e| ApiError::bad_request(format!("covariates must be a JSON object: {e}")))?;
    let values = obj
        .into_iter()
        .map(|(k, v)| {
            let v = match v {
                Value::Null => Ok(None),
                Value::String(s) => Ok(Some(s)),
                Value::Number(n) => Ok(Some(n.to_string())),
                Value::Bool(b) => Ok(Some(b.to_string())),
                other => Err(ApiError::bad_request(format!("covariate {k:?} has unsupported value {other}"))),
            }?;
            Ok((k, v))
        })
        .collect::<ApiResult<_>>()?;
    Ok(CovariateRow {
        image_id: image_id.to_string(),
        values,
    })
}

/// Runs CPU-bound scoring off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn predict(State(state): State<AppState>, multipart: Multipart) -> ApiResult<Json<Value>> {
    state.models()?;
    let upload = read_upload(multipart).await?;
    let strategy = upload.parsed::<StrategyKind>("strategy")?.unwrap_or(StrategyKind::TwoStage);
    let kind = upload.parsed::<AggregationKind>("aggregator")?.unwrap_or(AggregationKind::NoisyOr);
    let image_id = upload.image_id();
    let covariates = upload
        .fields
        .get("covariates")
        .map(|t| covariate_row(&image_id, t))
        .transpose()?;
    let image = upload.image()?;
    blocking(move || {
        let models = state.models()?;
        let score = models.set().score(strategy, &image_id, &image, kind, &models.options)?;
        let detector: Option<&dyn DetectorBackend> = match strategy {
            StrategyKind::Direct => None,
            StrategyKind::TwoStage => models.detector.as_ref().map(|d| d as _),
            StrategyKind::OneStepMalignancy => models.malignancy.as_ref().map(|d| d as _),
            StrategyKind::OneStepSubtype => models.subtype.as_ref().map(|d| d as _),
        };
        let detections = match detector {
            Some(d) => d.detect(&image_id, &image)?,
            None => Vec::new(),
        };
        let combined = match (&covariates, &models.combined) {
            (None, _) => None,
            (Some(row), Some(m)) => Some(predict_combined(m, &image, row)?),
            (Some(_), None) => return Err(ApiError::bad_request("covariates given but no combined model is loaded")),
        };
        Ok(Json(json!({
            "image_id": image_id,
            "strategy": strategy,
            "aggregator": score.aggregator,
            "probability": score.probability,
            "lesions": score.contributing,
            "detections": detections,
            "combined_probability": combined,
        })))
    })
    .await
}

async fn score_roi(State(state): State<AppState>, multipart: Multipart) -> ApiResult<Json<Value>> {
    state.models()?;
    let upload = read_upload(multipart).await?;
    let roi: Roi = serde_json::from_str(
        upload
            .fields
            .get("roi")
            .ok_or_else(|| ApiError::bad_request("missing multipart field \"roi\""))?,
    )
    .map_err(|e| ApiError::bad_request(format!("roi: {e}")))?;
    roi.validate()?;
    let image_id = upload.image_id();
    let image = upload.image()?;
    blocking(move || {
        let models = state.models()?;
        let classifier = models
            .classifier
            .as_ref()
            .ok_or_else(|| ApiError::bad_request("no ROI classifier is loaded"))?;
        let score = predict_roi(classifier, &image_id, &image, &roi)?;
        Ok(Json(serde_json::to_value(score).map_err(Error::from)?))
    })
    .await
}

#[derive(Deserialize)]
struct Submission {
    #[serde(flatten)]
    record: ImageRecord,
    #[serde(default)]
    reviewer: Option<String>,
}

async fn post_annotation(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let submission: Submission =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("annotation: {e}")))?;
    let revision = state.store().submit(submission.record, submission.reviewer)?;
    Ok((StatusCode::CREATED, Json(serde_json::to_value(revision).map_err(Error::from)?)))
}

async fn list_annotations(State(state): State<AppState>) -> Json<Value> {
    Json(json!({"images": state.store().latest()}))
}

async fn annotation_history(State(state): State<AppState>, UrlPath(image_id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let history = state.store().history(&image_id);
    if history.is_empty() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no annotations for image {image_id:?}"),
        ));
    }
    Ok(Json(json!({"image_id": image_id, "revisions": history})))
}

pub fn run_blocking(args: ServeArgs) -> dermtriage::Result<()> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("starting the async runtime", e))?;
    runtime.block_on(async move {
        let store = AnnotationStore::open(&args.annotations)?;
        let state = AppState::new(store);
        let bind = args.bind.clone().unwrap_or_else(|| DEFAULT_BIND.to_string());
        let listener = tokio::net::TcpListener::bind(&bind)
            .await
            .map_err(|e| Error::io(format!("binding {bind}"), e))?;
        log::info!("listening on {bind}");
        let loader = state.clone();
        tokio::task::spawn_blocking(move || {
            let loaded = LoadedModels::load(&args.models);
            match &loaded {
                Ok(m) => log::info!("models loaded; strategies available: {:?}", m.available()),
                Err(e) => log::error!("model loading failed: {e}"),
            }
            loader.set_models(loaded);
        });
        axum::serve(listener, router(state))
            .await
            .map_err(|e| Error::io("serving", e))
    })
}
