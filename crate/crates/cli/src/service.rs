//! HTTP conduct service.
//!
//! ```text
//! GET  /trials                          ids of stored trials
//! POST /trials                          {id?, seed?, config?} -> status
//! GET  /trials/{id}                     status
//! GET  /trials/{id}/events              the event log, JSON lines
//! POST /trials/{id}/enroll              {time?} -> {patient, combo, status}
//! POST /trials/{id}/outcomes            {patient, toxicity?, efficacy?, time?} -> status
//! GET  /trials/{id}/recommendation      posterior summaries and next assignment
//! POST /trials/{id}/finalize            {time?} -> {result, status}
//! ```

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use combotrial::trial::{
    write_events, DesignConfig, EngineError, Enrollment, Phase, TrialEngine, TrialResult,
};

use crate::store::{Slot, Store, StoreError};
use crate::view::{Recommendation, TrialStatus};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(ErrorBody {
                error: self.code,
                message: &self.message,
            }),
        )
            .into_response()
    }
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let (status, code) = match &e {
            EngineError::Finished => (StatusCode::CONFLICT, "finished"),
            EngineError::CapacityReached(_) => (StatusCode::CONFLICT, "capacity_reached"),
            EngineError::AwaitingToxicity(_) => (StatusCode::CONFLICT, "awaiting_toxicity"),
            EngineError::Suspended(_) => (StatusCode::CONFLICT, "suspended"),
            EngineError::Finalizing => (StatusCode::CONFLICT, "finalizing"),
            EngineError::DuplicateOutcome { .. } => (StatusCode::CONFLICT, "duplicate_outcome"),
            EngineError::UnknownPatient(_) => (StatusCode::NOT_FOUND, "unknown_patient"),
            EngineError::TimeWentBackwards { .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "time_went_backwards")
            }
            EngineError::Invariant(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_event"),
            EngineError::Model(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_config"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Engine(e) => e.into(),
            StoreError::NotFound(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string())
            }
            StoreError::Exists(_) => ApiError::new(StatusCode::CONFLICT, "exists", e.to_string()),
            StoreError::BadId(_) => {
                ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string())
            }
            StoreError::Corrupt { .. } => ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "corrupt_log",
                e.to_string(),
            ),
            StoreError::Io(_) => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string())
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Parses an optional JSON body; an empty body gives the default.
fn body<T: DeserializeOwned + Default>(bytes: &Bytes) -> ApiResult<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

/// Runs blocking store work (file IO, posterior sampling) off the reactor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateTrial {
    pub id: Option<String>,
    pub seed: Option<u64>,
    pub config: Option<DesignConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct At {
    /// Months on the trial clock; the current clock when absent.
    pub time: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outcome {
    pub patient: u32,
    pub toxicity: Option<bool>,
    pub efficacy: Option<bool>,
    pub time: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Enrolled {
    #[serde(flatten)]
    pub enrollment: Enrollment,
    pub label: String,
    pub status: TrialStatus,
}

#[derive(Debug, Serialize)]
pub struct Finalized {
    pub result: TrialResult,
    pub status: TrialStatus,
}

#[derive(Debug, Serialize)]
struct TrialList {
    trials: Vec<String>,
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/trials", get(list).post(create))
        .route("/trials/{id}", get(status))
        .route("/trials/{id}/events", get(events))
        .route("/trials/{id}/enroll", post(enroll))
        .route("/trials/{id}/outcomes", post(outcomes))
        .route("/trials/{id}/recommendation", get(recommendation))
        .route("/trials/{id}/finalize", post(finalize))
        .with_state(store)
}

async fn slot(store: &Arc<Store>, id: String) -> ApiResult<Arc<Slot>> {
    let store = store.clone();
    blocking(move || Ok(store.get(&id)?)).await
}

async fn list(State(store): State<Arc<Store>>) -> ApiResult<Json<TrialList>> {
    let trials = blocking(move || {
        store
            .list()
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "storage", e.to_string()))
    })
    .await?;
    Ok(Json(TrialList { trials }))
}

async fn create(
    State(store): State<Arc<Store>>,
    bytes: Bytes,
) -> ApiResult<(StatusCode, Json<TrialStatus>)> {
    let req: CreateTrial = body(&bytes)?;
    let status = blocking(move || {
        let slot = store.create(req.id, req.seed, req.config.unwrap_or_default())?;
        Ok(TrialStatus::of(slot.id(), &slot.snapshot()))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(status)))
}

async fn status(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
) -> ApiResult<Json<TrialStatus>> {
    let s = slot(&store, id.clone()).await?;
    Ok(Json(TrialStatus::of(&id, &s.snapshot())))
}

async fn events(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = slot(&store, id).await?;
    let mut buf = Vec::new();
    write_events(&mut buf, s.snapshot().events())
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], buf).into_response())
}

async fn recommendation(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Recommendation>> {
    let s = slot(&store, id.clone()).await?;
    Ok(Json(Recommendation::of(&id, &s.snapshot())))
}

fn clock(e: &TrialEngine, time: Option<f64>) -> f64 {
    time.unwrap_or(e.state().clock)
}

async fn enroll(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    bytes: Bytes,
) -> ApiResult<Json<Enrolled>> {
    let req: At = body(&bytes)?;
    let s = slot(&store, id.clone()).await?;
    blocking(move || {
        let enrollment = s.update(|e| {
            let t = clock(e, req.time);
            e.enroll(t)
        })?;
        let status = TrialStatus::of(&id, &s.snapshot());
        Ok(Json(Enrolled {
            label: enrollment.combo.to_string(),
            enrollment,
            status,
        }))
    })
    .await
}

async fn outcomes(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    bytes: Bytes,
) -> ApiResult<Json<TrialStatus>> {
    let req: Outcome = body(&bytes)?;
    if req.toxicity.is_none() && req.efficacy.is_none() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_request",
            "give toxicity, efficacy or both",
        ));
    }
    let s = slot(&store, id.clone()).await?;
    blocking(move || {
        s.update(|e| {
            let t = clock(e, req.time);
            // a phase I response counts toward the data used when phase I ends
            // on this patient's toxicity
            let efficacy_first = e.state().phase == Phase::One;
            if efficacy_first {
                if let Some(r) = req.efficacy {
                    e.record_efficacy(req.patient, r, t)?;
                }
            }
            if let Some(d) = req.toxicity {
                e.record_toxicity(req.patient, d, t)?;
            }
            if !efficacy_first {
                if let Some(r) = req.efficacy {
                    e.record_efficacy(req.patient, r, t)?;
                }
            }
            Ok(())
        })?;
        Ok(Json(TrialStatus::of(&id, &s.snapshot())))
    })
    .await
}

async fn finalize(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    bytes: Bytes,
) -> ApiResult<Json<Finalized>> {
    let req: At = body(&bytes)?;
    let s = slot(&store, id.clone()).await?;
    blocking(move || {
        let result = s.update(|e| {
            let t = clock(e, req.time);
            e.finalize(t)
        })?;
        Ok(Json(Finalized {
            result,
            status: TrialStatus::of(&id, &s.snapshot()),
        }))
    })
    .await
}

/// Serves until interrupted.
pub async fn serve(store: Arc<Store>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!(
        "conduct service on http://{} (data in {})",
        listener.local_addr()?,
        store.dir().display()
    );
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
