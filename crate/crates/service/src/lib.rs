//! HTTP service for human-in-the-loop annotation sessions.
//!
//! | verb | path                      | success                   |
//! |------|---------------------------|---------------------------|
//! | POST | `/sessions`               | 201 new session           |
//! | GET  | `/sessions`               | 200 session list          |
//! | POST | `/sessions/{id}/batch`    | 200 staged batch, or 202  |
//! | GET  | `/sessions/{id}/batch`    | 200 the staged batch      |
//! | POST | `/sessions/{id}/labels`   | 200 round summary         |
//! | GET  | `/sessions/{id}/metrics`  | 200 history and phase     |
//!
//! Errors are `{"error": code, "detail": text}`. Every session is
//! snapshotted to the state directory after each mutation and restored on
//! startup.

pub mod error;
pub mod store;

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tower_http::cors::CorsLayer;

use arcpool_core::session::{BatchItem, DatasetRef, Phase, SessionData};
use arcpool_core::{AlConfig, ConfidenceScore, RoundRecord, Session, Strategy};

pub use error::{ApiError, ErrorBody};
pub use store::{Snapshot, Store, StoreError};

type ApiResult<T> = Result<T, ApiError>;

/// Defaults used when a create request leaves fields out.
#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub state_dir: PathBuf,
    pub dataset: Option<DatasetRef>,
    pub al: Option<AlConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct DataKey {
    path: PathBuf,
    classes: Option<Vec<String>>,
    test_fraction_bits: u64,
    split_seed: u64,
}

impl DataKey {
    fn new(dataset: &DatasetRef, config: &AlConfig) -> Self {
        DataKey {
            path: dataset.path.clone(),
            classes: dataset.classes.clone(),
            test_fraction_bits: config.test_fraction.to_bits(),
            split_seed: config.split_seed,
        }
    }
}

/// Read-only view of a session, refreshed after every mutation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub id: String,
    pub phase: Phase,
    pub strategy: Strategy,
    /// Completed rounds.
    pub round: usize,
    pub rounds: usize,
    pub budget: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub classes: Vec<String>,
    pub history: Vec<RoundRecord>,
}

impl Metrics {
    fn of(session: &Session, data: &SessionData) -> Self {
        let learner = &session.learner;
        Metrics {
            id: session.id.clone(),
            phase: session.phase,
            strategy: learner.config.strategy,
            round: learner.round(),
            rounds: learner.config.rounds,
            budget: learner.config.budget,
            labeled: learner.pool.num_labeled(),
            unlabeled: learner.pool.num_unlabeled(),
            classes: data.train.classes().to_vec(),
            history: learner.history.clone(),
        }
    }
}

struct Slot {
    session: Arc<tokio::sync::Mutex<Session>>,
    view: RwLock<Metrics>,
    data: Arc<SessionData>,
    async_training: bool,
}

impl Slot {
    fn refresh(&self, session: &Session) {
        *self.view.write().expect("metrics lock") = Metrics::of(session, &self.data);
    }

    fn phase(&self) -> Phase {
        self.view.read().expect("metrics lock").phase
    }
}

pub struct AppState {
    config: ServiceConfig,
    store: Store,
    sessions: RwLock<BTreeMap<String, Arc<Slot>>>,
    datasets: Mutex<HashMap<DataKey, Arc<SessionData>>>,
}

impl AppState {
    /// Opens the state directory and restores every stored session.
    ///
    /// A corrupt snapshot or a dataset that can no longer be loaded is an
    /// error: the service refuses to start rather than drop a session.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>, StartupError> {
        let store = Store::open(&config.state_dir)?;
        let state = AppState {
            config,
            store,
            sessions: RwLock::new(BTreeMap::new()),
            datasets: Mutex::new(HashMap::new()),
        };
        for snap in state.store.load_all()? {
            let session = snap.session;
            let data = state
                .dataset(&session.dataset, &session.learner.config)
                .map_err(|e| StartupError::Dataset {
                    session: session.id.clone(),
                    detail: e.detail,
                })?;
            state.insert(session, data, snap.async_training);
        }
        Ok(Arc::new(state))
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions
            .read()
            .expect("sessions lock")
            .keys()
            .cloned()
            .collect()
    }

    fn insert(&self, session: Session, data: Arc<SessionData>, async_training: bool) {
        let slot = Slot {
            view: RwLock::new(Metrics::of(&session, &data)),
            session: Arc::new(tokio::sync::Mutex::new(session.clone())),
            data,
            async_training,
        };
        self.sessions
            .write()
            .expect("sessions lock")
            .insert(session.id, Arc::new(slot));
    }

    fn slot(&self, id: &str) -> ApiResult<Arc<Slot>> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::session_not_found(id))
    }

    fn dataset(&self, dataset: &DatasetRef, config: &AlConfig) -> ApiResult<Arc<SessionData>> {
        let key = DataKey::new(dataset, config);
        if let Some(data) = self.datasets.lock().expect("dataset cache").get(&key) {
            return Ok(data.clone());
        }
        let data = Arc::new(SessionData::load(dataset, config)?);
        self.datasets
            .lock()
            .expect("dataset cache")
            .insert(key, data.clone());
        Ok(data)
    }

    fn persist(&self, session: &Session, async_training: bool) -> ApiResult<()> {
        self.store
            .save(&Snapshot::new(session.clone(), async_training))
            .map_err(|e| {
                tracing::error!(session = %session.id, "snapshot failed: {e}");
                ApiError::internal(e.to_string())
            })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("session {session}: {detail}")]
    Dataset { session: String, detail: String },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    /// Full engine configuration; wins over `preset`.
    #[serde(default)]
    pub config: Option<AlConfig>,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub dataset: Option<DatasetRef>,
    /// Defaults to the first entry of `config.seeds`.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Train in the background: `POST /batch` answers 202 immediately.
    #[serde(default, rename = "async")]
    pub async_training: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub phase: Phase,
    pub seed: u64,
    pub labeled: usize,
    pub unlabeled: usize,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub phase: Phase,
    pub round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResponse {
    pub id: String,
    /// Index of the round this batch belongs to.
    pub round: usize,
    pub phase: Phase,
    pub items: Vec<BatchItem>,
    /// Scores of the whole unlabeled pool, only with `?scores=true`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_scores: Option<Vec<ConfidenceScore>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pending {
    pub id: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct BatchQuery {
    #[serde(default)]
    pub scores: bool,
}

/// A class given either by index or by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub id: u64,
    pub label: ClassRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSubmission {
    pub labels: Vec<LabelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub id: String,
    pub phase: Phase,
    pub record: RoundRecord,
    pub labeled: usize,
    pub unlabeled: usize,
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::schema(e.body_text()))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}/batch", post(next_batch).get(staged_batch))
        .route("/sessions/{id}/labels", post(submit_labels))
        .route("/sessions/{id}/metrics", get(metrics))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Arc<AppState>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Created>)> {
    let req = body(payload)?;
    let config =
        match (req.config, req.preset) {
            (Some(config), _) => config,
            (None, Some(name)) => AlConfig::preset(&name)?,
            (None, None) => state.config.al.clone().ok_or_else(|| {
                ApiError::schema("no `config` given and the service has no default")
            })?,
        };
    let dataset = req
        .dataset
        .or_else(|| state.config.dataset.clone())
        .ok_or_else(|| ApiError::schema("no `dataset` given and the service has no default"))?;
    let seed = req.seed.or(config.seeds.first().copied()).unwrap_or(0);
    let async_training = req.async_training;

    let st = state.clone();
    tokio::task::spawn_blocking(move || -> ApiResult<(StatusCode, Json<Created>)> {
        let data = st.dataset(&dataset, &config)?;
        config.validate(data.train.len())?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::create(id.clone(), &config, dataset, seed, &data)?;
        st.persist(&session, async_training)?;
        let created = Created {
            id: id.clone(),
            phase: session.phase,
            seed,
            labeled: session.learner.pool.num_labeled(),
            unlabeled: session.learner.pool.num_unlabeled(),
            classes: data.train.classes().to_vec(),
        };
        st.insert(session, data, async_training);
        tracing::info!(session = %id, "created");
        Ok((StatusCode::CREATED, Json(created)))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Vec<SessionSummary>> {
    let slots: Vec<Arc<Slot>> = state
        .sessions
        .read()
        .expect("sessions lock")
        .values()
        .cloned()
        .collect();
    Json(
        slots
            .iter()
            .map(|slot| {
                let view = slot.view.read().expect("metrics lock");
                SessionSummary {
                    id: view.id.clone(),
                    phase: view.phase,
                    round: view.round,
                }
            })
            .collect(),
    )
}

fn batch_response(
    session: &Session,
    data: &SessionData,
    with_scores: bool,
) -> ApiResult<BatchResponse> {
    let items = session.pending_items(data)?;
    let staged = session
        .pending
        .as_ref()
        .expect("pending batch while awaiting labels");
    Ok(BatchResponse {
        id: session.id.clone(),
        round: staged.round,
        phase: session.phase,
        items,
        pool_scores: with_scores.then(|| staged.scores.clone()),
    })
}

/// Trains, scores and stages. Runs on a blocking thread with the session lock held.
fn stage(
    state: &AppState,
    slot: &Slot,
    session: &mut Session,
    with_scores: bool,
) -> ApiResult<BatchResponse> {
    let staged = session.finish_batch(&slot.data).map(|_| ());
    slot.refresh(session);
    staged?;
    state.persist(session, slot.async_training)?;
    batch_response(session, &slot.data, with_scores)
}

async fn next_batch(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<BatchQuery>,
) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    // Fail fast instead of queueing behind a background training job.
    if slot.phase() == Phase::Training {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "wrong_phase",
            "session is Training, expected Idle",
        ));
    }
    let mut guard = slot.session.clone().lock_owned().await;
    let began = guard.begin_batch();
    slot.refresh(&guard);
    if let Err(e) = began {
        if guard.phase == Phase::Finished {
            state.persist(&guard, slot.async_training)?;
        }
        return Err(e.into());
    }

    if slot.async_training {
        let (st, sl) = (state.clone(), slot.clone());
        tokio::task::spawn_blocking(move || {
            if let Err(e) = stage(&st, &sl, &mut guard, false) {
                tracing::error!(session = %guard.id, "background training failed: {}", e.detail);
            }
        });
        let pending = Pending {
            id,
            phase: Phase::Training,
        };
        return Ok((StatusCode::ACCEPTED, Json(pending)).into_response());
    }

    let (st, sl) = (state.clone(), slot.clone());
    let response = tokio::task::spawn_blocking(move || stage(&st, &sl, &mut guard, query.scores))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(response).into_response())
}

/// The currently staged batch. Repeating this never retrains.
async fn staged_batch(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(query): Query<BatchQuery>,
) -> ApiResult<Response> {
    let slot = state.slot(&id)?;
    if slot.phase() == Phase::Training {
        let pending = Pending {
            id,
            phase: Phase::Training,
        };
        return Ok((StatusCode::ACCEPTED, Json(pending)).into_response());
    }
    let guard = slot.session.lock().await;
    let response = batch_response(&guard, &slot.data, query.scores)?;
    Ok(Json(response).into_response())
}

async fn submit_labels(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<LabelSubmission>, JsonRejection>,
) -> ApiResult<Json<RoundSummary>> {
    let slot = state.slot(&id)?;
    let submission = body(payload)?;
    let classes = slot.data.train.classes();
    let labels = submission
        .labels
        .iter()
        .map(|entry| match &entry.label {
            ClassRef::Index(c) => Ok((entry.id, *c)),
            ClassRef::Name(name) => classes
                .iter()
                .position(|c| c == name)
                .map(|c| (entry.id, c))
                .ok_or_else(|| {
                    ApiError::new(
                        StatusCode::BAD_REQUEST,
                        "invalid_class",
                        format!("unknown class name {name:?}"),
                    )
                }),
        })
        .collect::<ApiResult<Vec<_>>>()?;

    let mut guard = slot.session.lock().await;
    let record = guard.submit_labels(&labels)?;
    slot.refresh(&guard);
    state.persist(&guard, slot.async_training)?;
    Ok(Json(RoundSummary {
        id,
        phase: guard.phase,
        record,
        labeled: guard.learner.pool.num_labeled(),
        unlabeled: guard.learner.pool.num_unlabeled(),
    }))
}

async fn metrics(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<Metrics>> {
    let slot = state.slot(&id)?;
    let view = slot.view.read().expect("metrics lock").clone();
    Ok(Json(view))
}
