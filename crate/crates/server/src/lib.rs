//! HTTP facade over the engine: session-scoped bundles, scenario drafts,
//! simulation runs, forecasts and retrospective analysis.

mod error;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use hierion_core::model::{Tick, TimeInterval};
use hierion_core::retrospect::{retrospect, RetrospectRequest};
use hierion_core::scenario::{
    forecast, metric_timeline, simulate, CostOrder, FiringPolicy, ForecastConfig, PartialDiagram, ScenarioMetrics,
    ScenarioSpec, SimConfig, SimulationRun, SystemState,
};
use hierion_core::store::{load_bundle, save_bundle, ColumnMapping, EventStore, ModelBundle, Strictness};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Mutex;

pub use error::ApiError;

/// Trace entries or events per page.
pub const PAGE_SIZE: usize = 500;

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub scenario: String,
    pub horizon: Tick,
    pub firing: FiringPolicy,
    pub metrics: ScenarioMetrics,
}

struct RunRecord {
    summary: RunSummary,
    run: SimulationRun,
}

struct Session {
    bundle: ModelBundle,
    /// Scenario id last accepted by PUT /scenario.
    draft: Option<String>,
    runs: Vec<RunRecord>,
}

/// Shared server state. The event store backs retrospect requests that
/// carry no monitoring rows of their own.
#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, Arc<Mutex<Session>>>>>,
    store: Arc<EventStore>,
}

impl AppState {
    pub fn new(store: EventStore) -> Self {
        Self {
            sessions: Arc::default(),
            store: Arc::new(store),
        }
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }
}

impl Default for AppState {
    fn default() -> Self {
        Self::new(EventStore::in_memory())
    }
}

pub fn app(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/model", get(get_model))
        .route("/sessions/{id}/scenario", put(put_scenario))
        .route("/sessions/{id}/simulate", post(run_simulation))
        .route("/sessions/{id}/runs", get(list_runs))
        .route("/sessions/{id}/runs/{rid}/trace", get(get_trace))
        .route("/sessions/{id}/runs/{rid}/metrics", get(get_metrics))
        .route("/sessions/{id}/runs/{rid}/timeline", get(get_timeline))
        .route("/sessions/{id}/forecast", post(run_forecast))
        .route("/sessions/{id}/retrospect", post(run_retrospect))
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, store: EventStore) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app(AppState::new(store))).await
}

/// JSON body with unknown fields rejected.
fn parse_strict<T: DeserializeOwned>(body: &str) -> ApiResult<T> {
    let mut unknown = Vec::new();
    let de = &mut serde_json::Deserializer::from_str(body);
    let value: T = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| ApiError::invalid_body(e.to_string()))?;
    if !unknown.is_empty() {
        return Err(
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "UnknownFields", "request body has unknown fields")
                .with_report(json!(unknown)),
        );
    }
    Ok(value)
}

fn flag(params: &HashMap<String, String>, name: &str) -> bool {
    params
        .get(name)
        .is_some_and(|v| v.is_empty() || v == "true" || v == "1")
}

async fn create_session(
    State(state): State<AppState>,
    Query(params): Query<HashMap<String, String>>,
    body: String,
) -> ApiResult<Response> {
    let strictness = if flag(&params, "lenient") {
        Strictness::Lenient
    } else {
        Strictness::Strict
    };
    let loaded = load_bundle(&body, strictness)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session {
        bundle: loaded.bundle,
        draft: None,
        runs: Vec::new(),
    };
    state
        .sessions
        .write()
        .expect("session map poisoned")
        .insert(id.clone(), Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(json!({"id": id, "warnings": loaded.warnings}))).into_response())
}

async fn get_model(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ModelBundle>> {
    let session = state.session(&id)?;
    let session = session.lock().await;
    Ok(Json(session.bundle.clone()))
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    scenario: String,
    valid: bool,
    warnings: Vec<String>,
}

async fn put_scenario(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: String,
) -> ApiResult<Json<ValidationReport>> {
    let session = state.session(&id)?;
    let mut session = session.lock().await;
    let spec: ScenarioSpec = parse_strict(&body)?;
    let mut candidate = session.bundle.clone();
    match candidate.scenarios.iter_mut().find(|s| s.id == spec.id) {
        Some(slot) => *slot = spec.clone(),
        None => candidate.scenarios.push(spec.clone()),
    }
    let loaded = load_bundle(&save_bundle(&candidate), Strictness::Strict)?;
    let warnings = loaded.bundle.scenario(&spec.id)?.check().warnings;
    session.bundle = loaded.bundle;
    session.draft = Some(spec.id.clone());
    Ok(Json(ValidationReport {
        scenario: spec.id,
        valid: true,
        warnings,
    }))
}

#[derive(Debug, Default, Deserialize)]
struct SimulateBody {
    #[serde(default)]
    horizon: Option<Tick>,
    #[serde(default)]
    scenario: Option<String>,
    #[serde(default)]
    firing: FiringPolicy,
}

fn pick_scenario(session: &Session, requested: Option<String>) -> ApiResult<String> {
    if let Some(id) = requested.or_else(|| session.draft.clone()) {
        return Ok(id);
    }
    match session.bundle.scenarios.as_slice() {
        [only] => Ok(only.id.clone()),
        _ => Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "NoScenario",
            "name a scenario or PUT a draft first",
        )),
    }
}

async fn run_simulation(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: String,
) -> ApiResult<Response> {
    let session = state.session(&id)?;
    let mut session = session.lock().await;
    let body: SimulateBody = if body.trim().is_empty() {
        SimulateBody::default()
    } else {
        parse_strict(&body)?
    };
    let scenario_id = pick_scenario(&session, body.scenario)?;
    let spec = session.bundle.scenario_spec(&scenario_id)?;
    let horizon = body.horizon.or(spec.horizon).ok_or_else(|| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "MissingHorizon",
            format!("scenario `{scenario_id}` has no horizon and none was given"),
        )
    })?;
    let scenario = session.bundle.scenario(&scenario_id)?;
    let run = simulate(&scenario, horizon, SimConfig { firing: body.firing })?;
    let summary = RunSummary {
        run_id: format!("r{}", session.runs.len() + 1),
        scenario: scenario_id,
        horizon,
        firing: body.firing,
        metrics: run.metrics(),
    };
    session.runs.push(RunRecord {
        summary: summary.clone(),
        run,
    });
    Ok((StatusCode::CREATED, Json(summary)).into_response())
}

async fn list_runs(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Vec<RunSummary>>> {
    let session = state.session(&id)?;
    let session = session.lock().await;
    Ok(Json(session.runs.iter().map(|r| r.summary.clone()).collect()))
}

fn find_run<'a>(session: &'a Session, rid: &str) -> ApiResult<&'a RunRecord> {
    session
        .runs
        .iter()
        .find(|r| r.summary.run_id == rid)
        .ok_or_else(|| ApiError::unknown_run(rid))
}

#[derive(Debug, Deserialize)]
struct TraceQuery {
    diagram: Option<String>,
    #[serde(default)]
    page: usize,
}

fn page_of<T: Serialize>(items: &[T], page: usize) -> Value {
    let pages = items.len().div_ceil(PAGE_SIZE).max(1);
    let start = (page * PAGE_SIZE).min(items.len());
    let end = (start + PAGE_SIZE).min(items.len());
    json!({
        "page": page,
        "pages": pages,
        "total": items.len(),
        "items": &items[start..end],
    })
}

async fn get_trace(
    State(state): State<AppState>,
    Path((id, rid)): Path<(String, String)>,
    query: Result<Query<TraceQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(query) = query.map_err(|e| ApiError::invalid_body(e.body_text()))?;
    let session = state.session(&id)?;
    let session = session.lock().await;
    let record = find_run(&session, &rid)?;
    let mut page = match &query.diagram {
        Some(d) => {
            let trace = record.run.traces.get(d).ok_or_else(|| {
                ApiError::new(StatusCode::NOT_FOUND, "UnknownDiagram", format!("run `{rid}` has no diagram `{d}`"))
            })?;
            let mut page = page_of(&trace.entries, query.page);
            page["diagram"] = json!(d);
            page
        }
        None => page_of(&record.run.events, query.page),
    };
    page["run_id"] = json!(rid);
    Ok(Json(page))
}

async fn get_metrics(
    State(state): State<AppState>,
    Path((id, rid)): Path<(String, String)>,
) -> ApiResult<Json<ScenarioMetrics>> {
    let session = state.session(&id)?;
    let session = session.lock().await;
    Ok(Json(find_run(&session, &rid)?.summary.metrics))
}

async fn get_timeline(State(state): State<AppState>, Path((id, rid)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let session = session.lock().await;
    let run = &find_run(&session, &rid)?.run;
    Ok(Json(json!(metric_timeline(run))))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum PartialRef {
    Id(String),
    Inline(PartialDiagram),
}

#[derive(Debug, Deserialize)]
struct ForecastBody {
    initial: SystemState,
    #[serde(alias = "partialDiagram")]
    partial_diagram: PartialRef,
    #[serde(default)]
    order: CostOrder,
    #[serde(default)]
    max_expansions: Option<usize>,
}

async fn run_forecast(State(state): State<AppState>, Path(id): Path<String>, body: String) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let session = session.lock().await;
    let body: ForecastBody = parse_strict(&body)?;
    let partial = match body.partial_diagram {
        PartialRef::Id(pid) => session.bundle.partial(&pid)?.clone(),
        PartialRef::Inline(p) => p,
    };
    let problems = partial.problems();
    if !problems.is_empty() {
        return Err(
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ValidationFailed", "partial diagram is invalid")
                .with_report(json!(problems)),
        );
    }
    let mut config = ForecastConfig {
        order: body.order,
        ..ForecastConfig::default()
    };
    if let Some(n) = body.max_expansions {
        config.max_expansions = n;
    }
    let outcome = forecast(&body.initial, &session.bundle.rules, &partial, config);
    Ok(Json(json!(outcome)))
}

#[derive(Debug, Deserialize)]
struct RetrospectBody {
    diagram: String,
    interval: TimeInterval,
    #[serde(default)]
    snapshots: Vec<Tick>,
    /// Monitoring rows to analyse instead of the server's store.
    #[serde(default)]
    csv: Option<String>,
    #[serde(default)]
    mapping: Option<ColumnMapping>,
}

async fn run_retrospect(State(state): State<AppState>, Path(id): Path<String>, body: String) -> ApiResult<Json<Value>> {
    let session = state.session(&id)?;
    let session = session.lock().await;
    let body: RetrospectBody = parse_strict(&body)?;
    let request = RetrospectRequest {
        diagram: body.diagram,
        interval: body.interval,
        snapshots: body.snapshots,
    };
    let report = match &body.csv {
        Some(rows) => {
            let mut store = EventStore::in_memory();
            store.ingest_monitoring(rows.as_bytes(), &body.mapping.unwrap_or_default())?;
            retrospect(&session.bundle, &store, &request)?
        }
        None => retrospect(&session.bundle, &state.store, &request)?,
    };
    let banner = if report.confirmed() { "CONFIRMED" } else { "REFUTED" };
    let mut out = json!(report);
    out["banner"] = json!(banner);
    Ok(Json(out))
}
