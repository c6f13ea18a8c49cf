//! HTTP service. Request handlers run concurrently; training jobs run one at a
//! time on a dedicated worker thread that owns all mutable training state and
//! publishes immutable per-episode snapshots through watch channels.

use std::collections::{BTreeMap, HashMap};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tokio::sync::watch;
use tower_http::services::{ServeDir, ServeFile};

use optistack_core::agent::rundir::{read_best, read_metrics};
use optistack_core::agent::Hyperparameters;
use optistack_core::analysis::{random_convexity_baseline, what_if, WhatIfRecord};
use optistack_core::baseline::BaselineConfig;
use optistack_core::env::{Action, DesignEnv};
use optistack_core::objective::{RewardParams, TaskSpec};
use optistack_core::optics::{design_dbr, DbrSpec, Layer, MaterialCatalog};
use optistack_core::Error;

use crate::app::{
    self, load_agent_run, CheckpointChoice, RewardChoice, TrainRequest, ALGO_MPDQN, CALIBRATION_SAMPLES,
};
use crate::store::{parse_run_number, run_dir, run_id, Journal, RunHandle, RunStatus};

/// Reward scale for simulations that do not name one.
pub const DEFAULT_ALPHA: f64 = 18.42;
const SIM_CACHE_LIMIT: usize = 4096;
const BASELINE_SAMPLES: usize = 20_000;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub catalog: MaterialCatalog,
    /// Task files added to the builtin tasks.
    pub tasks: Vec<TaskSpec>,
    /// Built web UI; served for every path outside `/api`.
    pub assets: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(data_dir: PathBuf) -> Self {
        ServiceConfig {
            data_dir,
            catalog: MaterialCatalog::default(),
            tasks: Vec::new(),
            assets: None,
        }
    }
}

struct Job {
    handle: RunHandle,
    request: TrainRequest,
    dir: PathBuf,
    publish: watch::Sender<RunHandle>,
}

pub struct AppState {
    data_dir: PathBuf,
    catalog: MaterialCatalog,
    tasks: Vec<TaskSpec>,
    journal: Journal,
    runs: RwLock<BTreeMap<String, watch::Receiver<RunHandle>>>,
    jobs: Mutex<mpsc::Sender<Job>>,
    next_run: AtomicU64,
    sim_cache: Mutex<HashMap<String, Arc<Vec<u8>>>>,
}

impl AppState {
    fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    fn snapshot(&self, id: &str) -> Option<RunHandle> {
        self.runs.read().unwrap().get(id).map(|rx| rx.borrow().clone())
    }
}

/// Builds the router, replays the journal and starts the training worker.
pub fn build(config: ServiceConfig) -> optistack_core::Result<Router> {
    std::fs::create_dir_all(&config.data_dir)?;
    let journal = Journal::new(&config.data_dir);
    let recovered = journal.recover()?;
    let mut tasks: Vec<TaskSpec> = TaskSpec::builtin_ids()
        .iter()
        .filter_map(|id| TaskSpec::builtin(id))
        .collect();
    for t in config.tasks {
        t.validate(Some(&config.catalog))?;
        tasks.retain(|existing| existing.id != t.id);
        tasks.push(t);
    }
    let next = recovered
        .iter()
        .filter_map(|h| parse_run_number(&h.run_id))
        .max()
        .unwrap_or(0)
        + 1;
    let runs = recovered
        .into_iter()
        .map(|h| {
            let (_tx, rx) = watch::channel(h.clone());
            (h.run_id, rx)
        })
        .collect();
    let assets = config.assets;
    let (tx, rx) = mpsc::channel::<Job>();
    let worker_catalog = config.catalog.clone();
    let worker_journal = journal.clone();
    std::thread::Builder::new()
        .name("optistack-trainer".into())
        .spawn(move || worker(rx, worker_catalog, worker_journal))?;
    let state = Arc::new(AppState {
        data_dir: config.data_dir,
        catalog: config.catalog,
        tasks,
        journal,
        runs: RwLock::new(runs),
        jobs: Mutex::new(tx),
        next_run: AtomicU64::new(next),
        sim_cache: Mutex::new(HashMap::new()),
    });
    let api = router(state);
    Ok(match assets {
        // single-page app: unknown paths fall back to index.html
        Some(dir) => api.fallback_service(ServeDir::new(&dir).fallback(ServeFile::new(dir.join("index.html")))),
        None => api,
    })
}

fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/tasks", get(list_tasks))
        .route("/api/materials", get(list_materials))
        .route("/api/simulate", post(simulate))
        .route("/api/dbr", post(dbr))
        .route("/api/runs", post(start_run).get(list_runs))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/metrics", get(get_metrics))
        .route("/api/runs/{id}/best", get(get_best))
        .route("/api/whatif", post(whatif))
        .route("/api/qvalues", post(qvalues))
        .with_state(state)
}

fn worker(rx: mpsc::Receiver<Job>, catalog: MaterialCatalog, journal: Journal) {
    while let Ok(job) = rx.recv() {
        let mut handle = job.handle;
        handle.status = RunStatus::Running;
        let _ = journal.append(&handle);
        job.publish.send_replace(handle.clone());
        let mut live = handle.clone();
        let outcome = app::train(&job.dir, &catalog, &job.request, &mut |p| {
            live.episode = Some(p.episode);
            live.best_reward = Some(p.best_reward);
            job.publish.send_replace(live.clone());
            ControlFlow::Continue(())
        });
        let mut done = live;
        match outcome {
            Ok(summary) => {
                done.status = RunStatus::Finished;
                done.best_reward = summary.best.map(|b| b.reward);
            }
            Err(e) => {
                done.status = RunStatus::Failed;
                done.error = Some(e.to_string());
            }
        }
        let _ = journal.append(&done);
        job.publish.send_replace(done);
    }
}

// ---- errors ----

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    kind: &'a str,
    message: &'a str,
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
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_input", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::Config(_) => (StatusCode::BAD_REQUEST, "config"),
            Error::InvalidInput(_) => (StatusCode::BAD_REQUEST, "invalid_input"),
            Error::Usage(_) => (StatusCode::BAD_REQUEST, "usage"),
            Error::Calibration(_) => (StatusCode::BAD_REQUEST, "calibration"),
            Error::Json(_) => (StatusCode::BAD_REQUEST, "json"),
            Error::NotReady { .. } => (StatusCode::CONFLICT, "not_ready"),
            Error::Training { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "training"),
            Error::Checkpoint(_) => (StatusCode::INTERNAL_SERVER_ERROR, "checkpoint"),
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => (StatusCode::NOT_FOUND, "not_found"),
            Error::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                kind: self.kind,
                message: &self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

// ---- request bodies ----

/// A builtin or registered task id, or a full task document.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum TaskRef {
    Id(String),
    Inline(Value),
}

impl TaskRef {
    fn resolve(&self, state: &AppState) -> ApiResult<TaskSpec> {
        let task = match self {
            TaskRef::Id(id) => state
                .task(id)
                .cloned()
                .ok_or_else(|| ApiError::not_found(format!("unknown task '{id}'")))?,
            TaskRef::Inline(v) => TaskSpec::from_json(&v.to_string())?,
        };
        task.validate(Some(&state.catalog))?;
        Ok(task)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBody {
    pub task: TaskRef,
    #[serde(default)]
    pub layers: Vec<Layer>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbrBody {
    pub n1: f64,
    pub n2: f64,
    pub band_edge: f64,
    #[serde(default = "default_periods")]
    pub periods: usize,
    pub low_material: Option<u32>,
    pub high_material: Option<u32>,
}

fn default_periods() -> usize {
    4
}

#[derive(Debug, Serialize)]
struct DbrResponse {
    #[serde(flatten)]
    spec: DbrSpec,
    total_thickness: f64,
    layers: Option<Vec<Layer>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRunBody {
    pub task: TaskRef,
    #[serde(default)]
    pub algo: Option<String>,
    pub episodes: Option<usize>,
    pub seed: Option<u64>,
    pub mu: Option<f64>,
    pub alpha: Option<f64>,
    #[serde(default)]
    pub calibrate: bool,
    pub hyper: Option<Value>,
    pub baseline: Option<Value>,
}

#[derive(Debug, Deserialize)]
pub struct MetricsQuery {
    pub after: Option<usize>,
}

#[derive(Debug, Serialize)]
struct MetricsResponse {
    run_id: String,
    records: Vec<Value>,
    /// Pass as `after` to fetch only newer records.
    cursor: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfBody {
    pub run_id: String,
    /// Zero-based step index.
    pub layer: usize,
    /// Omit for the terminate action.
    pub material: Option<u32>,
    pub thickness: Option<f64>,
    #[serde(default)]
    pub checkpoint: CheckpointChoice,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QValuesBody {
    pub run_id: String,
    /// The partial design whose state is queried.
    #[serde(default)]
    pub layers: Vec<Layer>,
    #[serde(default)]
    pub checkpoint: CheckpointChoice,
}

#[derive(Debug, Serialize)]
struct QValuesResponse {
    /// Task materials in order, followed by terminate.
    materials: Vec<u32>,
    q_values: Vec<f64>,
    /// Actor proposal per material, nm.
    thicknesses: Vec<f64>,
    allowed: Vec<bool>,
    greedy: usize,
}

// ---- handlers ----

#[derive(Debug, Serialize)]
struct TaskSummary {
    id: String,
    layer_budget: usize,
    material_ids: Vec<u32>,
    mu: f64,
    t_min: f64,
    t_max: f64,
    grid_points: usize,
    /// Convex fraction of random Q-value columns, the reference line for convexity ratios.
    convexity_baseline: f64,
    spec: Value,
}

async fn list_tasks(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<TaskSummary>>> {
    let out = state
        .tasks
        .iter()
        .map(|t| {
            Ok(TaskSummary {
                id: t.id.clone(),
                layer_budget: t.layer_budget,
                material_ids: t.material_ids.clone(),
                mu: t.mu,
                t_min: t.t_min,
                t_max: t.t_max,
                grid_points: t.grid.len(),
                convexity_baseline: random_convexity_baseline(t.material_ids.len(), BASELINE_SAMPLES, 0),
                spec: serde_json::from_str(&t.to_json()).map_err(Error::from)?,
            })
        })
        .collect::<ApiResult<Vec<_>>>()?;
    Ok(Json(out))
}

#[derive(Debug, Serialize)]
struct MaterialSummary {
    id: u32,
    name: String,
    reference_index: f64,
}

async fn list_materials(State(state): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let materials = state
        .catalog
        .materials()
        .iter()
        .map(|m| {
            Ok(MaterialSummary {
                id: m.id,
                name: m.name.clone(),
                reference_index: state.catalog.reference_index(m.id)?,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(Json(serde_json::json!({
        "reference_wavelength_nm": state.catalog.reference_wavelength(),
        "materials": materials,
    })))
}

fn cache_key(task: &TaskSpec, layers: &[Layer], reward: &RewardParams) -> ApiResult<String> {
    let mut h = Sha256::new();
    h.update(task.to_json().as_bytes());
    h.update(serde_json::to_vec(layers).map_err(Error::from)?);
    h.update(serde_json::to_vec(reward).map_err(Error::from)?);
    Ok(hex::encode(h.finalize()))
}

async fn simulate(
    State(state): State<Arc<AppState>>,
    body: Result<Json<SimulateBody>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(body) = body?;
    let task = body.task.resolve(&state)?;
    let reward = RewardParams::from_alpha(body.alpha.unwrap_or(DEFAULT_ALPHA))?;
    let key = cache_key(&task, &body.layers, &reward)?;
    let cached = state.sim_cache.lock().unwrap().get(&key).cloned();
    let bytes = match cached {
        Some(b) => b,
        None => {
            let st = state.clone();
            let layers = body.layers;
            let bytes = blocking(move || {
                let report = app::simulate(&task, &st.catalog, &layers, &reward)?;
                Ok(Arc::new(serde_json::to_vec(&report).map_err(Error::from)?))
            })
            .await?;
            let mut cache = state.sim_cache.lock().unwrap();
            if cache.len() >= SIM_CACHE_LIMIT {
                cache.clear();
            }
            cache.insert(key, bytes.clone());
            bytes
        }
    };
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes.as_ref().clone()).into_response())
}

async fn dbr(
    State(state): State<Arc<AppState>>,
    body: Result<Json<DbrBody>, JsonRejection>,
) -> ApiResult<Json<DbrResponse>> {
    let Json(b) = body?;
    let spec = design_dbr(b.n1, b.n2, b.band_edge, b.periods)?;
    let layers = match (b.low_material, b.high_material) {
        (Some(lo), Some(hi)) => {
            state.catalog.material(lo)?;
            state.catalog.material(hi)?;
            Some(spec.stack(lo, hi).layers)
        }
        (None, None) => None,
        _ => return Err(ApiError::bad_request("give both low_material and high_material or neither")),
    };
    Ok(Json(DbrResponse {
        total_thickness: spec.total_thickness(),
        spec,
        layers,
    }))
}

fn merge_json<T: Serialize + for<'de> Deserialize<'de>>(base: T, overrides: Option<Value>) -> ApiResult<T> {
    let Some(Value::Object(o)) = overrides else {
        return match overrides {
            None | Some(Value::Null) => Ok(base),
            Some(_) => Err(ApiError::bad_request("overrides must be a JSON object")),
        };
    };
    let mut v = serde_json::to_value(base).map_err(Error::from)?;
    if let Value::Object(m) = &mut v {
        m.extend(o);
    }
    Ok(serde_json::from_value(v).map_err(Error::from)?)
}

async fn start_run(
    State(state): State<Arc<AppState>>,
    body: Result<Json<StartRunBody>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<RunHandle>)> {
    let Json(b) = body?;
    let mut task = b.task.resolve(&state)?;
    if let Some(mu) = b.mu {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(ApiError::bad_request("mu must be non-negative"));
        }
        task.mu = mu;
    }
    let algo = b.algo.unwrap_or_else(|| ALGO_MPDQN.into());
    let mut hyper: Hyperparameters = merge_json(Hyperparameters::default(), b.hyper)?;
    let mut baseline: BaselineConfig = merge_json(BaselineConfig::default(), b.baseline)?;
    if let Some(e) = b.episodes {
        hyper.episodes = e;
        baseline.episodes = e;
    }
    if let Some(s) = b.seed {
        hyper.seed = s;
        baseline.seed = s;
    }
    let choice = match (b.alpha, b.calibrate) {
        (Some(_), true) => return Err(ApiError::bad_request("alpha and calibrate are exclusive")),
        (Some(alpha), false) => RewardChoice::Alpha { alpha },
        (None, _) => RewardChoice::Calibrate {
            samples: CALIBRATION_SAMPLES,
            seed: hyper.seed,
        },
    };
    let st = state.clone();
    let calib_task = task.clone();
    let reward = blocking(move || Ok(choice.resolve(&calib_task, &st.catalog)?)).await?;
    let request = TrainRequest {
        algo,
        task,
        reward,
        hyper,
        baseline,
    };
    request.validate()?;

    let n = state.next_run.fetch_add(1, Ordering::SeqCst);
    let id = run_id(n);
    let handle = RunHandle::queued(&id, &request.task.id, &request.algo, request.episodes(), request.seed());
    state.journal.append(&handle)?;
    let (tx, rx) = watch::channel(handle.clone());
    state.runs.write().unwrap().insert(id.clone(), rx);
    let job = Job {
        handle: handle.clone(),
        request,
        dir: run_dir(&state.data_dir, &id),
        publish: tx,
    };
    state
        .jobs
        .lock()
        .unwrap()
        .send(job)
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "worker", "training worker stopped"))?;
    Ok((StatusCode::ACCEPTED, Json(handle)))
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Json<Vec<RunHandle>> {
    let runs = state.runs.read().unwrap();
    Json(runs.values().map(|rx| rx.borrow().clone()).collect())
}

async fn get_run(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<RunHandle>> {
    state
        .snapshot(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown run '{id}'")))
}

async fn get_metrics(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<Json<MetricsResponse>> {
    state
        .snapshot(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown run '{id}'")))?;
    let dir = run_dir(&state.data_dir, &id);
    let records: Vec<Value> = blocking(move || Ok(read_metrics(&dir, q.after)?)).await?;
    let cursor = records
        .last()
        .and_then(|r| r.get("episode"))
        .and_then(Value::as_u64)
        .map(|e| e as usize)
        .or(q.after);
    Ok(Json(MetricsResponse {
        run_id: id,
        records,
        cursor,
    }))
}

async fn get_best(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    state
        .snapshot(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown run '{id}'")))?;
    let dir = run_dir(&state.data_dir, &id);
    match read_best(&dir) {
        Ok(best) => Ok(Json(best).into_response()),
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_ready",
            format!("run '{id}' has no best design yet"),
        )),
        Err(e) => Err(e.into()),
    }
}

fn agent_run_dir(state: &AppState, id: &str) -> ApiResult<PathBuf> {
    let h = state
        .snapshot(id)
        .ok_or_else(|| ApiError::not_found(format!("unknown run '{id}'")))?;
    if h.algo != ALGO_MPDQN {
        return Err(ApiError::bad_request(format!(
            "run '{id}' uses '{}'; Q-value queries need an '{ALGO_MPDQN}' run",
            h.algo
        )));
    }
    if h.status == RunStatus::Queued {
        return Err(ApiError::new(StatusCode::CONFLICT, "not_ready", format!("run '{id}' has not started")));
    }
    Ok(run_dir(&state.data_dir, id))
}

fn checkpoint_present(dir: &Path, which: CheckpointChoice) -> ApiResult<()> {
    if dir.join(which.dir_name()).join("bundle.json").is_file() {
        Ok(())
    } else {
        Err(ApiError::new(
            StatusCode::CONFLICT,
            "not_ready",
            format!("checkpoint '{}' is not available yet", which.dir_name()),
        ))
    }
}

async fn whatif(
    State(state): State<Arc<AppState>>,
    body: Result<Json<WhatIfBody>, JsonRejection>,
) -> ApiResult<Json<WhatIfRecord>> {
    let Json(b) = body?;
    let dir = agent_run_dir(&state, &b.run_id)?;
    checkpoint_present(&dir, b.checkpoint)?;
    let alternative = match (b.material, b.thickness) {
        (Some(material), Some(thickness)) => Action::Place { material, thickness },
        (None, None) => Action::Terminate,
        _ => return Err(ApiError::bad_request("give material and thickness together, or neither to terminate")),
    };
    let st = state.clone();
    let record = blocking(move || {
        let run = load_agent_run(&dir, b.checkpoint)?;
        if let Action::Place { thickness, .. } = alternative {
            if !(thickness >= run.task.t_min && thickness <= run.task.t_max) {
                return Err(ApiError::bad_request(format!(
                    "thickness {thickness} outside [{}, {}] nm",
                    run.task.t_min, run.task.t_max
                )));
            }
        }
        Ok(what_if(
            &run.bundle,
            &run.task,
            &st.catalog,
            run.config.reward,
            run.hyper.gamma,
            run.hyper.forbid_repeat_materials,
            b.layer,
            alternative,
        )?)
    })
    .await?;
    Ok(Json(record))
}

async fn qvalues(
    State(state): State<Arc<AppState>>,
    body: Result<Json<QValuesBody>, JsonRejection>,
) -> ApiResult<Json<QValuesResponse>> {
    let Json(b) = body?;
    let dir = agent_run_dir(&state, &b.run_id)?;
    checkpoint_present(&dir, b.checkpoint)?;
    let st = state.clone();
    let out = blocking(move || {
        let run = load_agent_run(&dir, b.checkpoint)?;
        let mut env = DesignEnv::new(&run.task, &st.catalog, run.config.reward, run.hyper.gamma)?
            .forbid_repeat_materials(run.hyper.forbid_repeat_materials);
        env.reset();
        if b.layers.len() >= run.task.layer_budget {
            return Err(ApiError::bad_request("a full-depth design has no next action"));
        }
        for l in &b.layers {
            env.step(Action::Place {
                material: l.material,
                thickness: l.thickness,
            })?;
        }
        let s: Vec<f32> = env.state().encode().iter().map(|&x| x as f32).collect();
        let thicknesses = run.bundle.actor_thicknesses(&s, false)?;
        let q_values = run.bundle.q_values(&s, &thicknesses, false)?;
        let allowed = env.allowed_materials();
        let greedy = optistack_core::agent::greedy_index(&q_values, &allowed);
        Ok(QValuesResponse {
            materials: run.task.material_ids.clone(),
            q_values,
            thicknesses,
            allowed,
            greedy,
        })
    })
    .await?;
    Ok(Json(out))
}
