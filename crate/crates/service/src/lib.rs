//! HTTP API over a results directory written by the batch pipeline.
//!
//! | route | answer |
//! |---|---|
//! | `GET /api/health` | liveness |
//! | `GET /api/days` | analysed days with their chain summary |
//! | `GET /api/day/{d}/stationary` | per-station stationary mass and cluster sign |
//! | `POST /api/day/{d}/disrupt` | on-demand disruption of one station |
//! | `GET /api/aggregate/{measure}` | statistics of a measure over the range |
//!
//! Everything else is served from the static directory, if one is
//! configured. Stored snapshots are never written; a day's chain is rebuilt
//! once on first use and kept in a small LRU cache.

mod cache;
mod json;

use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use serde::Deserialize;
use serde_json::{json, Value};
use stationrank::aggregate::{DayResult, Measure};
use stationrank::markov::MarkovModel;
use stationrank::perturb::{disrupt_node, PiSolver};
use stationrank::store::{ResultsStore, StoreError};
use stationrank::StationId;
use tokio::sync::{OnceCell, Semaphore};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

pub use cache::Lru;
use json::opt_sig6;
pub use json::sig6;

/// Disruption intensity used when a request leaves it out.
pub const DEFAULT_T: f64 = 0.95;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub results: PathBuf,
    /// Built web UI bundle served under `/`.
    pub static_dir: Option<PathBuf>,
    /// Days whose chains are kept in memory.
    pub day_cache: usize,
    /// Disruption responses kept in memory.
    pub result_cache: usize,
    /// Disruptions computed at the same time; further requests get 503.
    pub workers: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            results: PathBuf::from("results"),
            static_dir: None,
            day_cache: 4,
            result_cache: 64,
            workers: 2,
        }
    }
}

/// A day's stored result together with its rebuilt chain.
pub struct LoadedDay {
    pub result: DayResult,
    pub model: MarkovModel,
}

type DayCell = Arc<OnceCell<Arc<LoadedDay>>>;
type ResultKey = (NaiveDate, StationId, u64);

pub struct AppState {
    store: ResultsStore,
    static_dir: Option<PathBuf>,
    days: Mutex<Lru<NaiveDate, DayCell>>,
    results: Mutex<Lru<ResultKey, Arc<Vec<u8>>>>,
    workers: Arc<Semaphore>,
    loads: AtomicUsize,
}

impl AppState {
    pub fn new(config: &ServiceConfig) -> Arc<AppState> {
        Arc::new(AppState {
            store: ResultsStore::new(&config.results),
            static_dir: config.static_dir.clone(),
            days: Mutex::new(Lru::new(config.day_cache.max(1))),
            results: Mutex::new(Lru::new(config.result_cache)),
            workers: Arc::new(Semaphore::new(config.workers)),
            loads: AtomicUsize::new(0),
        })
    }

    /// Number of day loads started so far.
    pub fn load_count(&self) -> usize {
        self.loads.load(Ordering::SeqCst)
    }

    /// The loaded day, reading it at most once however many requests ask
    /// for it concurrently.
    pub async fn day(&self, day: NaiveDate) -> Result<Arc<LoadedDay>, ApiError> {
        let cell = self
            .days
            .lock()
            .expect("day cache lock")
            .get_or_insert_with(day, || Arc::new(OnceCell::new()));
        let loaded = cell
            .get_or_try_init(|| async {
                self.loads.fetch_add(1, Ordering::SeqCst);
                let store = self.store.clone();
                tokio::task::spawn_blocking(move || load_day(&store, day))
                    .await
                    .map_err(|e| ApiError::internal(format!("day loader panicked: {e}")))?
            })
            .await;
        if loaded.is_err() {
            // Allow a later request to retry, e.g. after the file appears.
            self.days.lock().expect("day cache lock").remove(&day);
        }
        loaded.cloned()
    }
}

fn load_day(store: &ResultsStore, day: NaiveDate) -> Result<Arc<LoadedDay>, ApiError> {
    let snapshot = store.read_snapshot(day).map_err(|e| match e {
        StoreError::Missing(_) => ApiError::not_found(format!("no snapshot for {day}")),
        e => {
            log::warn!("unreadable snapshot for {day}: {e}");
            ApiError::internal(format!("unreadable snapshot for {day}: {e}"))
        }
    })?;
    let result = snapshot
        .outcome
        .map_err(|f| ApiError::not_found(format!("analysis of {day} failed: {f}")))?;
    let model = result
        .model()
        .map_err(|e| ApiError::internal(format!("cannot rebuild the chain of {day}: {e}")))?;
    Ok(Arc::new(LoadedDay { result, model }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

fn parse_day(raw: &str) -> Result<NaiveDate, ApiError> {
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map_err(|_| ApiError::not_found(format!("unknown day {raw:?}")))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn days(State(state): State<Arc<AppState>>) -> Result<Json<Value>, ApiError> {
    let store = state.store.clone();
    let listing = tokio::task::spawn_blocking(move || -> Result<Vec<Value>, StoreError> {
        let mut out = Vec::new();
        for day in store.list_days()? {
            match store.read_chain_summary(day) {
                Ok(Some(c)) => out.push(json!({
                    "operation_day": day.format("%Y-%m-%d").to_string(),
                    "n": c.n,
                    "edges": c.edges,
                    "kemeny": sig6(c.kemeny),
                    "dropped_fraction": sig6(c.dropped_fraction),
                })),
                Ok(None) => log::info!("day {day} is listed but its analysis failed"),
                Err(e) => log::warn!("skipping malformed snapshot for {day}: {e}"),
            }
        }
        Ok(out)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(|e| ApiError::internal(format!("unreadable results directory: {e}")))?;
    Ok(Json(Value::Array(listing)))
}

async fn stationary(
    State(state): State<Arc<AppState>>,
    Path(raw): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let day = parse_day(&raw)?;
    let loaded = state.day(day).await?;
    let r = &loaded.result;
    let stations: Vec<Value> = r
        .stations
        .iter()
        .map(|s| {
            json!({
                "id": s.station_id,
                "name": s.name,
                "lat": opt_sig6(s.lat),
                "lon": opt_sig6(s.lon),
                "has_coordinates": s.lat.is_some() && s.lon.is_some(),
                "pi": sig6(s.pi),
                "cluster": s.cluster,
            })
        })
        .collect();
    Ok(Json(json!({
        "operation_day": raw,
        "clusters": {
            "indicative": r.chain.clusters_indicative,
            "degenerate": r.chain.clusters_degenerate,
        },
        "stations": stations,
    })))
}

#[derive(Debug, Deserialize)]
pub struct DisruptRequest {
    pub station_id: String,
    pub t: Option<f64>,
}

async fn disrupt(
    State(state): State<Arc<AppState>>,
    Path(raw): Path<String>,
    body: Result<Json<DisruptRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
    let t = req.t.unwrap_or(DEFAULT_T);
    if !(t.is_finite() && t > 0.0 && t <= 1.0) {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("t must lie in (0, 1], got {t}"),
        ));
    }
    let day = parse_day(&raw)?;
    let loaded = state.day(day).await?;
    let station = StationId(req.station_id);
    let record = loaded.result.station(&station).ok_or_else(|| {
        ApiError::not_found(format!("station {station} is not in the network of {day}"))
    })?;
    let target = record.state_index;

    let key = (day, station.clone(), t.to_bits());
    let cached = state.results.lock().expect("result cache lock").get(&key);
    let body = match cached {
        Some(b) => b,
        None => {
            let permit = state.workers.clone().try_acquire_owned().map_err(|_| {
                ApiError::new(
                    StatusCode::SERVICE_UNAVAILABLE,
                    "all disruption workers are busy",
                )
            })?;
            let work = loaded.clone();
            let body = tokio::task::spawn_blocking(move || {
                let _permit = permit;
                disruption_body(&work, target, t)
            })
            .await
            .map_err(|e| ApiError::internal(format!("disruption panicked: {e}")))??;
            let body = Arc::new(body);
            state
                .results
                .lock()
                .expect("result cache lock")
                .insert(key, body.clone());
            body
        }
    };
    Ok((
        [(header::CONTENT_TYPE, "application/json")],
        body.as_ref().clone(),
    )
        .into_response())
}

/// Response of one disruption. The summary ranges over the stations other
/// than the target, whose own loss is large by construction.
fn disruption_body(day: &LoadedDay, target: usize, t: f64) -> Result<Vec<u8>, ApiError> {
    let result = disrupt_node(&day.model, target, t, PiSolver::WarmStart)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let pi = day.model.pi();
    let mut gain: Option<(f64, &StationId)> = None;
    let mut loss: Option<(f64, &StationId)> = None;
    let stations: Vec<Value> = day
        .result
        .stations
        .iter()
        .map(|s| {
            let k = s.state_index;
            let rel = (result.pi_tilde[k] - pi[k]) / pi[k];
            if k != target {
                if gain.is_none_or(|(g, _)| rel > g) {
                    gain = Some((rel, &s.station_id));
                }
                if loss.is_none_or(|(l, _)| rel < l) {
                    loss = Some((rel, &s.station_id));
                }
            }
            json!({
                "id": s.station_id,
                "name": s.name,
                "lat": opt_sig6(s.lat),
                "lon": opt_sig6(s.lon),
                "pi": sig6(pi[k]),
                "pi_tilde": sig6(result.pi_tilde[k]),
                "rel_delta": sig6(rel),
            })
        })
        .collect();
    let target_id = day
        .result
        .stations
        .iter()
        .find(|s| s.state_index == target)
        .map(|s| s.station_id.clone());
    let body = json!({
        "target": target_id,
        "t": sig6(t),
        "stations": stations,
        "summary": {
            "max_gain": opt_sig6(gain.map(|g| g.0)),
            "max_gain_station": gain.map(|g| g.1.clone()),
            "max_loss": opt_sig6(loss.map(|l| l.0)),
            "max_loss_station": loss.map(|l| l.1.clone()),
        },
    });
    serde_json::to_vec(&body).map_err(|e| ApiError::internal(e.to_string()))
}

async fn aggregate(
    State(state): State<Arc<AppState>>,
    Path(raw): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let measure: Measure = raw
        .parse()
        .map_err(|_| ApiError::not_found(format!("unknown measure {raw:?}")))?;
    let store = state.store.clone();
    let agg = tokio::task::spawn_blocking(move || store.read_aggregate())
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(|e| match e {
            StoreError::Missing(_) => ApiError::not_found("no aggregate has been computed"),
            e => ApiError::internal(format!("unreadable aggregate: {e}")),
        })?;
    let stations: serde_json::Map<String, Value> = agg
        .stations
        .iter()
        .map(|(id, s)| {
            let stats = s.measures.get(&measure);
            (
                id.to_string(),
                json!({
                    "id": id,
                    "name": s.name,
                    "lat": opt_sig6(s.lat),
                    "lon": opt_sig6(s.lon),
                    "min": opt_sig6(stats.map(|x| x.min)),
                    "max": opt_sig6(stats.map(|x| x.max)),
                    "median": opt_sig6(stats.map(|x| x.median)),
                    "std": opt_sig6(stats.map(|x| x.std)),
                    "presence": s.presence,
                }),
            )
        })
        .collect();
    Ok(Json(json!({
        "measure": measure.as_str(),
        "days": agg.days.len(),
        "stations": stations,
    })))
}

const PLACEHOLDER_INDEX: &str = "<!doctype html><title>stationrank</title>\
<p>No web bundle is configured. The JSON API lives under <code>/api/</code>.</p>";

async fn placeholder() -> Response {
    (StatusCode::NOT_FOUND, Html(PLACEHOLDER_INDEX)).into_response()
}

/// All routes over a shared state.
pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/days", get(days))
        .route("/api/day/{day}/stationary", get(stationary))
        .route("/api/day/{day}/disrupt", post(disrupt))
        .route("/api/aggregate/{measure}", get(aggregate));
    let app = match &state.static_dir {
        Some(dir) => {
            api.fallback_service(ServeDir::new(dir).append_index_html_on_directories(true))
        }
        None => api.fallback(placeholder),
    };
    app.layer(cors)
        .layer(
            tower_http::set_header::SetResponseHeaderLayer::if_not_present(
                header::CACHE_CONTROL,
                HeaderValue::from_static("no-cache"),
            ),
        )
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> io::Result<()> {
    let app = router(AppState::new(&config));
    axum::serve(listener, app).await
}

/// Binds `addr` and serves on a fresh multi-threaded runtime, blocking the
/// caller.
pub fn run(addr: SocketAddr, config: ServiceConfig) -> io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on http://{}", listener.local_addr()?);
        serve(listener, config).await
    })
}
