//! Read-only HTTP API over a run's artifact directory.
//!
//! The service loads the run manifest, the inputs it references and the
//! stored T map. New analysis windows are computed on demand from a cache of
//! speckle-filtered scenes. Job ids are derived from the normalized window,
//! so the same window always maps to the same job.

pub mod tiles;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::sync::Semaphore;

use pwtt::footprint::{AnnotationLayer, FootprintLayer, Label};
use pwtt::geojson::{
    feature_collection, geometry_bbox, prediction_feature, read_annotations, read_feature_collection,
    read_footprints, FeatureCollection, PredictionRow,
};
use pwtt::manifest::load_stack;
use pwtt::pipeline::{read_run_manifest, read_tmap, score_tmap, RunConfig, RunManifest, Scoring, WindowConfig};
use pwtt::population::{exposure, PopulationRaster};
use pwtt::raster::{AnalysisWindow, Extent, Raster, SceneStack};
use pwtt::ttest::{compute_tmap, filter_stack, StratumRecord};
use pwtt::Error;

use tiles::{encode_png, render, Ramp, BANDS, TILE_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

/// Everything derived from one window's T map.
pub struct JobResult {
    pub tmap: Raster,
    pub strata: Vec<StratumRecord>,
    pub scoring: Scoring,
}

impl JobResult {
    fn max_t(&self) -> Option<f64> {
        self.tmap.max()
    }
}

#[derive(Clone)]
struct Job {
    window: AnalysisWindow,
    status: JobStatus,
    error: Option<String>,
    result: Option<Arc<JobResult>>,
}

/// Shared, read-only inputs plus the in-process job store.
pub struct AppState {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    footprints: FootprintLayer,
    annotations: Option<AnnotationLayer>,
    population: Option<PopulationRaster>,
    events: Option<FeatureCollection>,
    stack: SceneStack,
    filtered: OnceLock<std::result::Result<SceneStack, String>>,
    jobs: RwLock<HashMap<String, Job>>,
    workers: Semaphore,
    pub default_job: String,
}

fn config(m: &RunManifest) -> &RunConfig {
    &m.config
}

/// Deterministic id of a window: hash of its normalized RFC 3339 bounds.
pub fn job_id(w: &AnalysisWindow) -> String {
    let canon = format!(
        "{}/{}|{}/{}",
        w.reference.start.to_rfc3339(),
        w.reference.end.to_rfc3339(),
        w.inference.start.to_rfc3339(),
        w.inference.end.to_rfc3339()
    );
    hex::encode(Sha256::digest(canon.as_bytes()))[..16].to_string()
}

impl AppState {
    /// Loads an artifact directory written by a run.
    pub fn load(dir: &Path, workers: usize) -> pwtt::Result<Self> {
        let manifest = read_run_manifest(dir)?;
        let cfg = config(&manifest).clone();
        let footprints = read_footprints(&cfg.footprints)?;
        let annotations = cfg.annotations.as_deref().map(read_annotations).transpose()?;
        let population = cfg.population.as_deref().map(PopulationRaster::read).transpose()?;
        let events = cfg.events.as_deref().map(read_feature_collection).transpose()?;
        let stack = load_stack(&cfg.manifest)?;
        let (tmap, side) = read_tmap(dir)?;
        let window = side.window;
        let scoring = score_tmap(&tmap, &side.strata, footprints.clone(), annotations.as_ref(), &cfg)?;
        let default_job = job_id(&window);
        let mut jobs = HashMap::new();
        jobs.insert(
            default_job.clone(),
            Job {
                window,
                status: JobStatus::Done,
                error: None,
                result: Some(Arc::new(JobResult {
                    tmap,
                    strata: side.strata,
                    scoring,
                })),
            },
        );
        Ok(AppState {
            dir: dir.to_path_buf(),
            manifest,
            footprints,
            annotations,
            population,
            events,
            stack,
            filtered: OnceLock::new(),
            jobs: RwLock::new(jobs),
            workers: Semaphore::new(workers.max(1)),
            default_job,
        })
    }

    fn cfg(&self) -> &RunConfig {
        config(&self.manifest)
    }

    fn filtered(&self) -> std::result::Result<&SceneStack, String> {
        self.filtered
            .get_or_init(|| filter_stack(&self.stack, &self.cfg().speckle).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Runs one window to completion on the calling thread.
    pub fn compute(&self, window: &AnalysisWindow) -> pwtt::Result<JobResult> {
        let stack = self.filtered().map_err(Error::InvalidArgument)?;
        let t = compute_tmap(stack, window, &self.cfg().pwtt)?;
        let scoring = score_tmap(
            &t.composite,
            &t.strata,
            self.footprints.clone(),
            self.annotations.as_ref(),
            self.cfg(),
        )?;
        Ok(JobResult {
            tmap: t.composite,
            strata: t.strata,
            scoring,
        })
    }

    fn job(&self, id: &str) -> Option<Job> {
        self.jobs.read().expect("job store lock").get(id).cloned()
    }

    fn set_job(&self, id: &str, f: impl FnOnce(&mut Job)) {
        if let Some(j) = self.jobs.write().expect("job store lock").get_mut(id) {
            f(j);
        }
    }
}

type Shared = Arc<AppState>;

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1}))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn not_found(what: impl Into<String>) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, what.into())
}

fn bad_request(what: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, what.into())
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/meta", get(meta))
        .route("/v1/compute", post(compute))
        .route("/v1/jobs/{id}", get(job_status))
        .route("/v1/tiles/{z}/{x}/{y}", get(tile))
        .route("/v1/buildings", get(buildings))
        .route("/v1/pr_curve", get(pr_curve))
        .route("/v1/exposure", get(exposure_handler))
        .route("/v1/events", get(events))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(dir: &Path, addr: SocketAddr, workers: usize) -> pwtt::Result<()> {
    let dir = dir.to_path_buf();
    let state = tokio::task::spawn_blocking(move || AppState::load(&dir, workers))
        .await
        .map_err(|e| Error::InvalidArgument(e.to_string()))??;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::InvalidArgument(format!("bind {addr}: {e}")))?;
    log::info!("serving {} on {addr}", state.dir.display());
    axum::serve(listener, router(Arc::new(state)))
        .await
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn window_json(w: &AnalysisWindow) -> Value {
    json!({
        "reference": [w.reference.start.to_rfc3339(), w.reference.end.to_rfc3339()],
        "inference": [w.inference.start.to_rfc3339(), w.inference.end.to_rfc3339()],
    })
}

fn extent_json(e: &Extent) -> Value {
    json!([e.min_x, e.min_y, e.max_x, e.max_y])
}

async fn meta(State(s): State<Shared>) -> Json<Value> {
    let grid = &s.stack.grid();
    let span = s.stack.time_span().map(|(a, b)| json!({"start": a.to_rfc3339(), "end": b.to_rfc3339()}));
    let cities: std::collections::BTreeSet<&str> = s.footprints.footprints.iter().map(|f| f.city.as_str()).collect();
    let default = s.job(&s.default_job).expect("default job");
    let threshold = default.result.as_ref().map(|r| r.scoring.threshold);
    Json(json!({
        "version": s.manifest.version,
        "crs": grid.crs_id,
        "extent": extent_json(&grid.extent()),
        "grid": {"width": grid.width, "height": grid.height, "pixel_size": grid.pixel_size},
        "date_range": span,
        "scenes": s.stack.len(),
        "strata": s.stack.strata().iter().map(|t| t.to_string()).collect::<Vec<_>>(),
        "cities": cities,
        "buildings": s.footprints.footprints.len(),
        "run_window": window_json(&default.window),
        "default_job": s.default_job,
        "threshold": threshold,
        "labels": s.annotations.is_some(),
        "population": s.population.is_some(),
        "events": s.events.is_some(),
        "tiles": {
            "url": "/v1/tiles/{z}/{x}/{y}",
            "tile_size": TILE_SIZE,
            "root_side_m": grid.width.max(grid.height) as f64 * grid.pixel_size,
            "origin": [grid.origin_x, grid.origin_y],
        },
    }))
}

async fn compute(State(s): State<Shared>, body: Bytes) -> ApiResult<Response> {
    let req: WindowConfig =
        serde_json::from_slice(&body).map_err(|e| bad_request(format!("malformed window request: {e}")))?;
    let window = match req.to_window() {
        Ok(w) => w,
        Err(Error::InvalidWindow(m)) => return Err(ApiError(StatusCode::CONFLICT, m)),
        Err(e) => return Err(bad_request(e.to_string())),
    };
    let id = job_id(&window);
    {
        let mut jobs = s.jobs.write().expect("job store lock");
        if let Some(j) = jobs.get(&id) {
            if j.status != JobStatus::Failed {
                return Ok((StatusCode::OK, Json(json!({"job": id, "status": j.status}))).into_response());
            }
        }
        jobs.insert(
            id.clone(),
            Job {
                window,
                status: JobStatus::Queued,
                error: None,
                result: None,
            },
        );
    }
    let state = s.clone();
    let job = id.clone();
    tokio::spawn(async move {
        let Ok(_permit) = state.workers.acquire().await else { return };
        state.set_job(&job, |j| j.status = JobStatus::Running);
        let st = state.clone();
        let res = tokio::task::spawn_blocking(move || st.compute(&window)).await;
        state.set_job(&job, |j| match res {
            Ok(Ok(r)) => {
                j.status = JobStatus::Done;
                j.result = Some(Arc::new(r));
            }
            Ok(Err(e)) => {
                j.status = JobStatus::Failed;
                j.error = Some(e.to_string());
            }
            Err(e) => {
                j.status = JobStatus::Failed;
                j.error = Some(format!("worker panicked: {e}"));
            }
        });
    });
    Ok((StatusCode::ACCEPTED, Json(json!({"job": id, "status": JobStatus::Queued}))).into_response())
}

async fn job_status(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let j = s.job(&id).ok_or_else(|| not_found(format!("unknown job {id}")))?;
    let mut v = json!({
        "job": id,
        "status": j.status,
        "window": window_json(&j.window),
    });
    if let Some(e) = &j.error {
        v["error"] = json!(e);
    }
    if let Some(r) = &j.result {
        v["tiles"] = json!(format!("/v1/tiles/{{z}}/{{x}}/{{y}}?job={id}"));
        v["max_t"] = json!(r.max_t());
        v["threshold"] = json!(r.scoring.threshold);
        v["strata"] = json!(r.strata);
        v["buildings_scored"] = json!(r.scoring.records.len());
    }
    Ok(Json(v))
}

/// The finished result for `job` (the run's own window when absent).
fn result_for(s: &AppState, job: Option<&str>) -> ApiResult<(String, Arc<JobResult>)> {
    let id = job.unwrap_or(&s.default_job).to_string();
    let j = s.job(&id).ok_or_else(|| not_found(format!("unknown job {id}")))?;
    match (j.status, j.result) {
        (JobStatus::Done, Some(r)) => Ok((id, r)),
        (JobStatus::Failed, _) => Err(ApiError(
            StatusCode::CONFLICT,
            format!("job {id} failed: {}", j.error.unwrap_or_default()),
        )),
        _ => Err(ApiError(StatusCode::CONFLICT, format!("job {id} is not finished"))),
    }
}

fn threshold_or_default(t: Option<f64>, r: &JobResult) -> ApiResult<f64> {
    match t {
        Some(v) if !v.is_finite() => Err(bad_request("threshold must be finite")),
        Some(v) => Ok(v),
        None => Ok(r.scoring.threshold.value),
    }
}

#[derive(Debug, Deserialize)]
pub struct JobQuery {
    job: Option<String>,
    threshold: Option<f64>,
    bbox: Option<String>,
}

fn parse_bbox(b: Option<&str>) -> ApiResult<Option<Extent>> {
    let Some(b) = b else { return Ok(None) };
    let v: Vec<f64> = b
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad_request(format!("bbox must be min_x,min_y,max_x,max_y, got {b}")))?;
    if v.len() != 4 || !(v[0] <= v[2] && v[1] <= v[3]) || v.iter().any(|x| !x.is_finite()) {
        return Err(bad_request(format!("bbox must be min_x,min_y,max_x,max_y, got {b}")));
    }
    Ok(Some(Extent {
        min_x: v[0],
        min_y: v[1],
        max_x: v[2],
        max_y: v[3],
    }))
}

fn touches(a: &Extent, b: &Extent) -> bool {
    a.min_x <= b.max_x && b.min_x <= a.max_x && a.min_y <= b.max_y && b.min_y <= a.max_y
}

async fn tile(
    State(s): State<Shared>,
    UrlPath((z, x, y)): UrlPath<(u32, u32, u32)>,
    Query(q): Query<JobQuery>,
) -> ApiResult<Response> {
    let (_, r) = result_for(&s, q.job.as_deref())?;
    let thr = threshold_or_default(q.threshold, &r)?;
    let ramp = match &r.scoring.pr {
        Some(pr) => Ramp::Precision(pr),
        None => Ramp::Relative {
            max: r.max_t().unwrap_or(thr),
        },
    };
    let px = render(&r.tmap, z, x, y, thr, &ramp).ok_or_else(|| bad_request(format!("tile {z}/{x}/{y} out of range")))?;
    let body = encode_png(&px, TILE_SIZE, TILE_SIZE);
    Ok(([(header::CONTENT_TYPE, "image/png")], body).into_response())
}

async fn buildings(State(s): State<Shared>, Query(q): Query<JobQuery>) -> ApiResult<Json<Value>> {
    let (id, r) = result_for(&s, q.job.as_deref())?;
    let thr = threshold_or_default(q.threshold, &r)?;
    let bbox = parse_bbox(q.bbox.as_deref())?;
    let sc = &r.scoring.scores;
    let features: Vec<Value> = sc
        .footprints
        .iter()
        .filter(|lf| bbox.as_ref().is_none_or(|b| touches(b, &lf.footprint.polygon.bbox())))
        .filter_map(|lf| {
            let t = *sc.mean_t.get(&lf.footprint.id)?;
            Some(prediction_feature(&PredictionRow {
                id: lf.footprint.id.clone(),
                city: lf.footprint.city.clone(),
                country: lf.footprint.country.clone(),
                area: lf.footprint.area,
                mean_t: t,
                predicted: if t > thr { Label::Damaged } else { Label::Undamaged },
                label: sc.has_labels.then_some(lf.label),
                polygon: Some(lf.footprint.polygon.clone()),
            }))
        })
        .collect();
    let mut fc = feature_collection(s.footprints.crs_id.as_deref(), features);
    fc["job"] = json!(id);
    fc["threshold"] = json!(thr);
    Ok(Json(fc))
}

async fn pr_curve(State(s): State<Shared>, Query(q): Query<JobQuery>) -> ApiResult<Json<Value>> {
    let (id, r) = result_for(&s, q.job.as_deref())?;
    let pr = r
        .scoring
        .pr
        .as_ref()
        .ok_or_else(|| not_found("no precision-recall curve: run has no damage annotations"))?;
    let best = pwtt::metrics::select_threshold(pr).ok().map(|b| {
        json!({"threshold": b.threshold, "precision": b.precision, "recall": b.recall, "f1": b.f1()})
    });
    Ok(Json(json!({
        "job": id,
        "weighting": s.cfg().evaluation.weighting,
        "points": pr,
        "f1_optimal": best,
        "legend": BANDS,
    })))
}

async fn exposure_handler(State(s): State<Shared>, Query(q): Query<JobQuery>) -> ApiResult<Json<Value>> {
    let pop = s
        .population
        .as_ref()
        .ok_or_else(|| not_found("no population raster configured"))?;
    let (id, r) = result_for(&s, q.job.as_deref())?;
    let thr = threshold_or_default(q.threshold, &r)?;
    let e = exposure(pop, &r.tmap, thr).map_err(|e| ApiError(StatusCode::CONFLICT, e.to_string()))?;
    let mut v = json!(e);
    v["job"] = json!(id);
    Ok(Json(v))
}

async fn events(State(s): State<Shared>, Query(q): Query<JobQuery>) -> ApiResult<Json<Value>> {
    let ev = s.events.as_ref().ok_or_else(|| not_found("no event overlay configured"))?;
    let bbox = parse_bbox(q.bbox.as_deref())?;
    let features: Vec<Value> = ev
        .features
        .iter()
        .filter(|f| match &bbox {
            None => true,
            Some(b) => geometry_bbox(&f["geometry"]).is_some_and(|e| touches(b, &e)),
        })
        .cloned()
        .collect();
    Ok(Json(feature_collection(ev.crs_id.as_deref(), features)))
}
