//! JSON-over-HTTP access to the run store.

use std::collections::{BTreeMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};

use fdd_core::dataset::{load_frame, FaultInterval};
use fdd_core::optics::suggest_threshold;
use fdd_core::pca::{ChannelLoading, PairCorrelation};
use fdd_core::pipeline::{
    self, extraction_labels_csv, whatif_extract, Algorithm, Annotation, Extraction, RowCounts, RunRecord, Scores,
};
use fdd_core::store::{RunState, RunStore, StatusFile};
use fdd_core::time::{self as fdd_time, Timestamp, YearMonth};
use fdd_core::{Error, FaultFlag, RunConfig};

use crate::decimate::{decimate, MAX_POINTS};

/// Error body: `{"status": 404, "code": "unknown_run", "message": "..."}`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code,
            message: message.into(),
        }
    }

    fn bad_body(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_body", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        let (status, code) = match e.root() {
            Error::UnknownRun(_) => (StatusCode::NOT_FOUND, "unknown_run"),
            Error::RunBusy(_) => (StatusCode::CONFLICT, "run_busy"),
            Error::RunFailed { .. } => (StatusCode::CONFLICT, "run_failed"),
            Error::NonPositiveThreshold(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_threshold"),
            Error::UnknownChannel(_) | Error::MissingChannel(_) => (StatusCode::BAD_REQUEST, "unknown_channel"),
            Error::InvalidConfig(_) | Error::InvalidParams(_) | Error::InvalidSchema(_) => {
                (StatusCode::BAD_REQUEST, "invalid_config")
            }
            Error::Json(_) => (StatusCode::BAD_REQUEST, "invalid_body"),
            Error::Io { .. } | Error::NumericalFailure(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_data"),
        };
        Self::new(status, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Clone)]
pub struct AppState {
    store: Arc<RunStore>,
    workers: Arc<Semaphore>,
    inflight: Arc<Mutex<HashSet<String>>>,
}

impl AppState {
    /// `workers` bounds how many runs execute at once.
    pub fn new(store: RunStore, workers: usize) -> Self {
        Self {
            store: Arc::new(store),
            workers: Arc::new(Semaphore::new(workers.max(1))),
            inflight: Arc::new(Mutex::new(HashSet::new())),
        }
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }
}

/// Runs blocking store work off the async executor.
async fn blocking<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    F: FnOnce(&RunStore) -> fdd_core::Result<T> + Send + 'static,
    T: Send + 'static,
{
    let store = state.store.clone();
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_body(e.to_string()))
}

/// Origins served from this machine: `http://localhost[:port]` and the
/// loopback addresses.
pub fn is_local_origin(origin: &[u8]) -> bool {
    let Ok(origin) = std::str::from_utf8(origin) else {
        return false;
    };
    let rest = origin
        .strip_prefix("http://")
        .or_else(|| origin.strip_prefix("https://"))
        .unwrap_or("");
    let host = match rest.strip_prefix('[') {
        Some(v6) => v6.split(']').next().map(|h| format!("[{h}]")).unwrap_or_default(),
        None => rest.split(':').next().unwrap_or("").to_string(),
    };
    let tail = &rest[host.len().min(rest.len())..];
    let port_ok = tail.is_empty() || (tail.starts_with(':') && tail[1..].chars().all(|c| c.is_ascii_digit()));
    matches!(host.as_str(), "localhost" | "127.0.0.1" | "[::1]") && port_ok
}

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin: &HeaderValue, _| is_local_origin(origin.as_bytes())))
        .allow_methods([Method::GET, Method::POST, Method::PUT])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api/runs", get(list_runs).post(create_run))
        .route("/api/runs/:id", get(get_run))
        .route("/api/runs/:id/reachability", get(reachability))
        .route("/api/runs/:id/kdist", get(kdist))
        .route("/api/runs/:id/extract", post(extract))
        .route("/api/runs/:id/timeseries", get(timeseries))
        .route("/api/runs/:id/pca", get(pca))
        .route("/api/runs/:id/annotations", put(annotate))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .layer(cors)
        .with_state(state)
}

#[derive(Debug, Serialize)]
pub struct RunList {
    pub runs: Vec<StatusFile>,
}

async fn list_runs(State(st): State<AppState>) -> ApiResult<RunList> {
    let runs = blocking(&st, |s| s.list()).await?;
    Ok(Json(RunList { runs }))
}

#[derive(Debug, Serialize)]
pub struct Accepted {
    pub run_id: String,
    pub state: RunState,
}

async fn create_run(State(st): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Accepted>), ApiError> {
    let config: RunConfig = parse_body(&body)?;
    config.validate()?;
    let cfg = config.clone();
    let (id, status) = blocking(&st, move |s| {
        let id = s.register(&cfg)?;
        Ok((id.clone(), s.status(&id)?))
    })
    .await
    .map_err(|e| match e.code {
        "internal" => ApiError::new(StatusCode::BAD_REQUEST, "dataset_unreadable", e.message),
        _ => e,
    })?;

    let fresh = matches!(status.state, RunState::Queued | RunState::Failed);
    let claimed = fresh && st.inflight.lock().expect("inflight poisoned").insert(id.clone());
    if claimed {
        if status.state == RunState::Failed {
            st.store.set_status(&id, RunState::Queued, None, None)?;
        }
        let state = st.clone();
        let run_id = id.clone();
        tokio::spawn(async move {
            let permit = state.workers.clone().acquire_owned().await;
            let store = state.store.clone();
            let outcome = tokio::task::spawn_blocking(move || store.execute(&config)).await;
            drop(permit);
            match outcome {
                Ok(Ok(_)) => tracing::info!(run = %run_id, "run finished"),
                Ok(Err(e)) => tracing::warn!(run = %run_id, error = %e, "run failed"),
                Err(e) => tracing::error!(run = %run_id, error = %e, "run task panicked"),
            }
            state.inflight.lock().expect("inflight poisoned").remove(&run_id);
        });
    }
    let state = if claimed { RunState::Queued } else { status.state };
    Ok((StatusCode::ACCEPTED, Json(Accepted { run_id: id, state })))
}

#[derive(Debug, Serialize)]
pub struct ExtractionSummary {
    pub key: String,
    pub algorithm: Algorithm,
    pub threshold: Option<f64>,
    pub num_clusters: usize,
    pub cluster_sizes: Vec<usize>,
    pub noise_count: usize,
    pub normal_cluster: Option<i64>,
    pub ambiguous_majority: bool,
    pub all_noise: bool,
    pub scores: Option<Scores>,
    pub intervals: Vec<FaultInterval>,
}

impl From<&Extraction> for ExtractionSummary {
    fn from(e: &Extraction) -> Self {
        Self {
            key: e.key(),
            algorithm: e.algorithm,
            threshold: e.threshold,
            num_clusters: e.num_clusters,
            cluster_sizes: e.cluster_sizes.clone(),
            noise_count: e.noise_count,
            normal_cluster: e.normal_cluster,
            ambiguous_majority: e.ambiguous_majority,
            all_noise: e.all_noise,
            scores: e.scores.clone(),
            intervals: e.intervals.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub dataset_digest: String,
    pub config: RunConfig,
    pub status: pipeline::RunStatus,
    pub months: BTreeMap<YearMonth, fdd_core::preprocessing::OperatingMode>,
    pub rows: RowCounts,
    pub cadence_s: u32,
    pub eps: f64,
    pub min_pts: usize,
    pub projection_k: Option<usize>,
    pub suggested_eps: Option<f64>,
    pub suggested_threshold: Option<f64>,
    pub max_reachability: Option<f64>,
    pub dropped_columns: Vec<String>,
    pub kmeans_calinski_harabasz: Option<f64>,
    pub extractions: Vec<ExtractionSummary>,
    pub annotations: Vec<Annotation>,
}

impl From<&RunRecord> for RunSummary {
    fn from(r: &RunRecord) -> Self {
        Self {
            dataset_digest: r.dataset_digest.clone(),
            config: r.config.clone(),
            status: r.status,
            months: r.months.clone(),
            rows: r.rows.clone(),
            cadence_s: r.cadence_s,
            eps: r.eps,
            min_pts: r.optics.params.min_pts,
            projection_k: r.projection_k,
            suggested_eps: r.kdist.suggested_eps,
            suggested_threshold: suggest_threshold(&r.optics),
            max_reachability: r.optics.max_finite_reachability(),
            dropped_columns: r.scaler.dropped_columns.clone(),
            kmeans_calinski_harabasz: r.kmeans_calinski_harabasz,
            extractions: r.extractions.iter().map(ExtractionSummary::from).collect(),
            annotations: r.annotations.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunView {
    pub run_id: String,
    pub state: RunState,
    pub stage: Option<String>,
    pub error: Option<String>,
    /// Present once the clustering stage has finished.
    pub record: Option<RunSummary>,
}

async fn get_run(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<RunView> {
    let view = blocking(&st, move |s| {
        let status = s.status(&id)?;
        let record = match status.state {
            RunState::AwaitingThreshold | RunState::Complete => Some(RunSummary::from(&s.load(&id)?)),
            _ => None,
        };
        Ok(RunView {
            run_id: status.run_id,
            state: status.state,
            stage: status.stage,
            error: status.error,
            record,
        })
    })
    .await?;
    Ok(Json(view))
}

async fn load(st: &AppState, id: String) -> Result<RunRecord, ApiError> {
    blocking(st, move |s| s.load(&id)).await
}

#[derive(Debug, Serialize)]
pub struct ReachabilityView {
    pub run_id: String,
    pub eps: f64,
    pub min_pts: usize,
    /// Row indices in cluster order.
    pub ordering: Vec<usize>,
    /// Timestamp of each position.
    pub timestamps: Vec<String>,
    /// By position; `null` is undefined.
    pub reachability: Vec<Option<f64>>,
    /// By position; `null` is undefined.
    pub core_distance: Vec<Option<f64>>,
    pub max_finite: Option<f64>,
    pub suggested_threshold: Option<f64>,
}

async fn reachability(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<ReachabilityView> {
    let r = load(&st, id).await?;
    let ts = r.timestamps();
    let o = &r.optics;
    Ok(Json(ReachabilityView {
        run_id: r.run_id.clone(),
        eps: o.params.eps,
        min_pts: o.params.min_pts,
        timestamps: o.ordering.iter().map(|&i| fdd_time::format_timestamp(ts[i])).collect(),
        core_distance: o.ordering.iter().map(|&i| o.core_distance[i]).collect(),
        reachability: o.reachability.clone(),
        ordering: o.ordering.clone(),
        max_finite: o.max_finite_reachability(),
        suggested_threshold: suggest_threshold(o),
    }))
}

#[derive(Debug, Serialize)]
pub struct KdistView {
    pub run_id: String,
    pub k: usize,
    pub curve: Vec<f64>,
    pub suggested_eps: Option<f64>,
    pub eps: f64,
}

async fn kdist(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<KdistView> {
    let r = load(&st, id).await?;
    Ok(Json(KdistView {
        run_id: r.run_id,
        k: r.kdist.k,
        curve: r.kdist.curve,
        suggested_eps: r.kdist.suggested_eps,
        eps: r.eps,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractRequest {
    pub threshold: f64,
}

/// Run of equal cluster ids along the reachability ordering, inclusive.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub cluster_id: i64,
}

pub fn segments(ordering: &[usize], cluster_id: &[i64]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (pos, &row) in ordering.iter().enumerate() {
        let id = cluster_id[row];
        match out.last_mut() {
            Some(s) if s.cluster_id == id => s.end = pos,
            _ => out.push(Segment {
                start: pos,
                end: pos,
                cluster_id: id,
            }),
        }
    }
    out
}

#[derive(Debug, Serialize)]
pub struct ExtractView {
    pub run_id: String,
    pub threshold: f64,
    pub num_clusters: usize,
    pub cluster_sizes: Vec<usize>,
    pub noise_count: usize,
    pub normal_cluster: Option<i64>,
    pub ambiguous_majority: bool,
    pub all_noise: bool,
    /// Cluster id per row, -1 for noise.
    pub labels: Vec<i64>,
    /// 1 = fault, per row; `null` when every row is noise.
    pub fault_flags: Option<Vec<u8>>,
    /// Present when the run has ground truth.
    pub metrics: Option<Scores>,
    pub intervals: Vec<FaultInterval>,
    pub segments: Vec<Segment>,
    /// Same bytes the CLI `extract` command writes.
    pub labels_csv: String,
}

async fn extract(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<ExtractView> {
    let req: ExtractRequest = parse_body(&body)?;
    if !(req.threshold > 0.0) {
        return Err(Error::NonPositiveThreshold(req.threshold).into());
    }
    let r = load(&st, id).await?;
    let ex = whatif_extract(&r, req.threshold)?;
    let labels_csv = extraction_labels_csv(&r, &ex)?;
    Ok(Json(ExtractView {
        run_id: r.run_id.clone(),
        threshold: req.threshold,
        num_clusters: ex.num_clusters,
        cluster_sizes: ex.cluster_sizes.clone(),
        noise_count: ex.noise_count,
        normal_cluster: ex.normal_cluster,
        ambiguous_majority: ex.ambiguous_majority,
        all_noise: ex.all_noise,
        segments: segments(&r.optics.ordering, &ex.cluster_id),
        fault_flags: ex.flags.as_ref().map(|f| f.iter().map(|x| u8::from(x.is_fault())).collect()),
        labels: ex.cluster_id,
        metrics: ex.scores,
        intervals: ex.intervals,
        labels_csv,
    }))
}

#[derive(Debug, Deserialize)]
pub struct SeriesQuery {
    pub channels: Option<String>,
    pub from: Option<String>,
    pub to: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SeriesView {
    pub name: String,
    pub timestamps: Vec<String>,
    pub values: Vec<Option<f64>>,
    /// Rows in the window before decimation.
    pub rows: usize,
    pub decimated: bool,
}

#[derive(Debug, Serialize)]
pub struct TimeseriesView {
    pub run_id: String,
    pub from: Option<String>,
    pub to: Option<String>,
    pub max_points: usize,
    pub channels: Vec<SeriesView>,
    /// Intervals of the latest OPTICS extraction, if any.
    pub intervals: Vec<FaultInterval>,
}

fn parse_bound(text: &Option<String>, name: &str) -> Result<Option<Timestamp>, ApiError> {
    match text.as_deref().filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(s) => fdd_time::parse_timestamp(s, None)
            .map(|(t, _)| Some(t))
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "invalid_query", format!("cannot parse `{name}` = `{s}`"))),
    }
}

async fn timeseries(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<SeriesQuery>,
) -> ApiResult<TimeseriesView> {
    let from = parse_bound(&q.from, "from")?;
    let to = parse_bound(&q.to, "to")?;
    let r = load(&st, id).await?;
    let cfg = r.config.clone();
    let digest = r.dataset_digest.clone();
    let frame = blocking(&st, move |_| {
        if pipeline::dataset_digest(&cfg)? != digest {
            return Err(Error::InvalidConfig("dataset changed since the run".into()));
        }
        load_frame(&cfg.dataset, &cfg.schema, cfg.timestamp_format.as_deref())
    })
    .await
    .map_err(|e| match e.code {
        "invalid_config" => ApiError::new(StatusCode::CONFLICT, "dataset_changed", e.message),
        _ => e,
    })?;

    let names: Vec<String> = match q.channels.as_deref().filter(|s| !s.is_empty()) {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => r.config.analysis_channels.clone(),
    };
    let ts = frame.timestamps();
    let lo = from.map_or(0, |f| ts.partition_point(|&t| t < f));
    let hi = to.map_or(ts.len(), |t| ts.partition_point(|&x| x <= t));
    let hi = hi.max(lo);
    let mut channels = Vec::new();
    for name in names {
        let values = frame.channel(&name)?;
        let (dt, dv) = decimate(&ts[lo..hi], &values[lo..hi], MAX_POINTS);
        channels.push(SeriesView {
            name,
            timestamps: dt.iter().map(|&t| fdd_time::format_timestamp(t)).collect(),
            values: dv,
            rows: hi - lo,
            decimated: hi - lo > MAX_POINTS,
        });
    }
    Ok(Json(TimeseriesView {
        run_id: r.run_id.clone(),
        from: q.from,
        to: q.to,
        max_points: MAX_POINTS,
        channels,
        intervals: r
            .latest(Algorithm::Optics)
            .map(|e| e.intervals.clone())
            .unwrap_or_default(),
    }))
}

#[derive(Debug, Serialize)]
pub struct PcaView {
    pub run_id: String,
    pub channels: Vec<String>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Component count picked by the scree rule (or the manual choice).
    pub selected_k: usize,
    /// Components the clusterers saw; `null` when PCA was off.
    pub projection_k: Option<usize>,
    pub loadings: Vec<ChannelLoading>,
    pub correlations: Vec<PairCorrelation>,
}

async fn pca(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<PcaView> {
    let r = load(&st, id).await?;
    Ok(Json(PcaView {
        run_id: r.run_id,
        channels: r.pca.column_names,
        eigenvalues: r.pca.eigenvalues,
        explained_variance_ratio: r.pca.explained_variance_ratio,
        selected_k: r.scree.k,
        projection_k: r.projection_k,
        loadings: r.loadings.loadings,
        correlations: r.correlations,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRequest {
    pub threshold: f64,
    pub verdicts: BTreeMap<i64, FaultFlag>,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub author: String,
}

#[derive(Debug, Serialize)]
pub struct AnnotationsView {
    pub run_id: String,
    pub annotations: Vec<Annotation>,
}

fn now_iso() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0);
    format!("{}Z", fdd_time::format_timestamp(secs))
}

async fn annotate(State(st): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<AnnotationsView> {
    let req: AnnotationRequest = parse_body(&body)?;
    if !(req.threshold > 0.0) || !req.threshold.is_finite() {
        return Err(Error::NonPositiveThreshold(req.threshold).into());
    }
    let annotation = Annotation {
        threshold: req.threshold,
        verdicts: req.verdicts,
        note: req.note,
        author: req.author,
        time: now_iso(),
    };
    let record = blocking(&st, move |s| s.append_annotation(&id, annotation)).await?;
    Ok(Json(AnnotationsView {
        run_id: record.run_id,
        annotations: record.annotations,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_origins() {
        for ok in ["http://localhost", "http://localhost:5173", "http://127.0.0.1:8080", "http://[::1]:3000"] {
            assert!(is_local_origin(ok.as_bytes()), "{ok}");
        }
        for bad in ["http://localhost.evil.com", "http://example.com", "null", "http://127.0.0.1:80x"] {
            assert!(!is_local_origin(bad.as_bytes()), "{bad}");
        }
    }

    #[test]
    fn segments_follow_ordering() {
        let s = segments(&[2, 0, 1, 3], &[0, 0, -1, 1]);
        assert_eq!(
            s,
            vec![
                Segment { start: 0, end: 0, cluster_id: -1 },
                Segment { start: 1, end: 2, cluster_id: 0 },
                Segment { start: 3, end: 3, cluster_id: 1 },
            ]
        );
    }
}
