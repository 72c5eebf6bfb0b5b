//! End-to-end run: ingest, mode split, filters, standardize, optional PCA,
//! OPTICS and k-means, threshold extraction, flags, metrics.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{self, ChannelSchema, FaultFlag, FaultInterval, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::evaluation::{
    assign_fault_flags, classification_metrics, confusion_counts, fault_intervals, ConfusionCounts, MetricsRow,
};
use crate::features::{build_feature_matrix, FeatureMatrix};
use crate::kmeans::{self, calinski_harabasz, fit_kmeans, KmeansResult};
use crate::optics::{self, extract_clusters, k_distance_curve, run_optics, suggest_eps, OpticsParams, OpticsResult, StartOrder};
use crate::pca::{fit_pca, select_pc_count, LoadingsReport, PairCorrelation, PcSelection, PcaModel, ScreeChoice};
use crate::preprocessing::{self, classify_months, ModeConfig, OperatingMode, StandardScaler};
use crate::time::{Timestamp, YearMonth};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsChoice {
    Fixed(f64),
    Keyword(EpsKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsKeyword {
    Suggest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdChoice {
    Fixed(f64),
    Keyword(ThresholdKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKeyword {
    /// Stop after the reachability plot; an analyst picks the cut later.
    Pending,
    /// Cut just below the largest gap in the reachability values.
    LargestGap,
}

fn default_min_pts() -> usize {
    optics::DEFAULT_MIN_PTS
}

fn default_eps() -> EpsChoice {
    EpsChoice::Keyword(EpsKeyword::Suggest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticsConfig {
    #[serde(default = "default_min_pts")]
    pub min_pts: usize,
    #[serde(default = "default_eps")]
    pub eps: EpsChoice,
    #[serde(default)]
    pub start: StartOrder,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        Self {
            min_pts: default_min_pts(),
            eps: default_eps(),
            start: StartOrder::LowestIndex,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansConfig {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            k: kmeans::DEFAULT_K,
            seed: 0,
            restarts: kmeans::DEFAULT_RESTARTS,
        }
    }
}

fn yes() -> bool {
    true
}

fn default_threshold() -> ThresholdChoice {
    ThresholdChoice::Keyword(ThresholdKeyword::Pending)
}

fn default_pc_selection() -> PcSelection {
    PcSelection::ScreeGap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub schema: Vec<ChannelSchema>,
    #[serde(default)]
    pub timestamp_format: Option<String>,
    pub mode: ModeConfig,
    pub analysis_channels: Vec<String>,
    /// `heating` or `cooling`.
    pub season: OperatingMode,
    /// Restricts the run to these months (still subject to `season`).
    #[serde(default)]
    pub months: Option<Vec<YearMonth>>,
    #[serde(default = "yes")]
    pub operational_filter: bool,
    #[serde(default = "yes")]
    pub iqr_filter: bool,
    pub use_pca: bool,
    #[serde(default = "default_pc_selection")]
    pub pc_selection: PcSelection,
    #[serde(default)]
    pub optics: OpticsConfig,
    #[serde(default = "default_threshold")]
    pub threshold: ThresholdChoice,
    #[serde(default)]
    pub kmeans: KmeansConfig,
    /// Replaces any `fault` column of the dataset when present.
    #[serde(default)]
    pub fault_intervals: Option<Vec<FaultInterval>>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        dataset::validate_schema(&self.schema)?;
        self.mode.validate()?;
        if self.season == OperatingMode::Excluded {
            return Err(Error::InvalidConfig("season must be heating or cooling".into()));
        }
        if self.analysis_channels.is_empty() {
            return Err(Error::InvalidConfig("no analysis channels".into()));
        }
        let known = |c: &str| self.schema.iter().any(|s| s.designation == c);
        let mut referenced: Vec<&str> = self.analysis_channels.iter().map(String::as_str).collect();
        referenced.push(&self.mode.cooling_signal);
        referenced.push(&self.mode.heating_signal);
        if let Some(on) = &self.mode.on_signal {
            referenced.push(on);
        }
        if let Some(bad) = referenced.into_iter().find(|c| !known(c)) {
            return Err(Error::UnknownChannel(bad.to_string()));
        }
        if let EpsChoice::Fixed(e) = self.optics.eps {
            OpticsParams::new(e, self.optics.min_pts)?;
        } else if self.optics.min_pts < 2 {
            return Err(Error::InvalidParams("min_pts must be at least 2".into()));
        }
        if let ThresholdChoice::Fixed(t) = self.threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::NonPositiveThreshold(t));
            }
        }
        if self.kmeans.k == 0 || self.kmeans.restarts == 0 {
            return Err(Error::InvalidConfig("kmeans k and restarts must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        if cfg.dataset.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset = dir.join(&cfg.dataset);
            }
        }
        Ok(cfg)
    }
}

/// Rows surviving each filter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowCounts {
    pub loaded: usize,
    pub season: usize,
    pub operational: usize,
    pub iqr: usize,
    pub complete: usize,
}

/// Preprocessed clustering input.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub frame: TimeSeriesFrame,
    pub months: BTreeMap<YearMonth, OperatingMode>,
    pub counts: RowCounts,
    pub standardized: FeatureMatrix<f64>,
    pub scaler: StandardScaler<f64>,
    /// Aligned with the matrix rows.
    pub ground_truth: Option<Vec<FaultFlag>>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of the config and the dataset bytes.
pub fn run_id(config: &RunConfig, dataset_digest: &str) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config)?);
    h.update(b"\n");
    h.update(dataset_digest.as_bytes());
    Ok(hex::encode(h.finalize())[..16].to_string())
}

pub fn dataset_digest(config: &RunConfig) -> Result<String> {
    let bytes = fs::read(&config.dataset).map_err(|e| Error::io(&config.dataset, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let mut frame = dataset::load_frame(&config.dataset, &config.schema, config.timestamp_format.as_deref())
        .map_err(|e| e.in_stage("ingest"))?;
    if let Some(intervals) = &config.fault_intervals {
        frame = dataset::apply_fault_intervals(&frame, intervals);
    }
    prepare_frame(config, frame)
}

/// Everything after ingestion, for callers that already hold a frame.
pub fn prepare_frame(config: &RunConfig, frame: TimeSeriesFrame) -> Result<Prepared> {
    let mut counts = RowCounts {
        loaded: frame.len(),
        ..RowCounts::default()
    };
    let months = classify_months(&frame, &config.mode).map_err(|e| e.in_stage("mode_split"))?;
    let wanted = |m: &YearMonth| config.months.as_ref().map_or(true, |list| list.contains(m));
    let ts = frame.timestamps();
    let season = frame.retain_rows(|i| {
        let m = crate::time::year_month(ts[i]);
        months.get(&m) == Some(&config.season) && wanted(&m)
    });
    counts.season = season.len();

    let operational = if config.operational_filter {
        preprocessing::filter_operational(&season, &config.mode).map_err(|e| e.in_stage("operational_filter"))?
    } else {
        season
    };
    counts.operational = operational.len();

    let dense = if config.iqr_filter {
        let valve = config.mode.valve_for(config.season).expect("season validated");
        preprocessing::iqr_filter(&operational, valve).map_err(|e| e.in_stage("iqr_filter"))?
    } else {
        operational
    };
    counts.iqr = dense.len();

    let raw: FeatureMatrix<f64> =
        build_feature_matrix(&dense, &config.analysis_channels).map_err(|e| e.in_stage("feature_matrix"))?;
    counts.complete = raw.rows();
    let ground_truth = dense.ground_truth().map(|gt| {
        let by_ts: BTreeMap<Timestamp, FaultFlag> =
            dense.timestamps().iter().copied().zip(gt.iter().copied()).collect();
        raw.timestamps.iter().map(|t| by_ts[t]).collect()
    });
    let (standardized, scaler) = preprocessing::standardize(&raw).map_err(|e| e.in_stage("standardize"))?;

    Ok(Prepared {
        frame: dense,
        months,
        counts,
        standardized,
        scaler,
        ground_truth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Optics,
    Kmeans,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Optics => "optics",
            Algorithm::Kmeans => "kmeans",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub counts: ConfusionCounts,
    pub metrics: MetricsRow,
}

/// Labels, flags, metrics and intervals for one algorithm (and threshold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub algorithm: Algorithm,
    pub threshold: Option<f64>,
    pub cluster_id: Vec<i64>,
    pub num_clusters: usize,
    pub cluster_sizes: Vec<usize>,
    pub noise_count: usize,
    /// Absent when every row is noise.
    pub flags: Option<Vec<FaultFlag>>,
    pub normal_cluster: Option<i64>,
    pub ambiguous_majority: bool,
    pub all_noise: bool,
    pub scores: Option<Scores>,
    pub intervals: Vec<FaultInterval>,
}

impl Extraction {
    /// Key used for file names and the metrics map, e.g. `optics-4.8`.
    pub fn key(&self) -> String {
        match self.threshold {
            Some(t) => format!("{}-{}", self.algorithm.as_str(), t),
            None => format!("{}-k{}", self.algorithm.as_str(), self.num_clusters),
        }
    }
}

fn score_labels(
    algorithm: Algorithm,
    threshold: Option<f64>,
    cluster_id: Vec<i64>,
    num_clusters: usize,
    timestamps: &[Timestamp],
    cadence_s: u32,
    truth: Option<&[FaultFlag]>,
) -> Result<Extraction> {
    let mut cluster_sizes = vec![0; num_clusters];
    for &c in cluster_id.iter().filter(|&&c| c >= 0) {
        cluster_sizes[c as usize] += 1;
    }
    let noise_count = cluster_id.iter().filter(|&&c| c < 0).count();
    let assignment = match assign_fault_flags(&cluster_id) {
        Ok(a) => Some(a),
        Err(Error::AllNoise) => None,
        Err(e) => return Err(e),
    };
    let (flags, normal_cluster, ambiguous_majority, scores, intervals) = match assignment {
        Some(a) => {
            let scores = match truth {
                Some(t) => {
                    let counts = confusion_counts(&a.flags, t)?;
                    Some(Scores {
                        counts,
                        metrics: classification_metrics(&counts)?,
                    })
                }
                None => None,
            };
            let intervals = fault_intervals(&a.flags, timestamps, cadence_s)?;
            (Some(a.flags), Some(a.normal_cluster), a.ambiguous_majority, scores, intervals)
        }
        None => (None, None, false, None, Vec::new()),
    };
    Ok(Extraction {
        algorithm,
        threshold,
        all_noise: flags.is_none(),
        cluster_id,
        num_clusters,
        cluster_sizes,
        noise_count,
        flags,
        normal_cluster,
        ambiguous_majority,
        scores,
        intervals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdistSummary {
    pub k: usize,
    pub curve: Vec<f64>,
    pub suggested_eps: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    AwaitingThreshold,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub threshold: f64,
    /// Analyst verdict per cluster id.
    pub verdicts: BTreeMap<i64, FaultFlag>,
    #[serde(default)]
    pub note: String,
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub time: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub dataset_digest: String,
    pub config: RunConfig,
    pub status: RunStatus,
    pub months: BTreeMap<YearMonth, OperatingMode>,
    pub rows: RowCounts,
    pub cadence_s: u32,
    /// Standardized analysis matrix (pre-projection), one row per surviving sample.
    pub analysis: FeatureMatrix<f64>,
    pub ground_truth: Option<Vec<FaultFlag>>,
    pub scaler: StandardScaler<f64>,
    /// Always fitted for the loadings report; used for clustering only when
    /// `config.use_pca`.
    pub pca: PcaModel<f64>,
    pub scree: ScreeChoice<f64>,
    pub loadings: LoadingsReport,
    pub correlations: Vec<PairCorrelation>,
    pub projection_k: Option<usize>,
    pub kdist: KdistSummary,
    pub eps: f64,
    pub optics: OpticsResult<f64>,
    pub kmeans: KmeansResult<f64>,
    pub kmeans_calinski_harabasz: Option<f64>,
    pub extractions: Vec<Extraction>,
    pub annotations: Vec<Annotation>,
}

impl RunRecord {
    pub fn timestamps(&self) -> &[Timestamp] {
        &self.analysis.timestamps
    }

    /// Matrix the clusterers saw.
    pub fn clustering_input(&self) -> Result<FeatureMatrix<f64>> {
        match self.projection_k {
            Some(k) => self.pca.project(&self.analysis, k),
            None => Ok(self.analysis.clone()),
        }
    }

    pub fn latest(&self, algorithm: Algorithm) -> Option<&Extraction> {
        self.extractions.iter().rev().find(|e| e.algorithm == algorithm)
    }
}

pub fn execute_run(config: &RunConfig) -> Result<RunRecord> {
    let digest = dataset_digest(config).map_err(|e| e.in_stage("ingest"))?;
    let prepared = prepare(config)?;
    execute_prepared(config, &digest, prepared)
}

/// Runs the clustering stages on already prepared data.
pub fn execute_prepared(config: &RunConfig, digest: &str, prepared: Prepared) -> Result<RunRecord> {
    let run_id = run_id(config, digest)?;
    let Prepared {
        frame,
        months,
        counts,
        standardized,
        scaler,
        ground_truth,
    } = prepared;

    let pca = fit_pca(&standardized).map_err(|e| e.in_stage("pca"))?;
    let selection = if config.use_pca {
        config.pc_selection
    } else {
        PcSelection::ScreeGap
    };
    let scree = select_pc_count(&pca, selection).map_err(|e| e.in_stage("pca"))?;
    let projection_k = config.use_pca.then_some(scree.k);
    let loadings = pca.loadings();
    let correlations = loadings.all_pairs();
    let input = match projection_k {
        Some(k) => pca.project(&standardized, k).map_err(|e| e.in_stage("pca"))?,
        None => standardized.clone(),
    };

    let k = config.optics.min_pts;
    let curve = k_distance_curve(&input, k).map_err(|e| e.in_stage("kdist"))?;
    let suggested = suggest_eps(&curve).ok();
    let eps = match config.optics.eps {
        EpsChoice::Fixed(e) => e,
        EpsChoice::Keyword(EpsKeyword::Suggest) => suggested
            .filter(|&e| e > 0.0)
            .ok_or_else(|| Error::InvalidParams("no positive eps could be suggested".into()).in_stage("kdist"))?,
    };
    let params = OpticsParams {
        eps,
        min_pts: config.optics.min_pts,
        start: config.optics.start,
    };
    let optics = run_optics(&input, &params).map_err(|e| e.in_stage("optics"))?;

    let km = fit_kmeans(&input, config.kmeans.k, config.kmeans.seed, config.kmeans.restarts)
        .map_err(|e| e.in_stage("kmeans"))?;
    let ch = calinski_harabasz(&input, &km.labels).ok();

    let timestamps = &standardized.timestamps;
    let truth = ground_truth.as_deref();
    let kmeans_extraction = score_labels(
        Algorithm::Kmeans,
        None,
        km.cluster_ids(),
        config.kmeans.k,
        timestamps,
        frame.cadence_s(),
        truth,
    )
    .map_err(|e| e.in_stage("evaluate"))?;

    let threshold = match config.threshold {
        ThresholdChoice::Fixed(t) => Some(t),
        ThresholdChoice::Keyword(ThresholdKeyword::Pending) => None,
        ThresholdChoice::Keyword(ThresholdKeyword::LargestGap) => optics::suggest_threshold(&optics),
    };

    let mut record = RunRecord {
        run_id,
        dataset_digest: digest.to_string(),
        config: config.clone(),
        status: RunStatus::AwaitingThreshold,
        months,
        rows: counts,
        cadence_s: frame.cadence_s(),
        analysis: standardized,
        ground_truth,
        scaler,
        pca,
        scree,
        loadings,
        correlations,
        projection_k,
        kdist: KdistSummary {
            k,
            curve,
            suggested_eps: suggested,
        },
        eps,
        optics,
        kmeans: km,
        kmeans_calinski_harabasz: ch,
        extractions: vec![kmeans_extraction],
        annotations: Vec::new(),
    };
    if let Some(t) = threshold {
        let ex = whatif_extract(&record, t).map_err(|e| e.in_stage("extract"))?;
        record.extractions.push(ex);
        record.status = RunStatus::Complete;
    }
    Ok(record)
}

/// Extraction at `threshold` without touching the record.
pub fn whatif_extract(record: &RunRecord, threshold: f64) -> Result<Extraction> {
    let labels = extract_clusters(&record.optics, threshold)?;
    score_labels(
        Algorithm::Optics,
        Some(threshold),
        labels.cluster_id,
        labels.num_clusters,
        record.timestamps(),
        record.cadence_s,
        record.ground_truth.as_deref(),
    )
}

/// Label rows for export.
pub fn extraction_label_rows(record: &RunRecord, ex: &Extraction) -> Result<Vec<dataset::LabelRow>> {
    let flags = ex
        .flags
        .clone()
        .unwrap_or_else(|| vec![FaultFlag::Fault; ex.cluster_id.len()]);
    dataset::label_rows(record.timestamps(), &ex.cluster_id, &flags)
}

pub fn extraction_labels_csv(record: &RunRecord, ex: &Extraction) -> Result<String> {
    Ok(dataset::labels_to_csv(&extraction_label_rows(record, ex)?))
}
