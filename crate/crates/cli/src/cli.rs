//! `fdd` subcommands and exit-code mapping.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use fdd_core::dataset::{self, load_frame, load_labels, load_truth, ChannelSchema};
use fdd_core::evaluation::{classification_metrics, confusion_counts, ConfusionCounts};
use fdd_core::optics::{k_distance_curve, suggest_eps};
use fdd_core::pipeline::{self, whatif_extract, Algorithm, EpsChoice};
use fdd_core::store::RunStore;
use fdd_core::synthetic::{self, SyntheticSpec};
use fdd_core::time::format_timestamp;
use fdd_core::{FaultFlag, RunConfig};

use crate::{api, report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] fdd_core::Error),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) if e.is_data_error() => EXIT_DATA,
            CliError::Core(fdd_core::Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => {
                EXIT_DATA
            }
            CliError::Core(_) | CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "fdd", version, about = "Density-based fault detection for fan-coil telemetry")]
pub struct Cli {
    /// Run store directory.
    #[arg(long, global = true, env = "FDD_STORE", default_value = "runs")]
    pub store: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset and print its shape, cadence and gaps.
    Ingest(IngestArgs),
    /// Execute a run from a JSON config and print its id.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Cut a stored run's reachability plot and write labels and metrics.
    Extract {
        #[arg(long)]
        run: String,
        #[arg(long, allow_hyphen_values = true)]
        threshold: f64,
    },
    /// Print the k-distance curve summary and the suggested eps.
    Kdist(KdistArgs),
    /// Write the SVG plots of a stored run.
    Report {
        #[arg(long)]
        run: String,
        /// Colour clusters from this cut instead of the latest stored one.
        #[arg(long)]
        threshold: Option<f64>,
        /// Output directory, defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Precision, recall, F1 and accuracy.
    Eval(EvalArgs),
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Concurrent run executions, defaults to the core count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write a seeded synthetic dataset and a matching run config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        rows: usize,
    },
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Run config; supplies dataset, schema and mode settings.
    #[arg(long, conflicts_with_all = ["dataset", "schema"])]
    pub config: Option<PathBuf>,
    #[arg(long, requires = "schema")]
    pub dataset: Option<PathBuf>,
    /// JSON array of channel schema entries.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub timestamp_format: Option<String>,
}

#[derive(Debug, Args)]
pub struct KdistArgs {
    /// Stored run.
    #[arg(long, conflicts_with = "config")]
    pub run: Option<String>,
    /// Compute from a config without running the clustering.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Neighbour rank, defaults to the config's min_pts.
    #[arg(long)]
    pub k: Option<usize>,
    /// Write the curve as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// tp,fp,fn,tn
    #[arg(long, conflicts_with_all = ["labels", "truth"])]
    pub counts: Option<String>,
    /// Labels CSV written by `extract`.
    #[arg(long, requires = "truth")]
    pub labels: Option<PathBuf>,
    /// CSV with a `timestamp` column and a 0/1 `fault` column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Print counts and metrics as JSON.
    #[arg(long)]
    pub json: bool,
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn main_with(argv: impl IntoIterator<Item = String>) -> i32 {
    run_with(argv, &mut std::io::stdout().lock())
}

/// Same as [`main_with`] with command output sent to `out`. Diagnostics
/// still go to stderr.
pub fn run_with(argv: impl IntoIterator<Item = String>, out: &mut impl std::io::Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return EXIT_USAGE;
        }
        Err(e) => {
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, out: &mut impl std::io::Write) -> CliResult {
    match cli.command {
        Command::Ingest(args) => ingest(args, out),
        Command::Run { config } => {
            let cfg = RunConfig::from_json_file(&config)?;
            let store = RunStore::open(&cli.store)?;
            let record = store.execute(&cfg)?;
            eprintln!(
                "{} rows clustered, eps {:.4}, {:?}",
                record.rows.complete, record.eps, record.status
            );
            for ex in &record.extractions {
                if let Some(s) = &ex.scores {
                    eprintln!("{:<16} {}", ex.key(), s.metrics.display_line());
                }
            }
            writeln!(out, "{}", record.run_id)?;
            Ok(())
        }
        Command::Extract { run, threshold } => {
            let store = RunStore::open(&cli.store)?;
            let (ex, path) = store.commit_extraction(&run, threshold)?;
            writeln!(out, "{}", path.display())?;
            eprintln!(
                "{} clusters {:?}, {} noise rows, {} fault intervals",
                ex.num_clusters,
                ex.cluster_sizes,
                ex.noise_count,
                ex.intervals.len()
            );
            if let Some(s) = &ex.scores {
                writeln!(out, "{}", s.metrics.display_line())?;
            }
            Ok(())
        }
        Command::Kdist(args) => kdist(&cli.store, args, out),
        Command::Report { run, threshold, out: dir } => {
            let store = RunStore::open(&cli.store)?;
            let record = store.load(&run)?;
            let ex = match threshold {
                Some(t) => Some(whatif_extract(&record, t)?),
                None => record.latest(Algorithm::Optics).cloned(),
            };
            let dir = dir.unwrap_or_else(|| store.run_dir(&run));
            for p in report::write_report(&record, ex.as_ref(), &dir)? {
                writeln!(out, "{}", p.display())?;
            }
            Ok(())
        }
        Command::Eval(args) => eval(args, out),
        Command::Serve { host, port, workers } => serve(&cli.store, &host, port, workers),
        Command::Synth { out: dir, seed, rows } => {
            fs::create_dir_all(&dir)?;
            let data = synthetic::generate(&SyntheticSpec {
                seed,
                rows,
                ..SyntheticSpec::default()
            })?;
            dataset::write_frame(&data.frame, dir.join("synthetic.csv"))?;
            let cfg = data.run_config("synthetic.csv");
            let path = dir.join("config.json");
            fs::write(&path, serde_json::to_string_pretty(&cfg).map_err(fdd_core::Error::from)? + "\n")?;
            writeln!(out, "{}", path.display())?;
            Ok(())
        }
    }
}

fn ingest(args: IngestArgs, out: &mut impl std::io::Write) -> CliResult {
    let (frame, config) = match (&args.config, &args.dataset, &args.schema) {
        (Some(path), _, _) => {
            let cfg = RunConfig::from_json_file(path)?;
            let frame = load_frame(&cfg.dataset, &cfg.schema, cfg.timestamp_format.as_deref())?;
            (frame, Some(cfg))
        }
        (None, Some(dataset), Some(schema)) => {
            let text = fs::read_to_string(schema).map_err(|e| CliError::Usage(format!("{}: {e}", schema.display())))?;
            let schema: Vec<ChannelSchema> = serde_json::from_str(&text).map_err(fdd_core::Error::from)?;
            (load_frame(dataset, &schema, args.timestamp_format.as_deref())?, None)
        }
        _ => return Err(CliError::Usage("give --config, or --dataset with --schema".into())),
    };
    let ts = frame.timestamps();
    writeln!(out, "rows        {}", frame.len())?;
    if let (Some(first), Some(last)) = (ts.first(), ts.last()) {
        writeln!(out, "span        {} .. {}", format_timestamp(*first), format_timestamp(*last))?;
    }
    writeln!(out, "cadence     {} s", frame.cadence_s())?;
    writeln!(out, "utc offset  {} s", frame.utc_offset_s())?;
    let gaps = ts.windows(2).filter(|w| w[1] - w[0] != i64::from(frame.cadence_s())).count();
    writeln!(out, "gaps        {gaps}")?;
    match frame.ground_truth() {
        Some(gt) => writeln!(out, "fault rows  {}", gt.iter().filter(|f| f.is_fault()).count())?,
        None => writeln!(out, "fault rows  (no ground truth)")?,
    }
    writeln!(out, "channels")?;
    for ch in frame.channels() {
        let missing = ch.values.iter().filter(|v| v.is_none()).count();
        writeln!(out, "  {:<12} missing {missing}", ch.name)?;
    }
    if let Some(cfg) = config {
        let prepared = pipeline::prepare_frame(&cfg, frame)?;
        writeln!(out, "months")?;
        for (m, mode) in &prepared.months {
            writeln!(out, "  {m}  {mode:?}")?;
        }
        let c = &prepared.counts;
        writeln!(
            out,
            "rows kept   season {} / operational {} / iqr {} / complete {}",
            c.season, c.operational, c.iqr, c.complete
        )?;
    }
    Ok(())
}

fn kdist(store: &Path, args: KdistArgs, out: &mut impl std::io::Write) -> CliResult {
    let (k, curve, eps) = match (&args.run, &args.config) {
        (Some(id), _) => {
            let record = RunStore::open(store)?.load(id)?;
            match args.k {
                Some(k) if k != record.kdist.k => {
                    let curve = k_distance_curve(&record.clustering_input()?, k)?;
                    (k, curve, record.eps)
                }
                _ => (record.kdist.k, record.kdist.curve.clone(), record.eps),
            }
        }
        (None, Some(path)) => {
            let cfg = RunConfig::from_json_file(path)?;
            let prepared = pipeline::prepare(&cfg)?;
            let input = if cfg.use_pca {
                let model = fdd_core::pca::fit_pca(&prepared.standardized)?;
                let k = fdd_core::pca::select_pc_count(&model, cfg.pc_selection)?.k;
                model.project(&prepared.standardized, k)?
            } else {
                prepared.standardized
            };
            let k = args.k.unwrap_or(cfg.optics.min_pts);
            let curve = k_distance_curve(&input, k)?;
            let eps = match cfg.optics.eps {
                EpsChoice::Fixed(e) => e,
                EpsChoice::Keyword(_) => f64::NAN,
            };
            (k, curve, eps)
        }
        (None, None) => return Err(CliError::Usage("give --run or --config".into())),
    };
    let suggested = suggest_eps(&curve).ok();
    writeln!(out, "k {k}")?;
    writeln!(out, "points {}", curve.len())?;
    match suggested {
        Some(s) => writeln!(out, "suggested_eps {s}")?,
        None => writeln!(out, "suggested_eps none")?,
    }
    if eps.is_finite() {
        writeln!(out, "configured_eps {eps}")?;
    }
    if let Some(path) = args.out {
        let mut csv = String::from("rank,k_distance\n");
        for (i, d) in curve.iter().enumerate() {
            csv.push_str(&format!("{i},{d:?}\n"));
        }
        fs::write(&path, csv)?;
    }
    Ok(())
}

fn parse_counts(text: &str) -> CliResult<ConfusionCounts> {
    let parts: Vec<u64> = text
        .split(',')
        .map(|p| p.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("--counts expects tp,fp,fn,tn: {e}")))?;
    match parts[..] {
        [tp, fp, fn_, tn] => Ok(ConfusionCounts::new(tp, fp, fn_, tn)),
        _ => Err(CliError::Usage(format!("--counts expects 4 values, got {}", parts.len()))),
    }
}

fn eval(args: EvalArgs, out: &mut impl std::io::Write) -> CliResult {
    let counts = match (&args.counts, &args.labels, &args.truth) {
        (Some(c), _, _) => parse_counts(c)?,
        (None, Some(labels), Some(truth)) => {
            let rows = load_labels(labels)?;
            let truth: BTreeMap<i64, FaultFlag> = load_truth(truth)?;
            let mut pred = Vec::with_capacity(rows.len());
            let mut actual = Vec::with_capacity(rows.len());
            for r in &rows {
                let t = truth.get(&r.timestamp).ok_or_else(|| {
                    fdd_core::Error::InvalidConfig(format!(
                        "no ground truth for {}",
                        format_timestamp(r.timestamp)
                    ))
                })?;
                pred.push(FaultFlag::from_bool(r.fault));
                actual.push(*t);
            }
            confusion_counts(&pred, &actual)?
        }
        _ => return Err(CliError::Usage("give --counts, or --labels with --truth".into())),
    };
    let metrics = classification_metrics(&counts)?;
    if args.json {
        let body = serde_json::json!({ "counts": counts, "metrics": metrics });
        writeln!(out, "{body}")?;
    } else {
        writeln!(out, "{}", metrics.display_line())?;
    }
    Ok(())
}

fn serve(store: &Path, host: &str, port: u16, workers: Option<usize>) -> CliResult {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address {host}:{port}: {e}")))?;
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let state = api::AppState::new(RunStore::open(store)?, workers);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, api::router(state)).await
    })?;
    Ok(())
}
