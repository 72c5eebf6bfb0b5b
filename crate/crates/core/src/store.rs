//! On-disk run store: one directory per run id.
//!
//! ```text
//! <root>/<run id>/config.json
//!                 record.json
//!                 status.json
//!                 reachability.csv
//!                 kdist.csv
//!                 labels-<algo>-<threshold>.csv
//!                 metrics.json
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{self, Annotation, Extraction, RunConfig, RunRecord, Scores};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Queued,
    Running,
    AwaitingThreshold,
    Complete,
    Failed,
}

impl RunState {
    pub fn is_finished(self) -> bool {
        matches!(self, RunState::AwaitingThreshold | RunState::Complete | RunState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusFile {
    pub run_id: String,
    pub state: RunState,
    #[serde(default)]
    pub stage: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsEntry {
    pub algorithm: String,
    pub threshold: Option<f64>,
    pub surviving_rows: usize,
    pub scores: Option<Scores>,
}

pub struct RunStore {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// `position,row_index,reachability,core_distance`; empty cells are undefined.
pub fn reachability_csv(record: &RunRecord) -> String {
    let mut out = String::from("position,row_index,reachability,core_distance\n");
    let r = &record.optics;
    for (pos, &row) in r.ordering.iter().enumerate() {
        let _ = writeln!(out, "{pos},{row},{},{}", opt(r.reachability[pos]), opt(r.core_distance[row]));
    }
    out
}

pub fn kdist_csv(record: &RunRecord) -> String {
    let mut out = String::from("rank,k_distance\n");
    for (i, d) in record.kdist.curve.iter().enumerate() {
        let _ = writeln!(out, "{i},{d:?}");
    }
    out
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn valid_id(id: &str) -> bool {
        !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric())
    }

    /// Per-run write lock; writers to one run id are serialized.
    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut map = self.locks.lock().expect("lock map poisoned");
        map.entry(id.to_string()).or_default().clone()
    }

    pub fn exists(&self, id: &str) -> bool {
        Self::valid_id(id) && self.run_dir(id).join("status.json").exists()
    }

    /// Creates the run directory and writes `config.json` plus a queued
    /// status. Returns the run id.
    pub fn register(&self, config: &RunConfig) -> Result<String> {
        let digest = pipeline::dataset_digest(config)?;
        let id = pipeline::run_id(config, &digest)?;
        let dir = self.run_dir(&id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_json(&dir.join("config.json"), config)?;
        if !dir.join("status.json").exists() {
            self.set_status(&id, RunState::Queued, None, None)?;
        }
        Ok(id)
    }

    pub fn set_status(&self, id: &str, state: RunState, stage: Option<&str>, error: Option<String>) -> Result<()> {
        let lock = self.lock(id);
        let _g = lock.lock().expect("run lock poisoned");
        write_json(
            &self.run_dir(id).join("status.json"),
            &StatusFile {
                run_id: id.to_string(),
                state,
                stage: stage.map(str::to_string),
                error,
            },
        )
    }

    pub fn status(&self, id: &str) -> Result<StatusFile> {
        if !self.exists(id) {
            return Err(Error::UnknownRun(id.to_string()));
        }
        read_json(&self.run_dir(id).join("status.json"))
    }

    pub fn list(&self) -> Result<Vec<StatusFile>> {
        let mut out = Vec::new();
        let entries = fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))?;
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if self.exists(&name) {
                out.push(self.status(&name)?);
            }
        }
        out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        Ok(out)
    }

    /// Executes and persists a run synchronously.
    pub fn execute(&self, config: &RunConfig) -> Result<RunRecord> {
        let id = self.register(config)?;
        self.set_status(&id, RunState::Running, None, None)?;
        match pipeline::execute_run(config) {
            Ok(record) => {
                self.save(&record)?;
                Ok(record)
            }
            Err(e) => {
                let stage = match &e {
                    Error::Stage { stage, .. } => Some(*stage),
                    _ => None,
                };
                self.set_status(&id, RunState::Failed, stage, Some(e.to_string()))?;
                Err(e)
            }
        }
    }

    /// Writes the record and every derived artifact.
    pub fn save(&self, record: &RunRecord) -> Result<()> {
        let id = &record.run_id;
        let dir = self.run_dir(id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        {
            let lock = self.lock(id);
            let _g = lock.lock().expect("run lock poisoned");
            self.write_artifacts(record)?;
        }
        let state = match record.status {
            pipeline::RunStatus::AwaitingThreshold => RunState::AwaitingThreshold,
            pipeline::RunStatus::Complete => RunState::Complete,
        };
        self.set_status(id, state, None, None)
    }

    fn write_artifacts(&self, record: &RunRecord) -> Result<()> {
        let dir = self.run_dir(&record.run_id);
        write_json(&dir.join("config.json"), &record.config)?;
        write_json(&dir.join("record.json"), record)?;
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        write("reachability.csv", reachability_csv(record))?;
        write("kdist.csv", kdist_csv(record))?;
        let mut metrics = BTreeMap::new();
        for ex in &record.extractions {
            write(
                &format!("labels-{}.csv", ex.key()),
                pipeline::extraction_labels_csv(record, ex)?,
            )?;
            metrics.insert(ex.key(), self.metrics_entry(record, ex));
        }
        write_json(&dir.join("metrics.json"), &metrics)
    }

    fn metrics_entry(&self, record: &RunRecord, ex: &Extraction) -> MetricsEntry {
        MetricsEntry {
            algorithm: ex.algorithm.as_str().to_string(),
            threshold: ex.threshold,
            surviving_rows: record.analysis.rows(),
            scores: ex.scores.clone(),
        }
    }

    pub fn load(&self, id: &str) -> Result<RunRecord> {
        let status = self.status(id)?;
        match status.state {
            RunState::Complete | RunState::AwaitingThreshold => read_json(&self.run_dir(id).join("record.json")),
            RunState::Failed => Err(Error::RunFailed {
                id: id.to_string(),
                message: status.error.unwrap_or_default(),
            }),
            RunState::Queued | RunState::Running => Err(Error::RunBusy(id.to_string())),
        }
    }

    /// Computes an extraction, appends it to the record and writes its
    /// label file. Returns the extraction and the path of the label file.
    pub fn commit_extraction(&self, id: &str, threshold: f64) -> Result<(Extraction, PathBuf)> {
        let lock = self.lock(id);
        let _g = lock.lock().expect("run lock poisoned");
        let mut record: RunRecord = self.load(id)?;
        let ex = pipeline::whatif_extract(&record, threshold)?;
        if !record.extractions.contains(&ex) {
            record.extractions.push(ex.clone());
        }
        if record.status == pipeline::RunStatus::AwaitingThreshold {
            record.status = pipeline::RunStatus::Complete;
        }
        self.write_artifacts(&record)?;
        drop(_g);
        self.set_status(id, RunState::Complete, None, None)?;
        let path = self.run_dir(id).join(format!("labels-{}.csv", ex.key()));
        Ok((ex, path))
    }

    /// Appends an analyst annotation; nothing else in the record changes.
    pub fn append_annotation(&self, id: &str, annotation: Annotation) -> Result<RunRecord> {
        let lock = self.lock(id);
        let _g = lock.lock().expect("run lock poisoned");
        let mut record: RunRecord = self.load(id)?;
        record.annotations.push(annotation);
        write_json(&self.run_dir(id).join("record.json"), &record)?;
        Ok(record)
    }
}
