//! Run manifest: the persisted record of one pipeline run.
//!
//! The manifest is the single source of truth across CLI invocations and
//! carries the marker that makes TEST evaluation single-use.

use crate::baselines::Method;
use crate::calibration::CalibrationTable;
use crate::clustering::{FallbackFlags, IterationTrace, SelectionRow};
use crate::dataset::{Phase, Split, SplitSpec};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Reads counted by the split-access audit for one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub command: String,
    pub phase: Phase,
    pub split: Split,
    pub reads: usize,
}

/// VAL-side result of one method, enough to rebuild its plan for TEST.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub sel_abs: Option<f64>,
    pub labels: Option<Vec<usize>>,
    pub iterations: Vec<IterationTrace>,
    pub selection: Vec<SelectionRow>,
    pub flags: Option<FallbackFlags>,
    /// TRAIN-fitted prototypes, relative to the run directory.
    pub prototypes: Vec<String>,
    /// Refit prototypes written by `evaluate` (`None` for flagged clusters).
    #[serde(default)]
    pub refit_prototypes: Vec<Option<String>>,
    #[serde(default)]
    pub calibration: Option<CalibrationTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub run_id: String,
    /// Snapshot of the effective configuration.
    pub config: serde_json::Value,
    pub seed: u64,
    pub split: SplitSpec,
    pub data: String,
    pub standardizer: Option<String>,
    pub prepared: Option<String>,
    pub global: Option<String>,
    pub global_refit: Option<String>,
    pub methods: Vec<MethodRecord>,
    pub audit: Vec<AuditRecord>,
    /// Set once TEST has been opened for this run.
    pub test_evaluated: bool,
    pub report: Option<String>,
}

impl RunManifest {
    pub fn new(run_id: &str, config: serde_json::Value, seed: u64, split: SplitSpec, data: &str) -> Self {
        Self {
            version: 1,
            run_id: run_id.to_string(),
            config,
            seed,
            split,
            data: data.to_string(),
            standardizer: None,
            prepared: None,
            global: None,
            global_refit: None,
            methods: Vec::new(),
            audit: Vec::new(),
            test_evaluated: false,
            report: None,
        }
    }

    pub fn path(dir: &Path) -> std::path::PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Format { path: path.clone(), reason: format!("cannot read manifest: {e}") })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Writes atomically (temp file then rename).
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(tmp, Self::path(dir))?;
        Ok(())
    }

    /// Marks TEST as used and persists the marker before any TEST read.
    /// A second claim on the same run is a protocol violation.
    pub fn claim_test(&mut self, dir: &Path) -> Result<()> {
        if self.test_evaluated {
            return Err(Error::Protocol(format!("TEST was already evaluated for run '{}'", self.run_id)));
        }
        self.test_evaluated = true;
        self.save(dir)
    }

    pub fn method(&self, m: Method) -> Option<&MethodRecord> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// Inserts or replaces the record of `rec.method`.
    pub fn upsert(&mut self, rec: MethodRecord) {
        match self.methods.iter_mut().find(|r| r.method == rec.method) {
            Some(slot) => *slot = rec,
            None => self.methods.push(rec),
        }
    }

    /// Sum of TEST reads recorded by commands other than `evaluate`.
    pub fn test_reads_outside_evaluate(&self) -> usize {
        self.audit
            .iter()
            .filter(|a| a.split == Split::Test && a.phase != Phase::Evaluate && a.phase != Phase::Route)
            .map(|a| a.reads)
            .sum()
    }
}
