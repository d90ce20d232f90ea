//! Run reports and output files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use cbfed::rng::{DOMAIN_AUX, DOMAIN_FIELD, DOMAIN_NOISE, DOMAIN_PROBE};
use cbfed::FourierField;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ExperimentKind, RunConfig};
use crate::error::LabError;

/// Build identifier captured at compile time.
pub const BUILD_ID: &str = env!("CBFED_LAB_BUILD_ID");

/// Named metrics in a fixed (sorted) order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Metrics(BTreeMap<String, Value>);

impl Metrics {
    /// Empty map.
    pub fn new() -> Self {
        Metrics::default()
    }

    /// Inserts a serializable value.
    pub fn insert<T: Serialize>(&mut self, key: impl Into<String>, value: T) {
        let v = serde_json::to_value(value).expect("metric values are serializable");
        self.0.insert(key.into(), v);
    }

    /// Value under `key`.
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }

    /// Numeric value under `key`.
    pub fn f64(&self, key: &str) -> Option<f64> {
        self.0.get(key).and_then(Value::as_f64)
    }

    /// Canonical JSON bytes, used to compare runs.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.0).expect("metric values are serializable")
    }

    /// Number of entries.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// True when empty.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One pass/fail check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    /// Short identifier.
    pub name: String,
    /// Outcome.
    pub passed: bool,
    /// Measured value against its threshold.
    pub detail: String,
}

impl Criterion {
    /// New criterion.
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Criterion {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Table written to `series/<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    /// File stem.
    pub name: String,
    /// Header.
    pub columns: Vec<String>,
    /// Rows; `NaN` is written as an empty cell.
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    /// Empty table with the given header.
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Series {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Appends a row.
    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn write(&self, path: &Path) -> Result<(), LabError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| LabError::Output(e.to_string()))?;
        w.write_record(&self.columns).map_err(|e| LabError::Output(e.to_string()))?;
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|v| if v.is_nan() { String::new() } else { format!("{v:e}") })
                .collect();
            w.write_record(&cells).map_err(|e| LabError::Output(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything an experiment produces.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    /// Metrics map.
    pub metrics: Metrics,
    /// Pass/fail checks.
    pub criteria: Vec<Criterion>,
    /// CSV tables.
    pub series: Vec<Series>,
    /// Named fields written as snapshots.
    pub fields: Vec<(String, FourierField)>,
    /// Non-fatal remarks.
    pub warnings: Vec<String>,
}

impl Outcome {
    /// Records a criterion.
    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.criteria.push(Criterion::new(name, passed, detail));
    }

    /// True when every criterion passed.
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

/// Seeds and random streams of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    /// Master seed.
    pub master: u64,
    /// Seed of the Brownian paths; path `i` reads stream `(noise, NOISE, i, ·)`.
    pub noise: u64,
    /// Seeds of the random initial, target and forcing fields.
    pub fields: BTreeMap<String, u64>,
    /// Generator family.
    pub generator: String,
    /// Domain tags separating the keyed streams.
    pub domains: BTreeMap<String, u64>,
}

impl SeedManifest {
    /// Manifest with the standard domains.
    pub fn new(master: u64, noise: u64, fields: BTreeMap<String, u64>) -> Self {
        let domains = [
            ("noise", DOMAIN_NOISE),
            ("field", DOMAIN_FIELD),
            ("probe", DOMAIN_PROBE),
            ("aux", DOMAIN_AUX),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        SeedManifest {
            master,
            noise,
            fields,
            generator: "ChaCha8, one stream per (seed, domain, path, counter)".into(),
            domains,
        }
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Tool name.
    pub tool: String,
    /// Crate version.
    pub version: String,
    /// `git describe` at build time.
    pub build_id: String,
    /// Experiment.
    pub kind: ExperimentKind,
    /// Effective configuration.
    pub config: RunConfig,
    /// Effective configuration as TOML; rerunnable as is.
    pub config_toml: String,
    /// Seconds spent executing.
    pub wall_time_s: f64,
    /// Worker threads.
    pub threads: usize,
    /// Every criterion passed.
    pub passed: bool,
    /// Pass/fail checks.
    pub criteria: Vec<Criterion>,
    /// Metrics.
    pub metrics: Metrics,
    /// Seeds.
    pub seeds: SeedManifest,
    /// Non-fatal remarks.
    pub warnings: Vec<String>,
}

impl RunReport {
    /// Assembles the report of a finished run.
    pub fn new(config: &RunConfig, outcome: &Outcome, seeds: SeedManifest, wall_time_s: f64) -> Self {
        RunReport {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            build_id: BUILD_ID.into(),
            kind: config.kind,
            config: config.clone(),
            config_toml: config.to_toml(),
            wall_time_s,
            threads: rayon::current_num_threads(),
            passed: outcome.passed(),
            criteria: outcome.criteria.clone(),
            metrics: outcome.metrics.clone(),
            seeds,
            warnings: outcome.warnings.clone(),
        }
    }

    /// Exit code implied by the criteria.
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            crate::error::EXIT_PASS
        } else {
            crate::error::EXIT_CRITERION
        }
    }
}

/// Writes `report.json`, `series/*.csv` and `fields/*.bin` under `dir`.
pub fn write_outputs(dir: &Path, report: &RunReport, outcome: &Outcome) -> Result<(), LabError> {
    fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| LabError::Output(e.to_string()))?;
    fs::write(dir.join("report.json"), json + "\n")?;
    if !outcome.series.is_empty() {
        let sdir = dir.join("series");
        fs::create_dir_all(&sdir)?;
        for s in &outcome.series {
            s.write(&sdir.join(format!("{}.csv", s.name)))?;
        }
    }
    if !outcome.fields.is_empty() {
        let fdir = dir.join("fields");
        fs::create_dir_all(&fdir)?;
        for (name, f) in &outcome.fields {
            let file = fs::File::create(fdir.join(format!("{name}.bin")))?;
            let mut w = std::io::BufWriter::new(file);
            f.write_snapshot(&mut w).map_err(|e| LabError::Output(e.to_string()))?;
        }
    }
    Ok(())
}
