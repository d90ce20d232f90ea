//! Experiment runner for the `cbfed` toolkit.
//!
//! A run reads a TOML [`RunConfig`], validates it completely, executes one
//! experiment and writes `report.json`, `series/*.csv` and `fields/*.bin`.
//!
//! ```
//! use cbfed_lab::{execute, RunConfig};
//!
//! let cfg = RunConfig::from_toml(r#"
//!     kind = "simulate"
//!     seed = 3
//!     [grid]
//!     n = 16
//!     [time]
//!     horizon = 0.01
//!     dt = 1e-3
//! "#).unwrap();
//! let (report, _outcome) = execute(&cfg).unwrap();
//! assert!(report.passed);
//! assert_eq!(report.exit_code(), 0);
//! ```

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

/// Guide chapter on the runner, compiled so that its snippets run as doctests.
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/lab.md")]
pub mod guide {}

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

pub use config::{ExperimentKind, FieldConfig, Prepared, RunConfig};
pub use error::LabError;
pub use report::{Criterion, Metrics, Outcome, RunReport, SeedManifest};

fn seed_manifest(p: &Prepared) -> SeedManifest {
    let mut fields = BTreeMap::new();
    let slots = [
        ("initial", p.config.initial.as_ref(), config::INITIAL_SEED_SALT),
        ("target", p.config.target.as_ref(), config::TARGET_SEED_SALT),
        ("forcing", p.config.forcing.as_ref(), config::FORCING_SEED_SALT),
    ];
    for (name, cfg, salt) in slots {
        let seed = match cfg {
            None if name != "forcing" => Some(p.derived_seed(salt)),
            Some(FieldConfig::RandomSmooth { seed, .. }) => Some(seed.unwrap_or_else(|| p.derived_seed(salt))),
            Some(FieldConfig::ProcessSample { seed, .. }) => Some(*seed),
            _ => None,
        };
        if let Some(s) = seed {
            fields.insert(name.to_string(), s);
        }
    }
    SeedManifest::new(p.config.seed, p.noise.seed, fields)
}

/// Validates and runs `cfg` on the current rayon pool. Writes nothing.
pub fn execute(cfg: &RunConfig) -> Result<(RunReport, Outcome), LabError> {
    let prepared = cfg.prepare()?;
    let start = Instant::now();
    let outcome = experiments::run_experiment(&prepared)?;
    let wall = start.elapsed().as_secs_f64();
    let report = RunReport::new(cfg, &outcome, seed_manifest(&prepared), wall);
    Ok((report, outcome))
}

/// Runs `cfg` and writes its outputs under `out`.
///
/// Configuration errors are detected before anything is written.
pub fn run_to_dir(cfg: &RunConfig, out: &Path) -> Result<RunReport, LabError> {
    let (report, outcome) = execute(cfg)?;
    report::write_outputs(out, &report, &outcome)?;
    Ok(report)
}
