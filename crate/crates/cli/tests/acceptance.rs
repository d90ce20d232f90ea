//! Acceptance run: one pass/fail line per criterion.
//!
//! Numeric arguments select criteria, e.g. `cargo test --test acceptance -- 3 4`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::Instant;

use cbfed::checks::{commutation_study, explicit_linear_order, linear_exactness, operator_suite};
use cbfed::{Grid, GridSpec, ModelParams};
use cbfed_lab::{execute, Outcome, RunConfig, RunReport};

type Verdict = Result<(bool, String), String>;
type Check = (usize, &'static str, fn() -> Verdict);

fn config(name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(format!("{name}.toml"));
    RunConfig::from_file(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn run(cfg: &RunConfig) -> Result<(RunReport, Outcome), String> {
    execute(cfg).map_err(|e| format!("{}: {e}", cfg.kind.name()))
}

static CACHE: Mutex<Option<HashMap<String, RunReport>>> = Mutex::new(None);

/// Runs a shipped config once per process.
fn run_named(name: &str) -> Result<RunReport, String> {
    if let Some(r) = CACHE.lock().unwrap().get_or_insert_with(HashMap::new).get(name) {
        return Ok(r.clone());
    }
    let (report, _) = run(&config(name))?;
    CACHE
        .lock()
        .unwrap()
        .get_or_insert_with(HashMap::new)
        .insert(name.to_string(), report.clone());
    Ok(report)
}

fn criterion(report: &RunReport, name: &str) -> Result<(bool, String), String> {
    report
        .criteria
        .iter()
        .find(|c| c.name == name)
        .map(|c| (c.passed, c.detail.clone()))
        .ok_or_else(|| format!("{} reports no criterion {name}", report.kind.name()))
}

fn all_passed(report: &RunReport) -> (bool, String) {
    let failed: Vec<&str> = report
        .criteria
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    (failed.is_empty(), format!("failed: {failed:?}"))
}

fn within(start: Instant, limit_s: f64) -> (bool, String) {
    let t = start.elapsed().as_secs_f64();
    (t <= limit_s, format!("{t:.1}s <= {limit_s}s"))
}

fn operator_properties() -> Verdict {
    let start = Instant::now();
    let g = Grid::new(GridSpec::new(2, 64, 1.0).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let s = operator_suite(&g, &ModelParams::default(), 500, 2024).map_err(|e| e.to_string())?;
    let (fast, time) = within(start, 120.0);
    Ok((
        s.passes() && s.pairs == 500 && fast,
        format!(
            "projection {:.1e}, skew {:.1e}, antisymmetry {:.1e}, C1 identity {:.1e}, violations {}+{}, {time}",
            s.projection_defect,
            s.skew_rel,
            s.antisymmetry_rel,
            s.c1_identity_rel,
            s.c1_monotone_violations,
            s.monotone_violations
        ),
    ))
}

fn commutation() -> Verdict {
    let start = Instant::now();
    let s = commutation_study(3.0, &[32, 64, 128], 2024).map_err(|e| e.to_string())?;
    let decreasing = s.residuals.windows(2).all(|w| w[1] < w[0]);
    let (fast, time) = within(start, 120.0);
    Ok((
        decreasing && s.order >= 1.8 && fast,
        format!(
            "residuals [{}], order {:.2} >= 1.8, {time}",
            s.residuals.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>().join(", "),
            s.order
        ),
    ))
}

fn linear() -> Verdict {
    let exact = linear_exactness(64, 1.0, 1.0, 1.0, 1e-3).map_err(|e| e.to_string())?;
    let order = explicit_linear_order(32, 0.05, 0.1, 0.5, 1.0, 1e-3, 3).map_err(|e| e.to_string())?;
    let decreasing = order.errors.windows(2).all(|w| w[1] < w[0]);
    Ok((
        exact.abs_error <= 1e-8 && decreasing && order.order >= 0.9,
        format!(
            "endpoint error {:.2e} <= 1e-8; explicit-term order {:.3} (scheme order 1)",
            exact.abs_error, order.order
        ),
    ))
}

fn steering() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for seed in 1..=5 {
        let mut cfg = config("steer");
        cfg.seed = seed;
        let (report, _) = run(&cfg)?;
        for name in ["success", "first_hit_before_t0", "decay_certificate"] {
            ok &= criterion(&report, name)?.0;
        }
        let ratio = report.metrics.get("report").and_then(|r| {
            Some(r.get("achieved")?.as_f64()? / r.get("dist0")?.as_f64()?)
        });
        worst = worst.max(ratio.ok_or("steer report lacks distances")?);
    }
    let (fast, time) = within(start, 300.0);
    Ok((
        ok && fast,
        format!("5 pairs, worst ‖y(T)-y₁‖/‖y₀-y₁‖ = {worst:.2e}, {time}"),
    ))
}

fn approximate_control() -> Verdict {
    let (report, _) = run(&config("approx-control"))?;
    let (ok, _) = all_passed(&report);
    let (_, detail) = criterion(&report, "non_increasing_in_eps_tol")?;
    Ok((ok, detail))
}

fn noise_statistics() -> Verdict {
    let start = Instant::now();
    let (report, _) = run(&config("ou-check"))?;
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["trace_oracle", "ou_stationary_variance", "wiener_isometry"] {
        let (pass, detail) = criterion(&report, name)?;
        ok &= pass;
        parts.push(detail);
    }
    let (fast, time) = within(start, 180.0);
    parts.push(time);
    Ok((ok && fast, parts.join("; ")))
}

fn stochastic_energy() -> Verdict {
    let start = Instant::now();
    let (sde, _) = run(&config("sde-run"))?;
    let mut ok = true;
    let mut parts = Vec::new();
    for name in ["ito_zero_at_start", "ito_refinement_order"] {
        let (pass, detail) = criterion(&sde, name)?;
        ok &= pass;
        parts.push(detail);
    }
    for file in ["sde-bounds", "sde-bounds-critical"] {
        let cfg = config(file);
        if cfg.monte_carlo.paths < 200 {
            return Err(format!("{file} uses fewer than 200 paths"));
        }
        let (report, _) = run(&cfg)?;
        for name in ["bound_h", "bound_v"] {
            let (pass, detail) = criterion(&report, name)?;
            ok &= pass;
            parts.push(detail);
        }
    }
    let (fast, time) = within(start, 900.0);
    parts.push(time);
    Ok((ok && fast, parts.join("; ")))
}

fn irreducibility_witness() -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for file in ["irreducibility-zero", "irreducibility-to-rest", "irreducibility-smooth"] {
        let cfg = config(file);
        if cfg.monte_carlo.paths < 200 || !cfg.irreducibility.radius_factors.contains(&0.5) {
            return Err(format!("{file} must use >= 200 paths and radius factor 0.5"));
        }
        let report = run_named(file)?;
        ok &= report
            .criteria
            .iter()
            .filter(|c| c.name.starts_with("witness_") || c.name == "monotone_in_radius")
            .all(|c| c.passed);
        let est = report.metrics.get("estimates").and_then(|e| e.get(0)).cloned();
        let low = est.as_ref().and_then(|e| e.get("ci_low")?.as_f64()).unwrap_or(f64::NAN);
        let p_hat = est.as_ref().and_then(|e| e.get("p_hat")?.as_f64()).unwrap_or(f64::NAN);
        parts.push(format!("{file}: p̂ {p_hat:.3}, CI low {low:.3}"));
    }
    let (fast, time) = within(start, 1200.0);
    parts.push(time);
    Ok((ok && fast, parts.join("; ")))
}

fn shadowing() -> Verdict {
    let cfg = config("irreducibility-to-rest");
    if !cfg.irreducibility.shadowing || cfg.monte_carlo.paths < 200 {
        return Err("shadowing needs 200 paths".into());
    }
    let report = run_named("irreducibility-to-rest")?;
    let (a, da) = criterion(&report, "shadowing_rank_correlation")?;
    let (b, db) = criterion(&report, "shadowing_envelope_exponent")?;
    Ok((a && b, format!("{da}; {db}")))
}

fn reproducibility() -> Verdict {
    let cfg = config("irreducibility-smooth");
    let mut bytes = Vec::new();
    for threads in [1, 2] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        let (report, _) = pool.install(|| run(&cfg))?;
        bytes.push(report.metrics.to_bytes());
    }
    Ok((
        bytes[0] == bytes[1],
        format!("{} metric bytes, 1 vs 2 threads", bytes[0].len()),
    ))
}

fn main() -> ExitCode {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Check; 10] = [
        (1, "operator property suite", operator_properties),
        (2, "commutation identity under grid doubling", commutation),
        (3, "linear exactness", linear),
        (4, "finite-time steering", steering),
        (5, "approximate control through the covariance", approximate_control),
        (6, "noise statistics", noise_statistics),
        (7, "stochastic energy", stochastic_energy),
        (8, "irreducibility witness", irreducibility_witness),
        (9, "shadowing structure", shadowing),
        (10, "reproducibility across thread counts", reproducibility),
    ];
    let mut failures = 0;
    for (n, title, check) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!pass);
        println!(
            "criterion {n:>2} {} {title} ({detail}) [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
