use std::path::PathBuf;
use std::process::ExitCode;

use cbfed_lab::error::EXIT_SCHEMA;
use cbfed_lab::{run_to_dir, LabError, RunConfig};
use clap::Parser;

/// Runs one cbfed experiment described by a TOML file.
#[derive(Debug, Parser)]
#[command(name = "cbfed-lab", version)]
struct Args {
    /// Configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the configuration, which
    /// overrides `CBFED_LAB_OUT`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for path batches.
    #[arg(long)]
    threads: Option<usize>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

fn run(args: &Args) -> Result<i32, LabError> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os("CBFED_LAB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", cfg.kind.name(), cfg.seed)));
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LabError::Schema(format!("cannot start {n} threads: {e}")))?;
    }
    let report = run_to_dir(&cfg, &out)?;
    if !args.quiet || !report.passed {
        for c in &report.criteria {
            let mark = if c.passed { "pass" } else { "FAIL" };
            eprintln!("{mark} {:<32} {}", c.name, c.detail);
        }
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        eprintln!(
            "{} {} in {:.1}s -> {}",
            report.kind.name(),
            if report.passed { "passed" } else { "failed" },
            report.wall_time_s,
            out.display()
        );
    }
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_SCHEMA as u8 } else { 0 });
        }
    };
    let code = match run(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
