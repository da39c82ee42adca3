use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use swipt_core::channel::{Scheme, SystemConfig};
use swipt_core::harness;

/// Rate-energy frontier sweeps for MIMO interference channels with energy
/// harvesting receivers.
#[derive(Debug, Parser)]
#[command(name = "swipt-sim", version)]
struct Args {
    /// JSON config file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Beam scheme(s): MEB, MLB, SLER, SLER_TILT, comma separated.
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<Scheme>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pick the energy-harvesting pairs by SLER-sum selection.
    #[arg(long)]
    select: bool,
    /// Run the verification audits instead of a sweep.
    #[arg(long)]
    audit: bool,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(args: &Args) -> Result<SystemConfig, String> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            SystemConfig::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?
        }
        None => SystemConfig::default(),
    };
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.select {
        cfg.select = true;
    }
    if let Some(&s) = args.scheme.first() {
        cfg.scheme = s;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn run(args: &Args) -> Result<bool, String> {
    let cfg = load_config(args)?;
    if args.audit {
        let reports = harness::run_audits(&cfg);
        for r in &reports {
            println!("{r}");
        }
        return Ok(reports.iter().all(|r| r.passed));
    }

    let schemes = if args.scheme.is_empty() { vec![cfg.scheme] } else { args.scheme.clone() };
    let mut curves = Vec::new();
    for scheme in schemes {
        let c = SystemConfig { scheme, ..cfg.clone() };
        let out = harness::run_sweep(&c).map_err(|e| e.to_string())?;
        log::info!(
            "{scheme}: {} trials, {} unconverged points, {} monotonicity violations, worst shortfall {:e}",
            c.trials,
            out.unconverged_points,
            out.monotone_violations,
            out.worst_shortfall
        );
        curves.extend(out.curves);
    }
    match &args.out {
        Some(path) => harness::emit_csv(&curves, path).map_err(|e| e.to_string())?,
        None => print!("{}", harness::csv_string(&curves).map_err(|e| e.to_string())?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
