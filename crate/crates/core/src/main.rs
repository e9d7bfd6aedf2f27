use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use radcom_sim::cli::config::{check_penetrations, parse_list};
use radcom_sim::cli::{parse_config, run_experiment, Config, RunSpec};
use radcom_sim::safety::oracle;

/// Penetration sweep of RadCom offloading over a congested ITS-G5 channel.
#[derive(Debug, Parser)]
#[command(name = "radcom-sim", version)]
struct Args {
    /// `key = value` configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed, overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated penetration rates, e.g. `0,0.5,1`.
    #[arg(long)]
    penetrations: Option<String>,
    #[arg(long)]
    replications: Option<u32>,
    /// Dump every event of every run into the output directory.
    #[arg(long)]
    trace: bool,
    /// Check the closed-form safe gap against the numeric braking oracle and exit.
    #[arg(long)]
    oracle_check: bool,
}

fn load(args: &Args) -> Result<Config, String> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            parse_config(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => Config::default(),
    };
    if let Some(s) = args.seed {
        cfg.scenario.seed = s;
    }
    if let Some(p) = &args.penetrations {
        let list = parse_list(p).map_err(|e| format!("--penetrations: {e}"))?;
        check_penetrations(&list).map_err(|e| format!("--penetrations: {e}"))?;
        cfg.penetrations = list;
    }
    if let Some(r) = args.replications {
        if r == 0 {
            return Err("--replications must be >= 1".into());
        }
        cfg.replications = r;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.oracle_check {
        let seed = args.seed.unwrap_or(1);
        let r = oracle::check_grid(10_000, seed);
        let (v0, al, af, tau) = r.worst_point;
        println!(
            "oracle check: {} points, max error {:.3e} m at v0={v0:.3} a_lead={al:.3} a_follow={af:.3} tau={tau:.3}",
            r.points, r.max_error
        );
        return if r.max_error <= 1e-3 { ExitCode::SUCCESS } else { ExitCode::from(1) };
    }
    let config = match load(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let spec = RunSpec { config, out_dir: args.out.clone(), trace: args.trace };
    match run_experiment(&spec) {
        Ok(sweep) => {
            print!("{}", sweep.summary_csv());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
