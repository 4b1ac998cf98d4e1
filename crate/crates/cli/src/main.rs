use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cpt_cli::{run, write_outputs, CampaignKind, CliError, RunConfig};

/// Simulate CPT resonances with intensity-dependent repumping.
#[derive(Parser, Debug)]
#[command(name = "cptsim", version)]
struct Args {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Keep the entry Rabi frequencies in every slice.
    #[arg(long)]
    no_feedback: bool,
    /// Overrides the campaign named in the config.
    #[arg(long, value_enum)]
    campaign: Option<CampaignKind>,
}

fn execute(args: &Args) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(c) = args.campaign {
        cfg.campaign = c;
    }
    if args.no_feedback {
        cfg.feedback = false;
    }
    if args.jobs == 0 {
        return Err(CliError::Config { field: "--jobs".into(), reason: "must be >= 1".into() });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs)
        .build()
        .map_err(|e| CliError::Config { field: "--jobs".into(), reason: e.to_string() })?;
    let report = pool.install(|| run(&cfg))?;
    for path in write_outputs(&report, &args.out)? {
        println!("wrote {}", path.display());
    }
    report.check_fits()
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cptsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
