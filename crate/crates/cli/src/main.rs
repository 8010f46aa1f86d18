mod commands;
mod config_file;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use lorentz_core::diagnostics::PathologySource;
use lorentz_core::micro::StationaryMode;
use lorentz_core::{LabError, Result};
use serde_json::json;

use commands::{Context, Outcome};
use config_file::FileSpec;

/// Worker count for the estimator pool; defaults to all cores.
const WORKERS_ENV: &str = "LORENTZ_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "lorentz-lab", version, about = "Slab Lorentz gas experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key = value file (L, rho1, rho2, mu, epsilon, eta, seed, samples, bins, angles, mode).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_epsilon: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_eta: Option<Vec<f64>>,
    #[arg(long, global = true)]
    mode: Option<ModeArg>,
    /// Trajectory source for `pathologies`.
    #[arg(long, global = true, default_value = "markov")]
    source: SourceArg,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Green–Kubo table.
    Gk,
    ProfileKinetic,
    ProfileMicro,
    /// Flux against -D grad rho, per bin.
    Fick,
    DiffusiveLimit,
    Survival,
    Pathologies,
    HilbertRemainder,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Gk => "gk",
            Command::ProfileKinetic => "profile-kinetic",
            Command::ProfileMicro => "profile-micro",
            Command::Fick => "fick",
            Command::DiffusiveLimit => "diffusive-limit",
            Command::Survival => "survival",
            Command::Pathologies => "pathologies",
            Command::HilbertRemainder => "hilbert-remainder",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    Fresh,
    Rerandomized,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SourceArg {
    Markov,
    Micro,
}

fn error_json(kind: &str, message: &str) -> String {
    json!({ "status": "error", "error": { "kind": kind, "message": message } }).to_string()
}

fn error_kind(e: &LabError) -> &'static str {
    match e {
        LabError::InvalidConfig(_) => "invalid_config",
        LabError::Io(_) => "io",
        LabError::Csv(_) | LabError::Json(_) => "serialization",
        _ => "runtime",
    }
}

fn init_pool() -> Result<usize> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| LabError::InvalidConfig(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LabError::InvalidConfig(format!("worker pool: {e}")))?;
    }
    Ok(rayon::current_num_threads())
}

fn context(cli: &Cli) -> Result<Context> {
    let mut spec = match &cli.config {
        Some(p) => FileSpec::load(p)?,
        None => FileSpec::default(),
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    if cli.samples.is_some() {
        spec.samples = cli.samples;
    }
    if let Some(m) = cli.mode {
        spec.mode = match m {
            ModeArg::Fresh => "fresh".into(),
            ModeArg::Rerandomized => "rerandomized".into(),
        };
    }
    if spec.samples == Some(0) {
        return Err(LabError::InvalidConfig("samples must be positive".into()));
    }
    let config = spec.slab()?;
    let mode = StationaryMode::parse(&spec.mode, &config)?;
    std::fs::create_dir_all(&cli.out)?;
    let source = match cli.source {
        SourceArg::Markov => PathologySource::Markov,
        SourceArg::Micro => PathologySource::Micro,
    };
    Ok(Context {
        spec,
        config,
        out: cli.out.clone(),
        sweep_epsilon: cli.sweep_epsilon.clone(),
        sweep_eta: cli.sweep_eta.clone(),
        mode,
        source,
    })
}

fn run(cli: &Cli) -> Result<bool> {
    let started = Instant::now();
    let workers = init_pool()?;
    let ctx = context(cli)?;
    let Outcome { results, checks } = match cli.command {
        Command::Gk => commands::gk(&ctx),
        Command::ProfileKinetic => commands::profile_kinetic(&ctx),
        Command::ProfileMicro => commands::profile_micro(&ctx),
        Command::Fick => commands::fick(&ctx),
        Command::DiffusiveLimit => commands::diffusive_limit(&ctx),
        Command::Survival => commands::survival(&ctx),
        Command::Pathologies => commands::pathologies(&ctx),
        Command::HilbertRemainder => commands::hilbert_remainder(&ctx),
    }?;
    let pass = checks.iter().all(|c| c.pass);
    for c in checks.iter().filter(|c| !c.pass) {
        log::warn!("check failed: {}: {}", c.name, c.detail);
    }
    let summary = json!({
        "command": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": ctx.spec,
        "seed": ctx.config.seed,
        "scaling_health": ctx.config.scaling_health(),
        "sweep_epsilon": ctx.sweep_epsilon,
        "sweep_eta": ctx.sweep_eta,
        "workers": workers,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "status": if pass { "pass" } else { "fail" },
        "checks": checks,
        "results": results,
    });
    std::fs::write(ctx.out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{}: {} ({} checks) -> {}", cli.command.name(), if pass { "pass" } else { "FAIL" }, checks.len(), ctx.out.display());
    Ok(pass)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_json("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", error_json(error_kind(&e), &e.to_string()));
            ExitCode::from(2)
        }
    }
}
