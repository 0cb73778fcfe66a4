use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gamesynth::relation::{RELAXED_TOL, STRICT_TOL};
use gamesynth_cli::commands::*;
use gamesynth_cli::{CliError, Context};

#[derive(Parser)]
#[command(name = "gamesynth", version, about = "Abstraction-based controller synthesis for stochastic games")]
struct Cli {
    /// Project configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the simulation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rerun stages even when their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the reduced-order game.
    Reduce,
    /// Build the transition kernel of the finite abstraction.
    Abstract,
    /// Search for (or verify the bundled) relation certificate.
    Relate,
    /// Verify a certificate file condition by condition.
    CheckRelation {
        #[arg(long)]
        certificate: Option<PathBuf>,
        /// Use the strict self-verification tolerance.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Value iteration and policy tables.
    Synthesize,
    /// Monte Carlo closed-loop runs.
    Simulate {
        /// Record controller step time (makes the report nondeterministic).
        #[arg(long)]
        timing: bool,
    },
    /// Band and quantile CSVs for plotting.
    Plot,
    /// All stages in order.
    Run,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    let config = cli.config.ok_or_else(|| CliError::Parse {
        path: PathBuf::from("--config"),
        msg: "a configuration file is required".into(),
    })?;
    let mut ctx = Context::new(&config, &cli.out)?;
    ctx.force = cli.force;
    ctx.seed = cli.seed;
    match cli.command {
        Command::Reduce => cmd_reduce(&ctx)?,
        Command::Abstract => cmd_abstract(&ctx)?,
        Command::Relate => cmd_relate(&ctx)?,
        Command::CheckRelation { certificate, strict, tol } => {
            let tol = tol.unwrap_or(if strict { STRICT_TOL } else { RELAXED_TOL });
            let rep = cmd_check_relation(&ctx, certificate.as_deref(), tol)?;
            return Ok(if rep.all_pass { 0 } else { 2 });
        }
        Command::Synthesize => cmd_synthesize(&ctx)?,
        Command::Simulate { timing } => {
            ctx.timing = timing;
            cmd_simulate(&ctx)?
        }
        Command::Plot => cmd_plot(&ctx)?,
        Command::Run => cmd_run(&ctx)?,
    }
    Ok(0)
}
