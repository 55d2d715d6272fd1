use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use resvec_cli::commands::{
    cmd_analyze, cmd_ensemble, cmd_plot, cmd_presets, cmd_privacy, cmd_run, Context, Outcome, Overrides,
};
use resvec_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "sim", version, about = "Resilient noisy vector consensus experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One seeded run; writes run.ndrec and any retained traces.
    Run(Common),
    /// Monte Carlo ensemble; writes ensemble.ndrec and summary.json.
    Ensemble(Common),
    /// Coverage, tail, variance and membership reports for an ensemble.
    Analyze(Common),
    /// Coupled-run privacy audit.
    Privacy(Common),
    /// SVG plots of initial states, finals and Mahalanobis ellipses.
    Plot(Common),
    /// Writes the named scenario configs.
    Presets {
        #[arg(long, default_value = "configs")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Worker threads; all cores when absent.
    #[arg(long)]
    jobs: Option<usize>,
    /// Record file to read instead of the one in the output directory.
    #[arg(long)]
    input: Option<PathBuf>,
}

fn dispatch(cmd: Command) -> (Result<Outcome>, Option<PathBuf>) {
    let (common, f): (Common, fn(&Context) -> Result<Outcome>) = match cmd {
        Command::Presets { out } => return (cmd_presets(&out), None),
        Command::Run(c) => (c, cmd_run),
        Command::Ensemble(c) => (c, cmd_ensemble),
        Command::Analyze(c) => (c, cmd_analyze),
        Command::Privacy(c) => (c, cmd_privacy),
        Command::Plot(c) => (c, cmd_plot),
    };
    let ov = Overrides {
        out: common.out.clone(),
        seed: common.seed,
        runs: common.runs,
        jobs: common.jobs,
        input: common.input,
    };
    match Context::load(&common.config, &ov) {
        Ok(ctx) => {
            let out = ctx.out.clone();
            (f(&ctx), Some(out))
        }
        Err(e) => (Err(e), common.out),
    }
}

fn fail(e: &CliError, out: Option<&PathBuf>) -> ExitCode {
    let rec = e.record();
    eprintln!("{rec}");
    if let Some(dir) = out {
        if dir.is_dir() {
            let _ = std::fs::write(dir.join("error.json"), format!("{rec}\n"));
        }
    }
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, out) = dispatch(cli.command);
    match result {
        Ok(outcome) => {
            let (text, err) = outcome.into_result();
            print!("{text}");
            match err {
                Some(e) => fail(&e, out.as_ref()),
                None => ExitCode::SUCCESS,
            }
        }
        Err(e) => fail(&e, out.as_ref()),
    }
}
