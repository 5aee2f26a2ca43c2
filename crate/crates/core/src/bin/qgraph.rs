use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qgraph_inverse::cli::{cmd_forward, cmd_invert, cmd_lambda_log, cmd_roundtrip, read_lambda_list, Outcome, ProblemConfig};
use qgraph_inverse::lattice::LatticeKind;
use qgraph_inverse::{Error, Result};

#[derive(Parser)]
#[command(name = "qgraph", about = "Forward and inverse D-N problems on square and hexagonal quantum graphs")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// Problem configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Recorded D-N sample file to invert instead of the configured forward model.
    #[arg(long, global = true)]
    dtn: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the configured lattice kind.
    #[arg(long, global = true, value_parser = ["square", "hex"])]
    lattice: Option<String>,
    #[arg(long, global = true)]
    tol_potential: Option<f64>,
    #[arg(long, global = true)]
    tol_coupling: Option<f64>,
    /// Worker threads for lambda evaluations.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Lambda list for `forward` (one per line, as written by `lambda-log`).
    #[arg(long, global = true)]
    lambdas: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the configured D-N map into a sample file.
    Forward,
    /// Reconstruct potentials and couplings from the configured model or a sample file.
    Invert,
    /// Forward then invert, failing when the recovery is outside tolerance.
    Roundtrip,
    /// List the lambda values an inversion of this configuration requests.
    LambdaLog,
}

fn config(args: &Args) -> Result<Option<ProblemConfig>> {
    let Some(path) = &args.config else { return Ok(None) };
    let mut c = ProblemConfig::load(path)?;
    match args.lattice.as_deref() {
        Some("square") => c.lattice = LatticeKind::Square,
        Some("hex") => c.lattice = LatticeKind::Hex,
        _ => {}
    }
    if let Some(t) = args.tol_potential {
        c.tolerances.potential = t;
    }
    if let Some(t) = args.tol_coupling {
        c.tolerances.coupling = t;
    }
    Ok(Some(c))
}

fn required(c: Option<ProblemConfig>) -> Result<ProblemConfig> {
    c.ok_or_else(|| Error::Validation("--config is required".into()))
}

fn run(args: &Args) -> Result<Option<Outcome>> {
    let cfg = config(args)?;
    let out = args.out.as_deref();
    match args.command {
        Command::Forward => {
            let c = required(cfg)?;
            let ls = match &args.lambdas {
                Some(p) => read_lambda_list(p)?,
                None => c.lambdas.clone(),
            };
            cmd_forward(&c, &ls, out)?;
            Ok(None)
        }
        Command::Invert => cmd_invert(cfg.as_ref(), args.dtn.as_deref(), out).map(Some),
        Command::Roundtrip => cmd_roundtrip(&required(cfg)?, out).map(Some),
        Command::LambdaLog => {
            cmd_lambda_log(&required(cfg)?, out)?;
            Ok(None)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("qgraph: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&args) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(o)) => {
            if let Some(e) = &o.failure {
                eprintln!("qgraph: {e}");
            }
            ExitCode::from(o.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("qgraph: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
