use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use thinlab::error::{LabError, Result};
use thinlab::experiments::claims::{self, ClaimOutcome, PipelineRun};
use thinlab::experiments::{emit_report, ExperimentConfig, ReportFormat};

#[derive(Parser)]
#[command(name = "thinlab", about = "Thin-domain reaction-diffusion convergence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated eps list overriding the configuration.
    #[arg(long, global = true, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Output file for the report or the claim outcome.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format: csv or json.
    #[arg(long, global = true, default_value = "csv")]
    format: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Gap growth and the constant mode of the limit operator.
    Spectrum,
    /// Resolvent distance rate and the straight-channel floor.
    ResolventRate,
    /// Energy inequality between the thin and limit problems.
    Energy,
    /// Averaging-extension identities and the eigenprojection rate.
    OperatorIdentities,
    /// Transverse Poincare inequality and lifted norm convergence.
    Poincare,
    /// Cut-off nonlinearity suite.
    Cutoff,
    /// Corrector ratio limit and the cell problem.
    Expansion,
    /// Equilibria, Morse indices and hyperbolicity.
    Equilibria,
    /// Gap dimension, graph convergence and the graph rate.
    Manifold,
    /// Reduced-map and time-one rates.
    ReducedDistance,
    /// Lipschitz shadowing constants and the attractor bound.
    Shadowing,
    /// Rescaling identity and the reduced-space cross-check.
    AttractorDistance,
    /// End-to-end attractor-distance rate.
    AttractorRate,
    /// Two identical runs compared byte for byte.
    Determinism,
    /// Runs the sweep and writes the report.
    Report,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(eps) = &cli.eps {
        cfg = cfg.with_eps(eps.clone())?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn claim(command: Command, cfg: &ExperimentConfig) -> Result<ClaimOutcome> {
    let pipeline = || claims::run_pipeline(cfg);
    match command {
        Command::Spectrum => claims::spectrum_claim(cfg),
        Command::ResolventRate => claims::resolvent_claim(cfg),
        Command::Energy => claims::energy_claim(cfg),
        Command::OperatorIdentities => claims::operator_identity_claim(cfg),
        Command::Poincare => claims::poincare_claim(cfg),
        Command::Cutoff => claims::cutoff_claim(cfg),
        Command::Expansion => claims::expansion_claim(cfg),
        Command::Equilibria => claims::equilibria_claim(cfg),
        Command::Manifold => claims::manifold_claim(cfg, &pipeline()?),
        Command::ReducedDistance => claims::reduced_claim(&pipeline()?),
        Command::Shadowing => claims::shadowing_claim(cfg, &pipeline()?),
        Command::AttractorDistance => claims::attractor_distance_claim(&pipeline()?),
        Command::AttractorRate => claims::attractor_rate_claim(&pipeline()?),
        Command::Determinism => {
            let first: PipelineRun = pipeline()?;
            claims::determinism_claim(&first, &pipeline()?)
        }
        Command::Report => unreachable!("handled by run"),
    }
}

fn write_out(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(p) => std::fs::write(p, text).map_err(|source| LabError::Io { path: p.display().to_string(), source }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    let format: ReportFormat = cli.format.parse()?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load(cli)?;
    if cli.command == Command::Report {
        let run = claims::run_pipeline(&cfg)?;
        match &cli.out {
            Some(p) => emit_report(&run.report, format, p)?,
            None => print!("{}", thinlab::experiments::report::render(&run.report, format)?),
        }
        return Ok(true);
    }
    let outcome = claim(cli.command, &cfg)?;
    for c in &outcome.checks {
        eprintln!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let text = serde_json::to_string_pretty(&outcome).expect("outcome serializes");
    write_out(cli, &text)?;
    Ok(outcome.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
