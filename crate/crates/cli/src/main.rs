use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modelprint_cli::{
    cmd_evaluate, cmd_fingerprint, cmd_pool, cmd_report, cmd_train, cmd_verify, desk_config,
    exit_code_for, OutPaths, RunConfig,
};

#[derive(Parser)]
#[command(
    name = "modelprint",
    about = "Decision-boundary model fingerprinting and black-box ownership verification",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PipelineArgs {
    /// Run configuration (JSON). Omit to use the built-in desk-scale
    /// benchmark config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for run artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

impl PipelineArgs {
    fn load(&self) -> modelprint::Result<(RunConfig, OutPaths)> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => desk_config(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok((cfg, OutPaths::new(&self.out)))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset, train the protected model, and persist both.
    Train(PipelineArgs),
    /// Build the surrogate and test model pools.
    Pool(PipelineArgs),
    /// Generate the fingerprint set from the surrogate pools.
    Fingerprint(PipelineArgs),
    /// Verify one suspect model file against a fingerprint set.
    Verify {
        /// Fingerprint-set file.
        #[arg(long)]
        fingerprints: PathBuf,
        /// Suspect model file.
        #[arg(long)]
        suspect: PathBuf,
        /// Decision threshold on the matching rate, in [0, 1].
        #[arg(long)]
        theta: f64,
        /// Optional path for the verification report (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Score the test pools and write the benchmark report.
    Evaluate(PipelineArgs),
    /// Print a saved benchmark report; optionally export ROC points.
    Report {
        /// Benchmark report file.
        #[arg(long)]
        report: PathBuf,
        /// Optional path for tab-separated (fpr, tpr) points.
        #[arg(long)]
        roc_out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
}

fn run(cli: Cli) -> modelprint::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let (cfg, out) = args.load()?;
            cmd_train(&cfg, &out, args.quiet)
        }
        Command::Pool(args) => {
            let (cfg, out) = args.load()?;
            cmd_pool(&cfg, &out, args.quiet)
        }
        Command::Fingerprint(args) => {
            let (cfg, out) = args.load()?;
            cmd_fingerprint(&cfg, &out, args.quiet)
        }
        Command::Verify {
            fingerprints,
            suspect,
            theta,
            out,
            quiet,
        } => cmd_verify(&fingerprints, &suspect, theta, out.as_deref(), quiet),
        Command::Evaluate(args) => {
            let (cfg, out) = args.load()?;
            cmd_evaluate(&cfg, &out, args.quiet)
        }
        Command::Report {
            report,
            roc_out,
            quiet,
        } => cmd_report(&report, roc_out.as_deref(), quiet),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
