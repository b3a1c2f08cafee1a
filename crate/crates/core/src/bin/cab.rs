//! Command-line runner for cascade experiments.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 internal
//! invariant violation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cascade_core::harness::config::{CascadeMethod, EdgeSetKind, DEFAULT_DELTAS};
use cascade_core::harness::{self, Execution, ExperimentConfig};
use cascade_core::ingest::{write_examples, DataFormat, ResultFormat};
use cascade_core::synth::gen_pool;
use cascade_core::Error;

#[derive(Parser)]
#[command(name = "cab", version, about = "Edge-cloud cascading experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic pool.
    Gen(GenArgs),
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// Grid over delta and all edge-set methods, with CbD and CAb routing.
    Sweep(RunArgs),
    /// Reliability diagram and screening trajectories.
    Diagnose(RunArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the synthetic pool seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "jsonl")]
    format: DataFormat,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the base seed of the trials.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<ResultFormat>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    workers: Option<usize>,
    /// Run trials on the calling thread.
    #[arg(long)]
    sequential: bool,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_)
        | Error::InvalidAlpha(_)
        | Error::InvalidDelta(_)
        | Error::InvalidBandwidth(_)
        | Error::InvalidTemperature(_)
        | Error::InvalidLabelSpace(_) => 1,
        Error::Invariant(_) => 3,
        _ => 2,
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::from_file(p),
        None => Ok(ExperimentConfig::default()),
    }
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut c = load_config(self.config.as_ref())?;
        if let Some(s) = self.seed {
            c.run.base_seed = s;
        }
        if let Some(t) = self.trials {
            c.run.trials = t;
        }
        if let Some(o) = &self.out {
            c.output.path = o.clone();
        }
        if let Some(f) = self.format {
            c.output.format = f;
        }
        if let Some(w) = self.workers {
            c.run.workers = w;
        }
        c.validate()?;
        Ok(c)
    }

    fn execution(&self, config: &ExperimentConfig) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel {
                workers: config.run.workers,
            }
        }
    }
}

fn gen(args: &GenArgs) -> Result<(), Error> {
    let mut c = load_config(args.config.as_ref())?;
    if let Some(s) = args.seed {
        c.synthetic.seed = s;
    }
    let pool = gen_pool(&c.synthetic)?;
    write_examples(&pool, &args.out, args.format)?;
    log::info!("wrote {} examples to {}", pool.len(), args.out.display());
    Ok(())
}

fn run(args: &RunArgs, sweep: bool) -> Result<(), Error> {
    let mut config = args.config()?;
    if sweep {
        config.method.edge_sets = vec![EdgeSetKind::Hms, EdgeSetKind::Cp, EdgeSetKind::Lcp];
        config.method.cascades = vec![CascadeMethod::Cbd, CascadeMethod::Cab];
        if args.config.is_none() {
            config.risk.deltas = DEFAULT_DELTAS.to_vec();
        }
        config.validate()?;
    }
    let pool = harness::load_pool(&config)?;
    let output = harness::run_experiment(&config, &pool, args.execution(&config))?;
    for path in harness::write_outputs(&output, &config.output.path, config.output.format)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn diagnose(args: &RunArgs) -> Result<(), Error> {
    let mut config = args.config()?;
    if args.out.is_none() {
        config.output.path = config
            .output
            .path
            .with_file_name(match config.output.format {
                ResultFormat::Json => "diagnostics.json",
                ResultFormat::Csv => "diagnostics.csv",
            });
    }
    let pool = harness::load_pool(&config)?;
    let report = harness::diagnose(&config, &pool)?;
    for path in harness::write_diagnostics(&report, &config.output.path, config.output.format)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a, false),
        Command::Sweep(a) => run(a, true),
        Command::Diagnose(a) => diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
