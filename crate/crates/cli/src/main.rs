use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regiotoll::metrics;
use regiotoll::{ErrorKind, Pipeline, ScenarioConfig, Stage};

/// Multi-region traffic simulation, system-optimal routing and congestion pricing.
#[derive(Parser)]
#[command(name = "regiotoll", version)]
struct Cli {
    /// Scenario file; the shipped Zurich preset is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Out {
    /// Artifact directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run several stages in dependency order.
    Run {
        #[command(flatten)]
        out: Out,
        /// Comma separated subset of qdue,dso,train,priced,compare,plots, or `all`.
        #[arg(long, default_value = "all")]
        stages: String,
    },
    /// Simulate the logit user equilibrium.
    SimulateQdue(Out),
    /// Solve the rolling-horizon system optimum.
    SolveDso(Out),
    /// Train the per-border cost models on the equilibrium run.
    TrainPricing(Out),
    /// Simulate the equilibrium under predicted tolls.
    RunPriced(Out),
    /// Write and print the comparison tables.
    Compare(Out),
    /// Write plot data files.
    EmitPlots(Out),
    /// Print the resolved scenario as TOML.
    ShowConfig,
}

fn load(cli: &Cli) -> regiotoll::Result<ScenarioConfig> {
    let mut config = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::zurich(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn run(cli: &Cli) -> regiotoll::Result<()> {
    let config = load(cli)?;
    let (out, stages) = match &cli.command {
        Command::ShowConfig => {
            config.build()?;
            print!("{}", config.to_toml()?);
            return Ok(());
        }
        Command::Run { out, stages } => (&out.out, Stage::parse_list(stages)?),
        Command::SimulateQdue(o) => (&o.out, vec![Stage::Qdue]),
        Command::SolveDso(o) => (&o.out, vec![Stage::Dso]),
        Command::TrainPricing(o) => (&o.out, vec![Stage::Train]),
        Command::RunPriced(o) => (&o.out, vec![Stage::Priced]),
        Command::Compare(o) => (&o.out, vec![Stage::Compare]),
        Command::EmitPlots(o) => (&o.out, vec![Stage::Plots]),
    };
    let pipeline = Pipeline::new(config.build()?, out)?;
    let manifest = pipeline.run(&stages)?;
    if stages.contains(&Stage::Compare) {
        let s = pipeline.summary()?;
        print!("{}", metrics::compare(&s.qdue, &s.dso, "QDUE", "DSO")?.to_text());
        if let Some(p) = &s.priced {
            println!();
            print!("{}", metrics::compare(&s.qdue, p, "QDUE", "Priced")?.to_text());
        }
    }
    println!(
        "wrote {} artifacts to {} (stages: {})",
        manifest.artifacts.len(),
        out.display(),
        manifest.stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(",")
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Numerical => 3,
                ErrorKind::Io => 4,
            })
        }
    }
}
