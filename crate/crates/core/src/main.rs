use clap::{Parser, Subcommand};
use fedledger::experiment::{self, DataSource, ExperimentSpec};
use fedledger::selection::PolicyKind;
use std::path::PathBuf;
use std::process::ExitCode;

/// Federated learning across organizations with an audit ledger and
/// Shapley-based contribution valuation.
#[derive(Parser, Debug)]
#[command(name = "fedledger", version, about)]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply to every missing key.
    #[arg(long, global = true, env = "FEDLEDGER_CONFIG")]
    config: Option<PathBuf>,
    /// Master seed (run) or generator seed (generate).
    #[arg(long, global = true, env = "FEDLEDGER_SEED")]
    seed: Option<u64>,
    /// Output directory (run) or CSV path (generate).
    #[arg(long, global = true, env = "FEDLEDGER_OUT")]
    out: Option<PathBuf>,
    /// Policies to compare; repeat or comma-separate.
    #[arg(long, global = true, value_delimiter = ',', env = "FEDLEDGER_POLICY")]
    policy: Vec<PolicyKind>,
    /// Local epochs; replaces any epochs sweep.
    #[arg(long, global = true, env = "FEDLEDGER_EPOCHS")]
    epochs: Option<usize>,
    /// Local batch size; replaces any batch-size sweep.
    #[arg(long, global = true, env = "FEDLEDGER_BATCH")]
    batch: Option<usize>,
    /// Run sweep points concurrently.
    #[arg(long, global = true, env = "FEDLEDGER_PARALLEL")]
    parallel: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic credit-card-schema CSV.
    Generate,
    /// Run every configured policy and sweep point and write metric files.
    Run,
    /// Check the integrity of an exported ledger.
    Validate {
        /// Ledger export (JSON lines, one block per line).
        chain: PathBuf,
    },
}

fn load_spec(cli: &Cli) -> Result<ExperimentSpec, experiment::ExperimentError> {
    let mut spec = match &cli.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.federation.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        spec.output_dir = out.clone();
    }
    if !cli.policy.is_empty() {
        spec.policies_to_compare = cli.policy.clone();
    }
    if let Some(e) = cli.epochs {
        spec.federation.train.epochs = e;
        spec.sweep.epochs = None;
    }
    if let Some(b) = cli.batch {
        spec.federation.train.batch_size = b;
        spec.sweep.batch_size = None;
    }
    spec.parallel |= cli.parallel;
    spec.validate()?;
    Ok(spec)
}

fn run(cli: &Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    match &cli.command {
        Command::Generate => {
            let spec = match &cli.config {
                Some(path) => ExperimentSpec::load(path)?,
                None => ExperimentSpec::default(),
            };
            let mut synth = match spec.data {
                DataSource::Synthetic(s) => s,
                DataSource::Csv(_) => return Err("generate needs a [data.synthetic] source".into()),
            };
            if let Some(seed) = cli.seed {
                synth.seed = seed;
            }
            let path = cli
                .out
                .clone()
                .unwrap_or_else(|| spec.output_dir.join("synthetic.csv"));
            let data = experiment::cmd_generate(&synth, &path)?;
            println!("wrote {} rows to {}", data.len(), path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run => {
            let spec = load_spec(cli)?;
            let out = experiment::cmd_run(&spec)?;
            println!("config hash {}", out.config_hash.to_hex());
            println!(
                "{:<13} {:>6} {:>5} {:>10} {:>10} {:>9}",
                "policy", "epochs", "batch", "accuracy", "org_acc", "rounds90"
            );
            for r in &out.runs {
                let rtt = r.result.rounds_to_threshold.map_or("-".into(), |v| v.to_string());
                println!(
                    "{:<13} {:>6} {:>5} {:>10.4} {:>10.4} {:>9}",
                    r.policy.to_string(),
                    r.epochs,
                    r.batch_size,
                    r.result.final_accuracy(),
                    r.result.final_org_accuracy(),
                    rtt
                );
            }
            println!("outputs in {}", spec.output_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { chain } => match experiment::cmd_validate(chain)? {
            Ok(n) => {
                println!("valid: {n} blocks");
                Ok(ExitCode::SUCCESS)
            }
            Err(fault) => {
                eprintln!("invalid: {fault}");
                Ok(ExitCode::from(1))
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
