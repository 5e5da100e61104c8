use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reputa::fixture::{self, FixtureParams};
use reputa_cli::{stages, CliError, Context, PipelineConfig};

#[derive(Parser)]
#[command(name = "reputa", version, about = "Smart-contract reputability pipeline")]
struct Cli {
    /// Pipeline config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Re-run stages even when their manifest is current.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the contract corpus and write the train/test split.
    Ingest,
    /// Disassemble bytecode into opcode category sequences.
    Disasm,
    /// Train opcode category embeddings.
    Embed,
    /// Oversample the illicit class.
    Augment,
    /// Grid-search and fit boosted trees per augmentation method.
    TrainGbdt,
    /// Hourly aggregation, outlier removal, standardization and windowing.
    TxFeatures,
    /// Train the transaction-only and multimodal autoencoders.
    TrainCae,
    /// Reconstruction errors, anomaly reports and latents.
    Score,
    /// Classification metrics for every model.
    Evaluate,
    /// Percentile threshold sweep.
    Sweep,
    /// Every stage in order.
    RunAll,
    /// Generate a synthetic labelled corpus into --out.
    MakeFixture {
        #[arg(long, default_value_t = 40)]
        reputable: usize,
        #[arg(long, default_value_t = 10)]
        illicit: usize,
        /// How strongly illicit bytecode follows the illicit opcode profile (0–1).
        #[arg(long, default_value_t = 1.0)]
        illicit_code_mix: f64,
        /// Shortest transaction history, in hours.
        #[arg(long, default_value_t = 72)]
        min_hours: u64,
        /// Longest transaction history, in hours.
        #[arg(long, default_value_t = 120)]
        max_hours: u64,
    },
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config {
        field: "--config".into(),
        msg: "a pipeline config is required".into(),
    })?;
    let mut config = PipelineConfig::load(path)?;
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    config.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::Config {
            field: "output_dir".into(),
            msg: "set output_dir or pass --out".into(),
        })?;
    Ok(Context {
        config,
        out,
        force: cli.force,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stage = match &cli.command {
        Command::MakeFixture {
            reputable,
            illicit,
            illicit_code_mix,
            min_hours,
            max_hours,
        } => {
            let seed = cli.seed.ok_or_else(|| CliError::Config {
                field: "--seed".into(),
                msg: "make-fixture needs a seed".into(),
            })?;
            let out = cli.out.clone().ok_or_else(|| CliError::Config {
                field: "--out".into(),
                msg: "make-fixture needs an output directory".into(),
            })?;
            if *reputable == 0 || *illicit == 0 {
                return Err(CliError::Config {
                    field: "--reputable/--illicit".into(),
                    msg: "need at least one contract of each class".into(),
                });
            }
            if !(0.0..=1.0).contains(illicit_code_mix) {
                return Err(CliError::Config {
                    field: "--illicit-code-mix".into(),
                    msg: "must lie in [0, 1]".into(),
                });
            }
            if *min_hours == 0 || min_hours > max_hours {
                return Err(CliError::Config {
                    field: "--min-hours/--max-hours".into(),
                    msg: "need 1 <= min-hours <= max-hours".into(),
                });
            }
            let params = FixtureParams {
                illicit_code_mix: *illicit_code_mix,
                hours_min: *min_hours,
                hours_max: *max_hours,
                ..FixtureParams::new(*reputable, *illicit, seed)
            };
            let records = fixture::make_fixture(&out, &params)?;
            println!("wrote {} contracts to {}", records.len(), out.display());
            return Ok(());
        }
        Command::RunAll => None,
        Command::Ingest => Some("ingest"),
        Command::Disasm => Some("disasm"),
        Command::Embed => Some("embed"),
        Command::Augment => Some("augment"),
        Command::TrainGbdt => Some("train-gbdt"),
        Command::TxFeatures => Some("tx-features"),
        Command::TrainCae => Some("train-cae"),
        Command::Score => Some("score"),
        Command::Evaluate => Some("evaluate"),
        Command::Sweep => Some("sweep"),
    };
    let ctx = context(&cli)?;
    match stage {
        Some(s) => {
            stages::run(&ctx, s)?;
        }
        None => stages::run_all(&ctx)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
