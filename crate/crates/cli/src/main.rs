use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfc_cli::{
    cmd_ablate, cmd_adapt, cmd_eval, cmd_gen_corpus, cmd_pretrain, cmd_train_base,
    threads_from_env, CliResult, Context, ExperimentConfig, Overrides,
};

/// Low-resource voice conversion on a synthetic corpus.
#[derive(Parser, Debug)]
#[command(name = "mfc", version)]
struct Args {
    /// Output directory holding every artifact.
    #[arg(long, global = true, default_value = "mfc-out")]
    out: PathBuf,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed of corpus generation, pretraining and base training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated adaptation seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Adaptation utterances per target.
    #[arg(long, global = true)]
    utts: Option<usize>,
    /// Comma-separated target speaker ids.
    #[arg(long, global = true, value_delimiter = ',')]
    targets: Option<Vec<u32>>,
    /// Overwrite artifacts that differ from what this run produces.
    #[arg(long, global = true)]
    force: bool,
    /// Also write CSV reports.
    #[arg(long, global = true)]
    csv: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus.
    GenCorpus,
    /// Pretrain and freeze the auxiliary networks.
    Pretrain,
    /// Train the base conversion model.
    TrainBase,
    /// Adapt the base model to each target speaker and seed.
    Adapt,
    /// Score adapted and unadapted conversions.
    Eval,
    /// Run the ablation matrix.
    Ablate,
    /// Print the resolved configuration.
    ShowConfig,
}

fn run(args: Args) -> CliResult<()> {
    let overrides = Overrides {
        seed: args.seed,
        seeds: args.seeds,
        adapt_utts: args.utts,
        targets: args.targets,
    };
    let config = ExperimentConfig::load(args.config.as_deref(), &overrides)?;
    let ctx = Context {
        out: args.out,
        config,
        force: args.force,
        csv: args.csv,
        threads: threads_from_env()?,
    };
    match args.command {
        Command::GenCorpus => cmd_gen_corpus(&ctx),
        Command::Pretrain => cmd_pretrain(&ctx),
        Command::TrainBase => cmd_train_base(&ctx),
        Command::Adapt => cmd_adapt(&ctx),
        Command::Eval => cmd_eval(&ctx).map(|r| print!("{}", r.to_text())),
        Command::Ablate => cmd_ablate(&ctx).map(|r| print!("{}", r.to_text())),
        Command::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(&ctx.config).expect("config serializes"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mfc: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
