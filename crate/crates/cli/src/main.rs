use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tegru_cli::{ablate, eval_cmd, preprocess, train_cmd};

#[derive(Parser)]
#[command(name = "tegru", version, about = "Sentiment classification with a transformer encoder and recurrent baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, tokenize, build the vocabulary and encode corpora.
    Preprocess(preprocess::PreprocessArgs),
    /// Train a model and write its checkpoint and history.
    Train(train_cmd::TrainArgs),
    /// Report accuracy, F1 and per-comment latency of a checkpoint.
    Eval(eval_cmd::EvalArgs),
    /// Train every cell of a hyperparameter grid and tabulate the results.
    Ablate(ablate::AblateArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Preprocess(args) => {
            let stats = preprocess::run(&args)?;
            for s in &stats.splits {
                println!("{:<6} {:>8} samples  {:>4} malformed  {:>4} empty", s.split, s.samples, s.malformed_lines.len(), s.dropped_empty);
            }
            println!("vocabulary {} tokens, coverage {:.2}%", stats.vocab_size, stats.token_coverage * 100.0);
            if let Some(c) = stats.embedding_coverage {
                println!("pretrained embeddings cover {:.2}% of the vocabulary", c * 100.0);
            }
        }
        Command::Train(args) => {
            let s = train_cmd::run(&args)?;
            println!(
                "best epoch {} with validation accuracy {:.2}% ({} parameters)",
                s.outcome.best_epoch,
                s.outcome.best_valid_acc * 100.0,
                s.parameters
            );
            if let Some(r) = &s.test {
                println!("{r}");
                println!("{}", serde_json::to_string(r)?);
            }
            println!("checkpoint written to {}", s.checkpoint.display());
        }
        Command::Eval(args) => {
            let r = eval_cmd::run(&args)?;
            println!("{r}");
            println!("{}", serde_json::to_string(&r)?);
        }
        Command::Ablate(args) => {
            let rows = ablate::run(&args)?;
            print!("{}", ablate::render_table(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
