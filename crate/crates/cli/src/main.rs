use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ftlm::config::RunConfig;
use ftlm::pipeline::{Checkpoint, Pipeline, Predictor, System};
use ftlm::Error;

#[derive(Parser)]
#[command(name = "ftlm", version, about = "Streaming factorized transducer with swappable LM predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// LM weight inside the non-blank softmax.
    #[arg(long)]
    alpha: Option<f64>,
    /// LM weight outside the non-blank softmax.
    #[arg(long)]
    beta: Option<f64>,
    /// Beam size (the N-best size is capped to it).
    #[arg(long)]
    beam: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    Weak,
    Small,
    Strong,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckpointArg {
    Swap,
    Mwer,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise the paired ASR splits and the LM text.
    GenData(Common),
    /// Train the ASR and LM subword tokenizers.
    TrainTokenizer(Common),
    /// Pre-train the small and large LMs.
    TrainLm(Common),
    /// Move the large LM onto the ASR vocabulary.
    AdaptVocab(Common),
    /// Train the transducer with the stateless predictor.
    TrainAsr(Common),
    /// Swap the adapted LM in as predictor.
    SwapLm(Common),
    /// MWER finetuning after the swap.
    MwerFinetune(Common),
    /// Decode one split with one predictor.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "strong")]
        predictor: PredictorArg,
        /// Strong-predictor checkpoint: right after the swap, or after MWER.
        #[arg(long, value_enum, default_value = "swap")]
        stage: CheckpointArg,
        #[arg(long, default_value = "asr_test")]
        split: String,
    },
    /// Decode dev and test with every system and compare.
    Evaluate(Common),
    /// Every stage in order.
    RunAll(Common),
    /// Training throughput at two vocabulary sizes.
    BenchVocab(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenData(c)
            | Command::TrainTokenizer(c)
            | Command::TrainLm(c)
            | Command::AdaptVocab(c)
            | Command::TrainAsr(c)
            | Command::SwapLm(c)
            | Command::MwerFinetune(c)
            | Command::Evaluate(c)
            | Command::RunAll(c)
            | Command::BenchVocab(c) => c,
            Command::Decode { common, .. } => common,
        }
    }
}

fn load_config(c: &Common) -> ftlm::Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config).map_err(|e| match e {
        Error::Io { .. } | Error::Json(_) => Error::Config(e.to_string()),
        other => other,
    })?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(a) = c.alpha {
        cfg.fusion.alpha = a;
    }
    if let Some(b) = c.beta {
        cfg.fusion.beta = b;
    }
    if let Some(b) = c.beam {
        cfg.beam.beam = b;
        cfg.beam.nbest = cfg.beam.nbest.min(b);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command) -> ftlm::Result<serde_json::Value> {
    let cfg = load_config(command.common())?;
    if let Command::RunAll(_) = command {
        let mut p = Pipeline::fresh(cfg)?;
        p.run_all()?;
        return Ok(serde_json::json!({
            "report": p.report_path(),
            "evaluate": p.report().metrics.get("evaluate"),
        }));
    }
    let mut p = Pipeline::new(cfg)?;
    match command {
        Command::GenData(_) => p.gen_data(),
        Command::TrainTokenizer(_) => p.train_tokenizers(),
        Command::TrainLm(_) => p.train_lms(),
        Command::AdaptVocab(_) => p.adapt_vocab(),
        Command::TrainAsr(_) => p.train_asr(),
        Command::SwapLm(_) => p.swap_lm(),
        Command::MwerFinetune(_) => p.mwer_finetune(),
        Command::Evaluate(_) => p.evaluate(),
        Command::BenchVocab(_) => p.bench_vocab(),
        Command::Decode {
            predictor,
            stage,
            split,
            ..
        } => {
            let sys = System {
                predictor: match predictor {
                    PredictorArg::Weak => Predictor::Weak,
                    PredictorArg::Small => Predictor::Small,
                    PredictorArg::Strong => Predictor::Strong,
                },
                checkpoint: match stage {
                    CheckpointArg::Swap => Checkpoint::Swap,
                    CheckpointArg::Mwer => Checkpoint::Mwer,
                },
            };
            let wer = p.decode(sys, &split)?;
            Ok(serde_json::json!({ "system": sys.to_string(), "split": split, "wer": wer }))
        }
        Command::RunAll(_) => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
