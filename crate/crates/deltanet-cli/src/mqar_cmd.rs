//! The `deltanet mqar` subcommands: dataset generation, training, evaluation.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};

use deltanet::error::Error;
use deltanet::layer::mqar::mqar_validate;
use deltanet::layer::{
    load_checkpoint, load_instances_jsonl, mqar_eval, mqar_generate, mqar_train,
    save_checkpoint, save_instances_jsonl, Model, ModelConfig, MqarTask, TrainConfig,
};
use deltanet::linalg::Rng;

/// Everything one experiment needs, in one JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MqarJobConfig {
    pub model: ModelConfig,
    pub task: MqarTask,
    pub train: TrainConfig,
    pub gen: GenCounts,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenCounts {
    pub train_count: usize,
    pub eval_count: usize,
}

impl MqarJobConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        let cfg: MqarJobConfig = serde_json::from_str(&text).map_err(|e| Error::Config {
            field: "config".into(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.model.validate()?;
        self.task.validate()?;
        if self.model.vocab_size != self.task.vocab_size() {
            return Err(Error::Config {
                field: "model.vocab_size".into(),
                msg: format!(
                    "must equal task vocab {} (keys + values + filler), got {}",
                    self.task.vocab_size(),
                    self.model.vocab_size
                ),
            });
        }
        if self.task.seq_len > 0 && self.model.chunk_size > self.task.seq_len {
            return Err(Error::Config {
                field: "model.chunk_size".into(),
                msg: "larger than the sequence length".into(),
            });
        }
        Ok(())
    }
}

#[derive(Subcommand)]
pub enum MqarCmd {
    /// Generate train/eval datasets as JSON lines.
    Gen(GenArgs),
    /// Train a model on a generated dataset, writing a checkpoint bundle,
    /// a loss curve CSV, and a JSON report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset; prints accuracy JSON.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving train.jsonl and eval.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory holding train.jsonl and eval.jsonl from `mqar gen`.
    #[arg(long)]
    data_dir: PathBuf,
    /// Output directory: checkpoint bundle, losses.csv, report.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint directory from `mqar train`.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

pub fn run(cmd: MqarCmd, seed: u64) -> Result<ExitCode, Error> {
    match cmd {
        MqarCmd::Gen(args) => gen(args, seed),
        MqarCmd::Train(args) => train(args),
        MqarCmd::Eval(args) => eval(args),
    }
}

fn gen(args: GenArgs, seed: u64) -> Result<ExitCode, Error> {
    let cfg = MqarJobConfig::load(&args.config)?;
    let base = Rng::new(seed);
    let mut rng_train = base.fork(0x6E1);
    let mut rng_eval = base.fork(0x6E2);
    let train: Vec<_> = (0..cfg.gen.train_count)
        .map(|_| mqar_generate(&cfg.task, &mut rng_train))
        .collect::<Result<_, _>>()?;
    let eval: Vec<_> = (0..cfg.gen.eval_count)
        .map(|_| mqar_generate(&cfg.task, &mut rng_eval))
        .collect::<Result<_, _>>()?;

    // dataset self-consistency: the most-recent-binding scorer must agree
    // with every recorded answer
    let bad = train
        .iter()
        .chain(eval.iter())
        .filter(|inst| !mqar_validate(&cfg.task, inst))
        .count();
    if bad > 0 {
        eprintln!("error: {bad} generated instances fail the independent validator");
        return Ok(ExitCode::from(1));
    }

    std::fs::create_dir_all(&args.out_dir)?;
    save_instances_jsonl(args.out_dir.join("train.jsonl"), &train)?;
    save_instances_jsonl(args.out_dir.join("eval.jsonl"), &eval)?;
    println!(
        "wrote {} train and {} eval instances to {} (validator: all pass)",
        train.len(),
        eval.len(),
        args.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    final_loss: f64,
    eval_accuracy: f64,
    param_count: usize,
}

fn train(args: TrainArgs) -> Result<ExitCode, Error> {
    let cfg = MqarJobConfig::load(&args.config)?;
    let train_data = load_instances_jsonl(args.data_dir.join("train.jsonl"))?;
    let eval_data = load_instances_jsonl(args.data_dir.join("eval.jsonl"))?;
    let mut model = Model::init(&cfg.model)?;
    eprintln!(
        "training: {} params, {} instances, batch {}, lr {}, {} epochs",
        model.param_count(),
        train_data.len(),
        cfg.train.batch_size,
        cfg.train.lr,
        cfg.train.epochs
    );
    let report = mqar_train(&mut model, &train_data, &eval_data, &cfg.train)?;

    std::fs::create_dir_all(&args.out_dir)?;
    save_checkpoint(&model, args.out_dir.join("checkpoint"))?;
    let mut losses = std::io::BufWriter::new(std::fs::File::create(
        args.out_dir.join("losses.csv"),
    )?);
    writeln!(losses, "# schema=1")?;
    writeln!(losses, "step,loss")?;
    for (i, loss) in report.step_losses.iter().enumerate() {
        writeln!(losses, "{},{}", i + 1, loss)?;
    }
    drop(losses);

    let summary = TrainSummary {
        steps: report.steps,
        final_loss: *report.step_losses.last().unwrap_or(&f64::NAN),
        eval_accuracy: report.eval_accuracy,
        param_count: model.param_count(),
    };
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(args.out_dir.join("report.json"), json.clone() + "\n")?;
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}

fn eval(args: EvalArgs) -> Result<ExitCode, Error> {
    // accept either the train output directory or the checkpoint dir itself
    let ckpt_dir = if args.ckpt.join("config.json").exists() {
        args.ckpt.clone()
    } else {
        args.ckpt.join("checkpoint")
    };
    let model = load_checkpoint(&ckpt_dir)?;
    let data = load_instances_jsonl(&args.data)?;
    let accuracy = mqar_eval(&model, &data)?;
    println!("{{\"instances\": {}, \"accuracy\": {accuracy}}}", data.len());
    Ok(ExitCode::SUCCESS)
}
