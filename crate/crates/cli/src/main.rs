//! `chase`: generate synthetic data, train, evaluate, predict and check gradients.

mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use chase_core::checkpoint::{load_checkpoint, save_checkpoint};
use chase_core::data::{generate_synthetic, load_dataset, split_dataset, write_dataset, MANIFEST_FILE};
use chase_core::eval::{baseline_rank, evaluate};
use chase_core::gradcheck::{gradient_check, random_check_case, GradCheckOptions};
use chase_core::model::ATTENTION_CSV_HEADER;
use chase_core::train::{predict_prepared, train_with};
use chase_core::{Error, LabeledTrace, RankedDiagnosis, TrainedModel};

use config::{Settings, SEED_ENV};

const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Diverged(String),
    Checkpoint(String),
    Gradcheck(String),
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Checkpoint(_) => 5,
            CliError::Gradcheck(_) => 6,
            CliError::Internal(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Io(m)
            | CliError::Diverged(m)
            | CliError::Checkpoint(m)
            | CliError::Gradcheck(m)
            | CliError::Internal(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidConfig(_)
            | Error::InvalidEpsilon(_)
            | Error::EmptyTrainingSet
            | Error::InsufficientData(_)
            | Error::MissingLabel(_) => CliError::Config(msg),
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::SchemaViolation { .. }
            | Error::EmptyDataset
            | Error::CycleDetected(_)
            | Error::DanglingReference(_)
            | Error::EmptyTrace
            | Error::UnknownCategory(_)
            | Error::EmptySeries
            | Error::NotADag => CliError::Io(msg),
            Error::DivergedLoss { .. } | Error::NonFiniteGradient(_) => CliError::Diverged(msg),
            Error::Checkpoint(_) => CliError::Checkpoint(msg),
            _ => CliError::Internal(msg),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "chase", version, about = "Root-cause localization for microservice traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(short = 'c', long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Val,
    Test,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic fault-injection dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        traces: Option<String>,
        #[arg(short = 'o', long = "out", value_name = "DIR")]
        out: PathBuf,
    },
    /// Train on the train split of a dataset; writes a checkpoint and history.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory or manifest file.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        epochs: Option<String>,
        #[arg(long)]
        ablation: Option<String>,
        #[arg(short = 'o', long = "out", value_name = "DIR")]
        out: PathBuf,
    },
    /// Score a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Part,
        /// Also write attention weights to attention.csv.
        #[arg(long)]
        dump_weights: bool,
        #[arg(short = 'o', long = "out", value_name = "DIR")]
        out: PathBuf,
    },
    /// Rank instances of every trace in a dataset.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Instances printed per trace.
        #[arg(long, default_value_t = 5)]
        top: usize,
        #[arg(short = 'o', long = "out", value_name = "DIR")]
        out: PathBuf,
    },
    /// Compare analytic gradients with central differences on a random trace.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_hyphen_values = true)]
        eps: Option<String>,
        #[arg(short = 'o', long = "out", value_name = "DIR")]
        out: Option<PathBuf>,
        /// Add 1 to the analytic gradient of this tensor.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
}

fn settings(common: &Common, flags: &[(&str, Option<&str>)]) -> CliResult<Settings> {
    let env = std::env::var(SEED_ENV).ok();
    let mut all = vec![("seed", common.seed.as_deref())];
    all.extend_from_slice(flags);
    Settings::resolve(common.config.as_deref(), env.as_deref(), &common.set, &all)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn out_dir(dir: &Path) -> CliResult<&Path> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    Ok(dir)
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_FILE)
    } else {
        data.to_path_buf()
    }
}

type Splits = (Vec<LabeledTrace>, Vec<LabeledTrace>, Vec<LabeledTrace>);

fn load_splits(data: &Path) -> CliResult<(Vec<LabeledTrace>, Splits)> {
    let (manifest, traces) = load_dataset(&manifest_path(data))?;
    let parts = split_dataset(&traces, manifest.split, manifest.seed)?;
    Ok((traces, parts))
}

fn cmd_generate(common: Common, traces: Option<String>, out: PathBuf) -> CliResult {
    let s = settings(&common, &[("traces", traces.as_deref())])?;
    let data = generate_synthetic(&s.synth)?;
    let dir = out_dir(&out)?;
    let manifest = write_dataset(dir, &data, &s.manifest())?;
    let anomalous = data.iter().filter(|t| t.label.is_anomalous).count();
    let instances: usize = data.iter().map(|t| t.bundle.instances.len()).sum();
    println!("traces     {}", data.len());
    println!("anomalous  {anomalous}");
    println!("normal     {}", data.len() - anomalous);
    println!("instances  {instances}");
    println!("manifest   {}", manifest.display());
    Ok(())
}

fn cmd_train(common: Common, data: PathBuf, epochs: Option<String>, ablation: Option<String>, out: PathBuf) -> CliResult {
    let s = settings(&common, &[("epochs", epochs.as_deref()), ("ablation", ablation.as_deref())])?;
    let (_, (train, val, _)) = load_splits(&data)?;
    println!(
        "training on {} traces ({} validation), ablation {}",
        train.len(),
        val.len(),
        s.train.ablation
    );
    let fit = train_with(&train, &val, s.train, |r| match r.val_a_at_1 {
        Some(a) => println!("epoch {:>3}  loss {:.6}  val A@1 {:.4}", r.epoch, r.train_loss, a),
        None => println!("epoch {:>3}  loss {:.6}", r.epoch, r.train_loss),
    })?;
    let dir = out_dir(&out)?;
    let ckpt = dir.join("checkpoint.json");
    save_checkpoint(&ckpt, &fit)?;
    write(&dir.join("history.csv"), &history_csv(&fit))?;
    println!("parameters {}", fit.model.num_parameters());
    println!("threshold  {}", fit.model.anomaly_threshold);
    if let Some(loss) = fit.final_loss() {
        println!("final loss {loss:e}");
    }
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

fn history_csv(fit: &TrainedModel) -> String {
    let mut s = String::from("epoch,train_loss,val_a_at_1\n");
    for r in &fit.history {
        let a = r.val_a_at_1.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, a);
    }
    s
}

fn predictions_jsonl(diagnoses: &[RankedDiagnosis]) -> CliResult<String> {
    let mut s = String::new();
    for d in diagnoses {
        s.push_str(&serde_json::to_string(d).map_err(|e| CliError::Internal(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

fn cmd_eval(data: PathBuf, checkpoint: PathBuf, split: Part, dump_weights: bool, out: PathBuf) -> CliResult {
    let fit = load_checkpoint(&checkpoint)?;
    let (all, (train, val, test)) = load_splits(&data)?;
    let part = match split {
        Part::Train => train,
        Part::Val => val,
        Part::Test => test,
        Part::All => all,
    };
    let model = &fit.model;
    let mut diagnoses = Vec::with_capacity(part.len());
    let mut baseline = Vec::with_capacity(part.len());
    let mut attention = String::from(ATTENTION_CSV_HEADER);
    attention.push('\n');
    for t in &part {
        let prep = model.prepare(&t.bundle, None)?;
        diagnoses.push(predict_prepared(model, &prep)?);
        baseline.push(baseline_rank(&t.bundle)?);
        if dump_weights {
            for r in model.attention_rows(&prep)? {
                attention.push_str(&r.csv_line());
                attention.push('\n');
            }
        }
    }
    let labels: Vec<_> = part.iter().map(|t| t.label.clone()).collect();
    let times: Vec<f64> = part.iter().map(|t| t.bundle.start_ts()).collect();
    let report = evaluate(&diagnoses, &labels, &times)?;
    let base = evaluate(&baseline, &labels, &times)?;

    let dir = out_dir(&out)?;
    let table = format!(
        "model ({})\n{}\nbaseline (metric z-score, error keywords)\n{}",
        model.config.ablation,
        report.to_table(),
        base.to_table()
    );
    print!("{table}");
    write(&dir.join("report.txt"), &table)?;
    write(&dir.join("report.jsonl"), &report.to_jsonl())?;
    write(&dir.join("baseline.jsonl"), &base.to_jsonl())?;
    write(&dir.join("predictions.jsonl"), &predictions_jsonl(&diagnoses)?)?;
    if dump_weights {
        write(&dir.join("attention.csv"), &attention)?;
    }
    Ok(())
}

fn cmd_predict(data: PathBuf, checkpoint: PathBuf, top: usize, out: PathBuf) -> CliResult {
    let fit = load_checkpoint(&checkpoint)?;
    let (all, _) = load_splits(&data)?;
    let mut diagnoses = Vec::with_capacity(all.len());
    for t in &all {
        let d = predict_prepared(&fit.model, &fit.model.prepare(&t.bundle, None)?)?;
        let head: Vec<&str> = d.ranking.iter().take(top).map(String::as_str).collect();
        let flag = if d.is_anomalous { "anomalous" } else { "normal" };
        println!("{}  {flag}  {}", d.trace_id, head.join(" "));
        diagnoses.push(d);
    }
    let dir = out_dir(&out)?;
    write(&dir.join("predictions.jsonl"), &predictions_jsonl(&diagnoses)?)
}

fn cmd_gradcheck(common: Common, eps: Option<String>, out: Option<PathBuf>, corrupt: Option<String>) -> CliResult {
    let s = settings(&common, &[("eps", eps.as_deref())])?;
    let (model, prep) = random_check_case(s.train.clone(), s.gc_instances, s.synth.seed)?;
    if let Some(name) = &corrupt {
        if !model.params.contains_key(name) {
            return Err(CliError::Config(format!("no parameter tensor named `{name}`")));
        }
    }
    let opts = GradCheckOptions {
        epsilon: s.eps,
        samples: s.gc_samples,
        seed: s.synth.seed,
        corrupt,
    };
    let report = gradient_check(&model, &prep, &opts)?;

    let mut text = String::new();
    let _ = writeln!(text, "epsilon {:e}", report.epsilon);
    let _ = writeln!(text, "instances {}  dim {}  heads {}", s.gc_instances, s.train.dim, s.train.heads);
    let _ = writeln!(
        text,
        "{:<36} {:>6} {:>6} {:>12} {:>12}",
        "group", "coords", "kinks", "max_rel_err", "max_abs_err"
    );
    for g in &report.groups {
        let _ = writeln!(
            text,
            "{:<36} {:>6} {:>6} {:>12.3e} {:>12.3e}",
            g.name, g.coords, g.kinks, g.max_rel_err, g.max_abs_err
        );
    }
    let _ = writeln!(text, "max relative error {:.3e}", report.max_rel_err());
    print!("{text}");
    if let Some(dir) = out {
        write(&out_dir(&dir)?.join("gradcheck.txt"), &text)?;
    }
    let failing: Vec<&str> = report
        .failures(GRADCHECK_TOLERANCE)
        .iter()
        .map(|g| g.name.as_str())
        .collect();
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Gradcheck(format!(
            "relative error at or above {GRADCHECK_TOLERANCE:e} in: {}",
            failing.join(", ")
        )))
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Generate { common, traces, out } => cmd_generate(common, traces, out),
        Command::Train {
            common,
            data,
            epochs,
            ablation,
            out,
        } => cmd_train(common, data, epochs, ablation, out),
        Command::Eval {
            data,
            checkpoint,
            split,
            dump_weights,
            out,
        } => cmd_eval(data, checkpoint, split, dump_weights, out),
        Command::Predict { data, checkpoint, top, out } => cmd_predict(data, checkpoint, top, out),
        Command::Gradcheck { common, eps, out, corrupt } => cmd_gradcheck(common, eps, out, corrupt),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
