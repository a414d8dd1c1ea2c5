//! `dess`: dataset statistics, training, evaluation, prediction and
//! attention export for the dual-channel triplet extractor.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dess_core::checkpoint::{load_checkpoint, save_checkpoint};
use dess_core::config::RunConfig;
use dess_core::corpus::{attach_heads, dataset_stats, load_sentences, DatasetSplit, Sentence, Triplet};
use dess_core::evaluation::{categorize_errors, exact_match, TripletsById};
use dess_core::model::DessModel;
use dess_core::training::{gold_by_id, predict_all, train, write_log_csv};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Split label for single-file commands; sentence ids are `line-<n>`.
const LINE_LABEL: &str = "line";

#[derive(Parser)]
#[command(name = "dess", version, about = "Aspect sentiment triplet extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print sentence, triplet and sentiment counts of a data file as JSON.
    Stats(DataArgs),
    /// Train on train/dev/test files; writes a checkpoint and a CSV log.
    Train(TrainArgs),
    /// Score a checkpoint (or a predictions file) against gold data.
    Eval(EvalArgs),
    /// Write predicted triplets as JSON lines.
    Predict(PredictArgs),
    /// Export per-sentence attention matrices as CSV, optionally PGM.
    AttnExport(AttnArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Data file in `sentence####[triplets]` format.
    #[arg(long)]
    data: PathBuf,
    /// Dependency sidecar aligned line by line with `--data`.
    #[arg(long)]
    heads: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Dependency sidecar for the training file.
    #[arg(long)]
    heads: Option<PathBuf>,
    #[arg(long)]
    dev_heads: Option<PathBuf>,
    #[arg(long)]
    test_heads: Option<PathBuf>,
    #[arg(long, default_value = "paper-main", value_parser = clap::builder::PossibleValuesParser::new(dess_core::config::PRESETS))]
    preset: String,
    /// JSON or TOML overrides merged over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for `best.ckpt` and `log.csv`.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Checkpoint path; defaults to `<out>/best.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, required_unless_present = "predictions")]
    checkpoint: Option<PathBuf>,
    /// Score this file instead of running a model: JSON lines as written by
    /// `predict`, or a data file aligned with `--data`.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Write here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum HeadChoice {
    Index(usize),
    Mean,
}

fn parse_head(s: &str) -> std::result::Result<HeadChoice, String> {
    if s == "mean" {
        return Ok(HeadChoice::Mean);
    }
    s.parse()
        .map(HeadChoice::Index)
        .map_err(|_| format!("expected a head index or `mean`, got `{s}`"))
}

#[derive(Args)]
struct AttnArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Layer index; negative values count from the last layer.
    #[arg(long, default_value_t = -1, allow_negative_numbers = true)]
    layer: i64,
    #[arg(long, default_value = "mean", value_parser = parse_head)]
    head: HeadChoice,
    /// Directory receiving `<id>.csv` per sentence.
    #[arg(long)]
    out: PathBuf,
    /// Also write a grayscale `<id>.pgm` heatmap.
    #[arg(long)]
    pgm: bool,
    /// Restrict to these sentence ids.
    #[arg(long = "id")]
    ids: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PredictionLine {
    id: String,
    triplets: Vec<Triplet>,
}

fn load_data(args: &DataArgs) -> Result<Vec<Sentence>> {
    let mut sentences =
        load_sentences(&args.data, LINE_LABEL).with_context(|| format!("loading {}", args.data.display()))?;
    if let Some(heads) = &args.heads {
        attach_heads(&mut sentences, heads).with_context(|| format!("loading {}", heads.display()))?;
    }
    Ok(sentences)
}

fn load_model(path: &Path) -> Result<DessModel> {
    Ok(load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?
        .model)
}

fn stats(args: &DataArgs) -> Result<()> {
    let stats = dataset_stats(&load_data(args)?);
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => RunConfig::from_file(&args.preset, path)?,
        None => RunConfig::preset(&args.preset)?,
    };
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    let mut split = DatasetSplit {
        train: load_sentences(&args.data, "train")?,
        dev: load_sentences(&args.dev, "dev")?,
        test: load_sentences(&args.test, "test")?,
    };
    for (sentences, heads) in [
        (&mut split.train, &args.heads),
        (&mut split.dev, &args.dev_heads),
        (&mut split.test, &args.test_heads),
    ] {
        if let Some(path) = heads {
            attach_heads(sentences, path)?;
        }
    }
    log::info!(
        "training on {} sentences ({} dev, {} test), preset {}",
        split.train.len(),
        split.dev.len(),
        split.test.len(),
        args.preset
    );
    let outcome = train(&split, &config.model, &config.train)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| args.out.join("best.ckpt"));
    save_checkpoint(&ckpt, &outcome.best)?;
    write_log_csv(args.out.join("log.csv"), &outcome.log)?;
    let summary = serde_json::json!({
        "best_epoch": outcome.best.epoch,
        "epochs_run": outcome.counters.epochs_run,
        "stopped_early": outcome.stopped_early,
        "dev": outcome.best.dev,
        "test": outcome.test,
        "checkpoint": ckpt.display().to_string(),
    });
    println!("{summary}");
    Ok(())
}

fn read_predictions(path: &Path) -> Result<TripletsById> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let jsonl = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| l.trim_start().starts_with('{'));
    if !jsonl {
        return Ok(gold_by_id(&load_sentences(path, LINE_LABEL)?));
    }
    let mut out = TripletsById::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: PredictionLine =
            serde_json::from_str(line).with_context(|| format!("{}:{}: bad prediction line", path.display(), i + 1))?;
        if out
            .insert(p.id.clone(), p.triplets.into_iter().collect::<BTreeSet<_>>())
            .is_some()
        {
            bail!("{}:{}: duplicate id `{}`", path.display(), i + 1, p.id);
        }
    }
    Ok(out)
}

fn eval(args: &EvalArgs) -> Result<()> {
    let sentences = load_data(&args.data)?;
    let gold = gold_by_id(&sentences);
    let pred = match (&args.predictions, &args.checkpoint) {
        (Some(path), _) => read_predictions(path)?,
        (None, Some(ckpt)) => predict_all(&load_model(ckpt)?, &sentences)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let metrics = exact_match(&pred, &gold)?;
    let errors = categorize_errors(&pred, &gold)?;
    println!("{}", serde_json::json!({ "metrics": metrics, "errors": errors }));
    Ok(())
}

fn predict(args: &PredictArgs) -> Result<()> {
    let sentences = load_data(&args.data)?;
    let model = load_model(&args.checkpoint)?;
    let mut out: Box<dyn Write> = match &args.output {
        Some(path) => Box::new(BufWriter::new(
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    for s in &sentences {
        let line = PredictionLine {
            id: s.id.clone(),
            triplets: model.predict_sentence(s)?.triplets.into_iter().collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    out.flush()?;
    Ok(())
}

/// Binary PGM with the largest weight mapped to white.
fn write_pgm(path: &Path, m: &Array2<f64>) -> Result<()> {
    let max = m.iter().copied().fold(0.0, f64::max);
    let mut bytes = format!("P5\n{} {}\n255\n", m.ncols(), m.nrows()).into_bytes();
    bytes.extend(
        m.iter()
            .map(|&w| if max > 0.0 { (w / max * 255.0).round() as u8 } else { 0 }),
    );
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn attn_export(args: &AttnArgs) -> Result<()> {
    let sentences = load_data(&args.data)?;
    let model = load_model(&args.checkpoint)?;
    let wanted: BTreeSet<&str> = args.ids.iter().map(String::as_str).collect();
    if let Some(id) = wanted.iter().find(|id| !sentences.iter().any(|s| s.id == **id)) {
        bail!("no sentence with id `{id}`");
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for s in sentences
        .iter()
        .filter(|s| wanted.is_empty() || wanted.contains(s.id.as_str()))
    {
        let maps = model.predict_sentence(s)?.attention;
        let Some(layer) = maps.layer_index(args.layer) else {
            bail!("layer {} out of range for {} layers", args.layer, maps.num_layers());
        };
        let matrix = match args.head {
            HeadChoice::Mean => maps.head_mean(layer),
            HeadChoice::Index(h) => match maps.layers[layer].get(h) {
                Some(m) => m.clone(),
                None => bail!("head {h} out of range for {} heads", maps.layers[layer].len()),
            },
        };
        let path = args.out.join(format!("{}.csv", s.id));
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(&path)?;
        for row in matrix.rows() {
            writer.serialize(row.to_vec())?;
        }
        writer.flush()?;
        if args.pgm {
            write_pgm(&args.out.join(format!("{}.pgm", s.id)), &matrix)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DESS_LOG", "warn")).init();
    let result = match &cli.command {
        Command::Stats(a) => stats(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::AttnExport(a) => attn_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
