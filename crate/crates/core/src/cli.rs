//! Command-line front end: `train`, `eval`, `gradcheck`, `synth`, `project`.
//!
//! Exit codes: 0 on success, 2 for usage or configuration problems, 3 for
//! numeric failures (including a failed gradient check).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::autodiff::Fault;
use crate::data::{
    encode_examples, load_dataset, stratified_split, synth_generate, write_jsonl, Example,
    Format, LabelMode, SynthConfig,
};
use crate::error::{Error, Result};
use crate::gradcheck::{gradcheck, GradcheckConfig};
use crate::metrics::MetricsReport;
use crate::model::{load_checkpoint, save_checkpoint};
use crate::pairing::PairingStrategy;
use crate::projection::{encode_all, pca_2d, write_projection_csv};
use crate::trainer::{evaluate_model, save_loss_csv, train, Profile, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "brag", version, about = "Augmented adversarial training for imbalanced bragging classification")]
pub struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write checkpoint, loss log and dev metrics.
    #[command(allow_negative_numbers = true)]
    Train(Box<TrainArgs>),
    /// Score a checkpoint on a labelled dataset.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic imbalanced corpus.
    Synth(SynthArgs),
    /// Project encoder representations onto two principal components.
    Project(ProjectArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Labelled dataset (JSONL or TSV).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset format; guessed from the extension when omitted.
    #[arg(long)]
    format: Option<Format>,
}

impl DataArgs {
    fn load(&self) -> Result<Vec<Example>> {
        let path = self
            .data
            .as_deref()
            .ok_or_else(|| Error::Config("--data is required".into()))?;
        if !path.exists() {
            return Err(Error::Config(format!("dataset {} does not exist", path.display())));
        }
        load_dataset(path, self.format.unwrap_or_else(|| Format::from_path(path)))
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Train on a freshly generated synthetic corpus instead of --data.
    #[arg(long, conflicts_with = "data")]
    synthetic: bool,
    /// JSON config whose keys mirror the config field names.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts.
    #[arg(long, default_value = "brag-run")]
    out: PathBuf,

    #[arg(long)]
    profile: Option<Profile>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr_model: Option<f64>,
    #[arg(long)]
    lr_disc: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    dropout_model: Option<f64>,
    #[arg(long)]
    dropout_disc: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    pairing: Option<PairingStrategy>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    disc_every_n: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    dev_fraction: Option<f64>,
    /// Train a bragging vs. not-bragging classifier.
    #[arg(long)]
    binary: bool,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                let mut doc: serde_json::Value = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                if let (Some(profile), serde_json::Value::Object(map)) = (self.profile, &mut doc) {
                    map.insert("profile".into(), serde_json::to_value(profile)?);
                }
                TrainConfig::from_json(&doc.to_string()).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                    other => other,
                })?
            }
            None => TrainConfig::for_profile(self.profile.unwrap_or_default()),
        };
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    config.$field = v;
                }
            )*};
        }
        apply!(
            seed, alpha, beta, lambda, gamma, lr_model, lr_disc, weight_decay, clip_norm,
            dropout_model, dropout_disc, batch_size, max_steps, pairing, dim, vocab_size,
            max_len, disc_every_n, eval_every, dev_fraction
        );
        if self.binary {
            config.label_mode = LabelMode::Binary;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Collapse the six bragging types into one positive class.
    #[arg(long)]
    binary: bool,
    /// Where to write the JSON report.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Expected representation width; must match the checkpoint.
    #[arg(long)]
    dim: Option<usize>,
    /// Expected vocabulary size; must match the checkpoint.
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Expected maximum sequence length; must match the checkpoint.
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 23)]
    vocab_size: usize,
    /// Write the per-group errors as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Corrupt the tanh backward rule (negative control).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated class priors in label order, summing to 1.
    #[arg(long, value_delimiter = ',')]
    priors: Option<Vec<f64>>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    vocab_per_class: Option<usize>,
    #[arg(long)]
    content_vocab: Option<usize>,
    #[arg(long)]
    min_tokens: Option<usize>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output CSV with columns x,y,label.
    #[arg(long)]
    out: PathBuf,
}

/// Parses arguments, runs the command and exits with the documented code.
pub fn main() -> ! {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code)
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
        Command::Synth(args) => cmd_synth(&args),
        Command::Project(args) => cmd_project(&args),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let config = args.config()?;
    let examples = if args.synthetic {
        synth_generate(&SynthConfig {
            seed: config.seed,
            ..SynthConfig::default()
        })?
    } else {
        if args.data.data.is_none() {
            return Err(Error::Config("give --data PATH or --synthetic".into()));
        }
        args.data.load()?
    };
    let (train_examples, dev_examples) =
        stratified_split(&examples, config.dev_fraction, config.seed)?;
    let encode = |ex: &[Example]| encode_examples(ex, config.label_mode, config.max_len, config.vocab_size);
    let (train_set, dev_set) = (encode(&train_examples), encode(&dev_examples));

    let outcome = train(&train_set, &dev_set, &config)?;

    fs::create_dir_all(&args.out)?;
    save_checkpoint(
        &args.out.join("checkpoint.bin"),
        &config.checkpoint_header(),
        &outcome.best_model,
    )?;
    save_loss_csv(&args.out.join("losses.csv"), &outcome.log)?;
    write_json(&args.out.join("metrics.json"), &outcome.best_report)?;
    write_jsonl(&args.out.join("dev.jsonl"), &dev_examples)?;
    fs::write(args.out.join("config.json"), config.to_json() + "\n")?;

    println!(
        "best dev macro-F1 {:.2} at step {} of {}",
        100.0 * outcome.best_report.macro_f1,
        outcome.best_step,
        config.max_steps
    );
    print!("{}", outcome.best_report.table());
    println!("artifacts written to {}", args.out.display());
    Ok(0)
}

fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let header = &checkpoint.header;
    for (name, expected, actual) in [
        ("dim", args.dim, header.dims.dim),
        ("vocab_size", args.vocab_size, header.dims.vocab_size),
        ("max_len", args.max_len, header.max_len),
    ] {
        if let Some(expected) = expected {
            if expected != actual {
                return Err(Error::Config(format!(
                    "{name} {expected} does not match the checkpoint's {actual}"
                )));
            }
        }
    }
    let examples = args.data.load()?;
    let encoded = encode_examples(&examples, header.label_mode, header.max_len, header.dims.vocab_size);
    let mode = if args.binary {
        LabelMode::Binary
    } else {
        header.label_mode
    };
    let report: MetricsReport = evaluate_model(&checkpoint.model, &encoded, mode)?;
    print!("{}", report.table());
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    Ok(0)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32> {
    let cfg = GradcheckConfig {
        dim: args.dim,
        batch: args.batch,
        seed: args.seed,
        vocab_size: args.vocab_size,
        fault: args.inject_fault.then_some(Fault::TanhBackward),
        ..GradcheckConfig::default()
    };
    let report = gradcheck(&cfg)?;
    let width = report.groups.iter().map(|g| g.name.len()).max().unwrap_or(0);
    for g in &report.groups {
        println!(
            "{:<13} {:<width$}  {:.3e}",
            g.objective, g.name, g.relative_error
        );
    }
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "{verdict}: worst relative error {:.3e} (tolerance {:.0e})",
        report.worst(),
        report.tolerance
    );
    if let Some(path) = &args.json {
        write_json(path, &report)?;
    }
    Ok(if report.passed() { 0 } else { 3 })
}

fn cmd_synth(args: &SynthArgs) -> Result<i32> {
    let defaults = SynthConfig::default();
    let config = SynthConfig {
        priors: args.priors.clone().unwrap_or(defaults.priors),
        size: args.size.unwrap_or(defaults.size),
        noise: args.noise.unwrap_or(defaults.noise),
        vocab_per_class: args.vocab_per_class.unwrap_or(defaults.vocab_per_class),
        content_vocab: args.content_vocab.unwrap_or(defaults.content_vocab),
        min_tokens: args.min_tokens.unwrap_or(defaults.min_tokens),
        max_tokens: args.max_tokens.unwrap_or(defaults.max_tokens),
        seed: args.seed.unwrap_or(defaults.seed),
    };
    let examples = synth_generate(&config)?;
    write_jsonl(&args.out, &examples)?;
    println!("wrote {} examples to {}", examples.len(), args.out.display());
    Ok(0)
}

fn cmd_project(args: &ProjectArgs) -> Result<i32> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let header = &checkpoint.header;
    let examples = args.data.load()?;
    if examples.len() < 3 {
        return Err(Error::Config(format!(
            "projection needs at least 3 examples, got {}",
            examples.len()
        )));
    }
    let encoded = encode_examples(&examples, header.label_mode, header.max_len, header.dims.vocab_size);
    let reps = encode_all(&checkpoint.model, &encoded)?;
    let projection = pca_2d(&reps)?;
    let labels: Vec<&str> = examples.iter().map(|e| e.label.as_str()).collect();
    write_projection_csv(&args.out, &projection.points, &labels)?;
    println!("wrote {} points to {}", projection.points.len(), args.out.display());
    Ok(0)
}
