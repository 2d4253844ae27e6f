mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use interpnet::classifier::argmax;
use interpnet::dataset::{generate_synthetic, load_dataset, save_dataset, split, Dataset, SyntheticSpec};
use interpnet::metrics::{evaluate, load_corpus, score_corpus, tokenize_records, EvaluationReport};
use interpnet::training::train_full;
use interpnet::{classifier, Checkpoint, Variant};

use config::{Overrides, RunConfig};

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "interpnet", version, about = "Train and query classify-and-explain networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with template explanations.
    GenData(GenDataArgs),
    /// Train a classifier and its explainer.
    Train(TrainArgs),
    /// Score trained models on the test split.
    Evaluate(EvaluateArgs),
    /// Classify one input and print its explanation.
    Explain(ExplainArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// TOML file with generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    noise_std: Option<f64>,
    #[arg(long)]
    attributes_per_class: Option<usize>,
    #[arg(long)]
    examples_per_class: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; each variant gets a subdirectory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Run every variant.
    #[arg(long, conflicts_with = "variant")]
    sweep: bool,
}

impl RunArgs {
    fn run_config(&self, beam_width: Option<usize>) -> Result<RunConfig> {
        Ok(RunConfig::load(self.config.as_deref())?.apply(Overrides {
            data: self.data.clone(),
            out: self.out.clone(),
            variant: self.variant,
            seed: self.seed,
            beam_width,
        }))
    }

    fn variants(&self, config: &RunConfig) -> Vec<Variant> {
        if self.sweep {
            Variant::ALL.to_vec()
        } else {
            vec![config.variant.unwrap_or(Variant::InterpNet1)]
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Checkpoint to evaluate; defaults to `<out>/<variant>/checkpoint.json`.
    #[arg(long, conflicts_with = "sweep")]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    beam_width: Option<usize>,
    /// Where to write the JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Score a line-delimited candidate/reference file instead of a model.
    #[arg(long, conflicts_with_all = ["checkpoint", "sweep"])]
    corpus: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// File holding one feature vector as a JSON array or whitespace-separated numbers.
    #[arg(long, conflicts_with_all = ["data", "id"])]
    features: Option<PathBuf>,
    /// Dataset to look up `--id` in.
    #[arg(long, requires = "id")]
    data: Option<PathBuf>,
    #[arg(long, requires = "data")]
    id: Option<String>,
    #[arg(long, default_value_t = 1)]
    beam_width: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train(args),
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Explain(args) => explain(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numeric = e
                .chain()
                .any(|c| matches!(c.downcast_ref(), Some(interpnet::Error::Divergence { .. })));
            ExitCode::from(if numeric { EXIT_NUMERIC } else { EXIT_USAGE })
        }
    }
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut spec: SyntheticSpec = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SyntheticSpec::default(),
    };
    spec.seed = args.seed.unwrap_or(spec.seed);
    spec.num_classes = args.num_classes.unwrap_or(spec.num_classes);
    spec.feature_dim = args.feature_dim.unwrap_or(spec.feature_dim);
    spec.noise_std = args.noise_std.unwrap_or(spec.noise_std);
    spec.attributes_per_class = args.attributes_per_class.unwrap_or(spec.attributes_per_class);
    spec.examples_per_class = args.examples_per_class.unwrap_or(spec.examples_per_class);

    let data = generate_synthetic(&spec)?;
    create_parent(&args.out)?;
    save_dataset(&args.out, &data.dataset)?;
    println!("wrote {} records to {}", data.dataset.len(), args.out.display());
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn variant_dir(out: &Path, variant: Variant) -> PathBuf {
    out.join(variant.name())
}

fn train(args: TrainArgs) -> Result<()> {
    let config = args.run.run_config(None)?;
    let dataset = load_dataset(config.data_path()?)?;
    let out = config.out_dir();
    for variant in args.run.variants(&config) {
        let experiment = config.experiment(variant)?;
        let splits = split(dataset.records(), experiment.split, experiment.split_seed)?;
        let trained = train_full(
            &splits.train,
            &splits.validation,
            dataset.num_classes(),
            &experiment.model,
            &experiment.train,
            variant,
        )?;
        let dir = variant_dir(&out, variant);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Checkpoint::new(variant, trained.classifier, trained.explainer)?
            .save(dir.join("checkpoint.json"))?;
        trained.log.write_jsonl(dir.join("train_log.jsonl"))?;
        let best = |phase: &str| trained.log.best_epochs.get(phase).copied().unwrap_or(0);
        println!(
            "{variant}: classifier best epoch {}, explainer best epoch {}, saved to {}",
            best("classifier"),
            best("explainer"),
            dir.display()
        );
    }
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    if let Some(corpus) = &args.corpus {
        let report = score_corpus(&tokenize_records(&load_corpus(corpus)?)?)?;
        println!(
            "bleu={:.2} meteor_lite={:.2} cider={}",
            report.bleu,
            report.meteor_lite,
            fmt_cider(report.cider)
        );
        if let Some(path) = &args.report {
            write_json(path, &report)?;
        }
        return Ok(());
    }

    let config = args.run.run_config(args.beam_width)?;
    let dataset = load_dataset(config.data_path()?)?;
    let out = config.out_dir();
    let mut reports = Vec::new();
    for variant in args.run.variants(&config) {
        let path = match &args.checkpoint {
            Some(p) => p.clone(),
            None => variant_dir(&out, variant).join("checkpoint.json"),
        };
        let checkpoint = Checkpoint::load(&path)
            .with_context(|| format!("loading checkpoint {}", path.display()))?;
        let variant = match config.variant {
            Some(v) if !args.run.sweep && v != checkpoint.variant => {
                bail!("checkpoint holds {} but --variant is {v}", checkpoint.variant)
            }
            _ => checkpoint.variant,
        };
        let report = evaluate_checkpoint(&checkpoint, &dataset, &config, variant)?;
        let report_path = match &args.report {
            Some(p) if !args.run.sweep => p.clone(),
            _ => variant_dir(&out, variant).join("report.json"),
        };
        write_json(&report_path, &report)?;
        println!(
            "{variant}: accuracy={:.4} bleu={:.2} meteor_lite={:.2} cider={} ({})",
            report.accuracy,
            report.bleu,
            report.meteor_lite,
            fmt_cider(report.cider),
            report_path.display()
        );
        reports.push(report);
    }
    if args.run.sweep {
        let table = sweep_table(&reports);
        print!("{table}");
        let path = args.report.clone().unwrap_or_else(|| out.join("sweep.json"));
        write_json(&path, &reports)?;
        fs::write(out.join("sweep.md"), &table).context("writing sweep table")?;
    }
    Ok(())
}

fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    config: &RunConfig,
    variant: Variant,
) -> Result<EvaluationReport> {
    let input_dim = checkpoint.classifier.config().input_dim;
    if input_dim != dataset.feature_dim() || checkpoint.classifier.config().num_classes != dataset.num_classes() {
        bail!(
            "checkpoint expects {input_dim} features and {} classes, dataset has {} and {}",
            checkpoint.classifier.config().num_classes,
            dataset.feature_dim(),
            dataset.num_classes()
        );
    }
    let experiment = config.experiment(variant)?;
    let splits = split(dataset.records(), experiment.split, experiment.split_seed)?;
    Ok(evaluate(
        &checkpoint.classifier,
        &checkpoint.explainer,
        &splits.test,
        variant,
        experiment.beam_width,
    )?)
}

fn fmt_cider(cider: Option<f64>) -> String {
    cider.map_or_else(|| "n/a".to_string(), |c| format!("{c:.2}"))
}

/// Variant-by-metric grid in the layout of the published results table.
fn sweep_table(reports: &[EvaluationReport]) -> String {
    let mut out = String::from("| | METEOR | BLEU | CIDEr | Classification Accuracy |\n");
    out.push_str("|---|---|---|---|---|\n");
    for r in reports {
        out.push_str(&format!(
            "| {} | {:.1} | {:.1} | {} | {:.1}% |\n",
            r.variant.description(),
            r.meteor_lite,
            r.bleu,
            r.cider.map_or_else(|| "n/a".to_string(), |c| format!("{c:.1}")),
            100.0 * r.accuracy
        ));
    }
    out
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    create_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_features(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text)
            .with_context(|| format!("parsing feature vector in {}", path.display()));
    }
    let values = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| anyhow!("{}: `{s}` is not a number", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        bail!("{} holds no feature values", path.display());
    }
    Ok(values)
}

fn explain(args: ExplainArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("loading checkpoint {}", args.checkpoint.display()))?;
    let features = match (&args.features, &args.data, &args.id) {
        (Some(path), _, _) => read_features(path)?,
        (None, Some(data), Some(id)) => load_dataset(data)?
            .get(id)
            .ok_or_else(|| anyhow!("no record `{id}` in {}", data.display()))?
            .features
            .clone(),
        _ => bail!("give either --features or --data with --id"),
    };
    if features.iter().any(|v| !v.is_finite()) {
        bail!("feature vector has non-finite values");
    }
    let (probs, acts) = checkpoint.classifier.forward(&features)?;
    let class = argmax(&probs);
    let r = classifier::representation(&acts, checkpoint.variant.representation());
    let tokens = checkpoint.explainer.decode(&r, args.beam_width)?;
    println!(
        "class={class} p={:.4} explanation={}",
        probs[class],
        checkpoint.explainer.render(&tokens)
    );
    Ok(())
}
