//! Command-line front end: `train`, `distill`, `attack`, `campaign`, `inspect`.
//!
//! Exit codes: 0 on success, 1 when an `attack` run fails to find an
//! adversary, 2 on usage, format or I/O errors.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::attacks::{run_attack, AttackConfig, AttackFamily, AttackOutcome};
use crate::campaign::{attack_sample, run_campaign, CampaignOptions, MetricsRecord};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::fixture;
use crate::io::idx::load_idx;
use crate::io::image::{load_image, save_image, ImageRecord};
use crate::io::manifest::RunManifest;
use crate::io::weights::{load_weights, save_weights};
use crate::io::write_atomic;
use crate::nn::{ClassLabel, FeatureVector, Network, OutputLayer};
use crate::trainer::{DistillConfig, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ATTACK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable holding the default campaign worker count.
pub const WORKERS_ENV: &str = "JSMA_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "jsma",
    version,
    about = "Jacobian saliency map attacks on small classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a classifier with mini-batch SGD.
    Train(TrainArgs),
    /// Distill a student from soft labels at a temperature.
    Distill(DistillArgs),
    /// Attack a single input.
    Attack(AttackArgs),
    /// Evaluate attack variants over a dataset.
    Campaign(CampaignArgs),
    /// Print a model summary and, optionally, class confidences for an input.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Use the bundled mini-digits dataset.
    #[arg(long, conflicts_with_all = ["images", "labels"])]
    fixture: bool,
    /// IDX image file (u8, rank 3).
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// IDX label file (u8, rank 1).
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
}

/// A dataset plus the geometry needed to write its samples as images.
struct LoadedData {
    train: LabeledDataset,
    test: Option<LabeledDataset>,
    width: usize,
    height: usize,
    inputs: Vec<String>,
}

impl DataArgs {
    fn load(&self) -> Result<LoadedData> {
        if self.fixture {
            let (train, test) = fixture::mini_digits();
            return Ok(LoadedData {
                train,
                test: Some(test),
                width: fixture::SIDE,
                height: fixture::SIDE,
                inputs: vec!["fixture:mini-digits".into()],
            });
        }
        match (&self.images, &self.labels) {
            (Some(images), Some(labels)) => {
                let data = load_idx(images, labels)?;
                Ok(LoadedData {
                    train: data.dataset,
                    test: None,
                    width: data.cols,
                    height: data.rows,
                    inputs: vec![images.display().to_string(), labels.display().to_string()],
                })
            }
            _ => Err(Error::InvalidParameter(
                "pass --fixture or --images/--labels".into(),
            )),
        }
    }

    /// The split attacks are evaluated on: the fixture's test split, or the
    /// given IDX files.
    fn load_eval(&self) -> Result<LoadedData> {
        let mut data = self.load()?;
        if let Some(test) = data.test.take() {
            data.train = test;
        }
        Ok(data)
    }
}

#[derive(Debug, Args)]
struct TrainingArgs {
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    hidden: Vec<usize>,
}

impl TrainingArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            seed: self.seed,
            hidden_dims: self.hidden.clone(),
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    training: TrainingArgs,
    /// Output directory (model.json, train_log.csv, manifest.json).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct DistillArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    training: TrainingArgs,
    #[arg(long, default_value_t = 100.0)]
    temperature: f64,
    /// Teacher weights. Without it a teacher is first trained at the
    /// distillation temperature and saved as teacher.json.
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Output directory (model.json, train_log.csv, manifest.json).
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// PGM/PPM input image.
    #[arg(long, conflicts_with_all = ["fixture_index", "index"])]
    image: Option<PathBuf>,
    /// Index into the fixture's test split.
    #[arg(long, conflicts_with = "index")]
    fixture_index: Option<usize>,
    /// Index into the IDX dataset given by --images/--labels.
    #[arg(long, requires = "images")]
    index: Option<usize>,
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// True class. Defaults to the dataset label, or the model's prediction
    /// for --image inputs.
    #[arg(long)]
    label: Option<usize>,
}

struct LoadedInput {
    x: FeatureVector,
    label: Option<ClassLabel>,
    width: usize,
    height: usize,
    channels: usize,
    source: String,
}

impl InputArgs {
    fn is_set(&self) -> bool {
        self.image.is_some() || self.fixture_index.is_some() || self.index.is_some()
    }

    fn load(&self) -> Result<LoadedInput> {
        let mut input = if let Some(path) = &self.image {
            let img = load_image(path)?;
            LoadedInput {
                x: FeatureVector::new(img.to_features())?,
                label: None,
                width: img.width,
                height: img.height,
                channels: img.channels,
                source: path.display().to_string(),
            }
        } else if let Some(k) = self.fixture_index {
            let (_, test) = fixture::mini_digits();
            let (x, y) = test.get(k).cloned().ok_or_else(|| {
                Error::InvalidParameter(format!("fixture index {k} out of range ({})", test.len()))
            })?;
            LoadedInput {
                x,
                label: Some(y),
                width: fixture::SIDE,
                height: fixture::SIDE,
                channels: 1,
                source: format!("fixture:test[{k}]"),
            }
        } else if let (Some(k), Some(images), Some(labels)) =
            (self.index, &self.images, &self.labels)
        {
            let data = load_idx(images, labels)?;
            let (x, y) = data.dataset.get(k).cloned().ok_or_else(|| {
                Error::InvalidParameter(format!("index {k} out of range ({})", data.dataset.len()))
            })?;
            LoadedInput {
                x,
                label: Some(y),
                width: data.cols,
                height: data.rows,
                channels: 1,
                source: format!("{}[{k}]", images.display()),
            }
        } else {
            return Err(Error::InvalidParameter(
                "pass --image, --fixture-index or --images/--labels/--index".into(),
            ));
        };
        if let Some(l) = self.label {
            input.label = Some(ClassLabel(l));
        }
        Ok(input)
    }
}

#[derive(Debug, Args)]
struct AttackParams {
    /// Attack layer: f (softmax) or z (logits).
    #[arg(long, default_value = "f")]
    layer: String,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Iteration cap; 0 means unbounded.
    #[arg(long, default_value_t = 0)]
    max_iters: usize,
}

impl AttackParams {
    fn layers(&self) -> Result<Vec<OutputLayer>> {
        self.layer.split(',').map(str::parse).collect()
    }

    fn config(&self, family: AttackFamily, layer: OutputLayer) -> Result<AttackConfig> {
        let cfg = AttackConfig::new(family, layer)
            .with_theta(self.theta)
            .with_epsilon(self.epsilon)
            .with_max_iters((self.max_iters > 0).then_some(self.max_iters));
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// +jsma, -jsma, +nt, -nt or maximal.
    #[arg(long, allow_hyphen_values = true, default_value = "maximal")]
    family: String,
    /// Target class for targeted families. Omitted: best-target sweep.
    #[arg(long)]
    target: Option<usize>,
    #[command(flatten)]
    params: AttackParams,
    /// Output directory (trace.csv, adversary image, outcome.json, manifest.json).
    #[arg(long)]
    out_dir: PathBuf,
    /// Trace CSV path (default: OUT_DIR/trace.csv).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Adversary image path (default: OUT_DIR/adversary.pgm or .ppm).
    #[arg(long)]
    adversary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CampaignArgs {
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated families: +jsma, -jsma, +nt, -nt, maximal.
    #[arg(
        long,
        allow_hyphen_values = true,
        default_value = "+jsma,-jsma,+nt,-nt,maximal"
    )]
    variants: String,
    #[command(flatten)]
    params: AttackParams,
    /// Attack only the first N correctly-classified samples.
    #[arg(long)]
    sample_limit: Option<usize>,
    #[arg(long, env = WORKERS_ENV, default_value_t = 1)]
    workers: usize,
    /// Output directory (report.csv, report.txt, manifest.json).
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write every adversary as an image under OUT_DIR/adversaries/.
    #[arg(long)]
    dump_adversaries: bool,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Optional directory for a manifest.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Attack(a) => cmd_attack(a),
        Command::Campaign(a) => cmd_campaign(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let mut manifest = RunManifest::start("train");
    let data = args.data.load()?;
    let config = args.training.config();
    let mut trainer = Trainer::new(config.clone());
    if let Some(test) = &data.test {
        trainer = trainer.with_eval(test);
    }
    let outcome = trainer.train(&data.train)?;

    let model_path = args.out_dir.join("model.json");
    let log_path = args.out_dir.join("train_log.csv");
    save_weights(&model_path, &outcome.model)?;
    write_atomic(&log_path, outcome.log_csv().as_bytes())?;

    let last = outcome.history.last();
    println!(
        "trained {} epochs: loss {:.4}, train acc {:.4}, test acc {}",
        outcome.history.len(),
        last.map_or(f64::NAN, |e| e.loss),
        last.map_or(f64::NAN, |e| e.train_accuracy),
        last.and_then(|e| e.test_accuracy)
            .map_or("-".into(), |a| format!("{a:.4}")),
    );

    manifest.seed = Some(config.seed);
    manifest.inputs = data.inputs;
    manifest.outputs = vec![path_string(&model_path), path_string(&log_path)];
    manifest.config = serde_json::to_value(&config)?;
    manifest.summary = json!({ "final_epoch": last });
    manifest.finish(&args.out_dir)?;
    Ok(EXIT_OK)
}

fn cmd_distill(args: DistillArgs) -> Result<i32> {
    let mut manifest = RunManifest::start("distill");
    let data = args.data.load()?;
    let config = DistillConfig {
        temperature: args.temperature,
        train: args.training.config(),
    };
    config.validate()?;
    let mut trainer = Trainer::new(config.train.clone()).with_temperature(config.temperature);
    if let Some(test) = &data.test {
        trainer = trainer.with_eval(test);
    }

    let mut outputs = Vec::new();
    let mut inputs = data.inputs.clone();
    let teacher = match &args.teacher {
        Some(path) => {
            inputs.push(path_string(path));
            load_weights(path)?
        }
        None => {
            let teacher = trainer.train(&data.train)?;
            let path = args.out_dir.join("teacher.json");
            save_weights(&path, &teacher.model)?;
            outputs.push(path_string(&path));
            teacher.model
        }
    };
    let student = trainer.distill(&teacher, &data.train)?;

    let model_path = args.out_dir.join("model.json");
    let log_path = args.out_dir.join("train_log.csv");
    save_weights(&model_path, &student.model)?;
    write_atomic(&log_path, student.log_csv().as_bytes())?;
    outputs.push(path_string(&model_path));
    outputs.push(path_string(&log_path));

    let last = student.history.last();
    println!(
        "distilled at T={}: student loss {:.4}, test acc {}",
        config.temperature,
        last.map_or(f64::NAN, |e| e.loss),
        last.and_then(|e| e.test_accuracy)
            .map_or("-".into(), |a| format!("{a:.4}")),
    );

    manifest.seed = Some(config.train.seed);
    manifest.inputs = inputs;
    manifest.outputs = outputs;
    manifest.config = serde_json::to_value(&config)?;
    manifest.summary = json!({ "final_epoch": last });
    manifest.finish(&args.out_dir)?;
    Ok(EXIT_OK)
}

fn image_extension(channels: usize) -> &'static str {
    if channels == 3 {
        "ppm"
    } else {
        "pgm"
    }
}

fn cmd_attack(args: AttackArgs) -> Result<i32> {
    let mut manifest = RunManifest::start("attack");
    let model = load_weights(&args.weights)?;
    let input = args.input.load()?;
    let family: AttackFamily = args.family.parse()?;
    let layers = args.params.layers()?;
    let [layer] = layers[..] else {
        return Err(Error::InvalidParameter(
            "attack takes a single --layer".into(),
        ));
    };
    let cfg = args.params.config(family, layer)?;
    let true_class = match input.label {
        Some(y) => y,
        None => model.predict(&input.x)?,
    };

    let (outcome, target): (AttackOutcome, Option<ClassLabel>) = match (family, args.target) {
        (AttackFamily::Targeted(_), Some(t)) => (
            run_attack(&model, &input.x, ClassLabel(t), &cfg)?,
            Some(ClassLabel(t)),
        ),
        _ => attack_sample(&model, &input.x, true_class, &cfg)?,
    };
    let record = MetricsRecord::from_outcome(&model, &input.x, &outcome)?;

    let trace_path = args.trace.unwrap_or_else(|| args.out_dir.join("trace.csv"));
    let adv_path = args.adversary.unwrap_or_else(|| {
        args.out_dir
            .join(format!("adversary.{}", image_extension(input.channels)))
    });
    let outcome_path = args.out_dir.join("outcome.json");
    write_atomic(&trace_path, outcome.trace_csv().as_bytes())?;
    let image = ImageRecord::from_features(
        input.width,
        input.height,
        input.channels,
        &outcome.adversary,
    )?;
    save_image(&adv_path, &image)?;

    let summary = json!({
        "attack": cfg.name(),
        "true_class": true_class,
        "target": target,
        "success": outcome.success,
        "iterations": outcome.iterations,
        "predicted": outcome.predicted,
        "stop_reason": outcome.stop_reason,
        "l0": record.l0,
        "l2": record.l2,
        "entropy": record.entropy,
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    write_atomic(&outcome_path, text.as_bytes())?;

    println!(
        "{}: {} after {} iterations (stop: {:?}), predicted {}, L0 {}, L2 {:.4}, H {:.4}",
        cfg.name(),
        if outcome.success {
            "success"
        } else {
            "failure"
        },
        outcome.iterations,
        outcome.stop_reason,
        outcome.predicted,
        record.l0,
        record.l2,
        record.entropy
    );

    manifest.inputs = vec![path_string(&args.weights), input.source];
    manifest.outputs = vec![
        path_string(&trace_path),
        path_string(&adv_path),
        path_string(&outcome_path),
    ];
    manifest.config = serde_json::to_value(cfg)?;
    manifest.summary = summary;
    manifest.finish(&args.out_dir)?;
    Ok(if outcome.success {
        EXIT_OK
    } else {
        EXIT_ATTACK_FAILED
    })
}

fn cmd_campaign(args: CampaignArgs) -> Result<i32> {
    let mut manifest = RunManifest::start("campaign");
    let model = load_weights(&args.weights)?;
    let data = args.data.load_eval()?;
    let families = args
        .variants
        .split(',')
        .map(str::parse)
        .collect::<Result<Vec<AttackFamily>>>()?;
    let mut variants = Vec::new();
    for layer in args.params.layers()? {
        for &family in &families {
            variants.push(args.params.config(family, layer)?);
        }
    }
    let options = CampaignOptions {
        sample_limit: args.sample_limit,
        workers: args.workers,
    };
    let report = run_campaign(&model, &data.train, &variants, &options)?;

    let csv_path = args.out_dir.join("report.csv");
    let table_path = args.out_dir.join("report.txt");
    write_atomic(&csv_path, report.to_csv().as_bytes())?;
    write_atomic(&table_path, report.to_table().as_bytes())?;
    let mut outputs = vec![path_string(&csv_path), path_string(&table_path)];

    if args.dump_adversaries {
        let channels = if data.width * data.height * 3 == model.input_dim() {
            3
        } else {
            1
        };
        for v in &report.variants {
            let dir = args.out_dir.join("adversaries").join(v.config.name());
            for s in &v.samples {
                let path = dir.join(format!("{:05}.{}", s.index, image_extension(channels)));
                let img = ImageRecord::from_features(
                    data.width,
                    data.height,
                    channels,
                    &s.outcome.adversary,
                )?;
                save_image(&path, &img)?;
            }
            outputs.push(path_string(&dir));
        }
    }

    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(report.to_table().as_bytes());

    manifest.inputs = std::iter::once(path_string(&args.weights))
        .chain(data.inputs)
        .collect();
    manifest.outputs = outputs;
    manifest.config = json!({
        "variants": variants,
        "sample_limit": args.sample_limit,
        "workers": args.workers,
    });
    manifest.summary = json!({ "samples": report.sample_count });
    manifest.finish(&args.out_dir)?;
    Ok(EXIT_OK)
}

fn cmd_inspect(args: InspectArgs) -> Result<i32> {
    let mut manifest = RunManifest::start("inspect");
    let model = load_weights(&args.weights)?;
    println!("{}", model_summary(&model));
    let mut summary = json!({
        "input_dim": model.input_dim(),
        "class_count": model.class_count(),
        "parameters": model.parameter_count(),
    });
    manifest.inputs = vec![path_string(&args.weights)];

    if args.input.is_set() {
        let input = args.input.load()?;
        let probs = model.probabilities(&input.x, 1.0)?;
        let predicted = model.predict(&input.x)?;
        println!("input {}: predicted class {predicted}", input.source);
        for (c, p) in probs.iter().enumerate() {
            println!("  class {c:>2}: {p:.6}");
        }
        summary["predicted"] = json!(predicted);
        summary["probabilities"] = json!(probs);
        manifest.inputs.push(input.source);
    }

    if let Some(dir) = &args.out_dir {
        manifest.summary = summary;
        manifest.finish(dir)?;
    }
    Ok(EXIT_OK)
}

fn model_summary(model: &Network) -> String {
    let mut out = format!(
        "model: {} inputs -> {} classes, {} parameters\n",
        model.input_dim(),
        model.class_count(),
        model.parameter_count()
    );
    for (k, l) in model.layers().iter().enumerate() {
        out.push_str(&format!(
            "  layer {k}: {} -> {} ({:?})\n",
            l.in_dim, l.out_dim, l.activation
        ));
    }
    out.pop();
    out
}
