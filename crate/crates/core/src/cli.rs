//! Command-line front end. [`run`] parses arguments, dispatches one
//! subcommand and maps failures to a nonzero exit code.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backbone::OutputMode;
use crate::data::{generate_synthetic, load_csv, read_relevance, segment, write_csv, write_relevance, CsvSchema, HmmOracle, SequenceDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::gradcheck::gradcheck_suite;
use crate::model::{PolicyKind, PolicyParams};
use crate::report::{
    moving_window_accuracy, per_activity_heatmap, read_report, summarize, write_heatmap, write_moving_accuracy, write_report,
    write_selection_trace, write_tradeoff,
};
use crate::train::{
    evaluate, load_checkpoint, prepare, sweep_alpha, sweep_lambda, train, Evaluation, Pick, RunOutput, TrainConfig, LOG_FILE,
    DEFAULT_ALPHAS, DEFAULT_LAMBDAS,
};

/// Tolerance printed and enforced by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;
pub const DATA_FILE: &str = "data.csv";
pub const RELEVANCE_FILE: &str = "relevance.json";

#[derive(Debug, Parser)]
#[command(name = "vfds", version, about = "Dynamic feature selection for recurrent sequence classifiers")]
#[command(after_help = "Logging is controlled by VFDS_LOG = quiet | info | debug (default: warnings only).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground-truth relevance.
    Synth(SynthArgs),
    /// Train a model; writes checkpoints, the training log and test-split reports.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and write report files.
    Eval(EvalArgs),
    /// Train one model per λ (or one attention model per α list) and write tradeoff.csv.
    Sweep(SweepArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Print a summary of a run directory.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON generator spec; missing keys take the default benchmark values.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (data.csv, relevance.json, spec.json).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    /// Library defaults.
    Default,
    /// Desk-scale settings tuned for the synthetic benchmark.
    Synthetic,
}

/// Settings that override the config file.
#[derive(Debug, Args)]
struct Overrides {
    /// Run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Sparsity weight λ.
    #[arg(long)]
    lambda: Option<f64>,
    /// Relaxation temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Gradient estimator: gs | st | arm | st-arm | l1.
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    /// Selection policy: vfds | none | static | random | attention.
    #[arg(long)]
    policy: Option<PolicyKind>,
    /// Attention threshold α in [0, 1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.tau {
            cfg.tau = v;
        }
        if let Some(v) = self.estimator {
            cfg.estimator = v;
        }
        if let Some(v) = self.policy {
            cfg.policy = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
    }
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON training config (flat keys); missing keys come from --preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults used beneath the config file.
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    /// Comma-separated class names, when label cells hold names.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    #[command(flatten)]
    overrides: Overrides,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let base = match self.preset {
            Preset::Default => TrainConfig::default(),
            Preset::Synthetic => TrainConfig::synthetic_benchmark(),
        };
        let mut cfg = match &self.config {
            Some(path) => {
                let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let mut merged = serde_json::to_value(&base)?;
                let file: serde_json::Value = serde_json::from_str(&body)?;
                let serde_json::Value::Object(file) = file else {
                    return Err(Error::invalid(format!("{}: config must be a JSON object", path.display())));
                };
                let obj = merged.as_object_mut().expect("config serialises to an object");
                for (k, v) in file {
                    obj.insert(k, v);
                }
                serde_json::from_value(merged)?
            }
            None => base,
        };
        self.overrides.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// CSV file or directory of CSV files; a relevance.json beside them is picked up.
    #[arg(long)]
    data: PathBuf,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Model scored on the test split after training.
    #[arg(long = "use", value_enum, default_value_t = PickArg::Best)]
    pick: PickArg,
    /// Window length for moving accuracy.
    #[arg(long, default_value_t = 20)]
    window: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PickArg {
    Best,
    Latest,
}

impl From<PickArg> for Pick {
    fn from(p: PickArg) -> Self {
        match p {
            PickArg::Best => Pick::Best,
            PickArg::Latest => Pick::Latest,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint directory, or a run directory holding best/ and latest/.
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV file or directory of CSV files.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for report.csv, heatmap.csv, selection_trace.csv and moving_acc.csv.
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint taken from a run directory.
    #[arg(long = "use", value_enum, default_value_t = PickArg::Best)]
    pick: PickArg,
    /// Portion of the data to score; splits are recomputed from the checkpoint's config.
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    /// Seed of the evaluation stream (random policy only); defaults to the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Attention threshold override.
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated class names, when label cells hold names.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<String>>,
    /// Window length for moving accuracy.
    #[arg(long, default_value_t = 20)]
    window: usize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// CSV file or directory of CSV files.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated λ values.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LAMBDAS.to_vec())]
    lambdas: Vec<f64>,
    /// Comma-separated α values (attention policy).
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ALPHAS.to_vec())]
    alphas: Vec<f64>,
    /// Output directory; each run gets its own subdirectory.
    #[arg(long)]
    out: PathBuf,
    /// Parallel training runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Model scored on the test split.
    #[arg(long = "use", value_enum, default_value_t = PickArg::Best)]
    pick: PickArg,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Seed of the random test problems.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directory written by train, eval or sweep.
    #[arg(long)]
    run: PathBuf,
}

fn init_logging() -> Result<()> {
    let level = match std::env::var("VFDS_LOG").as_deref() {
        Err(_) | Ok("") => log::LevelFilter::Warn,
        Ok("quiet") => log::LevelFilter::Off,
        Ok("info") => log::LevelFilter::Info,
        Ok("debug") => log::LevelFilter::Debug,
        Ok(other) => return Err(Error::invalid(format!("VFDS_LOG={other:?}: expected quiet, info or debug"))),
    };
    // A second initialisation (several runs in one process) keeps the first logger.
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    Ok(())
}

/// Runs the command line `args` (including the program name) and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match init_logging().and_then(|()| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(path) => {
            let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<SyntheticSpec>(&body)?
        }
        None => SyntheticSpec::default(),
    };
    let ds = generate_synthetic(&spec, a.seed)?;
    create_dir(&a.out)?;
    write_csv(&a.out.join(DATA_FILE), &ds)?;
    write_relevance(&a.out.join(RELEVANCE_FILE), &ds)?;
    let spec_path = a.out.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(&spec)?).map_err(|e| Error::io(&spec_path, e))?;
    let ceiling = HmmOracle::fit(&ds)?.accuracy(&ds)?;
    println!(
        "wrote {} sequences x {} steps x {} features to {}",
        ds.len(),
        spec.seq_len,
        ds.n_features(),
        a.out.display()
    );
    println!("oracle accuracy {ceiling:.2}%");
    Ok(())
}

/// Loads CSV data plus `relevance.json` when `path` is a directory holding one.
pub fn load_dataset(path: &Path, schema: &CsvSchema) -> Result<SequenceDataset> {
    let mut ds = load_csv(path, schema)?;
    let rel = path.join(RELEVANCE_FILE);
    if path.is_dir() && rel.is_file() {
        read_relevance(&rel, &mut ds)?;
    }
    Ok(ds)
}

fn class_names(ds: &SequenceDataset, given: Option<&[String]>) -> Option<Vec<String>> {
    match ds.mode {
        OutputMode::Multiclass => given.map(<[String]>::to_vec),
        OutputMode::Multilabel => None,
    }
}

/// Writes the four per-run report files into `dir`.
pub fn write_evaluation(dir: &Path, ds: &SequenceDataset, eval: &Evaluation, classes: Option<&[String]>, window: usize) -> Result<()> {
    create_dir(dir)?;
    write_report(&dir.join("report.csv"), &eval.report)?;
    let labels: Vec<_> = ds.sequences.iter().map(|s| s.labels.clone()).collect();
    let heat = per_activity_heatmap(&eval.trace, &labels, classes)?;
    let gate_names: Vec<String> = (1..=eval.trace.n_gates).map(|g| format!("g{g}")).collect();
    write_heatmap(&dir.join("heatmap.csv"), &heat, &gate_names)?;
    let ids: Vec<String> = ds.sequences.iter().map(|s| format!("{}/{}", s.subject, s.id)).collect();
    write_selection_trace(&dir.join("selection_trace.csv"), &eval.trace, &ids)?;
    if ds.mode == OutputMode::Multiclass {
        let shortest = ds.sequences.iter().map(|s| s.len()).min().unwrap_or(1);
        let rows = moving_window_accuracy(&eval.preds, &labels, window.clamp(1, shortest.max(1)))?;
        write_moving_accuracy(&dir.join("moving_acc.csv"), &rows)?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let schema = CsvSchema { classes: a.config.classes.clone(), n_classes: None };
    let ds = load_dataset(&a.data, &schema)?;
    let data = prepare(&cfg, &ds)?;
    create_dir(&a.out)?;
    let cfg_path = a.out.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg)?).map_err(|e| Error::io(&cfg_path, e))?;
    let start = Instant::now();
    let outcome = train(&cfg, &data.train, &data.val, Some(RunOutput { dir: &a.out, norm: Some(&data.norm) }))?;
    if let Some(msg) = &outcome.aborted {
        eprintln!("warning: training stopped early: {msg}");
    }
    println!(
        "trained {} epochs in {:.1}s; best epoch {} (val acc {:.2}%)",
        outcome.log.len(),
        start.elapsed().as_secs_f64(),
        outcome.best_epoch,
        outcome.best_val_acc
    );
    if data.test.is_empty() {
        return Ok(());
    }
    let pick = Pick::from(a.pick);
    let eval = evaluate(outcome.model(pick), &data.test, cfg.batch_size, cfg.seed)?;
    let classes = class_names(&ds, a.config.classes.as_deref());
    write_evaluation(&a.out.join("test"), &data.test, &eval, classes.as_deref(), a.window)?;
    println!("test split, {} model:\n{}", pick.as_str(), summarize(&eval.report));
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let dir = if a.checkpoint.join("manifest.json").is_file() {
        a.checkpoint.clone()
    } else {
        a.checkpoint.join(Pick::from(a.pick).as_str())
    };
    let ck = load_checkpoint(&dir)?;
    let cfg = ck.manifest.config.clone();
    let mut model = ck.model;
    if let Some(alpha) = a.alpha {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::invalid("alpha must lie in [0, 1)"));
        }
        model.spec.alpha = alpha;
        if let PolicyParams::Attention(p) = &mut model.policy {
            p.alpha = alpha;
        }
    }
    let n_classes = (model.spec.mode == OutputMode::Multiclass).then_some(model.spec.outputs);
    let schema = CsvSchema { classes: a.classes.clone(), n_classes: a.classes.is_none().then_some(n_classes).flatten() };
    let mut ds = load_dataset(&a.data, &schema)?;
    if ds.n_features() != model.spec.input_size {
        return Err(Error::invalid(format!("data has {} features, checkpoint expects {}", ds.n_features(), model.spec.input_size)));
    }
    if ds.n_outputs != model.spec.outputs || ds.mode != model.spec.mode {
        return Err(Error::invalid("data labels do not match the checkpoint's outputs"));
    }
    let ds = match a.split {
        SplitArg::All => {
            if let Some(len) = cfg.segment_len {
                ds = segment(&ds, len, cfg.pad)?;
            }
            if let Some(norm) = &ck.manifest.norm {
                norm.apply(&mut ds)?;
            }
            ds
        }
        split => {
            let data = prepare(&cfg, &ds)?;
            match split {
                SplitArg::Train => data.train,
                SplitArg::Val => data.val,
                _ => data.test,
            }
        }
    };
    if ds.is_empty() {
        return Err(Error::invalid("selected split is empty"));
    }
    let eval = evaluate(&model, &ds, cfg.batch_size, a.seed.unwrap_or(cfg.seed))?;
    let classes = class_names(&ds, a.classes.as_deref());
    write_evaluation(&a.out, &ds, &eval, classes.as_deref(), a.window)?;
    print!("{}", summarize(&eval.report));
    Ok(())
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let schema = CsvSchema { classes: a.config.classes.clone(), n_classes: None };
    let ds = load_dataset(&a.data, &schema)?;
    let data = prepare(&cfg, &ds)?;
    create_dir(&a.out)?;
    let pick = Pick::from(a.pick);
    let rows = if cfg.policy == PolicyKind::Attention {
        sweep_alpha(&cfg, &a.alphas, &data, pick, Some(&a.out))?
    } else {
        sweep_lambda(&cfg, &a.lambdas, &data, pick, a.jobs, Some(&a.out))?
    };
    write_tradeoff(&a.out.join("tradeoff.csv"), &rows)?;
    println!("{:>8} {:>7} {:>9} {:>9} {:>9}", "lambda", "alpha", "acc %", "avg %", "union %");
    for r in &rows {
        let alpha = r.alpha.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
        println!("{:>8} {:>7} {:>9.2} {:>9.2} {:>9.2}", r.lambda, alpha, r.accuracy, r.avg_feature_pct, r.union_feature_pct);
    }
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let start = Instant::now();
    let results = gradcheck_suite(a.seed)?;
    let mut worst = 0.0f64;
    for r in &results {
        println!("{:<32} max rel err {:.3e}", r.name, r.max_rel_err);
        worst = worst.max(r.max_rel_err);
    }
    println!("overall max rel err {worst:.3e} ({:.2}s)", start.elapsed().as_secs_f64());
    if worst.is_nan() || worst >= GRADCHECK_TOLERANCE {
        return Err(Error::invalid(format!("gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}")));
    }
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Result<()> {
    if !a.run.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", a.run.display())));
    }
    let mut found = false;
    let log_path = a.run.join(LOG_FILE);
    if log_path.is_file() {
        let mut r = csv::Reader::from_path(&log_path)?;
        let mut last = None;
        let mut best: Option<(usize, f64)> = None;
        for rec in r.records() {
            let rec = rec?;
            let epoch: usize = rec.get(0).unwrap_or("").parse().unwrap_or(0);
            let acc: f64 = rec.get(2).unwrap_or("").parse().unwrap_or(f64::NAN);
            if best.is_none_or(|(_, b)| acc >= b) {
                best = Some((epoch, acc));
            }
            last = Some((epoch, acc));
        }
        if let (Some((e, acc)), Some((be, bacc))) = (last, best) {
            println!("training: {e} epochs, final val acc {acc:.2}%, best val acc {bacc:.2}% at epoch {be}");
            found = true;
        }
    }
    for dir in [a.run.clone(), a.run.join("test")] {
        let path = dir.join("report.csv");
        if path.is_file() {
            println!("{}:", path.display());
            print!("{}", summarize(&read_report(&path)?));
            found = true;
        }
    }
    let tradeoff = a.run.join("tradeoff.csv");
    if tradeoff.is_file() {
        println!("{}:", tradeoff.display());
        let mut r = csv::Reader::from_path(&tradeoff)?;
        println!("{}", r.headers()?.iter().collect::<Vec<_>>().join("\t"));
        for rec in r.records() {
            println!("{}", rec?.iter().collect::<Vec<_>>().join("\t"));
        }
        found = true;
    }
    if !found {
        return Err(Error::invalid(format!("no report, log or tradeoff table in {}", a.run.display())));
    }
    Ok(())
}
