//! Command-line interface for the metric-learning anomaly detection
//! engine: train models, score datasets, evaluate rankings, run the
//! repeated cross-validation protocol, and sweep hyperparameter grids.
//!
//! Conventions: progress and log output go to stderr; data (scores,
//! reports, curves) goes to the file named by an output flag, or to
//! stdout when the flag is omitted. All file writes are atomic. Exit
//! codes: 0 success, 1 engine error, 2 usage or configuration error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use metricad_core::{
    build_scorer, decide, load_csv, load_model, roc_auc, run_setting, save_model, seeds,
    trainer::ValidationCadence, CvPlan, CvReport, Dataset, Error, LabelColumn, LossKind,
    ModelArtifact, PairConvention, Result, ScoringMode, Setting, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "metricad",
    version,
    about = "Unsupervised anomaly detection via deep metric learning",
    propagate_version = true
)]
struct Cli {
    /// Suppress progress output on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a CSV dataset (labels, if any, are never read).
    Train(TrainArgs),
    /// Score a CSV dataset with a trained model.
    Score(ScoreArgs),
    /// Score a labeled CSV dataset and report the ROC-AUC.
    Eval(EvalArgs),
    /// Repeated stratified cross-validation over one or all settings.
    Cv(CvArgs),
    /// Sweep a selection fraction over a grid, cross-validating per point.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Input dataset (CSV; rows are instances, columns are features).
    #[arg(long)]
    data: PathBuf,

    /// Label column: a header name, or a 0-based column index. The column
    /// is excluded from the features.
    #[arg(long)]
    label_column: Option<String>,

    /// Treat the first row as data instead of a header.
    #[arg(long)]
    no_header: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let label = self.label_column.as_deref().map(parse_label_column);
        load_csv(&self.data, label.as_ref(), !self.no_header)
    }
}

/// An integer selects a column by position; anything else matches a
/// header name.
fn parse_label_column(s: &str) -> LabelColumn {
    match s.parse::<usize>() {
        Ok(i) => LabelColumn::Index(i),
        Err(_) => LabelColumn::Name(s.to_string()),
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Width of the learned metric space.
    #[arg(long, default_value_t = 64)]
    metric_dim: usize,

    /// Hidden layer widths between input and metric space, comma-separated
    /// (default: none — a single-layer network).
    #[arg(long, value_delimiter = ',')]
    hidden_dims: Vec<usize>,

    /// Maximum training epochs.
    #[arg(long, default_value_t = 50)]
    epochs: usize,

    /// Mini-batch size.
    #[arg(long, default_value_t = 256)]
    batch_size: usize,

    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,

    /// Weight decay coefficient (biases are not decayed).
    #[arg(long, default_value_t = 1e-5)]
    lambda: f64,

    /// Distillation keep fraction: the fraction of training instances
    /// nearest the latent center kept each epoch, in (0, 1].
    #[arg(long, default_value_t = 2.0 / 3.0)]
    rho_n: f64,

    /// Mining keep fraction: the fraction of hardest loss terms kept per
    /// mini-batch, in (0, 1].
    #[arg(long, default_value_t = 1.0 / 3.0)]
    rho_h: f64,

    /// Validation fraction held out of the training data, in [0, 1).
    /// Zero disables validation and early stopping.
    #[arg(long, default_value_t = 0.1)]
    rho_v: f64,

    /// Improvement-free epochs tolerated before early stopping.
    #[arg(long, default_value_t = 5)]
    patience: usize,

    /// Training loss.
    #[arg(long, value_enum, default_value_t = LossArg::Instance)]
    loss: LossArg,

    /// When the validation loss is measured.
    #[arg(long, value_enum, default_value_t = CadenceArg::Minibatch)]
    validation_cadence: CadenceArg,

    /// Count validation pairs ordered and with self-pairs (exactly twice
    /// the default distinct-pair sum).
    #[arg(long)]
    ordered_validation_pairs: bool,

    /// Base random seed; every random choice derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LossArg {
    /// Mean squared pairwise latent distance.
    Instance,
    /// Mean squared latent distance to the batch center.
    Center,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CadenceArg {
    /// Measure after every mini-batch update.
    Minibatch,
    /// Measure once per epoch.
    Epoch,
}

impl ConfigArgs {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            metric_dim: self.metric_dim,
            hidden_dims: self.hidden_dims.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            weight_decay: self.lambda,
            rho_n: self.rho_n,
            rho_h: self.rho_h,
            rho_v: self.rho_v,
            patience: self.patience,
            loss: match self.loss {
                LossArg::Instance => LossKind::InstanceCloseness,
                LossArg::Center => LossKind::CenterCloseness,
            },
            validation_cadence: match self.validation_cadence {
                CadenceArg::Minibatch => ValidationCadence::PerMinibatch,
                CadenceArg::Epoch => ValidationCadence::PerEpoch,
            },
            validation_pairs: if self.ordered_validation_pairs {
                PairConvention::OrderedWithSelf
            } else {
                PairConvention::DistinctUnordered
            },
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    /// Squared latent distance to the training center (constant time).
    Center,
    /// Mean squared latent distance to the stored retrieval set.
    Dissimilarity,
}

impl From<ModeArg> for ScoringMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Center => ScoringMode::Center,
            ModeArg::Dissimilarity => ScoringMode::Dissimilarity,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SettingArg {
    Seen,
    Unseen,
    #[value(name = "one_class")]
    OneClass,
    /// All three settings, each cross-validated independently.
    All,
}

impl SettingArg {
    fn settings(self) -> Vec<Setting> {
        match self {
            SettingArg::Seen => vec![Setting::Seen],
            SettingArg::Unseen => vec![Setting::Unseen],
            SettingArg::OneClass => vec![Setting::OneClass],
            SettingArg::All => Setting::ALL.to_vec(),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,

    #[command(flatten)]
    config: ConfigArgs,

    /// Where to write the trained model.
    #[arg(long)]
    model_out: PathBuf,

    /// Optional per-epoch history CSV (epoch, train_loss, val_loss, kept).
    #[arg(long)]
    history_out: Option<PathBuf>,

    /// Scoring state stored in the model. Dissimilarity keeps the full
    /// retrieval set; center needs only the center vector.
    #[arg(long, value_enum, default_value_t = ModeArg::Center)]
    mode: ModeArg,
}

#[derive(Args)]
struct ScoreArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,

    #[command(flatten)]
    data: DataArgs,

    /// Override the scoring mode stored in the model. Dissimilarity needs
    /// a model that stored its retrieval set.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,

    /// Decision threshold: rows scoring strictly above are flagged 1.
    #[arg(long)]
    tau: Option<f64>,

    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,

    #[command(flatten)]
    data: DataArgs,

    /// Override the scoring mode stored in the model.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,

    #[command(flatten)]
    config: ConfigArgs,

    /// Evaluation setting.
    #[arg(long, value_enum, default_value_t = SettingArg::All)]
    setting: SettingArg,

    /// Folds per repeat.
    #[arg(long, default_value_t = 3)]
    folds: usize,

    /// Independent repeats, each with its own fold split.
    #[arg(long, default_value_t = 3)]
    repeats: usize,

    /// In the one_class setting, keep the configured distillation
    /// fraction instead of forcing it to 1.
    #[arg(long)]
    keep_one_class_rho_n: bool,

    /// Report CSV (default: stdout).
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParameter {
    /// Distillation keep fraction.
    #[value(name = "rho-n")]
    RhoN,
    /// Mining keep fraction.
    #[value(name = "rho-h")]
    RhoH,
}

impl SweepParameter {
    fn name(self) -> &'static str {
        match self {
            SweepParameter::RhoN => "rho_n",
            SweepParameter::RhoH => "rho_h",
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,

    #[command(flatten)]
    config: ConfigArgs,

    /// Which selection fraction to sweep.
    #[arg(long, value_enum)]
    parameter: SweepParameter,

    /// Grid: comma-separated values ("0.5,1.0") or start:end:step
    /// ("0.05:1.0:0.05"), all within (0, 1].
    #[arg(long)]
    grid: String,

    /// Evaluation setting.
    #[arg(long, value_enum, default_value_t = SettingArg::All)]
    setting: SettingArg,

    /// Folds per repeat.
    #[arg(long, default_value_t = 3)]
    folds: usize,

    /// Independent repeats, each with its own fold split.
    #[arg(long, default_value_t = 3)]
    repeats: usize,

    /// Curve CSV (default: stdout).
    #[arg(long)]
    curve_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.quiet;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let _ = quiet;
            match e {
                Error::InvalidConfig(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let log = Logger { quiet: cli.quiet };
    match cli.command {
        Command::Train(args) => cmd_train(args, &log),
        Command::Score(args) => cmd_score(args),
        Command::Eval(args) => cmd_eval(args, &log),
        Command::Cv(args) => cmd_cv(args, &log),
        Command::Sweep(args) => cmd_sweep(args, &log),
    }
}

struct Logger {
    quiet: bool,
}

impl Logger {
    fn line(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }
}

fn cmd_train(args: TrainArgs, log: &Logger) -> Result<()> {
    let config = args.config.to_config();
    config.validate()?;

    let ds = args.data.load()?;
    log.line(&format!(
        "training on {} instances x {} features from {}",
        ds.n_instances(),
        ds.n_features(),
        args.data.data.display()
    ));

    // Labels, even when a label column was split off, are never consulted.
    let report = metricad_core::train(&ds.x, &config)?;
    for stats in &report.history {
        match stats.val_loss {
            Some(v) => log.line(&format!(
                "epoch {:>3}: train loss {:.6e}, validation loss {:.6e}, kept {}",
                stats.epoch, stats.train_loss, v, stats.distilled
            )),
            None => log.line(&format!(
                "epoch {:>3}: train loss {:.6e}, kept {}",
                stats.epoch, stats.train_loss, stats.distilled
            )),
        }
    }
    log.line(&format!(
        "ran {} epoch(s){}; best validation loss: {}",
        report.epochs_run,
        if report.stopped_early {
            " (stopped early)"
        } else {
            ""
        },
        match report.best_val_loss {
            Some(v) => format!("{v:.6e}"),
            None => "n/a (validation disabled)".to_string(),
        }
    ));

    let scorer = build_scorer(
        report.best_net.clone(),
        &ds.x.gather_rows(&report.train_indices),
        args.mode.into(),
    )?;
    let artifact = ModelArtifact {
        scorer,
        config,
        prng: seeds::GENERATOR_NAME.to_string(),
    };
    save_model(&artifact, &args.model_out)?;
    log.line(&format!("model written to {}", args.model_out.display()));

    if let Some(history_path) = &args.history_out {
        let mut csv = String::from("epoch,train_loss,val_loss,kept\n");
        for stats in &report.history {
            let val = stats
                .val_loss
                .map(|v| v.to_string())
                .unwrap_or_default();
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                stats.epoch, stats.train_loss, val, stats.distilled
            );
        }
        metricad_core::data::write_atomic(history_path, csv.as_bytes())?;
        log.line(&format!("history written to {}", history_path.display()));
    }
    Ok(())
}

fn scorer_with_mode(
    artifact: ModelArtifact,
    requested: Option<ModeArg>,
) -> Result<metricad_core::Scorer> {
    match requested {
        None => Ok(artifact.scorer),
        Some(mode) => artifact.scorer.with_mode(mode.into()),
    }
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let artifact = load_model(&args.model)?;
    let scorer = scorer_with_mode(artifact, args.mode)?;
    let ds = args.data.load()?;
    let scores = scorer.score_all(&ds.x)?;

    let mut out = String::new();
    match args.tau {
        Some(tau) => {
            out.push_str("score,decision\n");
            for s in &scores {
                let _ = writeln!(out, "{s},{}", u8::from(decide(*s, tau)));
            }
        }
        None => {
            out.push_str("score\n");
            for s in &scores {
                let _ = writeln!(out, "{s}");
            }
        }
    }
    emit(args.out.as_deref(), &out)
}

fn cmd_eval(args: EvalArgs, log: &Logger) -> Result<()> {
    let artifact = load_model(&args.model)?;
    let scorer = scorer_with_mode(artifact, args.mode)?;
    let ds = args.data.load()?;
    let labels = ds.labels.as_ref().ok_or_else(|| {
        Error::InvalidConfig(
            "evaluation needs labels; pass --label-column to select them".into(),
        )
    })?;
    let scores = scorer.score_all(&ds.x)?;
    let auc = roc_auc(&scores, labels)?;
    log.line(&format!(
        "{} instances, {} anomalies",
        ds.n_instances(),
        ds.anomaly_count().unwrap_or(0)
    ));
    println!("AUC {:.2}%", 100.0 * auc);
    Ok(())
}

fn percent(auc: f64) -> String {
    format!("{:.2}", 100.0 * auc)
}

fn report_lines(report: &CvReport) -> String {
    let mut s = String::new();
    for run in &report.runs {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            run.repeat, run.fold, report.setting, run.auc
        );
    }
    let _ = writeln!(s, "mean,,{},{}", report.setting, report.mean_auc);
    s
}

fn cmd_cv(args: CvArgs, log: &Logger) -> Result<()> {
    let config = args.config.to_config();
    config.validate()?;
    let plan = CvPlan {
        folds: args.folds,
        repeats: args.repeats,
        base_seed: args.config.seed,
        force_one_class_rho_n: !args.keep_one_class_rho_n,
    };
    plan.validate()?;

    let ds = args.data.load()?;
    log.line(&format!(
        "cross-validating {} instances x {} features: {} repeat(s) x {} fold(s) per setting",
        ds.n_instances(),
        ds.n_features(),
        plan.repeats,
        plan.folds
    ));

    let mut csv = String::from("repeat,fold,setting,auc\n");
    for setting in args.setting.settings() {
        if setting == Setting::OneClass && plan.force_one_class_rho_n {
            log.line("one_class: distillation keep fraction forced to 1 (training data is label-cleaned)");
        }
        let report = run_setting(&ds, setting, &plan, &config)?;
        log.line(&format!(
            "{}: mean AUC {}% (std {}) over {} runs",
            setting,
            percent(report.mean_auc),
            percent(report.std_auc),
            report.runs.len()
        ));
        println!("{}: mean AUC {}%", setting, percent(report.mean_auc));
        csv.push_str(&report_lines(&report));
    }
    emit(args.report_out.as_deref(), &csv)
}

/// Parses "a,b,c" or "start:end:step" into a grid of fractions in (0, 1].
fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let parse_one = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidConfig(format!("grid entry {s:?} is not a number")))
    };
    let values: Vec<f64> = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::InvalidConfig(format!(
                "range grid must be start:end:step, got {text:?}"
            )));
        }
        let (start, end, step) = (parse_one(parts[0])?, parse_one(parts[1])?, parse_one(parts[2])?);
        if step <= 0.0 || !step.is_finite() {
            return Err(Error::InvalidConfig(format!("grid step must be positive, got {step}")));
        }
        if end < start {
            return Err(Error::InvalidConfig(format!(
                "grid end {end} is below start {start}"
            )));
        }
        let mut values = Vec::new();
        let mut k = 0u32;
        loop {
            let v = start + f64::from(k) * step;
            if v > end + 1e-9 {
                break;
            }
            values.push(v.min(end));
            k += 1;
        }
        values
    } else {
        text.split(',').map(parse_one).collect::<Result<_>>()?
    };
    if values.is_empty() {
        return Err(Error::InvalidConfig("grid is empty".into()));
    }
    for &v in &values {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "grid value {v} outside (0, 1]"
            )));
        }
    }
    Ok(values)
}

fn cmd_sweep(args: SweepArgs, log: &Logger) -> Result<()> {
    let base_config = args.config.to_config();
    base_config.validate()?;
    let grid = parse_grid(&args.grid)?;
    let plan = CvPlan {
        folds: args.folds,
        repeats: args.repeats,
        base_seed: args.config.seed,
        // Sweeping the distillation fraction must actually vary it in the
        // one_class setting too, so the usual forcing is disabled there.
        force_one_class_rho_n: args.parameter != SweepParameter::RhoN,
    };
    plan.validate()?;

    let ds = args.data.load()?;
    let settings = args.setting.settings();
    log.line(&format!(
        "sweeping {} over {} grid point(s), {} setting(s) each",
        args.parameter.name(),
        grid.len(),
        settings.len()
    ));

    let mut csv = String::from("parameter,value,setting,mean_auc\n");
    for &value in &grid {
        let mut config = base_config.clone();
        match args.parameter {
            SweepParameter::RhoN => config.rho_n = value,
            SweepParameter::RhoH => config.rho_h = value,
        }
        for &setting in &settings {
            let report = run_setting(&ds, setting, &plan, &config)?;
            log.line(&format!(
                "{} = {}: {} mean AUC {}%",
                args.parameter.name(),
                value,
                setting,
                percent(report.mean_auc)
            ));
            let _ = writeln!(
                csv,
                "{},{},{},{}",
                args.parameter.name(),
                value,
                setting,
                report.mean_auc
            );
        }
    }
    emit(args.curve_out.as_deref(), &csv)
}

/// Writes data to a file atomically, or to stdout when no path is given.
fn emit(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => metricad_core::data::write_atomic(p, content.as_bytes()),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}
