//! `claimcast`: generate synthetic claims, featurize, train, score,
//! evaluate, or run the full three-mode benchmark from one config file.
//!
//! Exit codes: 0 success, 1 I/O, 2 synthetic calibration failure,
//! 3 configuration error, 4 invalid input data, 5 training failure,
//! 6 evaluation failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use claimcast::claims::{load_dataset, write_dataset, ClaimsDataset, PatientId};
use claimcast::config::RunConfig;
use claimcast::eval;
use claimcast::featurize::{build_scoring_matrix, build_training_matrix, FeatureConfig, FeatureMode};
use claimcast::fmt::sig;
use claimcast::model::{self, TrainedModel};
use claimcast::pipeline::{self, cohort_truth, StageError};
use claimcast::synthgen::generate_with_report;
use claimcast::Error;

#[derive(Parser)]
#[command(name = "claimcast", version, about = "Time-bucketed treatment-event prediction on claims panels")]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides paths.out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Derive the generation, sampling and training seeds from this value.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Args)]
struct ModeArg {
    /// Feature mode (overrides features.mode).
    #[arg(long)]
    mode: Option<FeatureMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel into paths.data_dir.
    Generate,
    /// Write training and scoring matrices as CSV.
    Featurize(ModeArg),
    /// Train a model for one feature mode.
    Train(ModeArg),
    /// Score the untreated-at-split cohort with a trained model.
    Score(ModeArg),
    /// Evaluate a score file against the look-forward window.
    Evaluate(ModeArg),
    /// Featurize, train, score and evaluate all three modes.
    Benchmark,
}

#[derive(Debug)]
enum Failure {
    Core(Error),
    Stage(StageError),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Stage(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        let core = match self {
            Failure::Core(e) => e,
            Failure::Stage(s) => &s.source,
        };
        match core {
            Error::Io { .. } => 1,
            Error::Calibration(_) => 2,
            Error::Config(_) | Error::Toml(_) => 3,
            Error::Malformed { .. }
            | Error::UnknownPatient(_)
            | Error::DuplicatePatient(_)
            | Error::OutOfRange { .. }
            | Error::DemographicsWidth { .. }
            | Error::NonFinite(_)
            | Error::Dimension { .. }
            | Error::Json(_) => 4,
            Error::Untrainable(_) | Error::Diverged { .. } => 5,
            Error::Eval(_) => 6,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Stage(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let mut config = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        config = config.with_seed(seed);
    }
    if let Some(out) = &cli.common.out {
        config.paths.out_dir = out.clone();
    }
    let quiet = cli.common.quiet;

    match cli.command {
        Command::Generate => cmd_generate(&config, quiet),
        Command::Featurize(m) => cmd_featurize(&config, m.mode),
        Command::Train(m) => cmd_train(&config, m.mode),
        Command::Score(m) => cmd_score(&config, m.mode),
        Command::Evaluate(m) => cmd_evaluate(&config, m.mode, quiet),
        Command::Benchmark => cmd_benchmark(&config, quiet),
    }
}

fn ensure_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn load(config: &RunConfig) -> CliResult<ClaimsDataset> {
    let ds = load_dataset(&config.events_path(), &config.patients_path())?;
    log::info!(
        "loaded {} patients, {} events (T={}, I={}, D={})",
        ds.len(),
        ds.event_count(),
        ds.days(),
        ds.services(),
        ds.demographic_width()
    );
    Ok(ds)
}

fn features_for(config: &RunConfig, mode: Option<FeatureMode>) -> FeatureConfig {
    FeatureConfig {
        mode: mode.unwrap_or(config.features.mode),
        ..config.features.clone()
    }
}

fn cmd_generate(config: &RunConfig, quiet: bool) -> CliResult {
    let (dataset, report) = generate_with_report(&config.synth)?;
    ensure_dir(&config.paths.data_dir)?;
    write_dataset(&dataset, &config.events_path(), &config.patients_path())?;
    let manifest = serde_json::json!({
        "format_version": 1,
        "seeds": {
            "generation": config.synth.seed,
            "sampling": config.features.sampling_seed,
            "training": config.model.seed,
        },
        "patients": dataset.len(),
        "events": dataset.event_count(),
        "dims": dataset.dims(),
        "hazard_base": report.hazard_base,
        "target_event_rate": config.synth.target_event_rate,
        "realized_rate": report.realized_rate,
        "cohort_size": report.cohort_size,
        "future_positives": report.future_positives,
        "treated_before_split": report.treated_before_split,
        "synth": config.synth,
    });
    let manifest_path = config.paths.data_dir.join("manifest.json");
    write_file(&manifest_path, serde_json::to_string_pretty(&manifest).map_err(Error::from)? + "\n")?;
    if !quiet {
        println!(
            "generated {} patients, {} events; look-forward rate {:.4} (target {:.4}) -> {}",
            dataset.len(),
            dataset.event_count(),
            report.realized_rate,
            config.synth.target_event_rate,
            config.paths.data_dir.display()
        );
    }
    Ok(())
}

fn cmd_featurize(config: &RunConfig, mode: Option<FeatureMode>) -> CliResult {
    let dataset = load(config)?;
    let features = features_for(config, mode);
    let train = build_training_matrix(&dataset, &features)?;
    let scoring = build_scoring_matrix(&dataset, &features, train.normalization.as_ref())?;
    let out = &config.paths.out_dir;
    ensure_dir(out)?;
    train.write_csv(&out.join(format!("train_{}.csv", features.mode)))?;
    scoring.write_csv(&out.join(format!("score_{}.csv", features.mode)))?;
    log::info!(
        "{}: {} training rows ({} positive), {} scoring rows",
        features.mode,
        train.len(),
        train.positives(),
        scoring.len()
    );
    Ok(())
}

fn model_path(config: &RunConfig, mode: FeatureMode) -> PathBuf {
    config.paths.out_dir.join(format!("model_{mode}.json"))
}

fn scores_path(config: &RunConfig, mode: FeatureMode) -> PathBuf {
    config.paths.out_dir.join(format!("scores_{mode}.csv"))
}

fn cmd_train(config: &RunConfig, mode: Option<FeatureMode>) -> CliResult {
    let dataset = load(config)?;
    let features = features_for(config, mode);
    let matrix = build_training_matrix(&dataset, &features)?;
    let model = model::train(&matrix, &config.model)?;
    ensure_dir(&config.paths.out_dir)?;
    model.save(&model_path(config, features.mode))?;
    log::info!(
        "{}: trained on {} rows, final loss {:.6}",
        features.mode,
        matrix.len(),
        model.final_loss
    );
    Ok(())
}

fn cmd_score(config: &RunConfig, mode: Option<FeatureMode>) -> CliResult {
    let dataset = load(config)?;
    let features = features_for(config, mode);
    let model = TrainedModel::load(&model_path(config, features.mode))?;
    let stats = features.normalize.then_some(&model.normalization);
    let scoring = build_scoring_matrix(&dataset, &features, stats)?;
    let scores = pipeline::score_cohort(&model, &scoring)?;
    let mut body = String::from("patient_id,score\n");
    for (id, s) in &scores {
        body.push_str(&format!("{id},{}\n", sig(*s, 9)));
    }
    write_file(&scores_path(config, features.mode), body)?;
    log::info!("{}: scored {} patients", features.mode, scores.len());
    Ok(())
}

fn read_scores(path: &Path) -> CliResult<Vec<(PatientId, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut scores = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let malformed = || Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("expected patient_id,score, got {line:?}"),
        };
        let (id, score) = line.split_once(',').ok_or_else(malformed)?;
        let id = id.trim().parse().map_err(|_| malformed())?;
        let score = score.trim().parse().map_err(|_| malformed())?;
        scores.push((id, score));
    }
    Ok(scores)
}

fn cmd_evaluate(config: &RunConfig, mode: Option<FeatureMode>, quiet: bool) -> CliResult {
    let dataset = load(config)?;
    let features = FeatureConfig {
        normalize: false,
        ..features_for(config, mode)
    };
    let cohort = build_scoring_matrix(&dataset, &features, None)?;
    let truth = cohort_truth(&cohort);
    let scores = read_scores(&scores_path(config, features.mode))?;
    let ks = config.eval.resolve(truth.len())?;
    let report = eval::k_accuracy(features.mode.as_str(), &scores, &truth, &ks)?;
    let out = &config.paths.out_dir;
    write_file(
        &out.join(format!("report_{}.csv", features.mode)),
        eval::report_csv(std::slice::from_ref(&report)),
    )?;
    eval::accuracy_curve(
        std::slice::from_ref(&report),
        &out.join(format!("curve_{}.csv", features.mode)),
        config.eval.svg,
    )?;
    if !quiet {
        print!("{}", eval::summary_table(&[report], &[]));
    }
    Ok(())
}

fn cmd_benchmark(config: &RunConfig, quiet: bool) -> CliResult {
    let dataset = load(config)?;
    let bench = pipeline::benchmark(&dataset, config)?;
    for run in &bench.runs {
        log::info!(
            "{}: {} training rows ({} positive), final loss {:.5}",
            run.mode,
            run.train_rows,
            run.train_positives,
            run.model.final_loss
        );
    }
    let written = bench.write(&config.paths.out_dir, config.eval.svg)?;
    if !quiet {
        print!("{}", bench.summary()?);
        println!("wrote {} files to {}", written.len(), config.paths.out_dir.display());
    }
    Ok(())
}
