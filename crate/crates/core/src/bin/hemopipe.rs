use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use hemopipe::domain::{ExtinctionTable, SessionPlan};
use hemopipe::dsp;
use hemopipe::features;
use hemopipe::forest::cv::{cross_validate, CvMode, CvOptions, CvReport};
use hemopipe::forest::{train, Dataset, ForestModel, ForestParams};
use hemopipe::pipeline::{
    process_with_plan, run_pipeline, window_features, DriftOutcome, PipelineOptions, ProcessConfig,
};
use hemopipe::simulator::{simulate, DriftMode, SimConfig};
use hemopipe::tables;
use hemopipe::wire::{GapSummary, WireCodec};
use hemopipe::{Error, Result};

#[derive(Parser)]
#[command(name = "hemopipe", version, about = "NIR hemoglobin pipeline: simulate, process, window, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a session and write raw wire frames.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the frames as CSV (keeps the X channel).
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, env = "HEMOPIPE_SEED")]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_drift)]
        drift: Option<DriftMode>,
        /// Read noise sigma in counts.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
    /// Decode raw frames and convert them to hemoglobin concentration changes.
    Process {
        /// Wire capture, or a frames CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Extinction table (key = value lines).
        #[arg(long)]
        eps: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Session plan; when given, the drift fit uses resting samples only.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = dsp::DEFAULT_CUTOFF_HZ)]
        cutoff: f64,
        #[arg(long)]
        no_lowpass: bool,
        #[arg(long)]
        no_drift: bool,
    },
    /// Cut a hemoglobin table into labelled windows and extract features.
    Windows {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "s00")]
        subject: String,
        #[arg(long, default_value_t = dsp::DEFAULT_WINDOW_SIZE)]
        window: usize,
        #[arg(long, default_value_t = dsp::DEFAULT_STEP)]
        step: usize,
        #[arg(long, default_value_t = dsp::DEFAULT_SAMPLE_RATE_HZ)]
        rate: f64,
    },
    /// Train a random forest on a features CSV.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, env = "HEMOPIPE_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        model: PathBuf,
    },
    /// Score a model on a features CSV and cross-validate its parameters.
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "stratified")]
        cv: CvMode,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 10.0)]
        purge: f64,
        #[arg(long)]
        report: PathBuf,
    },
    /// Simulate, transport, process, window and evaluate synthetic subjects.
    Pipeline {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "HEMOPIPE_SEED")]
        seed: Option<u64>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Pipeline options JSON (subjects, folds, window, filter settings).
        #[arg(long)]
        options: Option<PathBuf>,
        #[arg(long)]
        subjects: Option<usize>,
    },
}

fn parse_drift(s: &str) -> std::result::Result<DriftMode, String> {
    match s {
        "none" => Ok(DriftMode::None),
        "linear" => Ok(DriftMode::Linear),
        "exponential" => Ok(DriftMode::Exponential),
        other => Err(format!("unknown drift mode {other:?}")),
    }
}

fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(with_path(path))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(with_path(path))?))
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_reader(open(p)?)?),
        None => Ok(T::default()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(with_path(path))?;
    Ok(())
}

fn print_line<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary {
    seed: u64,
    frames: usize,
    bytes: usize,
}

#[derive(Serialize)]
struct ProcessSummary {
    transport: Option<GapSummary>,
    samples: usize,
    drift: DriftOutcome,
}

#[derive(Serialize)]
struct TrainSummary {
    trees: usize,
    samples: usize,
    oob_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct EvaluateReport {
    samples: usize,
    model_accuracy: f64,
    cv: CvReport,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, csv, seed, drift, noise, scale } => {
            let mut cfg: SimConfig = read_json(config.as_ref())?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(mode) = drift {
                cfg.drift.mode = mode;
            }
            if let Some(sigma) = noise {
                cfg.noise_sigma = sigma;
            }
            let sim = simulate(&cfg)?;
            let bytes = WireCodec { scale }.encode_stream(&sim.frames)?;
            fs::write(&out, &bytes).map_err(with_path(&out))?;
            if let Some(path) = csv {
                let mut w = create(&path)?;
                tables::write_frames(&mut w, &sim.frames)?;
                w.flush()?;
            }
            print_line(&SimulateSummary { seed: cfg.seed, frames: sim.frames.len(), bytes: bytes.len() })
        }
        Command::Process { input, eps, out, plan, scale, cutoff, no_lowpass, no_drift } => {
            let table = match eps {
                Some(p) => ExtinctionTable::from_kv_str(&fs::read_to_string(&p).map_err(with_path(&p))?)?,
                None => ExtinctionTable::default(),
            };
            let raw = fs::read(&input).map_err(with_path(&input))?;
            let (frames, transport) = if raw.starts_with(b"#hemopipe") {
                (tables::read_frames(raw.as_slice())?, None)
            } else {
                let report = WireCodec { scale }.decode_stream(&raw);
                (report.sensor_frames(), Some(GapSummary::from(&report)))
            };
            let config = ProcessConfig {
                table,
                cutoff_hz: cutoff,
                lowpass: !no_lowpass,
                drift_correction: !no_drift,
                ..Default::default()
            };
            let plan: Option<SessionPlan> =
                plan.map(|p| serde_json::from_reader(open(&p)?).map_err(Error::from)).transpose()?;
            let processed = process_with_plan(&frames, &config, plan.as_ref())?;
            let mut w = create(&out)?;
            tables::write_hemo(&mut w, &processed.table)?;
            w.flush()?;
            print_line(&ProcessSummary { transport, samples: processed.table.series.len(), drift: processed.drift })
        }
        Command::Windows { input, plan, out, subject, window, step, rate } => {
            let plan: SessionPlan = read_json(plan.as_ref())?;
            plan.validate()?;
            let table = tables::read_hemo(open(&input)?, rate)?;
            let vectors = window_features(&table.series, &plan, &subject, window, step)?;
            let mut w = create(&out)?;
            features::write_csv(&mut w, &vectors)?;
            w.flush()?;
            print_line(&serde_json::json!({ "windows": vectors.len() }))
        }
        Command::Train { input, params, seed, model } => {
            let params: ForestParams = read_json(params.as_ref())?;
            let dataset = Dataset::from_vectors(&features::read_csv(open(&input)?)?)?;
            let fitted = train(&dataset, &params, seed)?;
            fs::write(&model, fitted.to_json()? + "\n").map_err(with_path(&model))?;
            print_line(&TrainSummary {
                trees: fitted.trees.len(),
                samples: dataset.len(),
                oob_accuracy: fitted.oob_accuracy(&dataset)?,
            })
        }
        Command::Evaluate { input, model, cv, folds, purge, report } => {
            let text = fs::read_to_string(&model).map_err(with_path(&model))?;
            let fitted = ForestModel::from_json(&text)?;
            let dataset = Dataset::from_vectors(&features::read_csv(open(&input)?)?)?;
            fitted.check_schema(&dataset)?;
            let options = CvOptions { k: folds, mode: cv, purge_span_s: purge };
            let out = EvaluateReport {
                samples: dataset.len(),
                model_accuracy: fitted.accuracy(&dataset)?,
                cv: cross_validate(&dataset, &options, &fitted.params, fitted.seed)?,
            };
            write_json(&report, &out)?;
            print_line(&serde_json::json!({
                "model_accuracy": out.model_accuracy,
                "cv_mean_accuracy": out.cv.mean_accuracy,
            }))
        }
        Command::Pipeline { config, seed, report, model, features: features_out, params, options, subjects } => {
            let sim: SimConfig = read_json(config.as_ref())?;
            let mut opts: PipelineOptions = read_json(options.as_ref())?;
            if let Some(p) = params {
                opts.forest = serde_json::from_reader(open(&p)?)?;
            }
            if let Some(n) = subjects {
                opts.subjects = n;
            }
            let seed = seed.unwrap_or(sim.seed);
            let run = run_pipeline(&sim, &opts, seed)?;
            write_json(&report, &run.report)?;
            if let Some(path) = model {
                fs::write(&path, run.model.to_json()? + "\n").map_err(with_path(&path))?;
            }
            if let Some(path) = features_out {
                let mut w = create(&path)?;
                features::write_csv(&mut w, &run.features)?;
                w.flush()?;
            }
            print_line(&serde_json::json!({
                "subjects": run.report.subjects.len(),
                "mean_stratified_accuracy": run.report.mean_stratified_accuracy,
                "mean_blocked_accuracy": run.report.mean_blocked_accuracy,
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.code(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
