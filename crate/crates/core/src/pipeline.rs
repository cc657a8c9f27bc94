//! Stage chaining: raw frames to hemoglobin series, series to features, and
//! the end-to-end synthetic evaluation run.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beer_lambert::{invert_concentrations, optical_density_delta_in, LogBase};
use crate::domain::{validate_frame, ExtinctionTable, Label, Led, SensorFrame, SessionPlan};
use crate::drift::{apply_fit, fit_drift, interpolate_y, DriftFit, IrChannel};
use crate::dsp::{self, FourChannelSeries};
use crate::error::{Error, Result};
use crate::features::{self, FeatureVector};
use crate::forest::cv::{cross_validate, CvMode, CvOptions, CvReport};
use crate::forest::{train, Dataset, ForestModel, ForestParams};
use crate::simulator::{simulate, SimConfig};
use crate::tables::HemoTable;
use crate::wire::{GapSummary, WireCodec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProcessConfig {
    pub table: ExtinctionTable,
    pub log_base: LogBase,
    pub sample_rate_hz: f64,
    pub cutoff_hz: f64,
    pub lowpass: bool,
    pub drift_correction: bool,
    /// Low-pass the Y reference before interpolating it, so read noise on Y
    /// neither dilutes the drift slope nor leaks into the corrected channels.
    pub smooth_reference: bool,
    /// Drift is slow, so the reference can be smoothed far below the signal band.
    pub reference_cutoff_hz: f64,
    /// Which samples the drift regression sees when a session plan is known.
    pub drift_scope: DriftScope,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftScope {
    /// Every NIR sample.
    Session,
    /// Rest-labelled samples only, skipping `settle_s` after each Rest segment
    /// that follows a load segment. Load responses are otherwise partly
    /// absorbed into the slope.
    Rest { settle_s: f64 },
}

impl Default for ProcessConfig {
    fn default() -> Self {
        Self {
            table: ExtinctionTable::default(),
            log_base: LogBase::Decadic,
            sample_rate_hz: dsp::DEFAULT_SAMPLE_RATE_HZ,
            cutoff_hz: dsp::DEFAULT_CUTOFF_HZ,
            lowpass: true,
            drift_correction: true,
            smooth_reference: true,
            reference_cutoff_hz: 0.01,
            drift_scope: DriftScope::Rest { settle_s: 60.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftOutcome {
    Corrected { ir1: DriftFit, ir2: DriftFit, fitted_samples: usize },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Processed {
    pub table: HemoTable,
    pub drift: DriftOutcome,
}

fn strictly_increasing(times: &[f64], what: &str) -> Result<()> {
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Parameter(format!("{what} timestamps must be strictly increasing")));
    }
    Ok(())
}

/// Mean sampling rate of a strictly increasing time base.
fn observed_rate(times: &[f64]) -> f64 {
    (times.len() - 1) as f64 / (times[times.len() - 1] - times[0])
}

fn smooth_reference(y_times: &[f64], y: &[f64], cutoff_hz: f64) -> Result<Vec<f64>> {
    let rate = observed_rate(y_times);
    if cutoff_hz >= rate / 2.0 {
        return Ok(y.to_vec());
    }
    dsp::lowpass(y, rate, cutoff_hz)
}

/// Frames to hemoglobin series: drift correction against Y, optical density
/// relative to the first NIR tick, concentration inversion, then low-pass.
/// Without a plan the drift fit uses every sample.
pub fn process(frames: &[SensorFrame], config: &ProcessConfig) -> Result<Processed> {
    process_with_plan(frames, config, None)
}

/// Indices the drift regression should use.
fn fit_indices(times: &[f64], scope: DriftScope, plan: Option<&SessionPlan>) -> Vec<usize> {
    let all = || (0..times.len()).collect();
    let (DriftScope::Rest { settle_s }, Some(plan)) = (scope, plan) else {
        return all();
    };
    let resting: Vec<(f64, f64)> = plan
        .bounds()
        .enumerate()
        .filter(|(_, (_, _, label))| *label == Label::Rest)
        .map(|(i, (start, end, _))| (if i == 0 { start } else { start + settle_s }, end))
        .collect();
    let picked: Vec<usize> =
        (0..times.len()).filter(|&k| resting.iter().any(|&(a, b)| times[k] >= a && times[k] < b)).collect();
    if picked.len() < 3 {
        all()
    } else {
        picked
    }
}

pub fn process_with_plan(
    frames: &[SensorFrame],
    config: &ProcessConfig,
    plan: Option<&SessionPlan>,
) -> Result<Processed> {
    config.table.validate()?;
    let mut y_times = Vec::new();
    let mut y = Vec::new();
    let mut times = Vec::new();
    let mut ir1 = Vec::new();
    let mut ir2 = Vec::new();
    for &frame in frames {
        let f = validate_frame(frame)?;
        match f.led {
            Led::White => {
                y_times.push(f.t);
                y.push(f.y);
            }
            Led::Nir => {
                times.push(f.t);
                ir1.push(f.ir1);
                ir2.push(f.ir2);
            }
        }
    }
    if times.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    strictly_increasing(&times, "NIR")?;
    strictly_increasing(&y_times, "white")?;

    let drift = if !config.drift_correction {
        DriftOutcome::Skipped { reason: "disabled".into() }
    } else if y.len() < 2 || times.len() < 3 {
        DriftOutcome::Skipped { reason: format!("{} white frames, {} NIR frames", y.len(), times.len()) }
    } else {
        let reference = if config.smooth_reference && y.len() > 3 * 2 * dsp::FILTER_ORDER {
            smooth_reference(&y_times, &y, config.reference_cutoff_hz)?
        } else {
            y.clone()
        };
        let y_interp = interpolate_y(&y_times, &reference, &times)?;
        let picked = fit_indices(&times, config.drift_scope, plan);
        let subset = |xs: &[f64]| picked.iter().map(|&k| xs[k]).collect::<Vec<f64>>();
        let y_fit = subset(&y_interp);
        match (fit_drift(IrChannel::Ir1, &subset(&ir1), &y_fit), fit_drift(IrChannel::Ir2, &subset(&ir2), &y_fit)) {
            (Ok(f1), Ok(f2)) => {
                ir1 = apply_fit(f1, &ir1, &y_interp).intensity;
                ir2 = apply_fit(f2, &ir2, &y_interp).intensity;
                DriftOutcome::Corrected { ir1: f1, ir2: f2, fitted_samples: picked.len() }
            }
            (Err(Error::DegenerateRegressor), _) | (_, Err(Error::DegenerateRegressor)) => {
                DriftOutcome::Skipped { reason: "constant Y reference".into() }
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    };

    let n = times.len();
    let mut dd_l1 = Vec::with_capacity(n);
    let mut dd_l2 = Vec::with_capacity(n);
    let mut d_chbo2 = Vec::with_capacity(n);
    let mut d_chb = Vec::with_capacity(n);
    for k in 0..n {
        let d1 = optical_density_delta_in(ir1[0], ir1[k], config.log_base)?;
        let d2 = optical_density_delta_in(ir2[0], ir2[k], config.log_base)?;
        let (hbo2, hb) = invert_concentrations(d1, d2, &config.table)?;
        dd_l1.push(d1);
        dd_l2.push(d2);
        d_chbo2.push(hbo2);
        d_chb.push(hb);
    }

    let mut columns = [ir1, ir2, dd_l1, dd_l2, d_chbo2, d_chb];
    if config.lowpass {
        for col in &mut columns {
            *col = dsp::lowpass(col, config.sample_rate_hz, config.cutoff_hz)?;
        }
    }
    let [ir1, ir2, dd_l1, dd_l2, d_chbo2, d_chb] = columns;
    let series = FourChannelSeries { times, ir1, ir2, d_chbo2, d_chb, sample_rate_hz: config.sample_rate_hz };
    Ok(Processed { table: HemoTable { series, dd_l1, dd_l2 }, drift })
}

/// Windows a processed series and extracts one feature vector per window.
pub fn window_features(
    series: &FourChannelSeries,
    plan: &SessionPlan,
    subject_id: &str,
    window_size: usize,
    step: usize,
) -> Result<Vec<FeatureVector>> {
    let windows = dsp::segment(series, plan, window_size, step)?;
    features::build_dataset(&windows, subject_id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    pub subjects: usize,
    pub forest: ForestParams,
    pub folds: usize,
    pub purge_span_s: f64,
    pub window_size: usize,
    pub step: usize,
    pub process: ProcessConfig,
    pub wire_scale: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            subjects: 1,
            forest: ForestParams::default(),
            folds: 5,
            purge_span_s: 10.0,
            window_size: dsp::DEFAULT_WINDOW_SIZE,
            step: dsp::DEFAULT_STEP,
            process: ProcessConfig::default(),
            wire_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectReport {
    pub subject_id: String,
    pub seed: u64,
    pub transport: GapSummary,
    pub drift: DriftOutcome,
    pub windows: usize,
    /// Rest, LowLoad, HighLoad.
    pub class_counts: [usize; 3],
    pub stratified: CvReport,
    pub blocked: CvReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub format_version: u32,
    pub seed: u64,
    pub options: PipelineOptions,
    pub simulation: SimConfig,
    pub subjects: Vec<SubjectReport>,
    pub mean_stratified_accuracy: f64,
    pub mean_blocked_accuracy: f64,
    pub min_stratified_accuracy: f64,
    /// Resubstitution accuracy of the pooled model on all subjects' windows.
    pub pooled_training_accuracy: f64,
}

pub struct PipelineRun {
    pub report: PipelineReport,
    /// Trained on every subject's windows.
    pub model: ForestModel,
    pub features: Vec<FeatureVector>,
}

/// Per-subject simulator seeds drawn from the run seed.
pub fn subject_seeds(seed: u64, subjects: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..subjects).map(|_| rng.next_u64()).collect()
}

fn run_subject(
    index: usize,
    subject_seed: u64,
    sim: &SimConfig,
    options: &PipelineOptions,
) -> Result<(SubjectReport, Vec<FeatureVector>)> {
    let subject_id = format!("s{index:02}");
    let config = SimConfig { seed: subject_seed, ..sim.clone() };
    let simulation = simulate(&config)?;

    let codec = WireCodec { scale: options.wire_scale };
    let bytes = codec.encode_stream(&simulation.frames)?;
    let decoded = codec.decode_stream(&bytes);
    let process_config = ProcessConfig { table: config.table, log_base: config.log_base, ..options.process.clone() };
    let processed = process_with_plan(&decoded.sensor_frames(), &process_config, Some(&config.plan))?;

    let features =
        window_features(&processed.table.series, &config.plan, &subject_id, options.window_size, options.step)?;
    let dataset = Dataset::from_vectors(&features)?;
    let mut class_counts = [0usize; 3];
    for v in &features {
        class_counts[v.label.index()] += 1;
    }
    let cv = |mode| {
        let opts = CvOptions { k: options.folds, mode, purge_span_s: options.purge_span_s };
        cross_validate(&dataset, &opts, &options.forest, subject_seed)
    };
    let report = SubjectReport {
        subject_id,
        seed: subject_seed,
        transport: GapSummary::from(&decoded),
        drift: processed.drift,
        windows: features.len(),
        class_counts,
        stratified: cv(CvMode::StratifiedShuffled)?,
        blocked: cv(CvMode::Blocked)?,
    };
    Ok((report, features))
}

/// Simulates `options.subjects` sessions, pushes each through the wire codec
/// and the processing chain, cross-validates per subject in both modes, and
/// trains one pooled model.
pub fn run_pipeline(sim: &SimConfig, options: &PipelineOptions, seed: u64) -> Result<PipelineRun> {
    sim.validate()?;
    if options.subjects == 0 {
        return Err(Error::Parameter("subjects must be >= 1".into()));
    }
    let seeds = subject_seeds(seed, options.subjects);
    let run = |(i, &s): (usize, &u64)| run_subject(i, s, sim, options);

    #[cfg(feature = "parallel")]
    let results: Vec<Result<(SubjectReport, Vec<FeatureVector>)>> = {
        use rayon::prelude::*;
        seeds.par_iter().enumerate().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(SubjectReport, Vec<FeatureVector>)>> = seeds.iter().enumerate().map(run).collect();

    let mut subjects = Vec::with_capacity(results.len());
    let mut all_features = Vec::new();
    for r in results {
        let (report, features) = r?;
        subjects.push(report);
        all_features.extend(features);
    }
    let pooled = Dataset::from_vectors(&all_features)?;
    let model = train(&pooled, &options.forest, seed)?;
    let pooled_training_accuracy = model.accuracy(&pooled)?;

    let n = subjects.len() as f64;
    let strat: Vec<f64> = subjects.iter().map(|s| s.stratified.mean_accuracy).collect();
    let report = PipelineReport {
        format_version: 1,
        seed,
        options: options.clone(),
        simulation: sim.clone(),
        mean_stratified_accuracy: strat.iter().sum::<f64>() / n,
        mean_blocked_accuracy: subjects.iter().map(|s| s.blocked.mean_accuracy).sum::<f64>() / n,
        min_stratified_accuracy: strat.iter().copied().fold(f64::INFINITY, f64::min),
        pooled_training_accuracy,
        subjects,
    };
    Ok(PipelineRun { report, model, features: all_features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Label, Segment};
    use crate::simulator::{DriftConfig, DriftMode};

    fn rms_error(processed: &Processed, truth: &[crate::domain::HemoSample]) -> f64 {
        let s = &processed.table.series;
        let sum: f64 = truth
            .iter()
            .enumerate()
            .map(|(k, h)| {
                let e1 = s.d_chbo2[k] - (h.d_chbo2 - truth[0].d_chbo2);
                let e2 = s.d_chb[k] - (h.d_chb - truth[0].d_chb);
                e1 * e1 + e2 * e2
            })
            .sum();
        (sum / (2 * truth.len()) as f64).sqrt()
    }

    #[test]
    fn noise_free_recovery_without_drift() {
        let cfg = SimConfig::default();
        let sim = simulate(&cfg).unwrap();
        let out = process(&sim.frames, &ProcessConfig { lowpass: false, ..Default::default() }).unwrap();
        assert!(matches!(out.drift, DriftOutcome::Skipped { .. }));
        let err = rms_error(&out, &sim.hemo);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rest_only_recovers_zero() {
        let cfg = SimConfig {
            plan: SessionPlan::new(vec![Segment { label: Label::Rest, duration_s: 60.0 }]).unwrap(),
            ..Default::default()
        };
        let sim = simulate(&cfg).unwrap();
        let out = process(&sim.frames, &ProcessConfig::default()).unwrap();
        assert!(out.table.series.d_chbo2.iter().chain(&out.table.series.d_chb).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn drift_without_signal_is_removed() {
        let cfg = SimConfig {
            state_targets: crate::simulator::StateTargets {
                low_load: crate::simulator::HemoTarget { d_chbo2: 0.0, d_chb: 0.0 },
                high_load: crate::simulator::HemoTarget { d_chbo2: 0.0, d_chb: 0.0 },
                ..Default::default()
            },
            drift: DriftConfig { mode: DriftMode::Linear, ..Default::default() },
            ..Default::default()
        };
        let sim = simulate(&cfg).unwrap();
        let out = process(&sim.frames, &ProcessConfig::default()).unwrap();
        assert!(matches!(out.drift, DriftOutcome::Corrected { .. }));
        let err = rms_error(&out, &sim.hemo);
        // smoothing the reference bends its ends slightly
        assert!(err < 2e-4, "{err}");
        let unsmoothed =
            process(&sim.frames, &ProcessConfig { smooth_reference: false, ..Default::default() }).unwrap();
        let e = rms_error(&unsmoothed, &sim.hemo);
        // NIR ticks after the last white frame see a clamped Y
        assert!(e < 1e-7, "{e}");

        let raw = process(&sim.frames, &ProcessConfig { drift_correction: false, ..Default::default() }).unwrap();
        assert!(rms_error(&raw, &sim.hemo) > 1e-3);
    }

    #[test]
    fn drift_with_signal_stays_close() {
        let cfg =
            SimConfig { drift: DriftConfig { mode: DriftMode::Linear, ..Default::default() }, ..Default::default() };
        let sim = simulate(&cfg).unwrap();
        let out = process(&sim.frames, &ProcessConfig::default()).unwrap();
        let err = rms_error(&out, &sim.hemo);
        // the load response is partly collinear with the drift ramp and the
        // whole-session fit absorbs it; this pins the size of that bias
        assert!(err > 1e-3 && err < 1e-2, "{err}");
    }

    #[test]
    fn rest_scoped_fit_keeps_the_load_signal() {
        let cfg =
            SimConfig { drift: DriftConfig { mode: DriftMode::Linear, ..Default::default() }, ..Default::default() };
        let sim = simulate(&cfg).unwrap();
        let out = process_with_plan(&sim.frames, &ProcessConfig::default(), Some(&cfg.plan)).unwrap();
        let DriftOutcome::Corrected { fitted_samples, ir1, .. } = out.drift else { panic!("not corrected") };
        // first Rest segment whole, the other two after the settle margin
        assert_eq!(fitted_samples, 7 * (120 + 60 + 60));
        assert!((ir1.slope - cfg.baseline.ir1 / cfg.baseline.y).abs() < 1e-2, "{}", ir1.slope);
        let err = rms_error(&out, &sim.hemo);
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn rest_scope_without_rest_falls_back_to_session() {
        let plan = SessionPlan::new(vec![Segment { label: Label::HighLoad, duration_s: 30.0 }]).unwrap();
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.2).collect();
        assert_eq!(fit_indices(&times, DriftScope::Rest { settle_s: 60.0 }, Some(&plan)).len(), 100);
        assert_eq!(fit_indices(&times, DriftScope::Rest { settle_s: 60.0 }, None).len(), 100);
    }

    #[test]
    fn unsorted_nir_is_rejected() {
        let frames = vec![SensorFrame::nir(1.0, 10.0, 10.0), SensorFrame::nir(0.5, 10.0, 10.0)];
        assert!(process(&frames, &ProcessConfig::default()).is_err());
    }

    #[test]
    fn subject_seeds_are_stable() {
        assert_eq!(subject_seeds(42, 3), subject_seeds(42, 3));
        assert_eq!(subject_seeds(42, 3)[..2], subject_seeds(42, 2)[..]);
        assert_ne!(subject_seeds(42, 1), subject_seeds(43, 1));
    }

    #[test]
    fn small_pipeline_is_deterministic() {
        let sim = SimConfig { noise_sigma: 100.0, ..Default::default() };
        let options =
            PipelineOptions { forest: ForestParams { n_trees: 10, ..Default::default() }, ..Default::default() };
        let a = run_pipeline(&sim, &options, 7).unwrap();
        let b = run_pipeline(&sim, &options, 7).unwrap();
        assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
        assert_eq!(a.model.to_json().unwrap(), b.model.to_json().unwrap());
        assert_eq!(a.report.subjects[0].windows, 191);
        assert_eq!(a.report.subjects[0].transport.missing, 0);
    }
}
