//! Browser bindings for the hemopipe demo page (`www/index.html`).
//!
//! Results cross the boundary as JSON strings. The `*_json` functions are the
//! plain Rust versions used by the bindings and the native tests.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use hemopipe::beer_lambert::{forward_density, invert_concentrations};
use hemopipe::domain::ExtinctionTable;
use hemopipe::dsp::{self, Butterworth, FILTER_ORDER};
use hemopipe::pipeline::{process_with_plan, ProcessConfig};
use hemopipe::simulator::{simulate, DriftConfig, DriftMode, SimConfig};

/// Knobs exposed by the page. Missing fields take the library defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DemoSettings {
    pub seed: u64,
    pub noise_sigma: f64,
    pub drift: DriftMode,
    pub drift_per_hour: f64,
    pub drift_correction: bool,
    pub cutoff_hz: f64,
    /// Keep every n-th sample in the returned traces.
    pub decimate: usize,
}

impl Default for DemoSettings {
    fn default() -> Self {
        Self {
            seed: 1,
            noise_sigma: 150.0,
            drift: DriftMode::Linear,
            drift_per_hour: 0.05,
            drift_correction: true,
            cutoff_hz: dsp::DEFAULT_CUTOFF_HZ,
            decimate: 7,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Trace {
    pub t: Vec<f64>,
    pub true_hbo2: Vec<f64>,
    pub true_hb: Vec<f64>,
    pub hbo2: Vec<f64>,
    pub hb: Vec<f64>,
    /// Raw IR1 counts as they arrived, for the drift view.
    pub raw_ir1: Vec<f64>,
    pub rms_error: f64,
    pub drift: String,
    pub segments: Vec<(f64, f64, u8)>,
}

fn error_string(e: impl std::fmt::Display) -> String {
    e.to_string()
}

pub fn simulate_and_recover_json(settings: &str) -> Result<String, String> {
    let s: DemoSettings = serde_json::from_str(settings).map_err(error_string)?;
    let cfg = SimConfig {
        seed: s.seed,
        noise_sigma: s.noise_sigma,
        drift: DriftConfig { mode: s.drift, magnitude_per_hour: s.drift_per_hour, ..Default::default() },
        ..Default::default()
    };
    let sim = simulate(&cfg).map_err(error_string)?;
    let process = ProcessConfig { cutoff_hz: s.cutoff_hz, drift_correction: s.drift_correction, ..Default::default() };
    let out = process_with_plan(&sim.frames, &process, Some(&cfg.plan)).map_err(error_string)?;
    let series = &out.table.series;

    let h0 = sim.hemo[0];
    let mut sq = 0.0;
    for (k, h) in sim.hemo.iter().enumerate() {
        sq += (series.d_chbo2[k] - (h.d_chbo2 - h0.d_chbo2)).powi(2) + (series.d_chb[k] - (h.d_chb - h0.d_chb)).powi(2);
    }
    let step = s.decimate.max(1);
    let pick = |xs: &[f64]| xs.iter().step_by(step).copied().collect::<Vec<f64>>();
    let raw_ir1: Vec<f64> = sim.frames.iter().filter(|f| f.led == hemopipe::domain::Led::Nir).map(|f| f.ir1).collect();
    let trace = Trace {
        t: pick(&series.times),
        true_hbo2: sim.hemo.iter().step_by(step).map(|h| h.d_chbo2 - h0.d_chbo2).collect(),
        true_hb: sim.hemo.iter().step_by(step).map(|h| h.d_chb - h0.d_chb).collect(),
        hbo2: pick(&series.d_chbo2),
        hb: pick(&series.d_chb),
        raw_ir1: pick(&raw_ir1),
        rms_error: (sq / (2 * sim.hemo.len()) as f64).sqrt(),
        drift: serde_json::to_string(&out.drift).map_err(error_string)?,
        segments: cfg.plan.bounds().map(|(a, b, l)| (a, b, l.index() as u8)).collect(),
    };
    serde_json::to_string(&trace).map_err(error_string)
}

#[derive(Debug, Serialize)]
pub struct FilterResponse {
    pub freq_hz: Vec<f64>,
    /// Zero-phase (forward-backward) gain in dB.
    pub gain_db: Vec<f64>,
    pub step_t: Vec<f64>,
    pub step_in: Vec<f64>,
    pub step_out: Vec<f64>,
}

pub fn filter_response_json(cutoff_hz: f64, sample_rate_hz: f64, points: usize) -> Result<String, String> {
    let filter = Butterworth::lowpass(FILTER_ORDER, cutoff_hz, sample_rate_hz).map_err(error_string)?;
    let nyquist = sample_rate_hz / 2.0;
    let points = points.max(2);
    // log-spaced from 1/1000 of Nyquist up to Nyquist; the curve is floored at -200 dB
    let freq_hz: Vec<f64> =
        (0..points).map(|i| nyquist * 10f64.powf(-3.0 + 3.0 * i as f64 / (points - 1) as f64)).collect();
    let gain_db = freq_hz.iter().map(|&f| 40.0 * filter.magnitude(f, sample_rate_hz).max(1e-5).log10()).collect();

    let n = (120.0 * sample_rate_hz) as usize;
    let step_t: Vec<f64> = (0..n).map(|k| k as f64 / sample_rate_hz).collect();
    let step_in: Vec<f64> = step_t.iter().map(|&t| if t >= 60.0 { 1.0 } else { 0.0 }).collect();
    let step_out = filter.filtfilt(&step_in).map_err(error_string)?;
    serde_json::to_string(&FilterResponse { freq_hz, gain_db, step_t, step_in, step_out }).map_err(error_string)
}

#[derive(Debug, Serialize)]
pub struct Inversion {
    pub d_chbo2: f64,
    pub d_chb: f64,
    pub determinant: f64,
    /// ΔD recomputed from the result.
    pub check_dd_l1: f64,
    pub check_dd_l2: f64,
}

/// `table` is the key = value extinction format; empty text means the default table.
pub fn invert_json(dd_l1: f64, dd_l2: f64, table: &str) -> Result<String, String> {
    let table = if table.trim().is_empty() {
        ExtinctionTable::default()
    } else {
        ExtinctionTable::from_kv_str(table).map_err(error_string)?
    };
    let (d_chbo2, d_chb) = invert_concentrations(dd_l1, dd_l2, &table).map_err(error_string)?;
    let (check_dd_l1, check_dd_l2) = forward_density(d_chbo2, d_chb, &table).map_err(error_string)?;
    let out = Inversion { d_chbo2, d_chb, determinant: table.determinant(), check_dd_l1, check_dd_l2 };
    serde_json::to_string(&out).map_err(error_string)
}

#[wasm_bindgen(js_name = simulateAndRecover)]
pub fn simulate_and_recover(settings: &str) -> Result<String, JsError> {
    simulate_and_recover_json(settings).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = filterResponse)]
pub fn filter_response(cutoff_hz: f64, sample_rate_hz: f64, points: usize) -> Result<String, JsError> {
    filter_response_json(cutoff_hz, sample_rate_hz, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn invert(dd_l1: f64, dd_l2: f64, table: &str) -> Result<String, JsError> {
    invert_json(dd_l1, dd_l2, table).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = defaultTable)]
pub fn default_table() -> String {
    ExtinctionTable::default().to_kv_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn recovery_tracks_truth() {
        let v: Value = serde_json::from_str(&simulate_and_recover_json("{}").unwrap()).unwrap();
        assert_eq!(v["t"].as_array().unwrap().len(), 960);
        // high-load target is 0.025 mM; a noisy first tick offsets the whole trace
        let e = v["rms_error"].as_f64().unwrap();
        assert!(e < 0.025 / 5.0, "{e}");
        assert_eq!(v["segments"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn settings_are_validated() {
        assert!(simulate_and_recover_json(r#"{"noise_sigma": -1}"#).is_err());
        assert!(simulate_and_recover_json("not json").is_err());
    }

    #[test]
    fn filter_curve_shape() {
        let v: Value = serde_json::from_str(&filter_response_json(0.1, 7.0, 64).unwrap()).unwrap();
        let gain: Vec<f64> = v["gain_db"].as_array().unwrap().iter().map(|g| g.as_f64().unwrap()).collect();
        assert!(gain[0].abs() < 1e-6);
        assert!(*gain.last().unwrap() < -100.0);
        assert!(gain.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        let out = v["step_out"].as_array().unwrap();
        assert!(out[0].as_f64().unwrap().abs() < 1e-3);
    }

    #[test]
    fn inversion_round_trips() {
        let v: Value = serde_json::from_str(&invert_json(0.01, 0.02, "").unwrap()).unwrap();
        assert!((v["check_dd_l1"].as_f64().unwrap() - 0.01).abs() < 1e-15);
        assert!((v["check_dd_l2"].as_f64().unwrap() - 0.02).abs() < 1e-15);
        let singular = "eps_hbo2_l1 = 1\neps_hb_l1 = 2\neps_hbo2_l2 = 2\neps_hb_l2 = 4\n";
        assert!(invert_json(0.01, 0.02, singular).unwrap_err().contains("singular"));
    }
}
