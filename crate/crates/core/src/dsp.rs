//! Zero-phase Butterworth low-pass filtering and sliding-window segmentation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::{Label, SessionPlan};
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 7.0;
pub const DEFAULT_CUTOFF_HZ: f64 = 0.1;
pub const DEFAULT_WINDOW_SIZE: usize = 70;
pub const DEFAULT_STEP: usize = 35;
pub const FILTER_ORDER: usize = 4;

/// One second-order section in transposed direct form II, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Internal state for which a constant unit input is already at steady state.
    fn steady_state(&self) -> [f64; 2] {
        let z2 = self.b[2] - self.a[1];
        let z1 = self.b[1] - self.a[0] + z2;
        [z1, z2]
    }

    fn run(&self, data: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in data.iter_mut() {
            let x = *v;
            let y = b0 * x + z[0];
            z[0] = b1 * x - a1 * y + z[1];
            z[1] = b2 * x - a2 * y;
            *v = y;
        }
    }
}

/// Butterworth low-pass as a cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    pub sections: Vec<Biquad>,
}

impl Butterworth {
    /// Even-order digital Butterworth low-pass by bilinear transform with
    /// pre-warped cutoff.
    pub fn lowpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if order == 0 || !order.is_multiple_of(2) {
            return Err(Error::Parameter(format!("filter order {order} must be even and > 0")));
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::Parameter(format!("sample rate {sample_rate_hz} must be > 0")));
        }
        if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
            return Err(Error::Parameter(format!(
                "cutoff {cutoff_hz} Hz must lie in (0, {}) Hz",
                sample_rate_hz / 2.0
            )));
        }
        let k = (std::f64::consts::PI * cutoff_hz / sample_rate_hz).tan();
        let k2 = k * k;
        let sections = (0..order / 2)
            .map(|i| {
                // pole pair angle of the analog prototype
                let theta = std::f64::consts::PI * (2 * i + 1) as f64 / (2 * order) as f64;
                let q = 1.0 / (2.0 * theta.cos());
                let norm = 1.0 / (1.0 + k / q + k2);
                let b0 = k2 * norm;
                Biquad { b: [b0, 2.0 * b0, b0], a: [2.0 * (k2 - 1.0) * norm, (1.0 - k / q + k2) * norm] }
            })
            .collect();
        Ok(Self { sections })
    }

    /// Magnitude of the single-pass frequency response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz / sample_rate_hz;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        self.sections
            .iter()
            .map(|s| {
                let nr = s.b[0] + s.b[1] * c1 + s.b[2] * c2;
                let ni = -(s.b[1] * s1 + s.b[2] * s2);
                let dr = 1.0 + s.a[0] * c1 + s.a[1] * c2;
                let di = -(s.a[0] * s1 + s.a[1] * s2);
                ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
            })
            .product()
    }

    fn run_from_steady_state(&self, data: &mut [f64]) {
        let Some(&first) = data.first() else { return };
        // every section has unit DC gain, so each starts at the same level
        for section in &self.sections {
            let zi = section.steady_state();
            section.run(data, [zi[0] * first, zi[1] * first]);
        }
    }

    /// Forward-backward filtering with odd reflection of `pad` samples at each
    /// end and steady-state initial conditions.
    pub fn filtfilt_padded(&self, series: &[f64], pad: usize) -> Result<Vec<f64>> {
        let n = series.len();
        if n <= pad {
            return Err(Error::InsufficientData { needed: pad + 1, got: n });
        }
        let first = series[0];
        let last = series[n - 1];
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|k| 2.0 * first - series[k]));
        ext.extend_from_slice(series);
        ext.extend((1..=pad).map(|k| 2.0 * last - series[n - 1 - k]));

        self.run_from_steady_state(&mut ext);
        ext.reverse();
        self.run_from_steady_state(&mut ext);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }

    fn state_len(&self) -> usize {
        2 * self.sections.len()
    }

    /// Runs the cascade in place; `state` holds two entries per section.
    fn run_with_state(&self, data: &mut [f64], state: &[f64]) {
        for (section, z) in self.sections.iter().zip(state.chunks(2)) {
            section.run(data, [z[0], z[1]]);
        }
    }

    fn forward(&self, data: &mut [f64]) {
        self.run_with_state(data, &vec![0.0; self.state_len()]);
    }

    fn forward_reversed(&self, data: &mut [f64]) {
        data.reverse();
        self.forward(data);
        data.reverse();
    }

    /// Forward-backward filtering with initial states for both passes chosen
    /// by least squares so that forward-backward and backward-forward
    /// filtering agree (Gustafsson's method). No padding is needed and the
    /// result is exactly time-reversal symmetric.
    pub fn filtfilt(&self, series: &[f64]) -> Result<Vec<f64>> {
        let n = series.len();
        let p = self.state_len();
        let needed = 3 * p + 1;
        if n < needed {
            return Err(Error::InsufficientData { needed, got: n });
        }
        // obs[j]: zero-input response to unit initial state j
        let obs: Vec<Vec<f64>> = (0..p)
            .map(|j| {
                let mut state = vec![0.0; p];
                state[j] = 1.0;
                let mut col = vec![0.0; n];
                self.run_with_state(&mut col, &state);
                col
            })
            .collect();
        // s[j]: obs[j] reversed, then filtered from rest
        let s: Vec<Vec<f64>> = obs
            .iter()
            .map(|col| {
                let mut c: Vec<f64> = col.iter().rev().copied().collect();
                self.forward(&mut c);
                c
            })
            .collect();

        let mut y_fb = series.to_vec();
        self.forward(&mut y_fb);
        self.forward_reversed(&mut y_fb);
        let mut y_bf = series.to_vec();
        self.forward_reversed(&mut y_bf);
        self.forward(&mut y_bf);

        let m = DMatrix::from_fn(n, 2 * p, |i, j| {
            if j < p {
                s[j][n - 1 - i] - obs[j][i]
            } else {
                obs[j - p][n - 1 - i] - s[j - p][i]
            }
        });
        let delta = DVector::from_iterator(n, y_bf.iter().zip(&y_fb).map(|(a, b)| a - b));
        let svd = m.svd(true, true);
        let cutoff = svd.singular_values.max() * f64::EPSILON * n as f64;
        let ic = svd.solve(&delta, cutoff).map_err(|e| Error::Parameter(e.to_string()))?;

        Ok((0..n)
            .map(|i| {
                let correction: f64 = (0..p).map(|j| s[j][n - 1 - i] * ic[j] + obs[j][n - 1 - i] * ic[j + p]).sum();
                y_fb[i] + correction
            })
            .collect())
    }
}

/// Zero-phase 4th-order Butterworth low-pass.
pub fn lowpass(series: &[f64], sample_rate_hz: f64, cutoff_hz: f64) -> Result<Vec<f64>> {
    let filter = Butterworth::lowpass(FILTER_ORDER, cutoff_hz, sample_rate_hz)?;
    filter.filtfilt(series)
}

/// Processed per-tick channels: drift-corrected IR intensities and
/// hemoglobin concentration changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourChannelSeries {
    pub times: Vec<f64>,
    pub ir1: Vec<f64>,
    pub ir2: Vec<f64>,
    pub d_chbo2: Vec<f64>,
    pub d_chb: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl FourChannelSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if [self.ir1.len(), self.ir2.len(), self.d_chbo2.len(), self.d_chb.len()].iter().any(|&len| len != n) {
            return Err(Error::Schema("four-channel series columns differ in length".into()));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Parameter(format!("sample rate {} must be > 0", self.sample_rate_hz)));
        }
        Ok(())
    }

    pub fn channels(&self) -> [&[f64]; 4] {
        [&self.ir1, &self.ir2, &self.d_chbo2, &self.d_chb]
    }
}

/// A labelled run of `window_size` consecutive ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start_index: usize,
    pub start_t: f64,
    pub label: Label,
    /// ir1, ir2, d_chbo2, d_chb
    pub channels: [Vec<f64>; 4],
}

impl Window {
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Start indices of the windows covering `n` ticks.
pub fn window_starts(n: usize, window_size: usize, step: usize) -> Result<Vec<usize>> {
    if window_size == 0 || step == 0 {
        return Err(Error::Parameter("window size and step must be > 0".into()));
    }
    if n < window_size {
        return Err(Error::InsufficientData { needed: window_size, got: n });
    }
    Ok((0..=(n - window_size) / step).map(|i| i * step).collect())
}

/// Cuts the series into overlapping windows, each labelled by the plan at the
/// window's mid time.
pub fn segment(series: &FourChannelSeries, plan: &SessionPlan, window_size: usize, step: usize) -> Result<Vec<Window>> {
    series.validate()?;
    window_starts(series.len(), window_size, step)?
        .into_iter()
        .map(|start| {
            let end = start + window_size;
            let mid_t = 0.5 * (series.times[start] + series.times[end - 1]);
            let label = plan.label_at(mid_t)?;
            let channels = series.channels().map(|c| c[start..end].to_vec());
            Ok(Window { start_index: start, start_t: series.times[start], label, channels })
        })
        .collect()
}
