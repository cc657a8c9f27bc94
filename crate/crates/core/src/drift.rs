//! Resting-drift removal.
//!
//! The white-light Y channel sees only sensor drift, so it is interpolated onto
//! the NIR timestamps and each IR channel is regressed on it by ordinary least
//! squares. The regression residuals are the drift-free IR signal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IrChannel {
    Ir1,
    Ir2,
}

/// Least-squares fit `ir ≈ slope·y + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub channel: IrChannel,
}

impl DriftFit {
    pub fn predict(&self, y: f64) -> f64 {
        self.slope * y + self.intercept
    }
}

/// Piecewise-linear interpolation of `(y_times, y_values)` at `target_times`.
/// Targets outside the sampled range take the nearest endpoint value.
pub fn interpolate_y(y_times: &[f64], y_values: &[f64], target_times: &[f64]) -> Result<Vec<f64>> {
    if y_times.len() != y_values.len() {
        return Err(Error::Parameter(format!("{} Y times but {} Y values", y_times.len(), y_values.len())));
    }
    if y_times.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: y_times.len() });
    }
    if y_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Parameter("Y times must be strictly increasing".into()));
    }
    let last = y_times.len() - 1;
    Ok(target_times
        .iter()
        .map(|&t| {
            if t <= y_times[0] {
                return y_values[0];
            }
            if t >= y_times[last] {
                return y_values[last];
            }
            // first knot strictly greater than t; 1..=last given the clamps above
            let hi = y_times.partition_point(|&k| k <= t);
            let lo = hi - 1;
            let frac = (t - y_times[lo]) / (y_times[hi] - y_times[lo]);
            y_values[lo] + frac * (y_values[hi] - y_values[lo])
        })
        .collect())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn fit_drift(channel: IrChannel, ir: &[f64], y_interp: &[f64]) -> Result<DriftFit> {
    if ir.len() != y_interp.len() {
        return Err(Error::Parameter(format!("IR has {} samples but Y has {}", ir.len(), y_interp.len())));
    }
    if ir.len() < 3 {
        return Err(Error::InsufficientData { needed: 3, got: ir.len() });
    }
    let y_mean = mean(y_interp);
    let ir_mean = mean(ir);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &v) in y_interp.iter().zip(ir) {
        let dx = x - y_mean;
        let dv = v - ir_mean;
        sxx += dx * dx;
        sxy += dx * dv;
        syy += dv * dv;
    }
    let scale = y_interp.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // spreads below 1e-9 of the signal level are rounding, not variation
    if sxx <= (1e-9 * scale).powi(2) * ir.len() as f64 {
        return Err(Error::DegenerateRegressor);
    }
    let slope = sxy / sxx;
    let intercept = ir_mean - slope * y_mean;
    let r_squared = if syy > 0.0 { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) } else { 0.0 };
    Ok(DriftFit { slope, intercept, r_squared, channel })
}

/// Residuals `ir[k] − (slope·y[k] + intercept)` of the drift fit.
pub fn remove_drift(channel: IrChannel, ir: &[f64], y_interp: &[f64]) -> Result<Vec<f64>> {
    let fit = fit_drift(channel, ir, y_interp)?;
    Ok(residuals(&fit, ir, y_interp))
}

fn residuals(fit: &DriftFit, ir: &[f64], y_interp: &[f64]) -> Vec<f64> {
    ir.iter().zip(y_interp).map(|(&v, &y)| v - fit.predict(y)).collect()
}

/// Drift-free intensity series for one IR channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedChannel {
    pub fit: DriftFit,
    /// Fitted intensity at the first tick; the residuals are re-anchored here.
    pub anchor: f64,
    pub intensity: Vec<f64>,
}

/// Removes drift and re-anchors the residuals at the fitted value of the first
/// tick, so the output stays in intensity units for the optical-density step.
pub fn correct_channel(channel: IrChannel, ir: &[f64], y_interp: &[f64]) -> Result<CorrectedChannel> {
    let fit = fit_drift(channel, ir, y_interp)?;
    Ok(apply_fit(fit, ir, y_interp))
}

/// Removes a fitted drift from a whole channel and re-anchors it at the
/// fitted value of the first sample. The fit may come from a subset.
pub fn apply_fit(fit: DriftFit, ir: &[f64], y_interp: &[f64]) -> CorrectedChannel {
    let anchor = fit.predict(y_interp[0]);
    let intensity = residuals(&fit, ir, y_interp).into_iter().map(|r| r + anchor).collect();
    CorrectedChannel { fit, anchor, intensity }
}
