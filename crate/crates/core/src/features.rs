//! Fixed per-window feature vector: fourteen statistics for each of the four
//! processed channels, always in the same order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::domain::Label;
use crate::dsp::Window;
use crate::error::{Error, Result};
use crate::tables;

pub const CHANNEL_NAMES: [&str; 4] = ["ir1", "ir2", "d_chbo2", "d_chb"];

pub const STATISTIC_NAMES: [&str; 14] = [
    "mean",
    "variance",
    "standard_deviation",
    "minimum",
    "maximum",
    "median",
    "range",
    "skewness",
    "kurtosis",
    "linear_trend_slope",
    "abs_energy",
    "mean_abs_change",
    "zero_crossings",
    "last_minus_first",
];

pub const FEATURE_COUNT: usize = CHANNEL_NAMES.len() * STATISTIC_NAMES.len();

/// `<channel>__<statistic>` for every feature, channel-major.
pub fn feature_names() -> Vec<String> {
    CHANNEL_NAMES.iter().flat_map(|c| STATISTIC_NAMES.iter().map(move |s| format!("{c}__{s}"))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub label: Label,
    pub subject_id: String,
    pub window_start_t: f64,
}

/// The fourteen statistics of one channel, in [`STATISTIC_NAMES`] order.
///
/// Moments are population (biased) estimates. A constant series has zero
/// skewness and zero excess kurtosis. Zero crossings are sign changes of the
/// mean-centred series with exact zeros counted as positive.
pub fn channel_statistics(x: &[f64]) -> Result<[f64; 14]> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation { field: "window", reason: "non-finite" });
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;

    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let constant = m2 <= (4.0 * f64::EPSILON * scale).powi(2);
    let (skewness, kurtosis) = if constant { (0.0, 0.0) } else { (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0) };

    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let max = sorted[n - 1];
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };

    let k_mean = (nf - 1.0) / 2.0;
    let (mut skx, mut skk) = (0.0, 0.0);
    for (k, v) in x.iter().enumerate() {
        let dk = k as f64 - k_mean;
        skx += dk * (v - mean);
        skk += dk * dk;
    }
    let slope = skx / skk;

    let energy = x.iter().map(|v| v * v).sum::<f64>();
    let mean_abs_change = x.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (nf - 1.0);
    let zero_crossings = x.windows(2).filter(|w| (w[0] - mean >= 0.0) != (w[1] - mean >= 0.0)).count() as f64;

    Ok([
        mean,
        m2,
        m2.sqrt(),
        min,
        max,
        median,
        max - min,
        skewness,
        kurtosis,
        slope,
        energy,
        mean_abs_change,
        zero_crossings,
        x[n - 1] - x[0],
    ])
}

pub fn extract(window: &Window, subject_id: &str) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(FEATURE_COUNT);
    for channel in &window.channels {
        values.extend_from_slice(&channel_statistics(channel)?);
    }
    Ok(FeatureVector { values, label: window.label, subject_id: subject_id.to_owned(), window_start_t: window.start_t })
}

pub fn build_dataset(windows: &[Window], subject_id: &str) -> Result<Vec<FeatureVector>> {
    windows.iter().map(|w| extract(w, subject_id)).collect()
}

const FEATURES_TAG: &str = "features";

/// Writes the dataset as CSV: a version tag line, then feature names followed
/// by `label,subject_id,window_start_t`.
pub fn write_csv<W: Write>(out: W, dataset: &[FeatureVector]) -> Result<()> {
    let mut header = feature_names();
    header.extend(["label", "subject_id", "window_start_t"].map(String::from));
    let mut writer = tables::tagged_writer(out, FEATURES_TAG)?;
    writer.write_record(&header)?;
    for fv in dataset {
        if fv.values.len() != FEATURE_COUNT {
            return Err(Error::Schema(format!("feature vector has {} values", fv.values.len())));
        }
        let mut row: Vec<String> = fv.values.iter().map(f64::to_string).collect();
        row.push(fv.label.to_string());
        row.push(fv.subject_id.clone());
        row.push(fv.window_start_t.to_string());
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<FeatureVector>> {
    let mut reader = tables::tagged_reader(input, FEATURES_TAG)?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let names = feature_names();
    if header.len() != FEATURE_COUNT + 3
        || header[..FEATURE_COUNT] != names[..]
        || header[FEATURE_COUNT..] != ["label", "subject_id", "window_start_t"]
    {
        return Err(Error::Schema("feature CSV header does not match the feature set".into()));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let values = (0..FEATURE_COUNT).map(|i| tables::parse_f64(&record[i])).collect::<Result<Vec<_>>>()?;
        out.push(FeatureVector {
            values,
            label: record[FEATURE_COUNT].parse()?,
            subject_id: record[FEATURE_COUNT + 1].to_owned(),
            window_start_t: tables::parse_f64(&record[FEATURE_COUNT + 2])?,
        });
    }
    Ok(out)
}
