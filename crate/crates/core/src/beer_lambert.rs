//! Modified Beer-Lambert law for two wavelengths.
//!
//! Optical density at wavelength λi is `D = L·(ε_HbO2·C_HbO2 + ε_Hb·C_Hb)`.
//! With two wavelengths the 2×2 system is solved in closed form, for absolute
//! densities or for changes relative to a baseline (the algebra is identical).

use serde::{Deserialize, Serialize};

use crate::domain::ExtinctionTable;
use crate::error::{Error, Result};

/// Logarithm used to turn an intensity ratio into an optical density.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    /// Absorbance convention; matches tabulated molar extinction coefficients.
    #[default]
    Decadic,
    Natural,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Decadic => x.log10(),
            LogBase::Natural => x.ln(),
        }
    }

    fn exp(self, x: f64) -> f64 {
        match self {
            LogBase::Decadic => 10f64.powf(x),
            LogBase::Natural => x.exp(),
        }
    }
}

/// ΔD = log10(I_B / I_T).
pub fn optical_density_delta(i_baseline: f64, i_t: f64) -> Result<f64> {
    optical_density_delta_in(i_baseline, i_t, LogBase::Decadic)
}

pub fn optical_density_delta_in(i_baseline: f64, i_t: f64, base: LogBase) -> Result<f64> {
    if !(i_baseline > 0.0 && i_baseline.is_finite()) {
        return Err(Error::Domain(format!("baseline intensity {i_baseline} must be positive")));
    }
    if !(i_t > 0.0 && i_t.is_finite()) {
        return Err(Error::Domain(format!("intensity {i_t} must be positive")));
    }
    // difference of logs keeps ΔD(a, b) = -ΔD(b, a) exact
    Ok(base.log(i_baseline) - base.log(i_t))
}

/// Inverse of [`optical_density_delta_in`]: the intensity that yields `dd`.
pub fn intensity_for_density(i_baseline: f64, dd: f64, base: LogBase) -> f64 {
    i_baseline * base.exp(-dd)
}

/// Concentration changes (ΔC_HbO2, ΔC_Hb) in mM from optical density changes.
pub fn invert_concentrations(dd_l1: f64, dd_l2: f64, table: &ExtinctionTable) -> Result<(f64, f64)> {
    table.validate()?;
    Ok(solve(dd_l1, dd_l2, table))
}

/// Absolute concentrations from absolute optical densities; same system as
/// [`invert_concentrations`].
pub fn absolute_concentrations(d_l1: f64, d_l2: f64, table: &ExtinctionTable) -> Result<(f64, f64)> {
    table.validate()?;
    Ok(solve(d_l1, d_l2, table))
}

/// Optical density changes produced by concentration changes `(ΔC_HbO2, ΔC_Hb)`.
pub fn forward_density(d_chbo2: f64, d_chb: f64, table: &ExtinctionTable) -> Result<(f64, f64)> {
    table.validate()?;
    let l = table.path_length_cm;
    Ok((
        l * (table.eps_hbo2_l1 * d_chbo2 + table.eps_hb_l1 * d_chb),
        l * (table.eps_hbo2_l2 * d_chbo2 + table.eps_hb_l2 * d_chb),
    ))
}

// The two denominators are negatives of each other; both are kept in the
// written form so each numerator pairs with its own denominator.
fn solve(d1: f64, d2: f64, t: &ExtinctionTable) -> (f64, f64) {
    let l = t.path_length_cm;
    let hbo2 =
        (t.eps_hb_l2 * d1 - t.eps_hb_l1 * d2) / (l * (t.eps_hb_l2 * t.eps_hbo2_l1 - t.eps_hb_l1 * t.eps_hbo2_l2));
    let hb =
        (t.eps_hbo2_l2 * d1 - t.eps_hbo2_l1 * d2) / (l * (t.eps_hb_l1 * t.eps_hbo2_l2 - t.eps_hb_l2 * t.eps_hbo2_l1));
    (hbo2, hb)
}
