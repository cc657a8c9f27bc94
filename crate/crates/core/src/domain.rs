//! Domain types shared by every stage: sensor frames, the extinction table,
//! hemoglobin samples and the labelled session timeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which light source was lit when a frame was read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Led {
    White,
    Nir,
}

impl Led {
    pub fn code(self) -> u8 {
        match self {
            Led::White => 0,
            Led::Nir => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Led::White),
            1 => Some(Led::Nir),
            _ => None,
        }
    }
}

/// One reading of the five-channel colour sensor.
///
/// White frames carry X, Y, Z; NIR frames carry IR1 (730 nm) and IR2 (940 nm).
/// The channels not lit in a frame are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub ir1: f64,
    pub ir2: f64,
    pub led: Led,
}

impl SensorFrame {
    pub fn white(t: f64, x: f64, y: f64, z: f64) -> Self {
        Self { t, x, y, z, ir1: 0.0, ir2: 0.0, led: Led::White }
    }

    pub fn nir(t: f64, ir1: f64, ir2: f64) -> Self {
        Self { t, x: 0.0, y: 0.0, z: 0.0, ir1, ir2, led: Led::Nir }
    }
}

/// Checks a single frame: every value finite, every channel non-negative.
pub fn validate_frame(frame: SensorFrame) -> Result<SensorFrame> {
    if !frame.t.is_finite() {
        return Err(Error::Validation { field: "t", reason: "non-finite" });
    }
    let channels = [("x", frame.x), ("y", frame.y), ("z", frame.z), ("ir1", frame.ir1), ("ir2", frame.ir2)];
    for (field, value) in channels {
        if !value.is_finite() {
            return Err(Error::Validation { field, reason: "non-finite" });
        }
        if value < 0.0 {
            return Err(Error::Validation { field, reason: "negative" });
        }
    }
    Ok(frame)
}

/// Checks a frame stream: each frame valid and timestamps strictly increasing.
pub fn validate_stream(frames: &[SensorFrame]) -> Result<()> {
    let mut last = f64::NEG_INFINITY;
    for frame in frames {
        validate_frame(*frame)?;
        if frame.t <= last {
            return Err(Error::Validation { field: "t", reason: "not strictly increasing" });
        }
        last = frame.t;
    }
    Ok(())
}

pub const DEFAULT_PATH_LENGTH_CM: f64 = 0.75;
pub const DEFAULT_SINGULARITY_TOLERANCE: f64 = 1e-9;

const DEFAULT_TABLE_SOURCE: &str = include_str!("../data/extinction_730_940.txt");

/// Extinction coefficients of HbO2 and Hb at the two NIR wavelengths
/// (λ1 = 730 nm, λ2 = 940 nm), in 1/(cm·mM), plus the optical path length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionTable {
    pub eps_hbo2_l1: f64,
    pub eps_hb_l1: f64,
    pub eps_hbo2_l2: f64,
    pub eps_hb_l2: f64,
    #[serde(default = "default_path_length")]
    pub path_length_cm: f64,
    #[serde(default = "default_tolerance")]
    pub singularity_tolerance: f64,
}

fn default_path_length() -> f64 {
    DEFAULT_PATH_LENGTH_CM
}

fn default_tolerance() -> f64 {
    DEFAULT_SINGULARITY_TOLERANCE
}

impl ExtinctionTable {
    pub fn new(eps_hbo2_l1: f64, eps_hb_l1: f64, eps_hbo2_l2: f64, eps_hb_l2: f64, path_length_cm: f64) -> Self {
        Self {
            eps_hbo2_l1,
            eps_hb_l1,
            eps_hbo2_l2,
            eps_hb_l2,
            path_length_cm,
            singularity_tolerance: DEFAULT_SINGULARITY_TOLERANCE,
        }
    }

    /// ε_Hb(λ2)·ε_HbO2(λ1) − ε_Hb(λ1)·ε_HbO2(λ2)
    pub fn determinant(&self) -> f64 {
        self.eps_hb_l2 * self.eps_hbo2_l1 - self.eps_hb_l1 * self.eps_hbo2_l2
    }

    pub fn validate(&self) -> Result<()> {
        let coefficients = [
            ("eps_hbo2_l1", self.eps_hbo2_l1),
            ("eps_hb_l1", self.eps_hb_l1),
            ("eps_hbo2_l2", self.eps_hbo2_l2),
            ("eps_hb_l2", self.eps_hb_l2),
        ];
        for (field, value) in coefficients {
            if !value.is_finite() {
                return Err(Error::Validation { field, reason: "non-finite" });
            }
            if value < 0.0 {
                return Err(Error::Validation { field, reason: "negative" });
            }
        }
        if !(self.path_length_cm.is_finite() && self.path_length_cm > 0.0) {
            return Err(Error::Validation { field: "path_length_cm", reason: "not positive" });
        }
        let det = self.determinant();
        if !(det.abs() > self.singularity_tolerance) {
            return Err(Error::Singular { det, tolerance: self.singularity_tolerance });
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys are the field names.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut eps = [None; 4];
        let mut path_length_cm = DEFAULT_PATH_LENGTH_CM;
        let mut singularity_tolerance = DEFAULT_SINGULARITY_TOLERANCE;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key=value", lineno + 1)))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad number {:?}", lineno + 1, value.trim())))?;
            match key.trim() {
                "eps_hbo2_l1" => eps[0] = Some(value),
                "eps_hb_l1" => eps[1] = Some(value),
                "eps_hbo2_l2" => eps[2] = Some(value),
                "eps_hb_l2" => eps[3] = Some(value),
                "path_length_cm" => path_length_cm = value,
                "singularity_tolerance" => singularity_tolerance = value,
                other => {
                    return Err(Error::Format(format!("line {}: unknown key {other:?}", lineno + 1)));
                }
            }
        }
        let names = ["eps_hbo2_l1", "eps_hb_l1", "eps_hbo2_l2", "eps_hb_l2"];
        let mut values = [0.0; 4];
        for (i, slot) in eps.iter().enumerate() {
            values[i] = slot.ok_or_else(|| Error::Format(format!("missing key {}", names[i])))?;
        }
        let table = Self {
            eps_hbo2_l1: values[0],
            eps_hb_l1: values[1],
            eps_hbo2_l2: values[2],
            eps_hb_l2: values[3],
            path_length_cm,
            singularity_tolerance,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "eps_hbo2_l1 = {}\neps_hb_l1 = {}\neps_hbo2_l2 = {}\neps_hb_l2 = {}\npath_length_cm = {}\nsingularity_tolerance = {}\n",
            self.eps_hbo2_l1,
            self.eps_hb_l1,
            self.eps_hbo2_l2,
            self.eps_hb_l2,
            self.path_length_cm,
            self.singularity_tolerance
        )
    }
}

impl Default for ExtinctionTable {
    /// Tabulated hemoglobin coefficients at 730/940 nm shipped in `data/`.
    fn default() -> Self {
        Self::from_kv_str(DEFAULT_TABLE_SOURCE).expect("bundled extinction table is valid")
    }
}

/// Optical-density and concentration changes at one NIR tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HemoSample {
    pub t: f64,
    pub dd_l1: f64,
    pub dd_l2: f64,
    /// mM
    pub d_chbo2: f64,
    /// mM
    pub d_chb: f64,
}

/// Cognitive state. Serialized as the integers 0, 1, 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Rest = 0,
    LowLoad = 1,
    HighLoad = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Rest, Label::LowLoad, Label::HighLoad];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, Self::Error> {
        match value {
            0 => Ok(Label::Rest),
            1 => Ok(Label::LowLoad),
            2 => Ok(Label::HighLoad),
            other => Err(format!("unknown label {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label as u8
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let code: u8 = s.trim().parse().map_err(|_| Error::Format(format!("bad label {s:?}")))?;
        Label::try_from(code).map_err(Error::Format)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub label: Label,
    pub duration_s: f64,
}

/// Ordered labelled segments making up one recording session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub segments: Vec<Segment>,
}

impl Default for SessionPlan {
    /// Rest 2 min, low load 5 min, rest 2 min, high load 5 min, rest 2 min.
    fn default() -> Self {
        let seg = |label, duration_s| Segment { label, duration_s };
        Self {
            segments: vec![
                seg(Label::Rest, 120.0),
                seg(Label::LowLoad, 300.0),
                seg(Label::Rest, 120.0),
                seg(Label::HighLoad, 300.0),
                seg(Label::Rest, 120.0),
            ],
        }
    }
}

impl SessionPlan {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let plan = Self { segments };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Parameter("session plan has no segments".into()));
        }
        for seg in &self.segments {
            if !(seg.duration_s.is_finite() && seg.duration_s > 0.0) {
                return Err(Error::Parameter(format!("segment duration {} must be > 0", seg.duration_s)));
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_s).sum()
    }

    /// `(start, end, label)` for each segment.
    pub fn bounds(&self) -> impl Iterator<Item = (f64, f64, Label)> + '_ {
        self.segments.iter().scan(0.0, |start, seg| {
            let begin = *start;
            *start += seg.duration_s;
            Some((begin, *start, seg.label))
        })
    }

    /// Label of the segment containing `t`. A boundary instant belongs to the
    /// segment that starts there.
    pub fn label_at(&self, t: f64) -> Result<Label> {
        label_at(self, t)
    }
}

pub fn label_at(plan: &SessionPlan, t: f64) -> Result<Label> {
    if !(t >= 0.0) {
        return Err(Error::Range(format!("t={t}")));
    }
    for (_, end, label) in plan.bounds() {
        if t < end {
            return Ok(label);
        }
    }
    Err(Error::Range(format!("t={t} (plan ends at {})", plan.total_duration())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_label(plan: &SessionPlan, t: f64) -> Option<Label> {
        // walk cumulative boundaries independently of `bounds()`
        let mut acc = Vec::new();
        let mut sum = 0.0;
        for s in &plan.segments {
            sum += s.duration_s;
            acc.push(sum);
        }
        let idx = acc.iter().filter(|&&end| end <= t).count();
        plan.segments.get(idx).map(|s| s.label)
    }

    #[test]
    fn default_plan_labels() {
        let plan = SessionPlan::default();
        assert_eq!(plan.total_duration(), 960.0);
        assert_eq!(label_at(&plan, 60.0).unwrap(), Label::Rest);
        assert_eq!(label_at(&plan, 120.0).unwrap(), Label::LowLoad);
        // 420..540 is the second rest segment
        assert_eq!(brute_force_label(&plan, 500.0), Some(Label::Rest));
        assert_eq!(label_at(&plan, 500.0).unwrap(), Label::Rest);
        assert_eq!(label_at(&plan, 600.0).unwrap(), Label::HighLoad);
        assert_eq!(label_at(&plan, 959.999).unwrap(), Label::Rest);
    }

    #[test]
    fn out_of_range() {
        let plan = SessionPlan::default();
        assert!(matches!(label_at(&plan, 960.0), Err(Error::Range(_))));
        assert!(matches!(label_at(&plan, -0.5), Err(Error::Range(_))));
        assert!(matches!(label_at(&plan, f64::NAN), Err(Error::Range(_))));
    }

    #[test]
    fn label_at_matches_brute_force_and_has_one_piece_per_segment() {
        let plan = SessionPlan::default();
        let mut pieces = 0;
        let mut prev = None;
        let mut t = 0.0;
        while t < plan.total_duration() {
            let got = label_at(&plan, t).unwrap();
            assert_eq!(Some(got), brute_force_label(&plan, t));
            // consecutive default segments alternate, so a label change marks a new piece
            if prev != Some(got) {
                pieces += 1;
            }
            prev = Some(got);
            t += 0.5;
        }
        assert_eq!(pieces, plan.segments.len());
    }

    #[test]
    fn frame_validation() {
        let mut f = SensorFrame::nir(0.0, 0.0, 0.0);
        assert!(validate_frame(f).is_ok());
        f.ir1 = -1.0;
        assert_eq!(validate_frame(f).unwrap_err().to_string(), "ir1 negative");
        let mut w = SensorFrame::white(1.0, 1.0, 1.0, 1.0);
        w.y = f64::NAN;
        assert_eq!(validate_frame(w).unwrap_err().to_string(), "y non-finite");
    }

    #[test]
    fn stream_requires_increasing_time() {
        let frames = [SensorFrame::nir(0.0, 1.0, 1.0), SensorFrame::nir(0.0, 1.0, 1.0)];
        assert!(validate_stream(&frames).is_err());
    }

    #[test]
    fn default_table_is_physically_ordered() {
        let table = ExtinctionTable::default();
        table.validate().unwrap();
        assert_eq!(table.path_length_cm, 0.75);
        assert!(table.eps_hb_l1 > table.eps_hbo2_l1);
        assert!(table.eps_hbo2_l2 > table.eps_hb_l2);
    }

    #[test]
    fn table_kv_round_trip() {
        let table = ExtinctionTable::new(0.3, 1.2, 1.1, 0.7, 0.9);
        let parsed = ExtinctionTable::from_kv_str(&table.to_kv_string()).unwrap();
        assert_eq!(table, parsed);
    }

    #[test]
    fn table_parse_errors() {
        assert!(ExtinctionTable::from_kv_str("eps_hbo2_l1 = 1\n").is_err());
        assert!(ExtinctionTable::from_kv_str("bogus = 1\n").is_err());
        let singular = "eps_hbo2_l1=1\neps_hb_l1=1\neps_hbo2_l2=1\neps_hb_l2=1\n";
        assert!(matches!(ExtinctionTable::from_kv_str(singular), Err(Error::Singular { .. })));
    }

    #[test]
    fn labels_serialize_as_integers() {
        assert_eq!(serde_json::to_string(&Label::HighLoad).unwrap(), "2");
        let l: Label = serde_json::from_str("1").unwrap();
        assert_eq!(l, Label::LowLoad);
        assert!(serde_json::from_str::<Label>("3").is_err());
    }
}
