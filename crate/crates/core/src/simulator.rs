//! Synthetic sensor sessions with known hemodynamic ground truth.
//!
//! Each 1 s LED cycle lights the white LED for one reading, then the NIR LEDs
//! for seven readings. Concentration changes follow a first-order lag toward
//! the active segment's target. Intensities come from the forward
//! Beer-Lambert model, scaled by a slow multiplicative drift plus Gaussian
//! read noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::beer_lambert::{forward_density, intensity_for_density, LogBase};
use crate::domain::{ExtinctionTable, HemoSample, Label, SensorFrame, SessionPlan};
use crate::error::{Error, Result};

/// Delay between switching a source on and reading the sensor.
pub const SETTLE_S: f64 = 0.1;
pub const NIR_READS_PER_CYCLE: usize = 7;
pub const CYCLE_S: f64 = 1.0;

/// Timestamp of the white reading in cycle `c`. The white LED switches on
/// one settle delay before the cycle starts, after the previous cycle's last
/// NIR read.
pub fn white_time(cycle: usize) -> f64 {
    cycle as f64 * CYCLE_S
}

/// Timestamp of NIR reading `k` in cycle `c`: the NIR LEDs switch on at the
/// cycle start, settle, and the seven reads share the rest of the cycle.
pub fn nir_time(cycle: usize, k: usize) -> f64 {
    cycle as f64 * CYCLE_S + SETTLE_S + k as f64 * (CYCLE_S - SETTLE_S) / NIR_READS_PER_CYCLE as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineIntensity {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub ir1: f64,
    pub ir2: f64,
}

impl Default for BaselineIntensity {
    fn default() -> Self {
        Self { x: 42_000.0, y: 48_000.0, z: 36_000.0, ir1: 30_000.0, ir2: 30_000.0 }
    }
}

/// Concentration change (mM) a state settles to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HemoTarget {
    pub d_chbo2: f64,
    pub d_chb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateTargets {
    pub rest: HemoTarget,
    pub low_load: HemoTarget,
    pub high_load: HemoTarget,
}

impl Default for StateTargets {
    /// HbO2 rises and Hb falls with load. Magnitudes are synthetic.
    fn default() -> Self {
        Self {
            rest: HemoTarget { d_chbo2: 0.0, d_chb: 0.0 },
            low_load: HemoTarget { d_chbo2: 0.010, d_chb: -0.004 },
            high_load: HemoTarget { d_chbo2: 0.025, d_chb: -0.010 },
        }
    }
}

impl StateTargets {
    pub fn for_label(&self, label: Label) -> HemoTarget {
        match label {
            Label::Rest => self.rest,
            Label::LowLoad => self.low_load,
            Label::HighLoad => self.high_load,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftMode {
    #[default]
    None,
    Linear,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    pub mode: DriftMode,
    /// Fractional intensity loss after one hour.
    pub magnitude_per_hour: f64,
    /// `false` gives each channel its own drift rate, which the Y-referenced
    /// correction cannot fully remove.
    pub channel_common: bool,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self { mode: DriftMode::None, magnitude_per_hour: 0.05, channel_common: true }
    }
}

/// Per-channel rate multipliers (x, y, z, ir1, ir2) when drift is not common.
const INDEPENDENT_DRIFT_RATES: [f64; 5] = [1.0, 1.0, 1.0, 0.4, 1.7];

impl DriftConfig {
    /// Multiplicative drift at time `t`; 1 at `t = 0`.
    pub fn factor(&self, t: f64) -> f64 {
        self.factor_scaled(t, 1.0)
    }

    fn factor_scaled(&self, t: f64, rate: f64) -> f64 {
        let hours = t / 3600.0;
        let m = self.magnitude_per_hour * rate;
        match self.mode {
            DriftMode::None => 1.0,
            DriftMode::Linear => 1.0 - m * hours,
            DriftMode::Exponential => ((1.0 - m).ln() * hours).exp(),
        }
    }

    fn channel_factors(&self, t: f64) -> [f64; 5] {
        if self.channel_common {
            [self.factor(t); 5]
        } else {
            INDEPENDENT_DRIFT_RATES.map(|r| self.factor_scaled(t, r))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub plan: SessionPlan,
    pub table: ExtinctionTable,
    pub baseline: BaselineIntensity,
    pub state_targets: StateTargets,
    pub transition_tau_s: f64,
    pub drift: DriftConfig,
    /// Standard deviation of additive read noise, in counts.
    pub noise_sigma: f64,
    pub log_base: LogBase,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            plan: SessionPlan::default(),
            table: ExtinctionTable::default(),
            baseline: BaselineIntensity::default(),
            state_targets: StateTargets::default(),
            transition_tau_s: 20.0,
            drift: DriftConfig::default(),
            noise_sigma: 0.0,
            log_base: LogBase::Decadic,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.plan.validate()?;
        self.table.validate()?;
        let b = &self.baseline;
        if [b.x, b.y, b.z, b.ir1, b.ir2].iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Parameter("baseline intensities must be > 0".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::Parameter("noise_sigma must be >= 0".into()));
        }
        if !(self.transition_tau_s.is_finite() && self.transition_tau_s > 0.0) {
            return Err(Error::Parameter("transition_tau_s must be > 0".into()));
        }
        let m = self.drift.magnitude_per_hour;
        if !(m.is_finite() && (0.0..1.0).contains(&m)) {
            return Err(Error::Parameter("drift magnitude_per_hour must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Number of complete LED cycles in the plan.
    pub fn cycles(&self) -> usize {
        (self.plan.total_duration() / CYCLE_S).floor() as usize
    }

    pub fn nir_times(&self) -> Vec<f64> {
        (0..self.cycles()).flat_map(|c| (0..NIR_READS_PER_CYCLE).map(move |k| nir_time(c, k))).collect()
    }
}

/// Ground-truth concentration and optical-density changes at every NIR read.
pub fn simulate_hemo(config: &SimConfig) -> Result<Vec<HemoSample>> {
    config.validate()?;
    let bounds: Vec<(f64, f64, Label)> = config.plan.bounds().collect();
    let target = |i: usize| config.state_targets.for_label(bounds[i].2);
    let tau = config.transition_tau_s;

    let start = target(0);
    let mut state = (start.d_chbo2, start.d_chb);
    let mut now = 0.0;
    let mut seg = 0;
    let mut out = Vec::new();
    for t in config.nir_times() {
        // integrate the lag exactly, piecewise across segment boundaries
        while now < t {
            while bounds[seg].1 <= now {
                seg += 1;
            }
            let until = t.min(bounds[seg].1);
            let decay = (-(until - now) / tau).exp();
            let goal = target(seg);
            state.0 = goal.d_chbo2 + (state.0 - goal.d_chbo2) * decay;
            state.1 = goal.d_chb + (state.1 - goal.d_chb) * decay;
            now = until;
        }
        let (dd_l1, dd_l2) = forward_density(state.0, state.1, &config.table)?;
        out.push(HemoSample { t, dd_l1, dd_l2, d_chbo2: state.0, d_chb: state.1 });
    }
    Ok(out)
}

/// Raw frames for a simulated session: per cycle one white frame, then one
/// NIR frame per ground-truth sample.
pub fn emit_frames(config: &SimConfig, hemo: &[HemoSample]) -> Result<Vec<SensorFrame>> {
    config.validate()?;
    let cycles = config.cycles();
    if hemo.len() != cycles * NIR_READS_PER_CYCLE {
        return Err(Error::Parameter(format!(
            "expected {} hemo samples for {cycles} cycles, got {}",
            cycles * NIR_READS_PER_CYCLE,
            hemo.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut read = |clean: f64| (clean + noise.sample(&mut rng)).max(0.0);
    let b = &config.baseline;

    let mut frames = Vec::with_capacity(cycles * (NIR_READS_PER_CYCLE + 1));
    for (c, samples) in hemo.chunks(NIR_READS_PER_CYCLE).enumerate() {
        let t = white_time(c);
        let [fx, fy, fz, _, _] = config.drift.channel_factors(t);
        let x = read(b.x * fx);
        let y = read(b.y * fy);
        let z = read(b.z * fz);
        frames.push(SensorFrame::white(t, x, y, z));
        for s in samples {
            let [.., f1, f2] = config.drift.channel_factors(s.t);
            let ir1 = read(intensity_for_density(b.ir1 * f1, s.dd_l1, config.log_base));
            let ir2 = read(intensity_for_density(b.ir2 * f2, s.dd_l2, config.log_base));
            frames.push(SensorFrame::nir(s.t, ir1, ir2));
        }
    }
    Ok(frames)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub hemo: Vec<HemoSample>,
    pub frames: Vec<SensorFrame>,
}

pub fn simulate(config: &SimConfig) -> Result<Simulation> {
    let hemo = simulate_hemo(config)?;
    let frames = emit_frames(config, &hemo)?;
    Ok(Simulation { hemo, frames })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{validate_frame, validate_stream, Led, Segment};

    fn rest_only(seconds: f64) -> SimConfig {
        SimConfig {
            plan: SessionPlan::new(vec![Segment { label: Label::Rest, duration_s: seconds }]).unwrap(),
            ..Default::default()
        }
    }

    #[test]
    fn timing_is_strictly_increasing() {
        let mut times = Vec::new();
        for c in 0..3 {
            times.push(white_time(c));
            times.extend((0..7).map(|k| nir_time(c, k)));
        }
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(white_time(0), 0.0);
        assert_eq!(nir_time(0, 0), 0.1);
        // the next white LED needs its own settle after the last NIR read
        assert!(nir_time(0, 6) + SETTLE_S <= white_time(1));
    }

    #[test]
    fn rest_only_is_flat() {
        let cfg = rest_only(30.0);
        let sim = simulate(&cfg).unwrap();
        assert!(sim.hemo.iter().all(|h| h.d_chbo2 == 0.0 && h.d_chb == 0.0 && h.dd_l1 == 0.0 && h.dd_l2 == 0.0));
        assert!(sim
            .frames
            .iter()
            .filter(|f| f.led == Led::Nir)
            .all(|f| f.ir1 == cfg.baseline.ir1 && f.ir2 == cfg.baseline.ir2));
    }

    #[test]
    fn lag_settles_within_one_percent_after_five_tau() {
        let cfg = SimConfig {
            plan: SessionPlan::new(vec![
                Segment { label: Label::Rest, duration_s: 10.0 },
                Segment { label: Label::HighLoad, duration_s: 200.0 },
            ])
            .unwrap(),
            ..Default::default()
        };
        let hemo = simulate_hemo(&cfg).unwrap();
        let goal = cfg.state_targets.high_load;
        let after = hemo.iter().find(|h| h.t >= 10.0 + 5.0 * cfg.transition_tau_s).unwrap();
        assert!((after.d_chbo2 - goal.d_chbo2).abs() <= 0.01 * goal.d_chbo2.abs());
        assert!((after.d_chb - goal.d_chb).abs() <= 0.01 * goal.d_chb.abs());
    }

    /// Forward-Euler integration of dC/dt = (target − C)/τ on a fine grid.
    fn euler_oracle(cfg: &SimConfig, t: f64) -> f64 {
        let dt = 1e-3;
        let mut c = 0.0;
        let mut now = 0.0;
        while now + dt <= t + 1e-12 {
            let goal = cfg.state_targets.for_label(cfg.plan.label_at(now).unwrap()).d_chbo2;
            c += dt * (goal - c) / cfg.transition_tau_s;
            now += dt;
        }
        c
    }

    #[test]
    fn segment_means_are_ordered_and_match_ode() {
        let cfg = SimConfig::default();
        let hemo = simulate_hemo(&cfg).unwrap();
        for h in hemo.iter().step_by(700) {
            assert!((h.d_chbo2 - euler_oracle(&cfg, h.t)).abs() < 5e-5, "t={}", h.t);
        }
        let mean_in = |label: Label| {
            let mut sum = 0.0;
            let mut n = 0;
            for (start, end, l) in cfg.plan.bounds() {
                if l != label {
                    continue;
                }
                for h in hemo.iter().filter(|h| h.t >= start + cfg.transition_tau_s && h.t < end) {
                    sum += h.d_chbo2;
                    n += 1;
                }
            }
            sum / n as f64
        };
        let (rest, low, high) = (mean_in(Label::Rest), mean_in(Label::LowLoad), mean_in(Label::HighLoad));
        assert!(high > low && low > rest, "{rest} {low} {high}");
    }

    #[test]
    fn frame_counts_for_default_plan() {
        let sim = simulate(&SimConfig { noise_sigma: 50.0, seed: 3, ..Default::default() }).unwrap();
        assert_eq!(sim.frames.iter().filter(|f| f.led == Led::White).count(), 960);
        assert_eq!(sim.frames.iter().filter(|f| f.led == Led::Nir).count(), 6720);
        validate_stream(&sim.frames).unwrap();
    }

    #[test]
    fn drift_factor_starts_at_one() {
        for mode in [DriftMode::None, DriftMode::Linear, DriftMode::Exponential] {
            let d = DriftConfig { mode, ..Default::default() };
            assert_eq!(d.factor(0.0), 1.0);
        }
        let lin = DriftConfig { mode: DriftMode::Linear, ..Default::default() };
        let exp = DriftConfig { mode: DriftMode::Exponential, ..Default::default() };
        assert!((lin.factor(3600.0) - 0.95).abs() < 1e-12);
        assert!((exp.factor(3600.0) - 0.95).abs() < 1e-12);
    }

    #[test]
    fn common_drift_gives_identical_relative_decay() {
        let cfg = SimConfig { drift: DriftConfig { mode: DriftMode::Linear, ..Default::default() }, ..rest_only(60.0) };
        let sim = simulate(&cfg).unwrap();
        for f in &sim.frames {
            let expect = cfg.drift.factor(f.t);
            match f.led {
                Led::White => assert!((f.y / cfg.baseline.y - expect).abs() < 1e-12),
                Led::Nir => assert!((f.ir1 / cfg.baseline.ir1 - expect).abs() < 1e-12),
            }
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let cfg = SimConfig { noise_sigma: 300.0, seed: 99, ..rest_only(20.0) };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate(&SimConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn heavy_noise_never_yields_invalid_frames() {
        let cfg = SimConfig { noise_sigma: 40_000.0, seed: 5, ..rest_only(10.0) };
        for f in simulate(&cfg).unwrap().frames {
            validate_frame(f).unwrap();
        }
    }

    #[test]
    fn config_validation() {
        let bad = SimConfig { noise_sigma: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SimConfig { transition_tau_s: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let json = r#"{"noise_sigma": 12.5, "drift": {"mode": "linear"}}"#;
        let cfg: SimConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.noise_sigma, 12.5);
        assert_eq!(cfg.drift.mode, DriftMode::Linear);
        assert_eq!(cfg.drift.magnitude_per_hour, 0.05);
        assert_eq!(cfg.plan, SessionPlan::default());
    }
}
