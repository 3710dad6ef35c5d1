//! Synthetic ground truth and sensor generation: segment-based track
//! layouts (straights, arcs, clothoid transitions), piecewise velocity
//! profiles with stops, an IMU error model with bias, drift, noise and
//! running vibration, and GNSS with schedule-driven outages.
//!
//! Generation is a pure function of (spec, seed): identical inputs yield
//! bit-identical streams. Ground truth lives on the track by construction,
//! and its noise-free lateral channels satisfy the curvature couplings
//! `omega_z = v*kappa(d)` and `a_y = v^2*kappa(d)` against the generated
//! map identically, because generator and observation model share the
//! same look-up.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imu::{write_gnss_csv, write_imu_csv, GnssSample, ImuError, ImuSample};
use crate::records::{write_truth_csv, RecordError, TruthRecord};
use crate::seed::derive_seed;
use crate::track_map::{build_map, BuildOptions, MapError, TrackMap};

/// Finest integration step used when tracing segment geometry.
const TRACE_STEP: f64 = 0.25;
/// Speed above which the running-vibration term applies.
const VIBRATION_SPEED: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
    #[error("velocity profile mismatch: {0}")]
    ProfileMismatch(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Sensor(#[from] ImuError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario config: {0}")]
    Config(String),
}

/// Horizontal curve direction of an arc segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Turn {
    /// Counter-clockwise; positive curvature.
    Left,
    /// Clockwise; negative curvature.
    Right,
}

/// One track segment. Clothoids ramp curvature linearly between their
/// neighbors, which is how real track transitions avoid curvature steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Segment {
    Straight {
        length: f64,
        #[serde(default)]
        grade: f64,
    },
    Arc {
        length: f64,
        radius: f64,
        direction: Turn,
        #[serde(default)]
        grade: f64,
    },
    Clothoid {
        length: f64,
        #[serde(default)]
        grade: f64,
    },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length, .. }
            | Segment::Arc { length, .. }
            | Segment::Clothoid { length, .. } => length,
        }
    }

    fn grade(&self) -> f64 {
        match *self {
            Segment::Straight { grade, .. }
            | Segment::Arc { grade, .. }
            | Segment::Clothoid { grade, .. } => grade,
        }
    }

    /// Constant curvature of a non-transition segment.
    fn base_curvature(&self) -> Option<f64> {
        match *self {
            Segment::Straight { .. } => Some(0.0),
            Segment::Arc {
                radius, direction, ..
            } => Some(match direction {
                Turn::Left => 1.0 / radius,
                Turn::Right => -1.0 / radius,
            }),
            Segment::Clothoid { .. } => None,
        }
    }
}

/// Track layout: point spacing plus the ordered segment chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackSpec {
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    pub segments: Vec<Segment>,
}

fn default_spacing() -> f64 {
    5.0
}

impl TrackSpec {
    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length()).sum()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.spacing <= 0.0 {
            return Err(ScenarioError::InvalidSpec("track.spacing must be > 0".into()));
        }
        if self.segments.is_empty() {
            return Err(ScenarioError::InvalidSpec(
                "track.segments must not be empty".into(),
            ));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.length() <= 0.0 {
                return Err(ScenarioError::InvalidSpec(format!(
                    "track.segments[{i}].length must be > 0"
                )));
            }
            if let Segment::Arc { radius, .. } = seg {
                if *radius <= 0.0 {
                    return Err(ScenarioError::InvalidSpec(format!(
                        "track.segments[{i}].radius must be > 0"
                    )));
                }
            }
            if matches!(seg, Segment::Clothoid { .. }) {
                let prev_is_clothoid =
                    i > 0 && matches!(self.segments[i - 1], Segment::Clothoid { .. });
                if prev_is_clothoid {
                    return Err(ScenarioError::InvalidSpec(format!(
                        "track.segments[{i}]: consecutive clothoid transitions"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Curvature at the start and end of segment `i`, resolving clothoid
    /// transitions from their neighbors.
    fn curvature_span(&self, i: usize) -> (f64, f64) {
        match self.segments[i].base_curvature() {
            Some(k) => (k, k),
            None => {
                let before = (0..i)
                    .rev()
                    .find_map(|j| self.segments[j].base_curvature())
                    .unwrap_or(0.0);
                let after = (i + 1..self.segments.len())
                    .find_map(|j| self.segments[j].base_curvature())
                    .unwrap_or(0.0);
                (before, after)
            }
        }
    }
}

/// One motion phase of a velocity profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Phase {
    Stop { duration: f64 },
    Accelerate { accel: f64, target_v: f64 },
    Cruise { v: f64, distance: f64 },
    Brake { decel: f64, target_v: f64 },
}

/// Piecewise velocity profile; phases chain so that speeds are continuous.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VelocityProfile {
    pub phases: Vec<Phase>,
}

/// Resolved constant-acceleration piece of a profile.
#[derive(Debug, Clone, Copy)]
struct PhaseRun {
    t0: f64,
    d0: f64,
    v0: f64,
    a: f64,
    duration: f64,
}

impl VelocityProfile {
    /// Resolves the phase chain into absolute (time, distance, speed)
    /// pieces, validating continuity.
    fn resolve(&self) -> Result<Vec<PhaseRun>, ScenarioError> {
        if self.phases.is_empty() {
            return Err(ScenarioError::ProfileMismatch("empty profile".into()));
        }
        let mut runs = Vec::with_capacity(self.phases.len());
        let (mut t, mut d, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for (i, phase) in self.phases.iter().enumerate() {
            let (a, duration) = match *phase {
                Phase::Stop { duration } => {
                    if v.abs() > 1e-9 {
                        return Err(ScenarioError::ProfileMismatch(format!(
                            "profile.phases[{i}]: stop while moving at {v} m/s"
                        )));
                    }
                    if duration <= 0.0 {
                        return Err(ScenarioError::ProfileMismatch(format!(
                            "profile.phases[{i}]: stop duration must be > 0"
                        )));
                    }
                    (0.0, duration)
                }
                Phase::Accelerate { accel, target_v } => {
                    if accel <= 0.0 || target_v <= v {
                        return Err(ScenarioError::ProfileMismatch(format!(
                            "profile.phases[{i}]: accelerate needs accel > 0 and target_v > current {v}"
                        )));
                    }
                    (accel, (target_v - v) / accel)
                }
                Phase::Cruise { v: cruise_v, distance } => {
                    if (cruise_v - v).abs() > 1e-6 {
                        return Err(ScenarioError::ProfileMismatch(format!(
                            "profile.phases[{i}]: cruise at {cruise_v} but arriving at {v}"
                        )));
                    }
                    if cruise_v <= 0.0 || distance <= 0.0 {
                        return Err(ScenarioError::ProfileMismatch(format!(
                            "profile.phases[{i}]: cruise needs v > 0 and distance > 0"
                        )));
                    }
                    (0.0, distance / cruise_v)
                }
                Phase::Brake { decel, target_v } => {
                    if decel <= 0.0 || target_v >= v || target_v < 0.0 {
                        return Err(ScenarioError::ProfileMismatch(format!(
                            "profile.phases[{i}]: brake needs decel > 0 and 0 <= target_v < current {v}"
                        )));
                    }
                    (-decel, (v - target_v) / decel)
                }
            };
            runs.push(PhaseRun {
                t0: t,
                d0: d,
                v0: v,
                a,
                duration,
            });
            d += v * duration + 0.5 * a * duration * duration;
            v += a * duration;
            t += duration;
        }
        Ok(runs)
    }

    pub fn total_distance(&self) -> Result<f64, ScenarioError> {
        let runs = self.resolve()?;
        let last = runs.last().unwrap();
        Ok(last.d0 + last.v0 * last.duration + 0.5 * last.a * last.duration * last.duration)
    }

    pub fn total_duration(&self) -> Result<f64, ScenarioError> {
        let runs = self.resolve()?;
        let last = runs.last().unwrap();
        Ok(last.t0 + last.duration)
    }
}

/// Sensor error model and sampling rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorSpec {
    pub imu_rate: f64,
    pub gnss_rate: f64,
    /// Per-axis accelerometer noise (m/s^2, 1 sigma per sample).
    pub accel_sigma: [f64; 3],
    /// Per-axis gyro noise (rad/s).
    pub gyro_sigma: [f64; 3],
    /// Constant accelerometer bias at t = 0 (m/s^2).
    pub accel_bias: [f64; 3],
    /// Constant gyro bias at t = 0 (rad/s).
    pub gyro_bias: [f64; 3],
    /// Random-walk step of the modeled bias channels (a_x, a_y, omega_z).
    pub bias_drift: f64,
    /// Extra per-axis accelerometer noise while moving: track roughness
    /// and car-body vibration. This is what lets a variance detector tell
    /// smooth cruising from standing still.
    pub vibration_sigma: [f64; 3],
    pub gnss_sigma_px: f64,
    pub gnss_sigma_py: f64,
    pub gnss_sigma_v: f64,
    pub g: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        SensorSpec {
            imu_rate: 10.0,
            gnss_rate: 1.0,
            accel_sigma: [0.01, 0.01, 0.02],
            gyro_sigma: [2e-4, 2e-4, 2e-4],
            accel_bias: [0.02, 0.01, 0.0],
            gyro_bias: [0.0, 0.0, 2e-4],
            bias_drift: 5e-6,
            vibration_sigma: [0.05, 0.02, 0.25],
            gnss_sigma_px: 2.0,
            gnss_sigma_py: 2.0,
            gnss_sigma_v: 0.3,
            g: 9.81,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.imu_rate <= 0.0 || self.gnss_rate <= 0.0 {
            return Err(ScenarioError::InvalidSpec(
                "sensors: rates must be > 0".into(),
            ));
        }
        let all_sigmas = self
            .accel_sigma
            .iter()
            .chain(&self.gyro_sigma)
            .chain(&self.vibration_sigma)
            .chain([&self.bias_drift, &self.gnss_sigma_px, &self.gnss_sigma_py, &self.gnss_sigma_v]);
        for s in all_sigmas {
            if *s < 0.0 || !s.is_finite() {
                return Err(ScenarioError::InvalidSpec(
                    "sensors: sigmas must be >= 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A GNSS outage window; an open end means the signal never returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageWindow {
    pub start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
}

impl OutageWindow {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && self.end.is_none_or(|e| t < e)
    }
}

pub fn in_outage(outages: &[OutageWindow], t: f64) -> bool {
    outages.iter().any(|w| w.contains(t))
}

fn validate_outages(outages: &[OutageWindow]) -> Result<(), ScenarioError> {
    let mut sorted: Vec<_> = outages.to_vec();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
    for (i, w) in sorted.iter().enumerate() {
        if let Some(end) = w.end {
            if end <= w.start {
                return Err(ScenarioError::InvalidSpec(format!(
                    "outages[{i}]: end {end} not after start {}",
                    w.start
                )));
            }
        }
        if i + 1 < sorted.len() {
            let next = &sorted[i + 1];
            match w.end {
                None => {
                    return Err(ScenarioError::InvalidSpec(format!(
                        "outages[{i}]: indefinite window must be the last one"
                    )))
                }
                Some(end) if next.start < end => {
                    return Err(ScenarioError::InvalidSpec(format!(
                        "outages[{i}] and outages[{}] overlap",
                        i + 1
                    )))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

/// Complete description of one synthetic run, serializable as the bundle's
/// `scenario.toml`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    #[serde(default)]
    pub seed: u64,
    pub track: TrackSpec,
    pub profile: VelocityProfile,
    #[serde(default)]
    pub sensors: SensorSpec,
    #[serde(default)]
    pub outages: Vec<OutageWindow>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.track.validate()?;
        self.sensors.validate()?;
        validate_outages(&self.outages)?;
        self.profile.resolve().map(|_| ())
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let spec: ScenarioSpec =
            toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Config(e.to_string()))
    }
}

/// One ground-truth sample with everything the sensor models need.
#[derive(Debug, Clone, Copy)]
pub struct TruthState {
    pub t: f64,
    pub d: f64,
    pub v: f64,
    /// Average along-track acceleration over the step starting at `t`;
    /// summing `a * T` reproduces the speed sequence exactly.
    pub a: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub kappa: f64,
    pub pitch: f64,
    pub heading: f64,
}

impl TruthState {
    pub fn record(&self) -> TruthRecord {
        TruthRecord {
            t: self.t,
            d: self.d,
            v: self.v,
            p_x: self.p_x,
            p_y: self.p_y,
        }
    }
}

/// A generated scenario: map, ground truth, and sensor streams.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub map: TrackMap,
    pub truth: Vec<TruthState>,
    pub imu: Vec<ImuSample>,
    pub gnss: Vec<GnssSample>,
}

/// Traces the segment chain into a 3D polyline sampled every
/// `spec.spacing` meters of arc length, then builds the track map.
pub fn generate_track(spec: &TrackSpec, id: &str) -> Result<(Vec<(f64, f64, f64)>, TrackMap), ScenarioError> {
    spec.validate()?;
    let total = spec.total_length();
    let mut stations: Vec<f64> = Vec::new();
    let mut s = 0.0;
    while s < total - 1e-9 {
        stations.push(s);
        s += spec.spacing;
    }
    stations.push(total);

    // Piecewise curvature over global arc length.
    struct Piece {
        s0: f64,
        s1: f64,
        k0: f64,
        k1: f64,
        grade: f64,
    }
    let mut pieces = Vec::with_capacity(spec.segments.len());
    let mut acc = 0.0;
    for (i, seg) in spec.segments.iter().enumerate() {
        let (k0, k1) = spec.curvature_span(i);
        pieces.push(Piece {
            s0: acc,
            s1: acc + seg.length(),
            k0,
            k1,
            grade: seg.grade(),
        });
        acc += seg.length();
    }
    let curvature_at = |s: f64| -> f64 {
        let piece = pieces
            .iter()
            .find(|p| s < p.s1 + 1e-12)
            .unwrap_or(pieces.last().unwrap());
        let frac = ((s - piece.s0) / (piece.s1 - piece.s0)).clamp(0.0, 1.0);
        piece.k0 + (piece.k1 - piece.k0) * frac
    };
    let grade_at = |s: f64| -> f64 {
        pieces
            .iter()
            .find(|p| s < p.s1 + 1e-12)
            .unwrap_or(pieces.last().unwrap())
            .grade
    };

    // Midpoint integration of heading and position at a fine step.
    let mut polyline = Vec::with_capacity(stations.len());
    let (mut x, mut y, mut z) = (0.0f64, 0.0f64, 0.0f64);
    let mut heading = 0.0f64;
    let mut pos = 0.0f64;
    for &station in &stations {
        while pos < station - 1e-12 {
            let ds = (station - pos).min(TRACE_STEP);
            let k_mid = curvature_at(pos + 0.5 * ds);
            let h_mid = heading + 0.5 * k_mid * ds;
            x += ds * h_mid.cos();
            y += ds * h_mid.sin();
            z += ds * grade_at(pos + 0.5 * ds);
            heading += k_mid * ds;
            pos += ds;
        }
        polyline.push((x, y, z));
    }

    let map = build_map(id, &polyline, &BuildOptions::default())?;
    Ok((polyline, map))
}

/// Samples the velocity profile at the filter period `t_step` and places
/// the result on the map. Errors if the profile would run off the mapped
/// span.
pub fn generate_truth(
    map: &TrackMap,
    profile: &VelocityProfile,
    t_step: f64,
) -> Result<Vec<TruthState>, ScenarioError> {
    if t_step <= 0.0 {
        return Err(ScenarioError::InvalidSpec("t_step must be > 0".into()));
    }
    let runs = profile.resolve()?;
    let last = runs.last().unwrap();
    let duration = last.t0 + last.duration;
    let distance = profile.total_distance()?;
    if distance > map.total_length() + 1e-9 {
        return Err(ScenarioError::ProfileMismatch(format!(
            "profile covers {distance:.1} m but the map is only {:.1} m long",
            map.total_length()
        )));
    }

    let d_origin = map.d_first();
    let steps = (duration / t_step).floor() as usize;
    let state_at = |t: f64| -> (f64, f64) {
        let idx = runs
            .partition_point(|r| r.t0 <= t + 1e-12)
            .saturating_sub(1);
        let run = &runs[idx];
        let tau = (t - run.t0).clamp(0.0, run.duration);
        (
            run.d0 + run.v0 * tau + 0.5 * run.a * tau * tau,
            run.v0 + run.a * tau,
        )
    };

    let mut truth = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * t_step;
        let (d_rel, v) = state_at(t);
        let (d_next, v_next) = state_at(t + t_step);
        let _ = d_next;
        let d = d_origin + d_rel;
        let f = map.lookup(d.min(map.d_last()))?;
        truth.push(TruthState {
            t,
            d,
            v,
            a: (v_next - v) / t_step,
            p_x: f.p_x,
            p_y: f.p_y,
            kappa: f.kappa,
            pitch: f.theta_y,
            heading: f.theta_z,
        });
    }
    // Last step holds: no lookahead past the end.
    if let Some(last) = truth.last_mut() {
        last.a = 0.0;
    }
    Ok(truth)
}

/// Synthesizes the IMU and GNSS streams for a truth sequence.
///
/// Raw accelerometer = motion acceleration in the sensor frame plus the
/// gravity reaction rotated by the track orientation, plus bias, drift,
/// noise, and (while moving) vibration. Raw gyro = yaw rate `v*kappa`
/// plus bias and noise. GNSS = truth plus noise, suppressed inside
/// outage windows.
pub fn synthesize_sensors(
    truth: &[TruthState],
    sensors: &SensorSpec,
    outages: &[OutageWindow],
    seed: u64,
) -> Result<(Vec<ImuSample>, Vec<GnssSample>), ScenarioError> {
    sensors.validate()?;
    validate_outages(outages)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut draw = |sigma: f64| -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).unwrap().sample(&mut rng)
        } else {
            0.0
        }
    };

    let mut bias_ax = sensors.accel_bias[0];
    let mut bias_ay = sensors.accel_bias[1];
    let bias_az = sensors.accel_bias[2];
    let mut bias_wz = sensors.gyro_bias[2];

    let mut imu = Vec::with_capacity(truth.len());
    for s in truth {
        let orientation = crate::geometry::Orientation::new(0.0, s.pitch, s.heading);
        let gravity = orientation.apply_inverse(&Vector3::new(0.0, 0.0, sensors.g));
        let motion = Vector3::new(s.a, s.v * s.v * s.kappa, 0.0);
        let moving = s.v.abs() >= VIBRATION_SPEED;
        let mut accel = motion + gravity + Vector3::new(bias_ax, bias_ay, bias_az);
        let mut gyro = Vector3::new(
            sensors.gyro_bias[0],
            sensors.gyro_bias[1],
            s.v * s.kappa + bias_wz,
        );
        for axis in 0..3 {
            accel[axis] += draw(sensors.accel_sigma[axis]);
            let vib = draw(sensors.vibration_sigma[axis]);
            if moving {
                accel[axis] += vib;
            }
            gyro[axis] += draw(sensors.gyro_sigma[axis]);
        }
        bias_ax += draw(sensors.bias_drift);
        bias_ay += draw(sensors.bias_drift);
        bias_wz += draw(sensors.bias_drift);
        imu.push(ImuSample {
            t: s.t,
            accel,
            gyro,
        });
    }

    let mut gnss = Vec::new();
    if let (Some(first), Some(last)) = (truth.first(), truth.last()) {
        let period = 1.0 / sensors.gnss_rate;
        let imu_step = 1.0 / sensors.imu_rate;
        let mut k = 0usize;
        loop {
            let t = first.t + k as f64 * period;
            if t > last.t + 1e-9 {
                break;
            }
            k += 1;
            if in_outage(outages, t) {
                continue;
            }
            let idx = ((t - first.t) / imu_step).round() as usize;
            let Some(s) = truth.get(idx) else { continue };
            gnss.push(GnssSample {
                t,
                p_x: s.p_x + draw(sensors.gnss_sigma_px),
                p_y: s.p_y + draw(sensors.gnss_sigma_py),
                v: s.v + draw(sensors.gnss_sigma_v),
                sigma_px: sensors.gnss_sigma_px,
                sigma_py: sensors.gnss_sigma_py,
                sigma_v: sensors.gnss_sigma_v,
            });
        }
    }
    Ok((imu, gnss))
}

/// Generates the full scenario for a spec. A nonzero `seed_override`
/// argument replaces the seed recorded in the spec.
pub fn generate(spec: &ScenarioSpec, seed_override: Option<u64>) -> Result<Scenario, ScenarioError> {
    let mut spec = spec.clone();
    if let Some(seed) = seed_override {
        spec.seed = seed;
    }
    spec.validate()?;
    let (_, map) = generate_track(&spec.track, &spec.id)?;
    let truth = generate_truth(&map, &spec.profile, 1.0 / spec.sensors.imu_rate)?;
    let (imu, gnss) = synthesize_sensors(
        &truth,
        &spec.sensors,
        &spec.outages,
        derive_seed(spec.seed, "scenario.sensors"),
    )?;
    Ok(Scenario {
        spec,
        map,
        truth,
        imu,
        gnss,
    })
}

impl Scenario {
    /// Writes the bundle directory: `scenario.toml`, `map.csv`,
    /// `imu.csv`, `gnss.csv`, `truth.csv`.
    pub fn write_bundle<P: AsRef<Path>>(&self, dir: P) -> Result<(), ScenarioError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut toml_file = std::fs::File::create(dir.join("scenario.toml"))?;
        toml_file.write_all(self.spec.to_toml()?.as_bytes())?;
        self.map.write_csv_file(dir.join("map.csv"))?;
        write_imu_csv(std::fs::File::create(dir.join("imu.csv"))?, &self.imu)?;
        write_gnss_csv(std::fs::File::create(dir.join("gnss.csv"))?, &self.gnss)?;
        let records: Vec<TruthRecord> = self.truth.iter().map(|s| s.record()).collect();
        write_truth_csv(std::fs::File::create(dir.join("truth.csv"))?, &records)?;
        Ok(())
    }
}

/// The named experiment presets:
///
/// * `mixed-outages`: a curvy route with intermittent outages, the
///   longest 35 s, and stops for bias estimation.
/// * `straight-indefinite`: a long straight after the GNSS cut at 50 s,
///   followed by a pronounced curve.
/// * `curvy-indefinite`: turns separated by short straights, GNSS cut at
///   50 s.
pub fn preset_names() -> &'static [&'static str] {
    &["mixed-outages", "straight-indefinite", "curvy-indefinite"]
}

/// Builds a preset spec by name.
pub fn preset(name: &str) -> Option<ScenarioSpec> {
    match name {
        "mixed-outages" => Some(mixed_outages()),
        "straight-indefinite" => Some(straight_indefinite()),
        "curvy-indefinite" => Some(curvy_indefinite()),
        _ => None,
    }
}

/// All presets, paired with their names.
pub fn preset_scenarios() -> Vec<ScenarioSpec> {
    preset_names().iter().map(|n| preset(n).unwrap()).collect()
}

fn curvy_track() -> TrackSpec {
    use Segment::*;
    TrackSpec {
        spacing: 5.0,
        segments: vec![
            Straight { length: 250.0, grade: 0.0 },
            Clothoid { length: 50.0, grade: 0.0 },
            Arc { length: 300.0, radius: 400.0, direction: Turn::Left, grade: 0.0 },
            Clothoid { length: 50.0, grade: 0.0 },
            Straight { length: 150.0, grade: 0.002 },
            Clothoid { length: 50.0, grade: 0.002 },
            Arc { length: 350.0, radius: 500.0, direction: Turn::Right, grade: 0.002 },
            Clothoid { length: 50.0, grade: 0.0 },
            Straight { length: 150.0, grade: 0.0 },
            Clothoid { length: 50.0, grade: 0.0 },
            Arc { length: 300.0, radius: 350.0, direction: Turn::Left, grade: -0.002 },
            Clothoid { length: 50.0, grade: 0.0 },
            Straight { length: 120.0, grade: 0.0 },
            Clothoid { length: 50.0, grade: 0.0 },
            Arc { length: 300.0, radius: 600.0, direction: Turn::Right, grade: 0.0 },
            Clothoid { length: 50.0, grade: 0.0 },
            Straight { length: 250.0, grade: 0.0 },
        ],
    }
}

fn curvy_indefinite() -> ScenarioSpec {
    ScenarioSpec {
        id: "curvy-indefinite".to_string(),
        seed: 0,
        track: curvy_track(),
        profile: VelocityProfile {
            phases: vec![
                Phase::Stop { duration: 12.0 },
                Phase::Accelerate { accel: 0.4, target_v: 12.0 },
                Phase::Cruise { v: 12.0, distance: 1000.0 },
                Phase::Brake { decel: 0.5, target_v: 0.0 },
                Phase::Stop { duration: 10.0 },
                Phase::Accelerate { accel: 0.4, target_v: 10.0 },
                Phase::Cruise { v: 10.0, distance: 800.0 },
                Phase::Brake { decel: 0.5, target_v: 0.0 },
                Phase::Stop { duration: 5.0 },
            ],
        },
        sensors: SensorSpec::default(),
        outages: vec![OutageWindow {
            start: 50.0,
            end: None,
        }],
    }
}

fn straight_indefinite() -> ScenarioSpec {
    use Segment::*;
    ScenarioSpec {
        id: "straight-indefinite".to_string(),
        seed: 0,
        track: TrackSpec {
            spacing: 5.0,
            segments: vec![
                Straight { length: 900.0, grade: 0.0 },
                Clothoid { length: 60.0, grade: 0.0 },
                Arc { length: 350.0, radius: 500.0, direction: Turn::Right, grade: 0.0 },
                Clothoid { length: 60.0, grade: 0.0 },
                Straight { length: 500.0, grade: 0.0 },
                Clothoid { length: 60.0, grade: 0.0 },
                Arc { length: 300.0, radius: 600.0, direction: Turn::Left, grade: 0.0 },
                Clothoid { length: 60.0, grade: 0.0 },
                Straight { length: 400.0, grade: 0.0 },
            ],
        },
        profile: VelocityProfile {
            phases: vec![
                Phase::Stop { duration: 15.0 },
                Phase::Accelerate { accel: 0.4, target_v: 15.0 },
                Phase::Cruise { v: 15.0, distance: 1900.0 },
                Phase::Brake { decel: 0.5, target_v: 0.0 },
                Phase::Stop { duration: 10.0 },
            ],
        },
        sensors: SensorSpec::default(),
        outages: vec![OutageWindow {
            start: 50.0,
            end: None,
        }],
    }
}

fn mixed_outages() -> ScenarioSpec {
    ScenarioSpec {
        id: "mixed-outages".to_string(),
        seed: 0,
        track: curvy_track(),
        profile: VelocityProfile {
            phases: vec![
                Phase::Stop { duration: 12.0 },
                Phase::Accelerate { accel: 0.4, target_v: 14.0 },
                Phase::Cruise { v: 14.0, distance: 900.0 },
                Phase::Brake { decel: 0.5, target_v: 0.0 },
                Phase::Stop { duration: 12.0 },
                Phase::Accelerate { accel: 0.4, target_v: 12.0 },
                Phase::Cruise { v: 12.0, distance: 900.0 },
                Phase::Brake { decel: 0.5, target_v: 0.0 },
                Phase::Stop { duration: 8.0 },
            ],
        },
        sensors: SensorSpec::default(),
        outages: vec![
            OutageWindow { start: 45.0, end: Some(55.0) },
            OutageWindow { start: 80.0, end: Some(100.0) },
            OutageWindow { start: 150.0, end: Some(185.0) },
        ],
    }
}

/// Times at which ground truth sits on a curve of at least `kappa_min`.
pub fn curve_intervals(truth: &[TruthState], kappa_min: f64) -> Vec<(f64, f64)> {
    let mut intervals = Vec::new();
    let mut open: Option<f64> = None;
    for s in truth {
        let on_curve = s.kappa.abs() >= kappa_min;
        match (on_curve, open) {
            (true, None) => open = Some(s.t),
            (false, Some(start)) => {
                intervals.push((start, s.t));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        intervals.push((start, truth.last().unwrap().t));
    }
    intervals
}

/// Fraction of the mapped arc length whose curvature magnitude is at
/// least `kappa_min`.
pub fn curvy_fraction(map: &TrackMap, kappa_min: f64) -> f64 {
    let mut curvy = 0.0;
    let mut total = 0.0;
    for w in map.points().windows(2) {
        let step = w[1].d - w[0].d;
        let kappa = 0.5 * (w[0].features.kappa.abs() + w[1].features.kappa.abs());
        total += step;
        if kappa >= kappa_min {
            curvy += step;
        }
    }
    if total > 0.0 {
        curvy / total
    } else {
        0.0
    }
}

/// Summary of the outage schedule keyed by start time (useful for
/// reporting and tests).
pub fn outage_lengths(outages: &[OutageWindow]) -> BTreeMap<u64, Option<f64>> {
    outages
        .iter()
        .map(|w| ((w.start * 1000.0) as u64, w.end.map(|e| e - w.start)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flat_straight_spec(length: f64) -> TrackSpec {
        TrackSpec {
            spacing: 5.0,
            segments: vec![Segment::Straight {
                length,
                grade: 0.0,
            }],
        }
    }

    #[test]
    fn straight_track_has_zero_curvature() {
        let (_, map) = generate_track(&flat_straight_spec(1000.0), "s").unwrap();
        for p in map.points() {
            assert_abs_diff_eq!(p.features.kappa, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn arc_track_matches_design_curvature() {
        let spec = TrackSpec {
            spacing: 5.0,
            segments: vec![
                Segment::Straight { length: 200.0, grade: 0.0 },
                Segment::Arc { length: 300.0, radius: 500.0, direction: Turn::Left, grade: 0.0 },
                Segment::Straight { length: 200.0, grade: 0.0 },
            ],
        };
        let (_, map) = generate_track(&spec, "saz").unwrap();
        // Interior of the arc (excluding the joins): |kappa| = 1/500
        // within 2%.
        for p in map.points() {
            if p.d > 240.0 && p.d < 460.0 {
                assert!(
                    (p.features.kappa - 0.002).abs() < 0.002 * 0.02,
                    "kappa {} at d {}",
                    p.features.kappa,
                    p.d
                );
            }
        }
    }

    #[test]
    fn s_curve_flips_sign_once() {
        let spec = TrackSpec {
            spacing: 5.0,
            segments: vec![
                Segment::Arc { length: 250.0, radius: 400.0, direction: Turn::Left, grade: 0.0 },
                Segment::Clothoid { length: 60.0, grade: 0.0 },
                Segment::Arc { length: 250.0, radius: 400.0, direction: Turn::Right, grade: 0.0 },
            ],
        };
        let (_, map) = generate_track(&spec, "s-curve").unwrap();
        let signs: Vec<f64> = map
            .points()
            .iter()
            .filter(|p| p.features.kappa.abs() > 1e-4)
            .map(|p| p.features.kappa.signum())
            .collect();
        let flips = signs.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(flips, 1, "expected exactly one sign change");
    }

    #[test]
    fn invalid_specs_rejected() {
        let negative_radius = TrackSpec {
            spacing: 5.0,
            segments: vec![Segment::Arc {
                length: 100.0,
                radius: -500.0,
                direction: Turn::Left,
                grade: 0.0,
            }],
        };
        match generate_track(&negative_radius, "bad") {
            Err(ScenarioError::InvalidSpec(msg)) => {
                assert!(msg.contains("segments[0].radius"), "{msg}")
            }
            other => panic!("expected InvalidSpec, got {other:?}"),
        }
    }

    fn constant_profile(v: f64, distance: f64) -> VelocityProfile {
        VelocityProfile {
            phases: vec![
                Phase::Accelerate { accel: 1000.0, target_v: v },
                Phase::Cruise { v, distance },
            ],
        }
    }

    #[test]
    fn truth_constant_speed_advances_exactly() {
        let (_, map) = generate_track(&flat_straight_spec(1200.0), "s").unwrap();
        let profile = VelocityProfile {
            phases: vec![Phase::Accelerate { accel: 100.0, target_v: 10.0 },
                         Phase::Cruise { v: 10.0, distance: 999.0 }],
        };
        let truth = generate_truth(&map, &profile, 0.1).unwrap();
        let d0 = truth[0].d;
        let end = truth.last().unwrap();
        // 0.1 s of hard acceleration then 99.9 s cruise.
        assert_abs_diff_eq!(end.d - d0, 0.5 + 999.0, epsilon = 1e-9);
    }

    #[test]
    fn truth_stop_phase_holds_position() {
        let (_, map) = generate_track(&flat_straight_spec(500.0), "s").unwrap();
        let profile = VelocityProfile {
            phases: vec![
                Phase::Stop { duration: 5.0 },
                Phase::Accelerate { accel: 0.5, target_v: 5.0 },
                Phase::Cruise { v: 5.0, distance: 200.0 },
            ],
        };
        let truth = generate_truth(&map, &profile, 0.1).unwrap();
        for s in truth.iter().take_while(|s| s.t < 5.0 - 1e-9) {
            assert_eq!(s.v, 0.0);
            assert_eq!(s.d, truth[0].d);
        }
    }

    #[test]
    fn truth_trapezoid_distance() {
        let (_, map) = generate_track(&flat_straight_spec(800.0), "s").unwrap();
        let profile = VelocityProfile {
            phases: vec![
                Phase::Accelerate { accel: 0.5, target_v: 10.0 },
                Phase::Cruise { v: 10.0, distance: 300.0 },
                Phase::Brake { decel: 0.5, target_v: 0.0 },
                Phase::Stop { duration: 2.0 },
            ],
        };
        let truth = generate_truth(&map, &profile, 0.1).unwrap();
        // Trapezoid area: 100 + 300 + 100.
        let end = truth.last().unwrap();
        assert_abs_diff_eq!(end.d - truth[0].d, 500.0, epsilon = 1e-9);
        assert_eq!(end.v, 0.0);
    }

    #[test]
    fn truth_velocity_is_derivative_of_distance() {
        let (_, map) = generate_track(&flat_straight_spec(900.0), "s").unwrap();
        // Phase durations are multiples of the step so no step straddles
        // an acceleration kink; within a phase speed is exactly linear.
        let profile = VelocityProfile {
            phases: vec![
                Phase::Accelerate { accel: 0.3, target_v: 9.0 },
                Phase::Cruise { v: 9.0, distance: 405.0 },
                Phase::Brake { decel: 0.6, target_v: 3.0 },
                Phase::Cruise { v: 3.0, distance: 99.0 },
            ],
        };
        let t_step = 0.05;
        let truth = generate_truth(&map, &profile, t_step).unwrap();
        for w in truth.windows(2) {
            let dd = w[1].d - w[0].d;
            let v_mid = 0.5 * (w[0].v + w[1].v);
            assert_abs_diff_eq!(dd, v_mid * t_step, epsilon = 1e-6);
        }
    }

    #[test]
    fn truth_profile_longer_than_map_errors() {
        let (_, map) = generate_track(&flat_straight_spec(300.0), "s").unwrap();
        let profile = constant_profile(10.0, 400.0);
        assert!(matches!(
            generate_truth(&map, &profile, 0.1),
            Err(ScenarioError::ProfileMismatch(_))
        ));
    }

    fn noise_free_sensors() -> SensorSpec {
        SensorSpec {
            accel_sigma: [0.0; 3],
            gyro_sigma: [0.0; 3],
            accel_bias: [0.0; 3],
            gyro_bias: [0.0; 3],
            bias_drift: 0.0,
            vibration_sigma: [0.0; 3],
            gnss_sigma_px: 0.0,
            gnss_sigma_py: 0.0,
            gnss_sigma_v: 0.0,
            ..SensorSpec::default()
        }
    }

    #[test]
    fn noise_free_flat_cruise_reads_pure_gravity() {
        let (_, map) = generate_track(&flat_straight_spec(1200.0), "s").unwrap();
        let truth = generate_truth(&map, &constant_profile(10.0, 999.0), 0.1).unwrap();
        let (imu, _) = synthesize_sensors(&truth, &noise_free_sensors(), &[], 1).unwrap();
        // Skip the one acceleration step at the start.
        for s in imu.iter().skip(5).take(imu.len() - 10) {
            assert_abs_diff_eq!(s.accel, Vector3::new(0.0, 0.0, 9.81), epsilon = 1e-9);
            assert_abs_diff_eq!(s.gyro, Vector3::zeros(), epsilon = 1e-12);
        }
    }

    #[test]
    fn noise_free_arc_matches_curvature_couplings() {
        let spec = TrackSpec {
            spacing: 5.0,
            segments: vec![
                Segment::Straight { length: 300.0, grade: 0.0 },
                Segment::Arc { length: 400.0, radius: 500.0, direction: Turn::Left, grade: 0.0 },
                Segment::Straight { length: 300.0, grade: 0.0 },
            ],
        };
        let (_, map) = generate_track(&spec, "arc").unwrap();
        let truth = generate_truth(&map, &constant_profile(20.0, 990.0), 0.1).unwrap();
        let (imu, _) = synthesize_sensors(&truth, &noise_free_sensors(), &[], 1).unwrap();
        for (s, raw) in truth.iter().zip(&imu) {
            // Identity against the map curvature the generator used.
            assert_abs_diff_eq!(raw.gyro.z, s.v * s.kappa, epsilon = 1e-12);
            assert_abs_diff_eq!(raw.accel.y, s.v * s.v * s.kappa, epsilon = 1e-12);
            // On the arc interior the design curvature is 1/500; the
            // abrupt joins (no clothoids here) leave ~0.4% of spline
            // edge effect.
            if s.d > 340.0 && s.d < 660.0 && s.v > 19.9 {
                assert_abs_diff_eq!(raw.accel.y, 20.0 * 20.0 / 500.0, epsilon = 0.8 * 0.02);
                assert_abs_diff_eq!(raw.gyro.z, 20.0 / 500.0, epsilon = 0.04 * 0.02);
            }
        }
    }

    #[test]
    fn stationary_bias_read_directly() {
        let (_, map) = generate_track(&flat_straight_spec(500.0), "s").unwrap();
        let profile = VelocityProfile {
            phases: vec![
                Phase::Stop { duration: 3.0 },
                Phase::Accelerate { accel: 0.5, target_v: 5.0 },
                Phase::Cruise { v: 5.0, distance: 100.0 },
            ],
        };
        let truth = generate_truth(&map, &profile, 0.1).unwrap();
        let mut sensors = noise_free_sensors();
        sensors.accel_bias[0] = 0.02;
        let (imu, _) = synthesize_sensors(&truth, &sensors, &[], 1).unwrap();
        for s in imu.iter().take(25) {
            assert_abs_diff_eq!(s.accel.x, 0.02, epsilon = 1e-12);
        }
    }

    #[test]
    fn integrating_accel_recovers_velocity_profile() {
        let (_, map) = generate_track(&flat_straight_spec(900.0), "s").unwrap();
        let profile = VelocityProfile {
            phases: vec![
                Phase::Stop { duration: 2.0 },
                Phase::Accelerate { accel: 0.37, target_v: 8.0 },
                Phase::Cruise { v: 8.0, distance: 500.0 },
                Phase::Brake { decel: 0.81, target_v: 0.0 },
                Phase::Stop { duration: 2.0 },
            ],
        };
        let t_step = 0.1;
        let truth = generate_truth(&map, &profile, t_step).unwrap();
        let (imu, _) = synthesize_sensors(&truth, &noise_free_sensors(), &[], 1).unwrap();
        // Flat track: compensated a_x equals raw a_x.
        let mut v = truth[0].v;
        for (k, s) in imu.iter().enumerate().skip(1) {
            v += imu[k - 1].accel.x * t_step;
            let _ = s;
            assert_abs_diff_eq!(v, truth[k].v, epsilon = 1e-6);
        }
    }

    #[test]
    fn sensors_seed_deterministic() {
        let (_, map) = generate_track(&flat_straight_spec(1200.0), "s").unwrap();
        let truth = generate_truth(&map, &constant_profile(10.0, 900.0), 0.1).unwrap();
        let spec = SensorSpec::default();
        let (imu_a, gnss_a) = synthesize_sensors(&truth, &spec, &[], 99).unwrap();
        let (imu_b, gnss_b) = synthesize_sensors(&truth, &spec, &[], 99).unwrap();
        let (imu_c, _) = synthesize_sensors(&truth, &spec, &[], 100).unwrap();
        assert_eq!(imu_a, imu_b);
        assert_eq!(gnss_a, gnss_b);
        assert_ne!(imu_a, imu_c);
    }

    #[test]
    fn outage_suppresses_gnss() {
        let (_, map) = generate_track(&flat_straight_spec(1200.0), "s").unwrap();
        let truth = generate_truth(&map, &constant_profile(10.0, 900.0), 0.1).unwrap();
        let outages = [OutageWindow { start: 20.0, end: Some(40.0) }];
        let (_, gnss) = synthesize_sensors(&truth, &SensorSpec::default(), &outages, 5).unwrap();
        assert!(gnss.iter().all(|g| !(20.0..40.0).contains(&g.t)));
        assert!(gnss.iter().any(|g| g.t < 20.0));
        assert!(gnss.iter().any(|g| g.t >= 40.0));
    }

    #[test]
    fn overlapping_outages_rejected() {
        let outages = [
            OutageWindow { start: 10.0, end: Some(30.0) },
            OutageWindow { start: 20.0, end: Some(40.0) },
        ];
        assert!(matches!(
            validate_outages(&outages),
            Err(ScenarioError::InvalidSpec(_))
        ));
    }

    #[test]
    fn presets_generate_and_meet_their_contracts() {
        // straight-indefinite: no GNSS after the 50 s cut.
        let sc = generate(&preset("straight-indefinite").unwrap(), Some(7)).unwrap();
        assert!(sc.gnss.iter().all(|g| g.t < 50.0));
        assert!(!sc.gnss.is_empty());

        // curvy-indefinite: meaningfully curvy route.
        let sc = generate(&preset("curvy-indefinite").unwrap(), Some(7)).unwrap();
        let frac = curvy_fraction(&sc.map, 1.0 / 1000.0);
        assert!(frac >= 0.30, "curvy fraction {frac}");
        assert!(sc.gnss.iter().all(|g| g.t < 50.0));

        // mixed-outages: longest outage exactly 35 s.
        let spec = preset("mixed-outages").unwrap();
        let longest = spec
            .outages
            .iter()
            .filter_map(|w| w.end.map(|e| e - w.start))
            .fold(0.0f64, f64::max);
        assert_abs_diff_eq!(longest, 35.0, epsilon = 1e-12);
        let sc = generate(&spec, Some(3)).unwrap();
        for w in &spec.outages {
            assert!(sc
                .gnss
                .iter()
                .all(|g| !(g.t >= w.start && g.t < w.end.unwrap())));
        }
    }

    #[test]
    fn spec_toml_round_trip() {
        let spec = preset("mixed-outages").unwrap();
        let text = spec.to_toml().unwrap();
        let back = ScenarioSpec::from_toml(&text).unwrap();
        assert_eq!(back.id, spec.id);
        assert_eq!(back.track.segments, spec.track.segments);
        assert_eq!(back.outages, spec.outages);
    }

    #[test]
    fn bundle_write_creates_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = preset("curvy-indefinite").unwrap();
        // Shrink for test speed.
        spec.profile = VelocityProfile {
            phases: vec![
                Phase::Stop { duration: 2.0 },
                Phase::Accelerate { accel: 0.5, target_v: 10.0 },
                Phase::Cruise { v: 10.0, distance: 300.0 },
            ],
        };
        let sc = generate(&spec, Some(1)).unwrap();
        sc.write_bundle(dir.path()).unwrap();
        for name in ["scenario.toml", "map.csv", "imu.csv", "gnss.csv", "truth.csv"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
    }
}
