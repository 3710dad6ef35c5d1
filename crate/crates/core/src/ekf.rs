//! The comparison baseline: an extended Kalman filter with a constant
//! turn rate and acceleration (CTRA) motion model driven by the measured
//! along-track acceleration and yaw rate, GNSS position/velocity updates,
//! and a map-matching pseudo-measurement that pulls the planar state onto
//! the track (across-track offset observed as zero with a small variance).

use std::collections::VecDeque;

use nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imu::{compensate_gravity, detect_standstill, GnssSample, ImuSample, ZvuConfig};
use crate::track_map::{MapError, TrackMap};

/// Below this yaw rate the CTRA arc degenerates; a second-order branch
/// (straight step along the midpoint heading) takes over.
const OMEGA_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EkfError {
    #[error("invalid EKF configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Planar EKF state `(p_x, p_y, theta_z, v)` with covariance.
#[derive(Debug, Clone, Copy)]
pub struct EkfState {
    pub x: Vector4<f64>,
    pub p: Matrix4<f64>,
}

impl EkfState {
    pub fn new(p_x: f64, p_y: f64, theta_z: f64, v: f64, p: Matrix4<f64>) -> Self {
        EkfState {
            x: Vector4::new(p_x, p_y, theta_z, v),
            p,
        }
    }

    pub fn p_x(&self) -> f64 {
        self.x[0]
    }
    pub fn p_y(&self) -> f64 {
        self.x[1]
    }
    pub fn theta_z(&self) -> f64 {
        self.x[2]
    }
    pub fn v(&self) -> f64 {
        self.x[3]
    }

    /// Symmetrizes the covariance and clamps any slightly negative
    /// eigenvalues (tolerated down to -1e-9) back to zero.
    pub fn enforce_psd(&mut self) {
        self.p = (self.p + self.p.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(self.p);
        if eig.eigenvalues.iter().any(|&l| l < 0.0) {
            let mut vals = eig.eigenvalues;
            for l in vals.iter_mut() {
                debug_assert!(*l >= -1e-9, "covariance eigenvalue {l} below tolerance");
                *l = l.max(0.0);
            }
            self.p = eig.eigenvectors * Matrix4::from_diagonal(&vals) * eig.eigenvectors.transpose();
            self.p = (self.p + self.p.transpose()) * 0.5;
        }
    }
}

/// Parameters for the EKF baseline. Defaults follow its column of the
/// reference parameterization: 0.005 g accelerometer noise, 0.05 deg/s
/// gyro noise, GNSS uncertainties (2.04, 3.45) m / 0.35 m/s, and a 0.01 m
/// map-matching standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfConfig {
    pub t_sample: f64,
    pub sigma_ax: f64,
    pub sigma_wz: f64,
    pub sigma_px: f64,
    pub sigma_py: f64,
    pub sigma_v: f64,
    pub sigma_map: f64,
    /// Map-matching updates beyond this distance from the track are
    /// skipped (the state is clearly lost; snapping it would be worse).
    pub map_match_gate: f64,
    /// Apply the map-matching pseudo-measurement every step rather than
    /// only on steps with a GNSS fix.
    pub map_match_every_step: bool,
    pub g: f64,
    pub zvu_enabled: bool,
    pub zvu_window: usize,
    pub zvu_accel_var: f64,
    pub zvu_rate: f64,
    /// Standard deviation of the zero-velocity pseudo-measurement.
    pub sigma_zvu_v: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        let g = 9.81;
        EkfConfig {
            t_sample: 0.1,
            sigma_ax: 0.005 * g,
            sigma_wz: 0.05f64.to_radians(),
            sigma_px: 2.04,
            sigma_py: 3.45,
            sigma_v: 0.35,
            sigma_map: 0.01,
            map_match_gate: 50.0,
            map_match_every_step: true,
            g,
            zvu_enabled: true,
            zvu_window: 10,
            zvu_accel_var: 0.01,
            zvu_rate: 0.005,
            sigma_zvu_v: 0.01,
        }
    }
}

impl EkfConfig {
    pub fn zvu_config(&self) -> ZvuConfig {
        ZvuConfig {
            window: self.zvu_window,
            accel_var_threshold: self.zvu_accel_var,
            rate_threshold: self.zvu_rate,
        }
    }

    pub fn validate(&self) -> Result<(), EkfError> {
        if self.t_sample <= 0.0 {
            return Err(EkfError::InvalidConfig("t_sample must be > 0".into()));
        }
        for (name, v) in [
            ("sigma_ax", self.sigma_ax),
            ("sigma_wz", self.sigma_wz),
            ("sigma_px", self.sigma_px),
            ("sigma_py", self.sigma_py),
            ("sigma_v", self.sigma_v),
            ("sigma_map", self.sigma_map),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(EkfError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// CTRA prediction: heading integrates the yaw rate, speed integrates the
/// acceleration, and the position advances along the implied arc (with a
/// straight-step limit as the yaw rate vanishes). The covariance is
/// propagated through the motion Jacobian and inflated by the input noise
/// mapped into state space.
pub fn ekf_predict(state: &EkfState, a_x: f64, omega_z: f64, cfg: &EkfConfig) -> EkfState {
    let t = cfg.t_sample;
    let theta = state.theta_z();
    let v = state.v();
    let theta_new = theta + omega_z * t;
    let v_new = v + a_x * t;

    let (dx, dy) = if omega_z.abs() < OMEGA_EPS {
        // Straight step along the midpoint heading: continuous with the
        // arc branch to second order in omega*T.
        let mid = theta + 0.5 * omega_z * t;
        let s = v * t + 0.5 * a_x * t * t;
        (s * mid.cos(), s * mid.sin())
    } else {
        let w2 = omega_z * omega_z;
        let dx = (v_new * omega_z * theta_new.sin() + a_x * theta_new.cos()
            - v * omega_z * theta.sin()
            - a_x * theta.cos())
            / w2;
        let dy = (-v_new * omega_z * theta_new.cos() + a_x * theta_new.sin()
            + v * omega_z * theta.cos()
            - a_x * theta.sin())
            / w2;
        (dx, dy)
    };

    // Motion Jacobian: dPos/dTheta is the rotated displacement, dPos/dV
    // follows from the closed form.
    let (dxdv, dydv) = if omega_z.abs() < OMEGA_EPS {
        let mid = theta + 0.5 * omega_z * t;
        (t * mid.cos(), t * mid.sin())
    } else {
        (
            (theta_new.sin() - theta.sin()) / omega_z,
            (theta.cos() - theta_new.cos()) / omega_z,
        )
    };
    let mut f = Matrix4::identity();
    f[(0, 2)] = -dy;
    f[(1, 2)] = dx;
    f[(0, 3)] = dxdv;
    f[(1, 3)] = dydv;

    // Input noise (accelerometer, gyro) mapped into the state.
    let mid = theta + 0.5 * omega_z * t;
    let gmat = Matrix4x2::new(
        0.5 * t * t * mid.cos(),
        0.0,
        0.5 * t * t * mid.sin(),
        0.0,
        0.0,
        t,
        t,
        0.0,
    );
    let q_in = Matrix2::new(
        cfg.sigma_ax * cfg.sigma_ax,
        0.0,
        0.0,
        cfg.sigma_wz * cfg.sigma_wz,
    );

    let mut out = EkfState {
        x: Vector4::new(state.p_x() + dx, state.p_y() + dy, theta_new, v_new),
        p: f * state.p * f.transpose() + gmat * q_in * gmat.transpose(),
    };
    out.enforce_psd();
    out
}

/// Linear update with a GNSS fix observing `(p_x, p_y, v)`, using the
/// per-sample receiver uncertainty when usable.
pub fn ekf_update_gnss(state: &EkfState, gnss: &GnssSample, cfg: &EkfConfig) -> EkfState {
    let sigmas = [
        usable(gnss.sigma_px, cfg.sigma_px),
        usable(gnss.sigma_py, cfg.sigma_py),
        usable(gnss.sigma_v, cfg.sigma_v),
    ];
    let mut out = *state;
    // Sequential scalar updates; the observation rows are orthogonal.
    for (row, (meas, sigma)) in [
        (0usize, (gnss.p_x, sigmas[0])),
        (1usize, (gnss.p_y, sigmas[1])),
        (3usize, (gnss.v, sigmas[2])),
    ] {
        out = scalar_update(&out, row, meas, sigma);
    }
    out.enforce_psd();
    out
}

/// Outcome of a map-matching attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapMatch {
    Applied { d: f64 },
    /// Nearest track farther than the gate; state left untouched.
    Skipped { distance: f64 },
}

/// Across-track pseudo-measurement: the planar state is projected onto the
/// nearest map segment and the signed offset is observed as zero with
/// `sigma_map`. States beyond the gate are flagged and left unchanged.
pub fn ekf_map_match(state: &EkfState, map: &TrackMap, cfg: &EkfConfig) -> (EkfState, MapMatch) {
    let proj = map.project_point(state.p_x(), state.p_y());
    if proj.distance > cfg.map_match_gate {
        return (
            *state,
            MapMatch::Skipped {
                distance: proj.distance,
            },
        );
    }
    // Observation row: the across-track direction (unit normal of the
    // matched segment, oriented so the offset is what we measured).
    let heading = match map.lookup(proj.d) {
        Ok(f) => f.theta_z,
        Err(_) => return (*state, MapMatch::Skipped { distance: proj.distance }),
    };
    let normal = Vector2::new(-heading.sin(), heading.cos());
    let innovation = -proj.across; // drive the offset to zero
    let h = Vector4::new(normal.x, normal.y, 0.0, 0.0);
    let s = (h.transpose() * state.p * h)[(0, 0)] + cfg.sigma_map * cfg.sigma_map;
    let k = state.p * h / s;
    let mut out = EkfState {
        x: state.x + k * innovation,
        p: joseph(&state.p, &k, &h, cfg.sigma_map),
    };
    out.enforce_psd();
    (out, MapMatch::Applied { d: proj.d })
}

fn usable(sample: f64, fallback: f64) -> f64 {
    if sample.is_finite() && sample > 0.0 {
        sample
    } else {
        fallback
    }
}

fn scalar_update(state: &EkfState, row: usize, meas: f64, sigma: f64) -> EkfState {
    let mut h = Vector4::zeros();
    h[row] = 1.0;
    let s = state.p[(row, row)] + sigma * sigma;
    let k = state.p * h / s;
    EkfState {
        x: state.x + k * (meas - state.x[row]),
        p: joseph(&state.p, &k, &h, sigma),
    }
}

/// Joseph-form covariance update, numerically safe for small gains.
fn joseph(p: &Matrix4<f64>, k: &Vector4<f64>, h: &Vector4<f64>, sigma: f64) -> Matrix4<f64> {
    let ikh = Matrix4::identity() - k * h.transpose();
    ikh * p * ikh.transpose() + k * (sigma * sigma) * k.transpose()
}

/// Per-step output of an EKF session.
#[derive(Debug, Clone, Copy)]
pub struct EkfStepOutput {
    pub t: f64,
    pub p_x: f64,
    pub p_y: f64,
    /// Arc length of the state's projection onto the track.
    pub d: f64,
    pub v: f64,
    /// Standard deviation of position along the local track tangent.
    pub sigma_d: f64,
    pub trace_p: f64,
    pub zvu: bool,
}

/// Sequential EKF run over one sensor log, sharing the IMU conventions of
/// the particle filter (gravity compensated via the map orientation at
/// the previous matched position, zero-velocity clamping at stand-still)
/// but without bias estimation.
pub struct EkfSession<'m> {
    cfg: EkfConfig,
    map: &'m TrackMap,
    state: EkfState,
    zvu_window: VecDeque<ImuSample>,
    last_d: f64,
}

impl<'m> EkfSession<'m> {
    /// Starts from a GNSS fix: position from the fix, heading from the
    /// track at its projection, speed from the receiver.
    pub fn from_fix(map: &'m TrackMap, cfg: EkfConfig, fix: &GnssSample) -> Result<Self, EkfError> {
        cfg.validate()?;
        let proj = map.project_point(fix.p_x, fix.p_y);
        let d0 = proj.d.clamp(map.d_first(), map.d_last());
        let heading = map.lookup(d0)?.theta_z;
        let spx = usable(fix.sigma_px, cfg.sigma_px);
        let spy = usable(fix.sigma_py, cfg.sigma_py);
        let sv = usable(fix.sigma_v, cfg.sigma_v);
        let p = Matrix4::from_diagonal(&Vector4::new(
            spx * spx,
            spy * spy,
            (5f64.to_radians()).powi(2),
            sv * sv,
        ));
        Ok(EkfSession {
            cfg,
            map,
            state: EkfState::new(fix.p_x, fix.p_y, heading, fix.v, p),
            zvu_window: VecDeque::new(),
            last_d: d0,
        })
    }

    pub fn state(&self) -> &EkfState {
        &self.state
    }

    pub fn config(&self) -> &EkfConfig {
        &self.cfg
    }

    pub fn step(&mut self, imu: &ImuSample, gnss: Option<&GnssSample>) -> Result<EkfStepOutput, EkfError> {
        let standstill = self.update_zvu(imu);
        let orientation = self.map.orientation_at(self.last_d)?;
        let a = compensate_gravity(&imu.accel, &orientation, self.cfg.g);

        let (a_x, omega_z) = if standstill {
            (0.0, 0.0)
        } else {
            (a.x, imu.gyro.z)
        };
        self.state = ekf_predict(&self.state, a_x, omega_z, &self.cfg);
        if standstill {
            self.state = scalar_update(&self.state, 3, 0.0, self.cfg.sigma_zvu_v);
            self.state.enforce_psd();
        }
        if let Some(fix) = gnss {
            self.state = ekf_update_gnss(&self.state, fix, &self.cfg);
        }
        if self.cfg.map_match_every_step || gnss.is_some() {
            let (next, _) = ekf_map_match(&self.state, self.map, &self.cfg);
            self.state = next;
        }

        let proj = self.map.project_point(self.state.p_x(), self.state.p_y());
        self.last_d = proj.d.clamp(self.map.d_first(), self.map.d_last());
        let heading = self.map.lookup(self.last_d)?.theta_z;
        let tangent = Vector2::new(heading.cos(), heading.sin());
        let pos_cov = self.state.p.fixed_view::<2, 2>(0, 0).into_owned();
        let sigma_d = (tangent.transpose() * pos_cov * tangent)[(0, 0)].max(0.0).sqrt();

        Ok(EkfStepOutput {
            t: imu.t,
            p_x: self.state.p_x(),
            p_y: self.state.p_y(),
            d: self.last_d,
            v: self.state.v(),
            sigma_d,
            trace_p: self.state.p.trace(),
            zvu: standstill,
        })
    }

    fn update_zvu(&mut self, imu: &ImuSample) -> bool {
        if !self.cfg.zvu_enabled {
            return false;
        }
        if self.zvu_window.len() == self.cfg.zvu_window {
            self.zvu_window.pop_front();
        }
        self.zvu_window.push_back(*imu);
        if self.zvu_window.len() < self.cfg.zvu_window {
            return false;
        }
        detect_standstill(self.zvu_window.make_contiguous(), &self.cfg.zvu_config())
            .unwrap_or(false)
    }
}

/// True inertial acceleration felt in the sensor frame for a planar CTRA
/// state; used by tests to build consistent synthetic inputs.
pub fn ctra_body_accel(v: f64, a_x: f64, omega_z: f64) -> Vector3<f64> {
    Vector3::new(a_x, v * omega_z, 0.0)
}
