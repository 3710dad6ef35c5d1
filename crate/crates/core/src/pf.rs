//! The map-constrained particle filter: a 1D constant-acceleration motion
//! model over (distance, speed), an observation model that maps each
//! particle through the track-map LUT to predicted plane position, yaw
//! rate `v*kappa` and lateral acceleration `v^2*kappa`, importance
//! weighting with optional GNSS terms, and systematic resampling gated on
//! the effective sample size.
//!
//! A [`PfSession`] runs the full per-step loop including the IMU
//! preprocessing (gravity compensation from the map orientation at the
//! previous estimate, stand-still detection, bias updates).

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imu::{
    compensate_gravity, detect_standstill, BiasAxis, BiasState, GnssSample, ImuSample, ZvuConfig,
};
use crate::track_map::{MapError, TrackMap};

/// Particle counts at or above this run the per-particle measurement loop
/// on the rayon pool; below it the sequential path is cheaper. Both paths
/// produce identical results.
const PARALLEL_THRESHOLD: usize = 4096;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "prior support [{lo}, {hi}] does not intersect map range [{d_first}, {d_last}]"
    )]
    PriorOutsideMap {
        lo: f64,
        hi: f64,
        d_first: f64,
        d_last: f64,
    },
    #[error("all particle weights vanished at t={t}: filter diverged and no GNSS fix is available to recover from")]
    AllWeightsZero { t: f64 },
    #[error("degenerate particle set")]
    DegenerateSet,
    #[error(transparent)]
    Map(#[from] MapError),
}

/// The 1D filter state: distance along the track and speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub d: f64,
    pub v: f64,
}

/// State estimator read off the weighted particle set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Posterior mean (the default reading of the final estimate).
    #[default]
    WeightedMean,
    /// State of the highest-weight particle (MAP-style reading).
    MaxWeight,
}

/// Filter parameters. Defaults follow the particle-filter column of the
/// reference parameterization: IMU noise 0.01 g on both accelerometer
/// channels, 0.2 deg/s on the yaw gyro, bias instability 5e-6 m/s^2, and
/// mean GNSS uncertainties of (2.45, 4.13) m and 0.4 m/s.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Resampling threshold on the effective sample size; `None` means
    /// half the particle count.
    pub n_threshold: Option<f64>,
    /// Sampling period in seconds.
    pub t_sample: f64,
    /// Process (acceleration) noise applied through the input vector.
    pub sigma_u: f64,
    pub sigma_ax: f64,
    pub sigma_ay: f64,
    pub sigma_wz: f64,
    pub sigma_px: f64,
    pub sigma_py: f64,
    pub sigma_v: f64,
    /// Bias instability; absorbed into the per-step input noise.
    pub sigma_bias: f64,
    pub g: f64,
    /// Resample on entry into a curved segment even when the effective
    /// sample size is healthy.
    pub curve_resample: bool,
    /// Curvature magnitude that counts as "curved" for the trigger.
    pub curve_resample_threshold: f64,
    pub estimator: Estimator,
    pub zvu_enabled: bool,
    pub zvu_window: usize,
    pub zvu_accel_var: f64,
    pub zvu_rate: f64,
    /// Moving-average window of the stand-still bias estimator.
    pub bias_window: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let g = 9.81;
        FilterConfig {
            n_particles: 1000,
            n_threshold: None,
            t_sample: 0.1,
            sigma_u: 0.1,
            sigma_ax: 0.01 * g,
            sigma_ay: 0.01 * g,
            sigma_wz: 0.2f64.to_radians(),
            sigma_px: 2.45,
            sigma_py: 4.13,
            sigma_v: 0.4,
            sigma_bias: 5e-6,
            g,
            curve_resample: false,
            curve_resample_threshold: 1.0 / 2000.0,
            estimator: Estimator::WeightedMean,
            zvu_enabled: true,
            zvu_window: 10,
            zvu_accel_var: 0.01,
            zvu_rate: 0.005,
            bias_window: 10,
        }
    }
}

impl FilterConfig {
    pub fn n_threshold(&self) -> f64 {
        self.n_threshold
            .unwrap_or(self.n_particles as f64 / 2.0)
    }

    pub fn zvu_config(&self) -> ZvuConfig {
        ZvuConfig {
            window: self.zvu_window,
            accel_var_threshold: self.zvu_accel_var,
            rate_threshold: self.zvu_rate,
        }
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if self.n_particles < 1 {
            return Err(FilterError::InvalidConfig("n_particles must be >= 1".into()));
        }
        let th = self.n_threshold();
        if !(1.0..=self.n_particles as f64).contains(&th) {
            return Err(FilterError::InvalidConfig(format!(
                "n_threshold {th} must lie in [1, {}]",
                self.n_particles
            )));
        }
        if self.t_sample <= 0.0 {
            return Err(FilterError::InvalidConfig("t_sample must be > 0".into()));
        }
        for (name, v) in [
            ("sigma_u", self.sigma_u),
            ("sigma_ax", self.sigma_ax),
            ("sigma_ay", self.sigma_ay),
            ("sigma_wz", self.sigma_wz),
            ("sigma_px", self.sigma_px),
            ("sigma_py", self.sigma_py),
            ("sigma_v", self.sigma_v),
            ("sigma_bias", self.sigma_bias),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(FilterError::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Initial state distribution.
#[derive(Debug, Clone, Copy)]
pub enum Prior {
    Gaussian {
        d_mean: f64,
        d_sigma: f64,
        v_mean: f64,
        v_sigma: f64,
    },
    Uniform {
        d_min: f64,
        d_max: f64,
        v_min: f64,
        v_max: f64,
    },
}

impl Prior {
    fn d_support(&self) -> (f64, f64) {
        match *self {
            Prior::Gaussian { d_mean, d_sigma, .. } => {
                (d_mean - 5.0 * d_sigma, d_mean + 5.0 * d_sigma)
            }
            Prior::Uniform { d_min, d_max, .. } => (d_min, d_max),
        }
    }
}

/// One observation: the always-present bias-corrected inertial channels,
/// plus a GNSS block when a fix exists.
#[derive(Debug, Clone, Copy)]
pub struct Measurement {
    pub gnss: Option<GnssSample>,
    pub omega_z: f64,
    pub a_y: f64,
}

/// Predicted measurement for one particle: plane position from the LUT,
/// speed from the state, and the curvature couplings.
#[derive(Debug, Clone, Copy)]
pub struct PredictedMeasurement {
    pub p_x: f64,
    pub p_y: f64,
    pub v: f64,
    pub omega_z: f64,
    pub a_y: f64,
}

/// Maps a state through the LUT: `[p_x(d), p_y(d), v, v*kappa(d),
/// v^2*kappa(d)]`. An off-map state is an error the caller converts to a
/// zero weight.
pub fn predict_measurement(
    state: &FilterState,
    map: &TrackMap,
) -> Result<PredictedMeasurement, MapError> {
    let f = map.lookup(state.d)?;
    Ok(PredictedMeasurement {
        p_x: f.p_x,
        p_y: f.p_y,
        v: state.v,
        omega_z: state.v * f.kappa,
        a_y: state.v * state.v * f.kappa,
    })
}

/// Effective sample size `1 / sum(w^2)` of normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
    if sum_sq > 0.0 {
        1.0 / sum_sq
    } else {
        0.0
    }
}

/// Weighted particle population plus its private RNG stream.
#[derive(Debug, Clone)]
pub struct ParticleSet {
    states: Vec<FilterState>,
    weights: Vec<f64>,
    rng: ChaCha12Rng,
}

/// The final per-step estimate: plane position read from the LUT at the
/// estimated distance, along-track spread, and the 3-sigma plane ellipse
/// of the particle cloud.
#[derive(Debug, Clone, Copy)]
pub struct PositionEstimate {
    pub d: f64,
    pub v: f64,
    pub p_x: f64,
    pub p_y: f64,
    /// Weighted standard deviation of particle distances.
    pub sigma_d: f64,
    /// 3-sigma half-axes of the plane particle spread, major then minor.
    pub spread_major: f64,
    pub spread_minor: f64,
}

impl ParticleSet {
    /// Draws `cfg.n_particles` particles from the prior with uniform
    /// weights.
    pub fn initialize(
        cfg: &FilterConfig,
        map: &TrackMap,
        prior: &Prior,
        seed: u64,
    ) -> Result<Self, FilterError> {
        cfg.validate()?;
        let (lo, hi) = prior.d_support();
        if hi < map.d_first() || lo > map.d_last() {
            return Err(FilterError::PriorOutsideMap {
                lo,
                hi,
                d_first: map.d_first(),
                d_last: map.d_last(),
            });
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let states = Self::draw_prior(cfg.n_particles, prior, &mut rng);
        let w = 1.0 / cfg.n_particles as f64;
        Ok(ParticleSet {
            states,
            weights: vec![w; cfg.n_particles],
            rng,
        })
    }

    fn draw_prior(n: usize, prior: &Prior, rng: &mut ChaCha12Rng) -> Vec<FilterState> {
        (0..n)
            .map(|_| match *prior {
                Prior::Gaussian {
                    d_mean,
                    d_sigma,
                    v_mean,
                    v_sigma,
                } => FilterState {
                    d: sample_normal(rng, d_mean, d_sigma),
                    v: sample_normal(rng, v_mean, v_sigma),
                },
                Prior::Uniform {
                    d_min,
                    d_max,
                    v_min,
                    v_max,
                } => FilterState {
                    d: sample_uniform(rng, d_min, d_max),
                    v: sample_uniform(rng, v_min, v_max),
                },
            })
            .collect()
    }

    /// Replaces the population with a fresh draw from `prior`, keeping
    /// the RNG stream. Used to recover from weight collapse on a GNSS fix.
    pub fn reinitialize(&mut self, prior: &Prior) {
        let n = self.states.len();
        self.states = Self::draw_prior(n, prior, &mut self.rng);
        self.weights.fill(1.0 / n as f64);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[FilterState] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [FilterState] {
        &mut self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.weights)
    }

    /// Constant-acceleration diffusion: the input `u` (bias-corrected
    /// along-track acceleration) plus per-particle noise is pushed through
    /// the input vector `[T^2/2, T]`. Weights are untouched; particles
    /// that leave the map are dealt with at weighting.
    pub fn predict(&mut self, u: f64, cfg: &FilterConfig) {
        let t = cfg.t_sample;
        // Bias instability is absorbed into the input noise.
        let sigma = (cfg.sigma_u * cfg.sigma_u + cfg.sigma_bias * cfg.sigma_bias).sqrt();
        for s in &mut self.states {
            let a = u + if sigma > 0.0 {
                sample_normal(&mut self.rng, 0.0, sigma)
            } else {
                0.0
            };
            s.d += t * s.v + 0.5 * t * t * a;
            s.v += t * a;
        }
    }

    /// Multiplies weights by the measurement likelihood and normalizes.
    ///
    /// Each available component contributes an independent Gaussian term;
    /// GNSS terms use the per-sample receiver uncertainty when it is
    /// usable, the configured defaults otherwise. Off-map particles get
    /// zero weight.
    pub fn weight(
        &mut self,
        z: &Measurement,
        map: &TrackMap,
        cfg: &FilterConfig,
    ) -> Result<(), FilterError> {
        let loglik = |s: &FilterState| -> f64 {
            let pm = match predict_measurement(s, map) {
                Ok(pm) => pm,
                Err(_) => return f64::NEG_INFINITY,
            };
            let mut ll = log_normal(z.omega_z - pm.omega_z, cfg.sigma_wz)
                + log_normal(z.a_y - pm.a_y, cfg.sigma_ay);
            if let Some(gnss) = &z.gnss {
                let spx = usable_sigma(gnss.sigma_px, cfg.sigma_px);
                let spy = usable_sigma(gnss.sigma_py, cfg.sigma_py);
                let sv = usable_sigma(gnss.sigma_v, cfg.sigma_v);
                ll += log_normal(gnss.p_x - pm.p_x, spx)
                    + log_normal(gnss.p_y - pm.p_y, spy)
                    + log_normal(gnss.v - pm.v, sv);
            }
            ll
        };
        let lls: Vec<f64> = if self.states.len() >= PARALLEL_THRESHOLD {
            self.states.par_iter().map(loglik).collect()
        } else {
            self.states.iter().map(loglik).collect()
        };
        // Plain Gaussian products: a particle more than ~38 sigma out
        // underflows to exactly zero, which is the divergence signal the
        // caller watches for.
        let mut sum = 0.0;
        for (w, ll) in self.weights.iter_mut().zip(&lls) {
            *w *= ll.exp();
            sum += *w;
        }
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(FilterError::AllWeightsZero { t: f64::NAN });
        }
        for w in &mut self.weights {
            *w /= sum;
        }
        Ok(())
    }

    /// Systematic resampling back to the full population with uniform
    /// weights. Offspring counts land within one of `N * w_j`.
    pub fn resample(&mut self) {
        let n = self.states.len();
        let step = 1.0 / n as f64;
        let start: f64 = self.rng.random::<f64>() * step;
        let mut new_states = Vec::with_capacity(n);
        let mut cumulative = self.weights[0];
        let mut idx = 0usize;
        for j in 0..n {
            let u = start + j as f64 * step;
            while cumulative < u && idx < n - 1 {
                idx += 1;
                cumulative += self.weights[idx];
            }
            new_states.push(self.states[idx]);
        }
        self.states = new_states;
        self.weights.fill(step);
    }

    /// Reads the final estimate off the population.
    pub fn estimate(
        &self,
        map: &TrackMap,
        cfg: &FilterConfig,
    ) -> Result<PositionEstimate, FilterError> {
        if self.states.is_empty() {
            return Err(FilterError::DegenerateSet);
        }
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0) {
            return Err(FilterError::DegenerateSet);
        }
        let (d_hat, v_hat) = match cfg.estimator {
            Estimator::WeightedMean => {
                let mut d = 0.0;
                let mut v = 0.0;
                for (s, w) in self.states.iter().zip(&self.weights) {
                    d += w * s.d;
                    v += w * s.v;
                }
                (d / total, v / total)
            }
            Estimator::MaxWeight => {
                let (best, _) = self
                    .weights
                    .iter()
                    .enumerate()
                    .fold((0usize, f64::NEG_INFINITY), |acc, (i, &w)| {
                        if w > acc.1 {
                            (i, w)
                        } else {
                            acc
                        }
                    });
                (self.states[best].d, self.states[best].v)
            }
        };
        let here = map.lookup(d_hat)?;

        let mut var_d = 0.0;
        let mut mean_x = 0.0;
        let mut mean_y = 0.0;
        let mut plane: Vec<(f64, f64, f64)> = Vec::with_capacity(self.states.len());
        for (s, &w) in self.states.iter().zip(&self.weights) {
            if w <= 0.0 {
                continue;
            }
            var_d += w * (s.d - d_hat).powi(2);
            if let Ok(f) = map.lookup(s.d) {
                mean_x += w * f.p_x;
                mean_y += w * f.p_y;
                plane.push((w, f.p_x, f.p_y));
            }
        }
        var_d /= total;
        let wp: f64 = plane.iter().map(|p| p.0).sum();
        let (spread_major, spread_minor) = if wp > 0.0 {
            mean_x /= wp;
            mean_y /= wp;
            let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
            for &(w, x, y) in &plane {
                cxx += w * (x - mean_x).powi(2);
                cxy += w * (x - mean_x) * (y - mean_y);
                cyy += w * (y - mean_y).powi(2);
            }
            cxx /= wp;
            cxy /= wp;
            cyy /= wp;
            // Eigenvalues of the 2x2 plane covariance.
            let tr = cxx + cyy;
            let det = cxx * cyy - cxy * cxy;
            let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
            let l1 = (tr / 2.0 + disc).max(0.0);
            let l2 = (tr / 2.0 - disc).max(0.0);
            (3.0 * l1.sqrt(), 3.0 * l2.sqrt())
        } else {
            (0.0, 0.0)
        };
        Ok(PositionEstimate {
            d: d_hat,
            v: v_hat,
            p_x: here.p_x,
            p_y: here.p_y,
            sigma_d: var_d.sqrt(),
            spread_major,
            spread_minor,
        })
    }
}

fn sample_normal(rng: &mut ChaCha12Rng, mean: f64, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(mean, sigma).unwrap().sample(rng)
    } else {
        mean
    }
}

fn sample_uniform(rng: &mut ChaCha12Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn usable_sigma(sample: f64, fallback: f64) -> f64 {
    if sample.is_finite() && sample > 0.0 {
        sample
    } else {
        fallback
    }
}

fn log_normal(err: f64, sigma: f64) -> f64 {
    -0.5 * (err / sigma).powi(2) - sigma.ln() - 0.5 * (std::f64::consts::TAU).ln()
}

/// Per-step output of a filter session.
#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub t: f64,
    pub estimate: PositionEstimate,
    pub n_eff: f64,
    pub resampled: bool,
    pub zvu: bool,
}

/// A sequential filter session over one run: owns the particle
/// population, the bias estimator, and the stand-still window.
pub struct PfSession<'m> {
    cfg: FilterConfig,
    map: &'m TrackMap,
    particles: ParticleSet,
    bias: BiasState,
    zvu_window: VecDeque<ImuSample>,
    last_d: f64,
    on_curve: bool,
    /// Number of weight-collapse recoveries taken from GNSS fixes.
    pub reinit_count: usize,
}

impl<'m> PfSession<'m> {
    pub fn new(
        map: &'m TrackMap,
        cfg: FilterConfig,
        prior: &Prior,
        seed: u64,
    ) -> Result<Self, FilterError> {
        let particles = ParticleSet::initialize(&cfg, map, prior, seed)?;
        let est = particles.estimate(map, &cfg)?;
        let bias = BiasState::new(cfg.bias_window);
        Ok(PfSession {
            map,
            particles,
            bias,
            zvu_window: VecDeque::with_capacity(cfg.zvu_window),
            last_d: est.d,
            on_curve: false,
            cfg,
            reinit_count: 0,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.particles
    }

    pub fn bias(&self) -> &BiasState {
        &self.bias
    }

    /// Runs one full filter iteration for an IMU sample and an optional
    /// simultaneous GNSS fix.
    pub fn step(
        &mut self,
        imu: &ImuSample,
        gnss: Option<&GnssSample>,
    ) -> Result<StepOutput, FilterError> {
        let standstill = self.update_zvu(imu);

        let orientation = self.map.orientation_at(self.last_d)?;
        let a = compensate_gravity(&imu.accel, &orientation, self.cfg.g);

        let z = if standstill {
            self.bias.update(BiasAxis::AccelX, a.x);
            self.bias.update(BiasAxis::AccelY, a.y);
            self.bias.update(BiasAxis::GyroZ, imu.gyro.z);
            // Zero-velocity update: clamp speeds and freeze the cloud for
            // this step (no diffusion, zeroed inputs).
            for s in self.particles.states_mut() {
                s.v = 0.0;
            }
            Measurement {
                gnss: gnss.copied(),
                omega_z: 0.0,
                a_y: 0.0,
            }
        } else {
            let u = self.bias.apply(BiasAxis::AccelX, a.x);
            self.particles.predict(u, &self.cfg);
            Measurement {
                gnss: gnss.copied(),
                omega_z: self.bias.apply(BiasAxis::GyroZ, imu.gyro.z),
                a_y: self.bias.apply(BiasAxis::AccelY, a.y),
            }
        };

        match self.particles.weight(&z, self.map, &self.cfg) {
            Ok(()) => {}
            Err(FilterError::AllWeightsZero { .. }) => {
                let Some(fix) = gnss else {
                    return Err(FilterError::AllWeightsZero { t: imu.t });
                };
                // Recover by re-seeding the population around the fix.
                let proj = self.map.project_point(fix.p_x, fix.p_y);
                let sigma_d = 2.0 * fix.sigma_px.max(fix.sigma_py).max(1.0);
                self.particles.reinitialize(&Prior::Gaussian {
                    d_mean: proj.d.clamp(self.map.d_first(), self.map.d_last()),
                    d_sigma: sigma_d,
                    v_mean: fix.v,
                    v_sigma: 2.0 * fix.sigma_v.max(0.1),
                });
                self.reinit_count += 1;
            }
            Err(e) => return Err(e),
        }

        let n_eff = self.particles.effective_sample_size();
        let curve_trigger = if self.cfg.curve_resample {
            let kappa = self.map.lookup(self.last_d)?.kappa.abs();
            let now_on_curve = kappa > self.cfg.curve_resample_threshold;
            let entered = now_on_curve && !self.on_curve;
            self.on_curve = now_on_curve;
            entered
        } else {
            false
        };
        let resampled = n_eff < self.cfg.n_threshold() || curve_trigger;
        if resampled {
            self.particles.resample();
        }

        let estimate = self.particles.estimate(self.map, &self.cfg)?;
        self.last_d = estimate.d;
        Ok(StepOutput {
            t: imu.t,
            estimate,
            n_eff,
            resampled,
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
        let window = self.zvu_window.make_contiguous();
        detect_standstill(window, &self.cfg.zvu_config()).unwrap_or(false)
    }
}
