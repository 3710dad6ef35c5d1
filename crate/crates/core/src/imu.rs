//! IMU preprocessing: gravity compensation using the map orientation,
//! the simplified additive bias model with moving-average updates at
//! stand-still, and the combined acceleration/angular-rate stand-still
//! detector that drives zero-velocity updates.
//!
//! Pipeline order is fixed: gravity compensation, then bias correction,
//! then filter input.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Orientation;
use crate::track_map::format_float;

#[derive(Debug, Error)]
pub enum ImuError {
    #[error("stand-still detector needs a window of {needed} samples, got {got}")]
    WindowTooShort { needed: usize, got: usize },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One raw 6-DOF IMU record: specific force and angular rate in the
/// sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub accel: Vector3<f64>,
    pub gyro: Vector3<f64>,
}

/// One GNSS fix in the map frame, with receiver-reported uncertainties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnssSample {
    pub t: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub v: f64,
    pub sigma_px: f64,
    pub sigma_py: f64,
    pub sigma_v: f64,
}

/// Removes the gravity component from a raw accelerometer reading using
/// the track orientation: `a = a_raw - R_inv(theta) * [0, 0, g]`.
///
/// The orientation comes from the map at the previous position estimate,
/// never from gyro integration.
pub fn compensate_gravity(raw_accel: &Vector3<f64>, o: &Orientation, g: f64) -> Vector3<f64> {
    raw_accel - o.apply_inverse(&Vector3::new(0.0, 0.0, g))
}

/// Stand-still detector configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ZvuConfig {
    /// Window length in samples.
    pub window: usize,
    /// Threshold on the sample variance of the acceleration magnitude.
    pub accel_var_threshold: f64,
    /// Threshold on the mean angular-rate magnitude.
    pub rate_threshold: f64,
}

impl Default for ZvuConfig {
    fn default() -> Self {
        // One second of samples at the default 10 Hz rate; thresholds sit
        // well between stationary sensor noise and running vibration.
        ZvuConfig {
            window: 10,
            accel_var_threshold: 0.01,
            rate_threshold: 0.005,
        }
    }
}

/// Combined acceleration and angular-rate stand-still test over a full
/// window: variance of the acceleration magnitude below threshold AND
/// mean angular-rate magnitude below threshold.
pub fn detect_standstill(window: &[ImuSample], cfg: &ZvuConfig) -> Result<bool, ImuError> {
    if window.len() != cfg.window {
        return Err(ImuError::WindowTooShort {
            needed: cfg.window,
            got: window.len(),
        });
    }
    let n = window.len() as f64;
    let mags: Vec<f64> = window.iter().map(|s| s.accel.norm()).collect();
    let mean = mags.iter().sum::<f64>() / n;
    let var = if window.len() > 1 {
        mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let mean_rate = window.iter().map(|s| s.gyro.norm()).sum::<f64>() / n;
    Ok(var < cfg.accel_var_threshold && mean_rate < cfg.rate_threshold)
}

/// The three bias channels the filter consumes; the remaining axes are
/// passed through uncorrected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasAxis {
    AccelX,
    AccelY,
    GyroZ,
}

/// Per-axis additive bias estimates, each a moving average over the last
/// `n` raw readings accepted during stand-still.
#[derive(Debug, Clone)]
pub struct BiasState {
    n: usize,
    buffers: [VecDeque<f64>; 3],
}

impl BiasState {
    pub fn new(window: usize) -> Self {
        let n = window.max(1);
        BiasState {
            n,
            buffers: [
                VecDeque::with_capacity(n),
                VecDeque::with_capacity(n),
                VecDeque::with_capacity(n),
            ],
        }
    }

    fn buffer(&self, axis: BiasAxis) -> &VecDeque<f64> {
        &self.buffers[axis as usize]
    }

    /// Accepts a raw stand-still reading into the moving-average window.
    /// Must only be called while a stand-still is detected; outside
    /// stand-stills the estimate stays frozen.
    pub fn update(&mut self, axis: BiasAxis, raw: f64) {
        let buf = &mut self.buffers[axis as usize];
        if buf.len() == self.n {
            buf.pop_front();
        }
        buf.push_back(raw);
    }

    /// Current bias estimate: the mean of the buffered readings, zero
    /// before the first stand-still.
    pub fn estimate(&self, axis: BiasAxis) -> f64 {
        let buf = self.buffer(axis);
        if buf.is_empty() {
            0.0
        } else {
            buf.iter().sum::<f64>() / buf.len() as f64
        }
    }

    /// Corrects one measurement: `value - B`.
    pub fn apply(&self, axis: BiasAxis, value: f64) -> f64 {
        value - self.estimate(axis)
    }

    pub fn window(&self) -> usize {
        self.n
    }
}

/// Writes an IMU stream in the schema
/// `t,a_x,a_y,a_z,omega_x,omega_y,omega_z`.
pub fn write_imu_csv<W: Write>(writer: W, samples: &[ImuSample]) -> Result<(), ImuError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "a_x", "a_y", "a_z", "omega_x", "omega_y", "omega_z"])
        .map_err(csv_io)?;
    for s in samples {
        w.write_record(
            [
                s.t, s.accel.x, s.accel.y, s.accel.z, s.gyro.x, s.gyro.y, s.gyro.z,
            ]
            .map(format_float),
        )
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_imu_csv<R: Read>(reader: R) -> Result<Vec<ImuSample>, ImuError> {
    let rows = numeric_rows(reader, 7, "t,a_x,a_y,a_z,omega_x,omega_y,omega_z")?;
    Ok(rows
        .into_iter()
        .map(|v| ImuSample {
            t: v[0],
            accel: Vector3::new(v[1], v[2], v[3]),
            gyro: Vector3::new(v[4], v[5], v[6]),
        })
        .collect())
}

pub fn read_imu_csv_file<P: AsRef<Path>>(path: P) -> Result<Vec<ImuSample>, ImuError> {
    let file = std::fs::File::open(path)?;
    read_imu_csv(std::io::BufReader::new(file))
}

/// Writes a GNSS stream in the schema
/// `t,p_x,p_y,v,sigma_px,sigma_py,sigma_v`.
pub fn write_gnss_csv<W: Write>(writer: W, samples: &[GnssSample]) -> Result<(), ImuError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "p_x", "p_y", "v", "sigma_px", "sigma_py", "sigma_v"])
        .map_err(csv_io)?;
    for s in samples {
        w.write_record(
            [s.t, s.p_x, s.p_y, s.v, s.sigma_px, s.sigma_py, s.sigma_v].map(format_float),
        )
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_gnss_csv<R: Read>(reader: R) -> Result<Vec<GnssSample>, ImuError> {
    let rows = numeric_rows(reader, 7, "t,p_x,p_y,v,sigma_px,sigma_py,sigma_v")?;
    Ok(rows
        .into_iter()
        .map(|v| GnssSample {
            t: v[0],
            p_x: v[1],
            p_y: v[2],
            v: v[3],
            sigma_px: v[4],
            sigma_py: v[5],
            sigma_v: v[6],
        })
        .collect())
}

pub fn read_gnss_csv_file<P: AsRef<Path>>(path: P) -> Result<Vec<GnssSample>, ImuError> {
    let file = std::fs::File::open(path)?;
    read_gnss_csv(std::io::BufReader::new(file))
}

fn numeric_rows<R: Read>(
    reader: R,
    fields: usize,
    schema: &str,
) -> Result<Vec<Vec<f64>>, ImuError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| ImuError::Parse {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != fields {
            return Err(ImuError::Parse {
                row,
                message: format!("expected {fields} fields ({schema}), got {}", rec.len()),
            });
        }
        let mut vals = Vec::with_capacity(fields);
        for (j, field) in rec.iter().enumerate() {
            vals.push(field.trim().parse().map_err(|_| ImuError::Parse {
                row,
                message: format!("invalid number {:?} in column {}", field, j + 1),
            })?);
        }
        rows.push(vals);
    }
    Ok(rows)
}

fn csv_io(e: csv::Error) -> ImuError {
    ImuError::Io(std::io::Error::other(e))
}
