//! The discrete track map: an ordered table of arc-length-indexed track
//! points, each carrying 3D position, curvature, and orientation. The map
//! is queried as a look-up table with linear interpolation between the two
//! bracketing points, which turns the one-dimensional along-track state of
//! the filter into plane coordinates and expected inertial measurements.
//!
//! Curvature is derived by fitting a cubic spline through an RDP-reduced
//! subset of the recorded points and evaluating it back at the original
//! density; the reduction suppresses spline oscillation from closely
//! spaced survey points without altering the stored 2D coordinates.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    arc_length, lerp_angle, simplify_rdp_indices, GeometryError, Orientation, PlaneCurve,
};

/// Slack allowed when checking the chord inequality at construction.
pub const CHORD_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("track map needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("degenerate geometry: repeated plane coordinates at index {index}")]
    DegenerateGeometry { index: usize },
    #[error("arc-length identifiers must be strictly increasing (violated at index {index})")]
    NonMonotone { index: usize },
    #[error("non-finite feature value at index {index}")]
    NotFinite { index: usize },
    #[error(
        "chord inequality violated at index {index}: plane distance {chord} exceeds arc step {step}"
    )]
    ChordInequality { index: usize, chord: f64, step: f64 },
    #[error("distance {d} outside map range [{d_first}, {d_last}]")]
    OutOfMapRange { d: f64, d_first: f64, d_last: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// The seven geometric features recorded (or interpolated) at one
/// along-track distance: plane position, elevation, curvature, and
/// roll/pitch/yaw of the track frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapFeatures {
    pub p_x: f64,
    pub p_y: f64,
    pub p_z: f64,
    pub kappa: f64,
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
}

impl MapFeatures {
    pub fn orientation(&self) -> Orientation {
        Orientation::new(self.theta_x, self.theta_y, self.theta_z)
    }

    fn is_finite(&self) -> bool {
        [
            self.p_x,
            self.p_y,
            self.p_z,
            self.kappa,
            self.theta_x,
            self.theta_y,
            self.theta_z,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// One recorded map point: the arc-length identifier plus its features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub d: f64,
    pub features: MapFeatures,
}

/// Ordered set of track points, immutable after construction and safe to
/// query concurrently.
#[derive(Debug, Clone)]
pub struct TrackMap {
    id: String,
    points: Vec<TrackPoint>,
}

/// Options for [`build_map`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildOptions {
    /// RDP tolerance in meters applied before spline fitting. Kept below
    /// typical track-survey noise so the curve shape is preserved.
    pub rdp_epsilon: f64,
    /// Moving-average window (in points) applied to the derived pitch
    /// sequence; 1 disables smoothing.
    pub orientation_smoothing_window: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            rdp_epsilon: 0.05,
            orientation_smoothing_window: 1,
        }
    }
}

/// Builds a track map from a raw 3D polyline.
///
/// Arc length comes from cumulative plane chords, curvature and heading
/// from the reduced-spline pipeline, and pitch from central differences of
/// elevation. Roll is not derivable from coordinates and defaults to zero.
/// The stored 2D coordinates are the input coordinates, unchanged.
pub fn build_map(
    id: &str,
    raw: &[(f64, f64, f64)],
    options: &BuildOptions,
) -> Result<TrackMap, MapError> {
    // Drop consecutive duplicates before anything else.
    let mut pts: Vec<(f64, f64, f64)> = Vec::with_capacity(raw.len());
    for &p in raw {
        if pts
            .last()
            .is_none_or(|q: &(f64, f64, f64)| (q.0 - p.0).hypot(q.1 - p.1) > 1e-9)
        {
            pts.push(p);
        }
    }
    if pts.len() < 4 {
        return Err(MapError::TooFewPoints {
            min: 4,
            got: pts.len(),
        });
    }
    let plane: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1)).collect();
    let d = arc_length(&plane);
    for (i, w) in d.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(MapError::DegenerateGeometry { index: i + 1 });
        }
    }

    // Reduce, fit, and evaluate back at the original density. If the
    // reduction leaves too few points for a cubic fit (a perfectly
    // straight survey), pad with evenly spaced originals.
    let mut retained = simplify_rdp_indices(&plane, options.rdp_epsilon);
    if retained.len() < 4 {
        let n = pts.len();
        retained = vec![0, n / 3, 2 * n / 3, n - 1];
        retained.dedup();
        if retained.len() < 4 {
            retained = (0..n).collect();
        }
    }
    let reduced: Vec<(f64, f64, f64)> = retained
        .iter()
        .map(|&i| (d[i], plane[i].0, plane[i].1))
        .collect();
    let curve = PlaneCurve::fit(&reduced)?;

    // Pitch from central differences of elevation over arc length.
    let n = pts.len();
    let mut pitch: Vec<f64> = (0..n)
        .map(|i| {
            let (lo, hi) = match i {
                0 => (0, 1),
                _ if i == n - 1 => (n - 2, n - 1),
                _ => (i - 1, i + 1),
            };
            ((pts[hi].2 - pts[lo].2) / (d[hi] - d[lo])).atan()
        })
        .collect();
    if options.orientation_smoothing_window > 1 {
        pitch = moving_average(&pitch, options.orientation_smoothing_window);
    }

    let points: Vec<TrackPoint> = (0..n)
        .map(|i| {
            let kappa = curve.curvature_at(d[i])?;
            let heading = curve.tangent_heading_at(d[i])?;
            Ok(TrackPoint {
                d: d[i],
                features: MapFeatures {
                    p_x: pts[i].0,
                    p_y: pts[i].1,
                    p_z: pts[i].2,
                    kappa,
                    theta_x: 0.0,
                    theta_y: pitch[i],
                    theta_z: heading,
                },
            })
        })
        .collect::<Result<_, GeometryError>>()?;

    TrackMap::new(id, points)
}

fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

impl TrackMap {
    /// Validates and wraps an ordered point list.
    pub fn new(id: &str, points: Vec<TrackPoint>) -> Result<Self, MapError> {
        if points.len() < 2 {
            return Err(MapError::TooFewPoints {
                min: 2,
                got: points.len(),
            });
        }
        for (i, p) in points.iter().enumerate() {
            if !p.d.is_finite() || !p.features.is_finite() {
                return Err(MapError::NotFinite { index: i });
            }
        }
        for i in 1..points.len() {
            if points[i].d <= points[i - 1].d {
                return Err(MapError::NonMonotone { index: i });
            }
            let chord = (points[i].features.p_x - points[i - 1].features.p_x)
                .hypot(points[i].features.p_y - points[i - 1].features.p_y);
            let step = points[i].d - points[i - 1].d;
            if chord > step + CHORD_SLACK {
                return Err(MapError::ChordInequality {
                    index: i,
                    chord,
                    step,
                });
            }
        }
        Ok(TrackMap {
            id: id.to_string(),
            points,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn d_first(&self) -> f64 {
        self.points[0].d
    }

    pub fn d_last(&self) -> f64 {
        self.points.last().unwrap().d
    }

    pub fn total_length(&self) -> f64 {
        self.d_last() - self.d_first()
    }

    pub fn contains(&self, d: f64) -> bool {
        d >= self.d_first() && d <= self.d_last()
    }

    /// Interpolated features at distance `d`.
    ///
    /// The two recorded points bracketing `d` are blended linearly; angles
    /// blend along the shorter circular arc. A query at a stored identifier
    /// returns that point's features exactly. Queries outside the mapped
    /// span are errors, not clamps: a silently clamped particle would
    /// accumulate position error, so the caller decides (the particle
    /// filter responds by assigning zero weight).
    pub fn lookup(&self, d: f64) -> Result<MapFeatures, MapError> {
        if !self.contains(d) {
            return Err(MapError::OutOfMapRange {
                d,
                d_first: self.d_first(),
                d_last: self.d_last(),
            });
        }
        let idx = self
            .points
            .partition_point(|p| p.d <= d)
            .clamp(1, self.points.len() - 1);
        let lo = &self.points[idx - 1];
        let hi = &self.points[idx];
        let r = (d - lo.d) / (hi.d - lo.d);
        let a = &lo.features;
        let b = &hi.features;
        let lerp = |x: f64, y: f64| (1.0 - r) * x + r * y;
        Ok(MapFeatures {
            p_x: lerp(a.p_x, b.p_x),
            p_y: lerp(a.p_y, b.p_y),
            p_z: lerp(a.p_z, b.p_z),
            kappa: lerp(a.kappa, b.kappa),
            theta_x: lerp_angle(a.theta_x, b.theta_x, r),
            theta_y: lerp_angle(a.theta_y, b.theta_y, r),
            theta_z: lerp_angle(a.theta_z, b.theta_z, r),
        })
    }

    /// Track orientation at distance `d`; same error surface as [`lookup`].
    pub fn orientation_at(&self, d: f64) -> Result<Orientation, MapError> {
        Ok(self.lookup(d)?.orientation())
    }

    /// Projects a plane point onto the nearest map segment.
    pub fn project_point(&self, x: f64, y: f64) -> Projection {
        let mut best = Projection {
            d: self.d_first(),
            distance: f64::INFINITY,
            across: 0.0,
        };
        for w in self.points.windows(2) {
            let (ax, ay) = (w[0].features.p_x, w[0].features.p_y);
            let (bx, by) = (w[1].features.p_x, w[1].features.p_y);
            let dx = bx - ax;
            let dy = by - ay;
            let len_sq = dx * dx + dy * dy;
            let t = if len_sq == 0.0 {
                0.0
            } else {
                (((x - ax) * dx + (y - ay) * dy) / len_sq).clamp(0.0, 1.0)
            };
            let cx = ax + t * dx;
            let cy = ay + t * dy;
            let dist = (x - cx).hypot(y - cy);
            if dist < best.distance {
                // Signed across-track offset: positive to the left of the
                // direction of increasing d.
                let len = len_sq.sqrt();
                let across = if len == 0.0 {
                    dist
                } else {
                    (dx * (y - ay) - dy * (x - ax)) / len
                };
                best = Projection {
                    d: w[0].d + t * (w[1].d - w[0].d),
                    distance: dist,
                    across,
                };
            }
        }
        best
    }

    /// Writes the map in the interchange CSV schema
    /// `d,p_x,p_y,p_z,kappa,theta_x,theta_y,theta_z`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MapError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "d", "p_x", "p_y", "p_z", "kappa", "theta_x", "theta_y", "theta_z",
        ])
        .map_err(csv_io)?;
        for p in &self.points {
            let f = &p.features;
            w.write_record(
                [
                    p.d, f.p_x, f.p_y, f.p_z, f.kappa, f.theta_x, f.theta_y, f.theta_z,
                ]
                .map(|v| format_float(v)),
            )
            .map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_file<P: AsRef<Path>>(&self, path: P) -> Result<(), MapError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a map from the interchange CSV schema. Parse failures name
    /// the offending data row (1-based, excluding the header).
    pub fn read_csv<R: Read>(id: &str, reader: R) -> Result<Self, MapError> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
        let mut points = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| MapError::Parse {
                row,
                message: e.to_string(),
            })?;
            if rec.len() != 8 {
                return Err(MapError::Parse {
                    row,
                    message: format!("expected 8 fields, got {}", rec.len()),
                });
            }
            let mut vals = [0.0f64; 8];
            for (j, field) in rec.iter().enumerate() {
                vals[j] = field.trim().parse().map_err(|_| MapError::Parse {
                    row,
                    message: format!("invalid number {:?} in column {}", field, j + 1),
                })?;
            }
            points.push(TrackPoint {
                d: vals[0],
                features: MapFeatures {
                    p_x: vals[1],
                    p_y: vals[2],
                    p_z: vals[3],
                    kappa: vals[4],
                    theta_x: vals[5],
                    theta_y: vals[6],
                    theta_z: vals[7],
                },
            });
        }
        TrackMap::new(id, points)
    }

    pub fn read_csv_file<P: AsRef<Path>>(path: P) -> Result<Self, MapError> {
        let id = path
            .as_ref()
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "map".to_string());
        let file = std::fs::File::open(path)?;
        Self::read_csv(&id, std::io::BufReader::new(file))
    }
}

/// Result of projecting a plane point onto the track.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// Arc length of the closest point on the polyline.
    pub d: f64,
    /// Unsigned distance from the query point to the track.
    pub distance: f64,
    /// Signed across-track offset, positive left of travel.
    pub across: f64,
}

fn csv_io(e: csv::Error) -> MapError {
    MapError::Io(std::io::Error::other(e))
}

pub(crate) fn format_float(v: f64) -> String {
    // Shortest round-trip formatting; stable across runs for bit-exact
    // reproducibility of emitted files.
    format!("{v}")
}

/// Reads a raw `x,y,z` polyline (header row required) for [`build_map`].
pub fn read_raw_xyz<R: Read>(reader: R) -> Result<Vec<(f64, f64, f64)>, MapError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| MapError::Parse {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != 3 {
            return Err(MapError::Parse {
                row,
                message: format!("expected 3 fields (x,y,z), got {}", rec.len()),
            });
        }
        let mut vals = [0.0f64; 3];
        for (j, field) in rec.iter().enumerate() {
            vals[j] = field.trim().parse().map_err(|_| MapError::Parse {
                row,
                message: format!("invalid number {:?} in column {}", field, j + 1),
            })?;
        }
        rows.push((vals[0], vals[1], vals[2]));
    }
    Ok(rows)
}

pub fn read_raw_xyz_file<P: AsRef<Path>>(path: P) -> Result<Vec<(f64, f64, f64)>, MapError> {
    let file = std::fs::File::open(path)?;
    read_raw_xyz(std::io::BufReader::new(file))
}
