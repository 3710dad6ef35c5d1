//! Train localization from track geometry and IMU data.
//!
//! The toolkit builds a discrete track map (an arc-length-indexed look-up
//! table of position, curvature, and orientation), preprocesses IMU
//! streams (gravity compensation, stand-still detection, bias
//! estimation), and runs two estimators over it: a map-constrained
//! particle filter whose state is just distance-along-track and speed,
//! and an EKF baseline with a CTRA motion model plus map matching.
//! A scenario generator and an evaluation harness reproduce GNSS-outage
//! experiments end to end.

pub mod ekf;
pub mod eval;
pub mod geometry;
pub mod imu;
pub mod pf;
pub mod records;
pub mod runner;
pub mod scenario;
pub mod seed;
pub mod track_map;

pub use ekf::{EkfConfig, EkfSession, EkfState};
pub use geometry::{Orientation, PlaneCurve};
pub use imu::{BiasState, GnssSample, ImuSample, ZvuConfig};
pub use pf::{FilterConfig, FilterState, Measurement, ParticleSet, PfSession, PositionEstimate};
pub use scenario::{Scenario, ScenarioSpec, SensorSpec, TrackSpec, VelocityProfile};
pub use track_map::{build_map, BuildOptions, MapFeatures, TrackMap, TrackPoint};
