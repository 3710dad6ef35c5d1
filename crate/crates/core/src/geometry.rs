//! Planar curve geometry used by the map builder and the IMU pipeline:
//! natural cubic splines on an arc-length parameter, signed curvature,
//! Ramer-Douglas-Peucker simplification, cumulative arc length, and the
//! sensor-to-world orientation frame.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("spline interpolation needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("curve parameter must be strictly increasing (violated at index {index})")]
    NonMonotoneParameter { index: usize },
    #[error("parameter {value} outside curve range [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
}

/// A twice-differentiable plane curve `(x(d), y(d))` parameterized by
/// arc length, realized as a natural cubic spline per coordinate.
///
/// Natural boundary conditions (zero second derivative at both ends) are
/// used since nothing is known about the track beyond the surveyed span.
#[derive(Debug, Clone)]
pub struct PlaneCurve {
    d: Vec<f64>,
    x: Spline,
    y: Spline,
}

impl PlaneCurve {
    /// Fits an interpolating natural cubic spline through `(d, x, y)` samples.
    pub fn fit(points: &[(f64, f64, f64)]) -> Result<Self, GeometryError> {
        if points.len() < 4 {
            return Err(GeometryError::TooFewPoints {
                min: 4,
                got: points.len(),
            });
        }
        for i in 1..points.len() {
            if points[i].0 <= points[i - 1].0 {
                return Err(GeometryError::NonMonotoneParameter { index: i });
            }
        }
        let d: Vec<f64> = points.iter().map(|p| p.0).collect();
        let xs: Vec<f64> = points.iter().map(|p| p.1).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.2).collect();
        let x = Spline::natural(&d, &xs);
        let y = Spline::natural(&d, &ys);
        Ok(PlaneCurve { d, x, y })
    }

    pub fn d_first(&self) -> f64 {
        self.d[0]
    }

    pub fn d_last(&self) -> f64 {
        *self.d.last().unwrap()
    }

    fn check_range(&self, d: f64) -> Result<(), GeometryError> {
        if d < self.d_first() || d > self.d_last() {
            return Err(GeometryError::OutOfRange {
                value: d,
                min: self.d_first(),
                max: self.d_last(),
            });
        }
        Ok(())
    }

    pub fn position_at(&self, d: f64) -> Result<(f64, f64), GeometryError> {
        self.check_range(d)?;
        let seg = segment_index(&self.d, d);
        Ok((self.x.value(seg, d), self.y.value(seg, d)))
    }

    /// Heading of the local tangent, in radians measured counter-clockwise
    /// from the +x axis.
    pub fn tangent_heading_at(&self, d: f64) -> Result<f64, GeometryError> {
        self.check_range(d)?;
        let seg = segment_index(&self.d, d);
        Ok(self.y.slope(seg, d).atan2(self.x.slope(seg, d)))
    }

    /// Signed curvature `(x'y'' - y'x'') / (x'^2 + y'^2)^(3/2)`.
    ///
    /// Positive for counter-clockwise turning in a right-handed map frame.
    pub fn curvature_at(&self, d: f64) -> Result<f64, GeometryError> {
        self.check_range(d)?;
        let seg = segment_index(&self.d, d);
        let xp = self.x.slope(seg, d);
        let yp = self.y.slope(seg, d);
        let xpp = self.x.second(seg, d);
        let ypp = self.y.second(seg, d);
        let speed_sq = xp * xp + yp * yp;
        Ok((xp * ypp - yp * xpp) / speed_sq.powf(1.5))
    }
}

/// One-dimensional natural cubic spline over shared knots.
#[derive(Debug, Clone)]
struct Spline {
    t: Vec<f64>,
    v: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    m: Vec<f64>,
}

impl Spline {
    fn natural(t: &[f64], v: &[f64]) -> Self {
        let n = t.len();
        let mut m = vec![0.0; n];
        // Thomas algorithm on the interior tridiagonal system.
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            let h0 = t[i] - t[i - 1];
            let h1 = t[i + 1] - t[i];
            diag[i] = (h0 + h1) / 3.0;
            upper[i] = h1 / 6.0;
            rhs[i] = (v[i + 1] - v[i]) / h1 - (v[i] - v[i - 1]) / h0;
        }
        for i in 2..n - 1 {
            let lower = (t[i] - t[i - 1]) / 6.0;
            let w = lower / diag[i - 1];
            diag[i] -= w * upper[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        for i in (1..n - 1).rev() {
            m[i] = (rhs[i] - upper[i] * m[i + 1]) / diag[i];
        }
        Spline {
            t: t.to_vec(),
            v: v.to_vec(),
            m,
        }
    }

    fn value(&self, seg: usize, at: f64) -> f64 {
        let h = self.t[seg + 1] - self.t[seg];
        let a = (self.t[seg + 1] - at) / h;
        let b = (at - self.t[seg]) / h;
        a * self.v[seg]
            + b * self.v[seg + 1]
            + ((a.powi(3) - a) * self.m[seg] + (b.powi(3) - b) * self.m[seg + 1]) * h * h / 6.0
    }

    fn slope(&self, seg: usize, at: f64) -> f64 {
        let h = self.t[seg + 1] - self.t[seg];
        let a = (self.t[seg + 1] - at) / h;
        let b = (at - self.t[seg]) / h;
        (self.v[seg + 1] - self.v[seg]) / h
            - (3.0 * a * a - 1.0) / 6.0 * h * self.m[seg]
            + (3.0 * b * b - 1.0) / 6.0 * h * self.m[seg + 1]
    }

    fn second(&self, seg: usize, at: f64) -> f64 {
        let h = self.t[seg + 1] - self.t[seg];
        let a = (self.t[seg + 1] - at) / h;
        let b = (at - self.t[seg]) / h;
        a * self.m[seg] + b * self.m[seg + 1]
    }
}

/// Index of the knot interval containing `at`; the last interval is closed
/// on the right so the final knot evaluates exactly.
fn segment_index(t: &[f64], at: f64) -> usize {
    let idx = t.partition_point(|&k| k <= at);
    idx.clamp(1, t.len() - 1) - 1
}

/// Ramer-Douglas-Peucker polyline simplification, returning the retained
/// indices into `points`. First and last points are always kept.
pub fn simplify_rdp_indices(points: &[(f64, f64)], epsilon: f64) -> Vec<usize> {
    if points.len() <= 2 || epsilon == 0.0 {
        return (0..points.len()).collect();
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    let mut stack = vec![(0usize, points.len() - 1)];
    while let Some((lo, hi)) = stack.pop() {
        if hi <= lo + 1 {
            continue;
        }
        let mut max_dist = 0.0;
        let mut max_idx = lo;
        for i in lo + 1..hi {
            let dist = point_segment_distance(points[i], points[lo], points[hi]);
            if dist > max_dist {
                max_dist = dist;
                max_idx = i;
            }
        }
        if max_dist > epsilon {
            keep[max_idx] = true;
            stack.push((lo, max_idx));
            stack.push((max_idx, hi));
        }
    }
    keep.iter()
        .enumerate()
        .filter_map(|(i, &k)| k.then_some(i))
        .collect()
}

/// Ramer-Douglas-Peucker simplification returning the reduced point list.
///
/// Every removed point lies within `epsilon` of the simplified polyline.
/// `epsilon == 0` returns the input verbatim, as does any input of fewer
/// than three points.
pub fn simplify_rdp(points: &[(f64, f64)], epsilon: f64) -> Vec<(f64, f64)> {
    simplify_rdp_indices(points, epsilon)
        .into_iter()
        .map(|i| points[i])
        .collect()
}

/// Distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (px, py) = p;
    let (ax, ay) = a;
    let (bx, by) = b;
    let dx = bx - ax;
    let dy = by - ay;
    let len_sq = dx * dx + dy * dy;
    if len_sq == 0.0 {
        return ((px - ax).powi(2) + (py - ay).powi(2)).sqrt();
    }
    let t = (((px - ax) * dx + (py - ay) * dy) / len_sq).clamp(0.0, 1.0);
    let cx = ax + t * dx;
    let cy = ay + t * dy;
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Cumulative chord lengths along a polyline, starting at zero.
///
/// The chord sum is the densest available approximation of along-track
/// distance for a sampled curve.
pub fn arc_length(points: &[(f64, f64)]) -> Vec<f64> {
    let mut d = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    d.push(0.0);
    for w in points.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        acc += ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        d.push(acc);
    }
    d
}

/// Normalizes an angle to `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a % std::f64::consts::TAU;
    if r <= -std::f64::consts::PI {
        r += std::f64::consts::TAU;
    } else if r > std::f64::consts::PI {
        r -= std::f64::consts::TAU;
    }
    r
}

/// Interpolates between two angles along the shorter circular arc.
pub fn lerp_angle(a: f64, b: f64, r: f64) -> f64 {
    normalize_angle(a + r * normalize_angle(b - a))
}

/// Roll, pitch, yaw of the track (and sensor) frame relative to the map
/// frame, intrinsic Z-Y-X composition. Positive pitch raises the forward
/// axis (climbing); positive yaw turns it counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Orientation {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Orientation {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Orientation {
            roll: normalize_angle(roll),
            pitch: normalize_angle(pitch),
            yaw: normalize_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Orientation {
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
        }
    }

    /// Sensor-to-world rotation matrix `R`, such that
    /// `a_world = R * a_sensor`.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let (sr, cr) = self.roll.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
        // Positive pitch tips the +x axis toward +z in a z-up frame.
        let ry = Matrix3::new(cp, 0.0, -sp, 0.0, 1.0, 0.0, sp, 0.0, cp);
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
        rz * ry * rx
    }

    /// Applies the rotation: sensor frame to world frame.
    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * v
    }

    /// Applies the inverse rotation: world frame to sensor frame.
    pub fn apply_inverse(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix().transpose() * v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn circle_points(radius: f64, spacing: f64, count: usize) -> Vec<(f64, f64, f64)> {
        (0..count)
            .map(|i| {
                let d = i as f64 * spacing;
                let t = d / radius;
                (d, radius * t.cos(), radius * t.sin())
            })
            .collect()
    }

    #[test]
    fn spline_interpolates_line_exactly() {
        let pts: Vec<(f64, f64, f64)> = (0..4).map(|i| (i as f64 * 10.0, i as f64 * 10.0, 0.0)).collect();
        let curve = PlaneCurve::fit(&pts).unwrap();
        for d in [0.0, 3.7, 15.0, 30.0] {
            let (x, y) = curve.position_at(d).unwrap();
            assert_abs_diff_eq!(x, d, epsilon = 1e-9);
            assert_abs_diff_eq!(y, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn spline_reproduces_knots() {
        let pts = circle_points(500.0, 10.0, 20);
        let curve = PlaneCurve::fit(&pts).unwrap();
        for &(d, x, y) in &pts {
            let (cx, cy) = curve.position_at(d).unwrap();
            assert_abs_diff_eq!(cx, x, epsilon = 1e-9);
            assert_abs_diff_eq!(cy, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn spline_on_diagonal_has_equal_derivatives() {
        // Points on y = x: symmetry forces x'(d) = y'(d).
        let pts: Vec<(f64, f64, f64)> = (0..6)
            .map(|i| {
                let s = i as f64 * 5.0;
                (s, s / 2f64.sqrt(), s / 2f64.sqrt())
            })
            .collect();
        let curve = PlaneCurve::fit(&pts).unwrap();
        for d in [1.0, 7.3, 12.0, 24.9] {
            let seg = segment_index(&curve.d, d);
            assert_abs_diff_eq!(
                curve.x.slope(seg, d),
                curve.y.slope(seg, d),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn spline_matches_circle_at_midpoints() {
        let radius = 500.0;
        let pts = circle_points(radius, 10.0, 20);
        let curve = PlaneCurve::fit(&pts).unwrap();
        // Interior midpoints: compare against the analytic circle.
        for i in 2..17 {
            let d = (i as f64 + 0.5) * 10.0;
            let (x, y) = curve.position_at(d).unwrap();
            let t = d / radius;
            let err = ((x - radius * t.cos()).powi(2) + (y - radius * t.sin()).powi(2)).sqrt();
            assert!(err < 1e-3, "midpoint error {err} at d={d}");
        }
    }

    #[test]
    fn curvature_zero_on_straight() {
        let pts: Vec<(f64, f64, f64)> = (0..8).map(|i| (i as f64 * 12.5, i as f64 * 12.5, 0.0)).collect();
        let curve = PlaneCurve::fit(&pts).unwrap();
        for d in [0.0, 10.0, 43.0, 87.5] {
            assert_abs_diff_eq!(curve.curvature_at(d).unwrap(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn curvature_matches_circle_radius() {
        let radius = 500.0;
        let pts = circle_points(radius, 10.0, 40);
        let curve = PlaneCurve::fit(&pts).unwrap();
        for i in 4..36 {
            let d = i as f64 * 10.0;
            let kappa = curve.curvature_at(d).unwrap();
            assert!(
                (kappa.abs() - 1.0 / radius).abs() < 0.01 / radius,
                "kappa {kappa} at d={d}"
            );
            assert!(kappa > 0.0, "counter-clockwise circle must have kappa > 0");
        }
    }

    #[test]
    fn curvature_sign_flips_across_s_curve() {
        // Two tangent arcs of radius 300 turning opposite ways.
        let radius = 300.0;
        let spacing = 5.0;
        let half = 30usize;
        let mut pts = Vec::new();
        for i in 0..half {
            let d = i as f64 * spacing;
            let t = d / radius;
            pts.push((d, radius * t.sin(), radius * (1.0 - t.cos())));
        }
        // Tangency at angle t_half; second arc bends the other way.
        let t_half = (half - 1) as f64 * spacing / radius;
        let (jx, jy) = (radius * t_half.sin(), radius * (1.0 - t_half.cos()));
        let (hx, hy) = (t_half.cos(), t_half.sin());
        // Center of the opposite arc lies at the join plus radius along the
        // inward normal (hy, -hx).
        let (cx, cy) = (jx + radius * hy, jy - radius * hx);
        for i in 1..half {
            let s = i as f64 * spacing;
            let d = (half - 1) as f64 * spacing + s;
            let phi = t_half + std::f64::consts::PI / 2.0 - s / radius;
            pts.push((d, cx + radius * phi.cos(), cy + radius * phi.sin()));
        }
        let curve = PlaneCurve::fit(&pts).unwrap();
        let join_d = (half - 1) as f64 * spacing;
        let before = curve.curvature_at(join_d - 20.0).unwrap();
        let after = curve.curvature_at(join_d + 20.0).unwrap();
        assert!(before > 0.0 && after < 0.0, "kappa {before} -> {after}");
    }

    #[test]
    fn fit_rejects_bad_input() {
        let too_few = [(0.0, 0.0, 0.0), (1.0, 1.0, 0.0), (2.0, 2.0, 0.0)];
        assert!(matches!(
            PlaneCurve::fit(&too_few),
            Err(GeometryError::TooFewPoints { .. })
        ));
        let non_monotone = [
            (0.0, 0.0, 0.0),
            (1.0, 1.0, 0.0),
            (1.0, 2.0, 0.0),
            (3.0, 3.0, 0.0),
        ];
        assert!(matches!(
            PlaneCurve::fit(&non_monotone),
            Err(GeometryError::NonMonotoneParameter { index: 2 })
        ));
    }

    #[test]
    fn curvature_out_of_range_errors() {
        let pts = circle_points(500.0, 10.0, 5);
        let curve = PlaneCurve::fit(&pts).unwrap();
        assert!(matches!(
            curve.curvature_at(-1.0),
            Err(GeometryError::OutOfRange { .. })
        ));
        assert!(curve.curvature_at(40.0).is_ok());
        assert!(curve.curvature_at(40.1).is_err());
    }

    #[test]
    fn rdp_collapses_collinear_points() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.0)).collect();
        let out = simplify_rdp(&pts, 0.1);
        assert_eq!(out, vec![(0.0, 0.0), (9.0, 0.0)]);
    }

    #[test]
    fn rdp_epsilon_zero_is_identity() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.0)).collect();
        assert_eq!(simplify_rdp(&pts, 0.0), pts);
    }

    #[test]
    fn rdp_keeps_corner() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)];
        let out = simplify_rdp(&pts, 0.2);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn arc_length_basics() {
        assert_eq!(arc_length(&[(0.0, 0.0), (3.0, 4.0)]), vec![0.0, 5.0]);
        assert_eq!(arc_length(&[(2.0, 7.0)]), vec![0.0]);
        let square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)];
        assert_eq!(arc_length(&square), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rotation_identity_and_yaw() {
        let v = Vector3::new(1.0, 2.0, 3.0);
        let id = Orientation::identity().apply(&v);
        assert_abs_diff_eq!(id, v, epsilon = 1e-15);

        let yawed = Orientation::new(0.0, 0.0, FRAC_PI_2).apply(&Vector3::x());
        assert_abs_diff_eq!(yawed, Vector3::y(), epsilon = 1e-12);
    }

    #[test]
    fn positive_pitch_points_up() {
        let o = Orientation::new(0.0, 0.02f64.atan(), 0.0);
        let fwd = o.apply(&Vector3::x());
        assert!(fwd.z > 0.0, "positive pitch must climb, got {fwd:?}");
    }

    #[test]
    fn normalize_angle_range() {
        assert_abs_diff_eq!(normalize_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_angle(-3.5 * PI), 0.5 * PI, epsilon = 1e-12);
    }

    #[test]
    fn lerp_angle_takes_short_arc() {
        let a = PI - 0.1;
        let b = -PI + 0.1;
        let mid = lerp_angle(a, b, 0.5);
        assert_abs_diff_eq!(mid.abs(), PI, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(
            roll in -PI..PI, pitch in -PI..PI, yaw in -PI..PI,
            vx in -10.0..10.0, vy in -10.0..10.0, vz in -10.0..10.0,
        ) {
            let o = Orientation::new(roll, pitch, yaw);
            let r = o.rotation_matrix();
            let rtr = r.transpose() * r;
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((rtr[(i, j)] - expect).abs() < 1e-12);
                }
            }
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
            let v = Vector3::new(vx, vy, vz);
            let back = o.apply_inverse(&o.apply(&v));
            prop_assert!((back - v).norm() < 1e-12);
        }

        #[test]
        fn rdp_hausdorff_bound(
            seed_pts in proptest::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 2..40),
            epsilon in 0.001..5.0f64,
        ) {
            let out = simplify_rdp(&seed_pts, epsilon);
            prop_assert!(out.len() <= seed_pts.len());
            prop_assert_eq!(out[0], seed_pts[0]);
            prop_assert_eq!(*out.last().unwrap(), *seed_pts.last().unwrap());
            // Directed Hausdorff: every input point within epsilon of the
            // simplified polyline.
            for &p in &seed_pts {
                let mut best = f64::INFINITY;
                if out.len() == 1 {
                    best = point_segment_distance(p, out[0], out[0]);
                }
                for w in out.windows(2) {
                    best = best.min(point_segment_distance(p, w[0], w[1]));
                }
                prop_assert!(best <= epsilon + 1e-9, "point {:?} at {}", p, best);
            }
        }

        #[test]
        fn arc_length_monotone(
            pts in proptest::collection::vec((-100.0..100.0f64, -100.0..100.0f64), 1..50)
        ) {
            let d = arc_length(&pts);
            prop_assert_eq!(d[0], 0.0);
            for w in d.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
        }
    }
}
