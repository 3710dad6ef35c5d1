//! Batch execution of a filter over recorded sensor logs: pairs each IMU
//! sample with a simultaneous GNSS fix (within half a sample period),
//! initializes from the first fix when no explicit prior is given, and
//! collects the per-step estimates.

use thiserror::Error;

use crate::ekf::{EkfConfig, EkfError, EkfSession, EkfStepOutput};
use crate::imu::{GnssSample, ImuSample};
use crate::pf::{FilterConfig, FilterError, PfSession, Prior, StepOutput};
use crate::records::EstimateRecord;
use crate::track_map::TrackMap;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("empty IMU stream")]
    EmptyImu,
    #[error("IMU timestamps must be non-decreasing (violated at row {index})")]
    UnorderedImu { index: usize },
    #[error("no GNSS fix available and no explicit prior given")]
    NoInitialFix,
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Ekf(#[from] EkfError),
}

fn check_imu(imu: &[ImuSample]) -> Result<(), RunError> {
    if imu.is_empty() {
        return Err(RunError::EmptyImu);
    }
    for (i, w) in imu.windows(2).enumerate() {
        if w[1].t < w[0].t {
            return Err(RunError::UnorderedImu { index: i + 1 });
        }
    }
    Ok(())
}

/// Median IMU sample period, used when no explicit period is configured.
pub fn infer_period(imu: &[ImuSample]) -> Option<f64> {
    let mut gaps: Vec<f64> = imu
        .windows(2)
        .map(|w| w[1].t - w[0].t)
        .filter(|g| *g > 0.0)
        .collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(f64::total_cmp);
    Some(gaps[gaps.len() / 2])
}

/// Pairs each IMU sample with at most one GNSS fix at the same time step.
fn pair_gnss<'g>(
    imu: &[ImuSample],
    gnss: &'g [GnssSample],
    half_period: f64,
) -> Vec<Option<&'g GnssSample>> {
    let mut pairs = vec![None; imu.len()];
    let mut cursor = 0usize;
    for (i, sample) in imu.iter().enumerate() {
        while cursor < gnss.len() && gnss[cursor].t < sample.t - half_period {
            cursor += 1;
        }
        if cursor < gnss.len() && (gnss[cursor].t - sample.t).abs() <= half_period {
            pairs[i] = Some(&gnss[cursor]);
            cursor += 1;
        }
    }
    pairs
}

/// Prior centered on a GNSS fix projected onto the track.
pub fn prior_from_fix(map: &TrackMap, fix: &GnssSample) -> Prior {
    let proj = map.project_point(fix.p_x, fix.p_y);
    Prior::Gaussian {
        d_mean: proj.d.clamp(map.d_first(), map.d_last()),
        d_sigma: fix.sigma_px.hypot(fix.sigma_py).max(1.0),
        v_mean: fix.v,
        v_sigma: (3.0 * fix.sigma_v).max(0.2),
    }
}

/// Runs the particle filter over a full log. Returns one output per IMU
/// sample.
pub fn run_pf(
    map: &TrackMap,
    cfg: FilterConfig,
    imu: &[ImuSample],
    gnss: &[GnssSample],
    prior: Option<Prior>,
    seed: u64,
) -> Result<Vec<StepOutput>, RunError> {
    check_imu(imu)?;
    let prior = match prior {
        Some(p) => p,
        None => prior_from_fix(map, gnss.first().ok_or(RunError::NoInitialFix)?),
    };
    let pairs = pair_gnss(imu, gnss, cfg.t_sample / 2.0);
    let mut session = PfSession::new(map, cfg, &prior, seed)?;
    let mut out = Vec::with_capacity(imu.len());
    for (sample, fix) in imu.iter().zip(pairs) {
        out.push(session.step(sample, fix)?);
    }
    Ok(out)
}

/// Runs the EKF baseline over a full log.
pub fn run_ekf(
    map: &TrackMap,
    cfg: EkfConfig,
    imu: &[ImuSample],
    gnss: &[GnssSample],
) -> Result<Vec<EkfStepOutput>, RunError> {
    check_imu(imu)?;
    let first = gnss.first().ok_or(RunError::NoInitialFix)?;
    let pairs = pair_gnss(imu, gnss, cfg.t_sample / 2.0);
    let mut session = EkfSession::from_fix(map, cfg, first)?;
    let mut out = Vec::with_capacity(imu.len());
    for (sample, fix) in imu.iter().zip(pairs) {
        out.push(session.step(sample, fix)?);
    }
    Ok(out)
}

pub fn pf_estimates(outputs: &[StepOutput]) -> Vec<EstimateRecord> {
    outputs
        .iter()
        .map(|o| EstimateRecord {
            t: o.t,
            d_hat: o.estimate.d,
            v_hat: o.estimate.v,
            p_x_hat: o.estimate.p_x,
            p_y_hat: o.estimate.p_y,
            sigma_d: o.estimate.sigma_d,
            n_eff: Some(o.n_eff),
            resampled: Some(o.resampled),
            zvu: Some(o.zvu),
            trace_p: None,
        })
        .collect()
}

pub fn ekf_estimates(outputs: &[EkfStepOutput]) -> Vec<EstimateRecord> {
    outputs
        .iter()
        .map(|o| EstimateRecord {
            t: o.t,
            d_hat: o.d,
            v_hat: o.v,
            p_x_hat: o.p_x,
            p_y_hat: o.p_y,
            sigma_d: o.sigma_d,
            n_eff: None,
            resampled: None,
            zvu: Some(o.zvu),
            trace_p: Some(o.trace_p),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn imu_at(t: f64) -> ImuSample {
        ImuSample {
            t,
            accel: Vector3::new(0.0, 0.0, 9.81),
            gyro: Vector3::zeros(),
        }
    }

    #[test]
    fn pairing_is_one_to_one() {
        let imu: Vec<ImuSample> = (0..30).map(|k| imu_at(k as f64 * 0.1)).collect();
        let gnss: Vec<GnssSample> = (0..3)
            .map(|k| GnssSample {
                t: k as f64,
                p_x: 0.0,
                p_y: 0.0,
                v: 0.0,
                sigma_px: 1.0,
                sigma_py: 1.0,
                sigma_v: 0.1,
            })
            .collect();
        let pairs = pair_gnss(&imu, &gnss, 0.05);
        let hits: Vec<usize> = pairs
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|_| i))
            .collect();
        assert_eq!(hits, vec![0, 10, 20]);
    }

    #[test]
    fn unordered_imu_rejected() {
        let imu = vec![imu_at(0.1), imu_at(0.0)];
        assert!(matches!(
            check_imu(&imu),
            Err(RunError::UnorderedImu { index: 1 })
        ));
    }

    #[test]
    fn infer_period_median() {
        let imu: Vec<ImuSample> = (0..11).map(|k| imu_at(k as f64 * 0.1)).collect();
        let p = infer_period(&imu).unwrap();
        assert!((p - 0.1).abs() < 1e-12);
    }
}
