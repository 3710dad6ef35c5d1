//! Run evaluation: absolute position error time series, along/across
//! decomposition against the truth tangent, empirical error CDFs with the
//! 3-sigma quantile, and plot-ready report exports.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::records::{EstimateRecord, TruthRecord};
use crate::scenario::{in_outage, OutageWindow};
use crate::track_map::format_float;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no overlapping timestamps between estimates and truth (tolerance {tolerance} s)")]
    AlignmentGap { tolerance: f64 },
    #[error("empty error series")]
    EmptySeries,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-step position error against ground truth.
#[derive(Debug, Clone, Copy)]
pub struct ErrorRecord {
    pub t: f64,
    pub euclidean: f64,
    /// Signed error along the truth tangent (positive = ahead).
    pub along: f64,
    /// Signed error across the truth tangent (positive = left).
    pub across: f64,
    pub gnss_available: bool,
}

/// Time series of position errors for one run.
#[derive(Debug, Clone, Default)]
pub struct ErrorSeries {
    pub records: Vec<ErrorRecord>,
}

/// Joins estimates to truth by nearest timestamp (within half the median
/// estimate period) and decomposes each position error into the truth
/// tangent frame.
pub fn compute_errors(
    estimates: &[EstimateRecord],
    truth: &[TruthRecord],
    outages: &[OutageWindow],
) -> Result<ErrorSeries, EvalError> {
    let tolerance = half_median_period(estimates);
    if estimates.is_empty() || truth.is_empty() {
        return Err(EvalError::AlignmentGap { tolerance });
    }
    let mut records = Vec::with_capacity(estimates.len());
    let mut cursor = 0usize;
    for est in estimates {
        while cursor + 1 < truth.len()
            && (truth[cursor + 1].t - est.t).abs() <= (truth[cursor].t - est.t).abs()
        {
            cursor += 1;
        }
        let tr = &truth[cursor];
        if (tr.t - est.t).abs() > tolerance {
            continue;
        }
        let ex = est.p_x_hat - tr.p_x;
        let ey = est.p_y_hat - tr.p_y;
        let (tx, ty) = truth_tangent(truth, cursor);
        records.push(ErrorRecord {
            t: est.t,
            euclidean: ex.hypot(ey),
            along: ex * tx + ey * ty,
            across: -ex * ty + ey * tx,
            gnss_available: !in_outage(outages, est.t),
        });
    }
    if records.is_empty() {
        return Err(EvalError::AlignmentGap { tolerance });
    }
    Ok(ErrorSeries { records })
}

fn half_median_period(estimates: &[EstimateRecord]) -> f64 {
    let mut gaps: Vec<f64> = estimates
        .windows(2)
        .map(|w| (w[1].t - w[0].t).abs())
        .filter(|g| *g > 0.0)
        .collect();
    if gaps.is_empty() {
        return 0.05;
    }
    gaps.sort_by(f64::total_cmp);
    0.5 * gaps[gaps.len() / 2]
}

/// Unit tangent of the truth trajectory at index `i`, falling back to the
/// last well-defined direction through stops.
fn truth_tangent(truth: &[TruthRecord], i: usize) -> (f64, f64) {
    let dir = |a: &TruthRecord, b: &TruthRecord| -> Option<(f64, f64)> {
        let dx = b.p_x - a.p_x;
        let dy = b.p_y - a.p_y;
        let n = dx.hypot(dy);
        (n > 1e-9).then_some((dx / n, dy / n))
    };
    // Search forward then backward for a moving pair around i.
    for j in (0..=i).rev() {
        if j + 1 < truth.len() {
            if let Some(t) = dir(&truth[j], &truth[j + 1]) {
                return t;
            }
        }
    }
    for j in i..truth.len().saturating_sub(1) {
        if let Some(t) = dir(&truth[j], &truth[j + 1]) {
            return t;
        }
    }
    (1.0, 0.0)
}

/// Empirical CDF of the euclidean errors.
#[derive(Debug, Clone)]
pub struct ErrorCdf {
    /// Sorted (error, cumulative probability) points; right-continuous
    /// step function reaching exactly 1.
    pub points: Vec<(f64, f64)>,
}

impl ErrorCdf {
    /// Smallest error value whose cumulative probability reaches `p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        for &(err, cum) in &self.points {
            if cum >= p {
                return err;
            }
        }
        self.points.last().map(|&(e, _)| e).unwrap_or(f64::NAN)
    }

    /// The 3-sigma error figure: the 99.73% empirical quantile.
    pub fn three_sigma(&self) -> f64 {
        self.quantile(0.9973)
    }
}

pub fn error_cdf(series: &ErrorSeries) -> Result<ErrorCdf, EvalError> {
    if series.records.is_empty() {
        return Err(EvalError::EmptySeries);
    }
    let mut errors: Vec<f64> = series.records.iter().map(|r| r.euclidean).collect();
    errors.sort_by(f64::total_cmp);
    let n = errors.len() as f64;
    let points = errors
        .into_iter()
        .enumerate()
        .map(|(i, e)| (e, (i + 1) as f64 / n))
        .collect();
    Ok(ErrorCdf { points })
}

/// Aggregate statistics for one run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub name: String,
    pub samples: usize,
    pub mean: f64,
    pub median: f64,
    pub three_sigma: f64,
    pub max: f64,
    /// RMS euclidean error over steps with GNSS available.
    pub rms_gnss: f64,
    /// RMS euclidean error over outage steps (NaN if none).
    pub rms_outage: f64,
}

pub fn summarize(name: &str, series: &ErrorSeries) -> Result<RunSummary, EvalError> {
    let cdf = error_cdf(series)?;
    let recs = &series.records;
    let mean = recs.iter().map(|r| r.euclidean).sum::<f64>() / recs.len() as f64;
    let rms = |pred: &dyn Fn(&ErrorRecord) -> bool| -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for r in recs.iter().filter(|r| pred(r)) {
            sum += r.euclidean * r.euclidean;
            n += 1;
        }
        if n > 0 {
            (sum / n as f64).sqrt()
        } else {
            f64::NAN
        }
    };
    Ok(RunSummary {
        name: name.to_string(),
        samples: recs.len(),
        mean,
        median: cdf.quantile(0.5),
        three_sigma: cdf.three_sigma(),
        max: recs.iter().map(|r| r.euclidean).fold(0.0, f64::max),
        rms_gnss: rms(&|r| r.gnss_available),
        rms_outage: rms(&|r| !r.gnss_available),
    })
}

/// Largest euclidean error inside each closed outage window.
pub fn outage_peaks(series: &ErrorSeries, outages: &[OutageWindow]) -> Vec<(OutageWindow, f64)> {
    outages
        .iter()
        .map(|w| {
            let peak = series
                .records
                .iter()
                .filter(|r| w.contains(r.t))
                .map(|r| r.euclidean)
                .fold(f64::NAN, f64::max);
            (*w, peak)
        })
        .collect()
}

/// Writes the report directory for a set of named runs: per-run error and
/// CDF tables, a combined summary, per-outage peaks, trace files, and a
/// gnuplot script with outage shading.
pub fn write_report<P: AsRef<Path>>(
    dir: P,
    runs: &[(String, ErrorSeries, Vec<EstimateRecord>)],
    truth: &[TruthRecord],
    outages: &[OutageWindow],
) -> Result<(), EvalError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;

    for (name, series, estimates) in runs {
        let mut f = std::fs::File::create(dir.join(format!("errors_{name}.csv")))?;
        writeln!(f, "t,euclidean,along,across,gnss_available")?;
        for r in &series.records {
            writeln!(
                f,
                "{},{},{},{},{}",
                format_float(r.t),
                format_float(r.euclidean),
                format_float(r.along),
                format_float(r.across),
                u8::from(r.gnss_available)
            )?;
        }
        let cdf = error_cdf(series)?;
        let mut f = std::fs::File::create(dir.join(format!("cdf_{name}.csv")))?;
        writeln!(f, "error,probability")?;
        for (e, p) in &cdf.points {
            writeln!(f, "{},{}", format_float(*e), format_float(*p))?;
        }
        let mut f = std::fs::File::create(dir.join(format!("trace_{name}.csv")))?;
        writeln!(f, "t,p_x_hat,p_y_hat")?;
        for r in estimates {
            writeln!(
                f,
                "{},{},{}",
                format_float(r.t),
                format_float(r.p_x_hat),
                format_float(r.p_y_hat)
            )?;
        }
    }

    let mut f = std::fs::File::create(dir.join("truth_trace.csv"))?;
    writeln!(f, "t,p_x,p_y")?;
    for r in truth {
        writeln!(
            f,
            "{},{},{}",
            format_float(r.t),
            format_float(r.p_x),
            format_float(r.p_y)
        )?;
    }

    let mut f = std::fs::File::create(dir.join("summary.csv"))?;
    writeln!(
        f,
        "run,samples,mean,median,three_sigma,max,rms_gnss,rms_outage"
    )?;
    for (name, series, _) in runs {
        let s = summarize(name, series)?;
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            s.name,
            s.samples,
            format_float(s.mean),
            format_float(s.median),
            format_float(s.three_sigma),
            format_float(s.max),
            format_float(s.rms_gnss),
            format_float(s.rms_outage)
        )?;
    }

    if !outages.is_empty() {
        let mut f = std::fs::File::create(dir.join("outage_peaks.csv"))?;
        writeln!(f, "run,start,end,max_error")?;
        for (name, series, _) in runs {
            for (w, peak) in outage_peaks(series, outages) {
                writeln!(
                    f,
                    "{},{},{},{}",
                    name,
                    format_float(w.start),
                    w.end.map(format_float).unwrap_or_default(),
                    format_float(peak)
                )?;
            }
        }
    }

    write_gnuplot(dir, runs, outages)?;
    Ok(())
}

fn write_gnuplot(
    dir: &Path,
    runs: &[(String, ErrorSeries, Vec<EstimateRecord>)],
    outages: &[OutageWindow],
) -> Result<(), EvalError> {
    let t_max = runs
        .iter()
        .flat_map(|(_, s, _)| s.records.last().map(|r| r.t))
        .fold(0.0f64, f64::max);
    let mut f = std::fs::File::create(dir.join("plots.gp"))?;
    writeln!(f, "set datafile separator ','")?;
    writeln!(f, "set terminal pngcairo size 1200,800")?;
    writeln!(f, "set output 'error_vs_time.png'")?;
    writeln!(f, "set xlabel 'time [s]'")?;
    writeln!(f, "set ylabel 'absolute position error [m]'")?;
    writeln!(f, "set key top left")?;
    for (i, w) in outages.iter().enumerate() {
        let end = w.end.unwrap_or(t_max.max(w.start));
        writeln!(
            f,
            "set object {} rectangle from {},graph 0 to {},graph 1 fc rgb 'gray' fs transparent solid 0.3 noborder behind",
            i + 1,
            format_float(w.start),
            format_float(end)
        )?;
    }
    let series = runs
        .iter()
        .map(|(name, _, _)| {
            format!("'errors_{name}.csv' using 1:2 with lines title '{name}'")
        })
        .collect::<Vec<_>>()
        .join(", \\\n     ");
    writeln!(f, "plot {series}")?;
    writeln!(f)?;
    writeln!(f, "unset object")?;
    writeln!(f, "set output 'error_cdf.png'")?;
    writeln!(f, "set xlabel 'absolute position error [m]'")?;
    writeln!(f, "set ylabel 'CDF'")?;
    writeln!(f, "set yrange [0:1]")?;
    let cdfs = runs
        .iter()
        .map(|(name, _, _)| format!("'cdf_{name}.csv' using 1:2 with steps title '{name}'"))
        .collect::<Vec<_>>()
        .join(", \\\n     ");
    writeln!(f, "plot {cdfs}")?;
    writeln!(f)?;
    writeln!(f, "set output 'map_trace.png'")?;
    writeln!(f, "set xlabel 'p_x [m]'")?;
    writeln!(f, "set ylabel 'p_y [m]'")?;
    writeln!(f, "set size ratio -1")?;
    writeln!(f, "set yrange [*:*]")?;
    let traces = std::iter::once(
        "'truth_trace.csv' using 2:3 with lines lw 2 title 'truth'".to_string(),
    )
    .chain(
        runs.iter()
            .map(|(name, _, _)| format!("'trace_{name}.csv' using 2:3 with lines title '{name}'")),
    )
    .collect::<Vec<_>>()
    .join(", \\\n     ");
    writeln!(f, "plot {traces}")?;
    Ok(())
}
