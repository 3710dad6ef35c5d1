//! Interchange CSV schemas shared between the filters, the scenario
//! bundles, and the evaluation tools.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::track_map::format_float;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One ground-truth row: `t,d,v,p_x,p_y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRecord {
    pub t: f64,
    pub d: f64,
    pub v: f64,
    pub p_x: f64,
    pub p_y: f64,
}

pub fn write_truth_csv<W: Write>(writer: W, rows: &[TruthRecord]) -> Result<(), RecordError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "d", "v", "p_x", "p_y"]).map_err(csv_io)?;
    for r in rows {
        w.write_record([r.t, r.d, r.v, r.p_x, r.p_y].map(format_float))
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_csv<R: Read>(reader: R) -> Result<Vec<TruthRecord>, RecordError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| RecordError::Parse {
            row,
            message: e.to_string(),
        })?;
        if rec.len() != 5 {
            return Err(RecordError::Parse {
                row,
                message: format!("expected 5 fields (t,d,v,p_x,p_y), got {}", rec.len()),
            });
        }
        let mut vals = [0.0f64; 5];
        for (j, field) in rec.iter().enumerate() {
            vals[j] = field.trim().parse().map_err(|_| RecordError::Parse {
                row,
                message: format!("invalid number {:?} in column {}", field, j + 1),
            })?;
        }
        rows.push(TruthRecord {
            t: vals[0],
            d: vals[1],
            v: vals[2],
            p_x: vals[3],
            p_y: vals[4],
        });
    }
    Ok(rows)
}

pub fn read_truth_csv_file<P: AsRef<Path>>(path: P) -> Result<Vec<TruthRecord>, RecordError> {
    let file = std::fs::File::open(path)?;
    read_truth_csv(std::io::BufReader::new(file))
}

/// One filter-estimate row. The particle filter emits
/// `t,d_hat,v_hat,p_x_hat,p_y_hat,sigma_d,n_eff,resampled,zvu`; the EKF
/// baseline drops the particle columns and appends the covariance trace:
/// `t,d_hat,v_hat,p_x_hat,p_y_hat,sigma_d,zvu,trace_P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRecord {
    pub t: f64,
    pub d_hat: f64,
    pub v_hat: f64,
    pub p_x_hat: f64,
    pub p_y_hat: f64,
    pub sigma_d: f64,
    pub n_eff: Option<f64>,
    pub resampled: Option<bool>,
    pub zvu: Option<bool>,
    pub trace_p: Option<f64>,
}

pub fn write_pf_estimates<W: Write>(writer: W, rows: &[EstimateRecord]) -> Result<(), RecordError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "t",
        "d_hat",
        "v_hat",
        "p_x_hat",
        "p_y_hat",
        "sigma_d",
        "n_eff",
        "resampled",
        "zvu",
    ])
    .map_err(csv_io)?;
    for r in rows {
        w.write_record([
            format_float(r.t),
            format_float(r.d_hat),
            format_float(r.v_hat),
            format_float(r.p_x_hat),
            format_float(r.p_y_hat),
            format_float(r.sigma_d),
            format_float(r.n_eff.unwrap_or(f64::NAN)),
            flag(r.resampled),
            flag(r.zvu),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ekf_estimates<W: Write>(
    writer: W,
    rows: &[EstimateRecord],
) -> Result<(), RecordError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "t", "d_hat", "v_hat", "p_x_hat", "p_y_hat", "sigma_d", "zvu", "trace_P",
    ])
    .map_err(csv_io)?;
    for r in rows {
        w.write_record([
            format_float(r.t),
            format_float(r.d_hat),
            format_float(r.v_hat),
            format_float(r.p_x_hat),
            format_float(r.p_y_hat),
            format_float(r.sigma_d),
            flag(r.zvu),
            format_float(r.trace_p.unwrap_or(f64::NAN)),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn flag(v: Option<bool>) -> String {
    match v {
        Some(true) => "1".to_string(),
        Some(false) => "0".to_string(),
        None => String::new(),
    }
}

/// Reads either estimate schema; the header decides which optional
/// columns are populated.
pub fn read_estimates<R: Read>(reader: R) -> Result<Vec<EstimateRecord>, RecordError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| RecordError::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let required = ["t", "d_hat", "v_hat", "p_x_hat", "p_y_hat", "sigma_d"];
    let mut req_idx = [0usize; 6];
    for (k, name) in required.iter().enumerate() {
        req_idx[k] = col(name).ok_or_else(|| RecordError::Parse {
            row: 0,
            message: format!("missing column {name}"),
        })?;
    }
    let n_eff_idx = col("n_eff");
    let resampled_idx = col("resampled");
    let zvu_idx = col("zvu");
    let trace_idx = col("trace_P");

    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| RecordError::Parse {
            row,
            message: e.to_string(),
        })?;
        let num = |idx: usize| -> Result<f64, RecordError> {
            rec.get(idx)
                .and_then(|f| f.trim().parse().ok())
                .ok_or_else(|| RecordError::Parse {
                    row,
                    message: format!("invalid number in column {}", idx + 1),
                })
        };
        let opt_num = |idx: Option<usize>| idx.and_then(|i| rec.get(i)?.trim().parse().ok());
        let opt_flag = |idx: Option<usize>| {
            idx.and_then(|i| match rec.get(i)?.trim() {
                "1" | "true" => Some(true),
                "0" | "false" => Some(false),
                _ => None,
            })
        };
        rows.push(EstimateRecord {
            t: num(req_idx[0])?,
            d_hat: num(req_idx[1])?,
            v_hat: num(req_idx[2])?,
            p_x_hat: num(req_idx[3])?,
            p_y_hat: num(req_idx[4])?,
            sigma_d: num(req_idx[5])?,
            n_eff: opt_num(n_eff_idx),
            resampled: opt_flag(resampled_idx),
            zvu: opt_flag(zvu_idx),
            trace_p: opt_num(trace_idx),
        });
    }
    Ok(rows)
}

pub fn read_estimates_file<P: AsRef<Path>>(path: P) -> Result<Vec<EstimateRecord>, RecordError> {
    let file = std::fs::File::open(path)?;
    read_estimates(std::io::BufReader::new(file))
}

fn csv_io(e: csv::Error) -> RecordError {
    RecordError::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_schemas_round_trip() {
        let pf_row = EstimateRecord {
            t: 1.5,
            d_hat: 123.4,
            v_hat: 10.0,
            p_x_hat: 120.0,
            p_y_hat: -4.0,
            sigma_d: 0.8,
            n_eff: Some(512.0),
            resampled: Some(true),
            zvu: Some(false),
            trace_p: None,
        };
        let mut buf = Vec::new();
        write_pf_estimates(&mut buf, &[pf_row]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,d_hat,v_hat,p_x_hat,p_y_hat,sigma_d,n_eff,resampled,zvu\n"));
        let back = read_estimates(&buf[..]).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].n_eff, Some(512.0));
        assert_eq!(back[0].resampled, Some(true));
        assert_eq!(back[0].trace_p, None);

        let ekf_row = EstimateRecord {
            trace_p: Some(3.25),
            n_eff: None,
            resampled: None,
            zvu: Some(true),
            ..pf_row
        };
        let mut buf = Vec::new();
        write_ekf_estimates(&mut buf, &[ekf_row]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,d_hat,v_hat,p_x_hat,p_y_hat,sigma_d,zvu,trace_P\n"));
        let back = read_estimates(&buf[..]).unwrap();
        assert_eq!(back[0].trace_p, Some(3.25));
        assert_eq!(back[0].n_eff, None);
        assert_eq!(back[0].zvu, Some(true));
    }

    #[test]
    fn truth_round_trip() {
        let rows = vec![TruthRecord {
            t: 0.1,
            d: 5.0,
            v: 2.0,
            p_x: 5.0,
            p_y: 0.0,
        }];
        let mut buf = Vec::new();
        write_truth_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_truth_csv(&buf[..]).unwrap(), rows);
    }
}
