use super::metrics::MetricsReport;
use super::rollout::RolloutLog;
use super::sweep::SweepRow;
use crate::error::{Error, Result};
use std::io::Write;

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn num(x: f64) -> String {
    x.to_string()
}

/// Header `t,q_*,qd_*,z1_*,u_*,z1sq,V`, where `qd_*` is the reference angle.
pub fn rollout_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for p in ["q", "qd", "z1", "u"] {
        h.extend((0..n).map(|i| format!("{p}_{i}")));
    }
    h.push("z1sq".into());
    h.push("V".into());
    h
}

pub fn write_rollout_csv<W: Write>(w: W, log: &RolloutLog) -> Result<()> {
    let n = log.dim();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(rollout_header(n)).map_err(csv_err)?;
    for r in &log.rows {
        let mut row = vec![num(r.t)];
        for v in [&r.q, &r.q_ref, &r.z1, &r.u] {
            row.extend(v.iter().map(|&x| num(x)));
        }
        row.push(num(r.z1sq));
        row.push(num(r.v));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Header `alpha,steady,bound`.
pub fn write_sweep_csv<W: Write>(w: W, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["alpha", "steady", "bound"])
        .map_err(csv_err)?;
    for r in rows {
        out.write_record([num(r.alpha), num(r.steady), num(r.bound)])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Header `label,steady,convergence`; an unsettled run has an empty
/// convergence field.
pub fn write_summary_csv<W: Write>(w: W, rows: &[MetricsReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["label", "steady", "convergence"])
        .map_err(csv_err)?;
    for r in rows {
        let conv = r.convergence_time.map(num).unwrap_or_default();
        out.write_record([r.label.clone(), num(r.steady_state_error), conv])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
