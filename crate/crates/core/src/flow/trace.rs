//! CSV export of evaluations, for plotting trajectory fans.

use std::io::Write;

use serde::Serialize;

use super::{EvalQuery, FlowBackend, FlowElement, FlowError, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub s: f64,
    pub x: f64,
    pub t: f64,
    /// Empty when the query failed; `status` says why.
    pub value: Option<f64>,
    pub trajectory_id: Option<u64>,
    pub status: &'static str,
}

pub(crate) fn status_of(e: &FlowError) -> &'static str {
    match e {
        FlowError::AboveRange { .. } => "above_range",
        FlowError::OffGridTime(_) => "off_grid",
        FlowError::OutOfHorizon(_) => "out_of_horizon",
        FlowError::InvalidQuery(_) => "invalid",
    }
}

impl TraceRow {
    pub fn evaluate<B: FlowBackend>(f: &FlowElement<B>, q: &EvalQuery<B::Value>) -> Self {
        let (value, trajectory_id, status) = match f.evaluate_traced(q) {
            Ok((v, id)) => (Some(v.to_f64()), id, "ok"),
            Err(e) => (None, None, status_of(&e)),
        };
        TraceRow {
            s: q.s.to_f64(),
            x: q.x.to_f64(),
            t: q.t.to_f64(),
            value,
            trajectory_id,
            status,
        }
    }
}

/// Header `s,x,t,value,trajectory_id,status`, one row per entry.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], w: W) -> csv::Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(["s", "x", "t", "value", "trajectory_id", "status"])?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
