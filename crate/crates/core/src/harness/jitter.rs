//! Periodicity of a driver's output, measured from a trace.

use serde::{Deserialize, Serialize};

use crate::bridge::DriverId;
use crate::error::{Error, Result};
use crate::time::Time;
use crate::trace::Trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterReport {
    pub expected_period: Time,
    pub edge_count: usize,
    pub min_period: Time,
    pub max_period: Time,
    pub mean_period: f64,
    pub max_abs_deviation: Time,
}

/// Instants at which the level written to `driver` changes. The first write
/// counts as an edge.
pub fn edges(trace: &Trace, driver: DriverId) -> Vec<Time> {
    let mut last = None;
    let mut out = Vec::new();
    for r in trace.driver_writes(driver) {
        if r.data != last {
            out.push(r.t);
            last = r.data;
        }
    }
    out
}

/// Instants of every write to `driver`, whether or not the level changed.
pub fn write_times(trace: &Trace, driver: DriverId) -> Vec<Time> {
    trace.driver_writes(driver).map(|r| r.t).collect()
}

pub fn measure_jitter(trace: &Trace, driver: DriverId, expected_period: Time) -> Result<JitterReport> {
    jitter_of_edges(&edges(trace, driver), expected_period)
}

/// Jitter of the edges falling in `[from, to)`.
pub fn measure_jitter_window(
    trace: &Trace,
    driver: DriverId,
    expected_period: Time,
    from: Time,
    to: Time,
) -> Result<JitterReport> {
    let e: Vec<Time> = edges(trace, driver)
        .into_iter()
        .filter(|t| *t >= from && *t < to)
        .collect();
    jitter_of_edges(&e, expected_period)
}

pub fn jitter_of_edges(edges: &[Time], expected_period: Time) -> Result<JitterReport> {
    if edges.len() < 2 {
        return Err(Error::usage(format!("need at least two edges, found {}", edges.len())));
    }
    let periods: Vec<Time> = edges.windows(2).map(|w| w[1] - w[0]).collect();
    let min_period = *periods.iter().min().expect("non-empty");
    let max_period = *periods.iter().max().expect("non-empty");
    let mean_period = periods.iter().map(|p| *p as f64).sum::<f64>() / periods.len() as f64;
    let max_abs_deviation = periods
        .iter()
        .map(|p| p.abs_diff(expected_period))
        .max()
        .expect("non-empty");
    Ok(JitterReport {
        expected_period,
        edge_count: edges.len(),
        min_period,
        max_period,
        mean_period,
        max_abs_deviation,
    })
}
