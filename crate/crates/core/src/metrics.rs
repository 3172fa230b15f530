//! Tracking-error indices and packet timing statistics.
//!
//! Per joint, the RMS of the position error `q_leader - q_follower` over all
//! recorded ticks; the error index is the sum of those RMS values over the
//! seven joints. The same applies to velocities. The RMS divides by the
//! number of samples actually summed.

use serde::Serialize;

use crate::model::{Direction, JointVector, DOF};
use crate::sim::{PacketRecord, RunTrace, TickRecord};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorSeries {
    pub e: Vec<JointVector>,
    pub edot: Vec<JointVector>,
}

impl ErrorSeries {
    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorIndex {
    pub epsilon: f64,
    pub epsilon_dot: f64,
    pub rms: [f64; DOF],
    pub rms_dot: [f64; DOF],
}

pub fn error_series(trace: &RunTrace) -> ErrorSeries {
    tick_error_series(&trace.ticks)
}

pub fn tick_error_series(ticks: &[TickRecord]) -> ErrorSeries {
    let e = ticks.iter().map(|t| t.q_leader - t.q_follower).collect();
    let edot = ticks.iter().map(|t| t.qdot_leader - t.qdot_follower).collect();
    ErrorSeries { e, edot }
}

pub fn rms_per_joint(series: &[JointVector]) -> Result<[f64; DOF]> {
    if series.is_empty() {
        return Err(Error::Arity { expected: 1, got: 0 });
    }
    let mut sq = [0.0; DOF];
    for v in series {
        for (acc, x) in sq.iter_mut().zip(v.iter()) {
            *acc += x * x;
        }
    }
    let n = series.len() as f64;
    Ok(sq.map(|s| (s / n).sqrt()))
}

pub fn error_index(series: &ErrorSeries) -> Result<ErrorIndex> {
    if series.e.len() != series.edot.len() {
        return Err(Error::Shape(format!(
            "position and velocity error series differ in length ({} vs {})",
            series.e.len(),
            series.edot.len()
        )));
    }
    let rms = rms_per_joint(&series.e)?;
    let rms_dot = rms_per_joint(&series.edot)?;
    Ok(ErrorIndex {
        epsilon: rms.iter().sum(),
        epsilon_dot: rms_dot.iter().sum(),
        rms,
        rms_dot,
    })
}

/// Convenience: `error_index(error_series(trace))`.
pub fn trace_error_index(trace: &RunTrace) -> Result<ErrorIndex> {
    error_index(&error_series(trace))
}

/// Summary of a set of durations, in milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimingStats {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub range: f64,
    pub iqr: f64,
}

/// Quantile of sorted data from the inverse empirical CDF, averaging the
/// two neighbouring order statistics where the CDF is flat at `p`.
///
/// Depends on the data only through its empirical CDF, so repeating a
/// sample leaves every quantile unchanged.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let g = n as f64 * p;
    let j = g.floor() as usize;
    if j == 0 {
        return sorted[0];
    }
    if j >= n {
        return sorted[n - 1];
    }
    if g > j as f64 {
        sorted[j]
    } else {
        0.5 * (sorted[j - 1] + sorted[j])
    }
}

/// Timing statistics of microsecond durations, reported in ms.
pub fn timing_stats(samples_us: &[u64]) -> Result<TimingStats> {
    let ms: Vec<f64> = samples_us.iter().map(|&u| u as f64 / 1000.0).collect();
    timing_stats_ms(&ms)
}

pub fn timing_stats_ms(samples: &[f64]) -> Result<TimingStats> {
    if samples.is_empty() {
        return Err(Error::Arity { expected: 1, got: 0 });
    }
    let n = samples.len();
    // Shift by the first sample so constant data gives exactly zero spread.
    let x0 = samples[0];
    let offset = samples.iter().map(|x| x - x0).sum::<f64>() / n as f64;
    let mean = x0 + offset;
    let var = samples.iter().map(|x| (x - x0 - offset).powi(2)).sum::<f64>() / n as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(TimingStats {
        n,
        mean,
        sigma: var.sqrt(),
        range: sorted[n - 1] - sorted[0],
        iqr: quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn five_number(samples: &[f64]) -> Result<FiveNumber> {
    if samples.is_empty() {
        return Err(Error::Arity { expected: 1, got: 0 });
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(FiveNumber {
        min: s[0],
        q1: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q3: quantile_sorted(&s, 0.75),
        max: s[s.len() - 1],
    })
}

/// `(t_send, t_recv)` samples of one direction, in µs.
pub fn packet_delays(packets: &[PacketRecord], direction: Direction) -> (Vec<u64>, Vec<u64>) {
    packets
        .iter()
        .filter(|p| p.direction == direction)
        .map(|p| (p.t_send_us, p.t_recv_us))
        .unzip()
}
