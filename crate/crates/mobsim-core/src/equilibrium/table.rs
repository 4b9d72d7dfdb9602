//! Segment travel-time tables indexed by time period.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;

/// Per (segment, period) travel times in seconds. Periods partition the day;
/// lookups past the last period clamp to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeTable {
    period_s: u32,
    n_periods: usize,
    n_segments: usize,
    /// Segment-major: `values[seg * n_periods + period]`.
    values: Vec<f64>,
}

impl TravelTimeTable {
    pub fn new(n_segments: usize, n_periods: usize, period_s: u32, initial: f64) -> Self {
        TravelTimeTable {
            period_s,
            n_periods,
            n_segments,
            values: vec![initial; n_segments * n_periods],
        }
    }

    /// Table of free-flow traversal times for every segment and period.
    pub fn free_flow(net: &Network, period_s: u32, horizon_s: u32) -> Self {
        let n_periods = (horizon_s as usize).div_ceil(period_s as usize).max(1);
        let mut table = TravelTimeTable::new(net.segments().len(), n_periods, period_s, 0.0);
        for (i, seg) in net.segments().iter().enumerate() {
            let t = seg.free_flow_traversal_s();
            for p in 0..n_periods {
                table.values[i * n_periods + p] = t;
            }
        }
        table
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn period_s(&self) -> u32 {
        self.period_s
    }

    pub fn period_of(&self, at_s: f64) -> usize {
        if at_s <= 0.0 {
            return 0;
        }
        ((at_s / self.period_s as f64) as usize).min(self.n_periods - 1)
    }

    /// Travel time of a segment entered at clock time `at_s`.
    pub fn time_s(&self, segment_idx: usize, at_s: f64) -> f64 {
        self.values[segment_idx * self.n_periods + self.period_of(at_s)]
    }

    pub fn get(&self, segment_idx: usize, period: usize) -> f64 {
        self.values[segment_idx * self.n_periods + period]
    }

    pub fn set(&mut self, segment_idx: usize, period: usize, value: f64) {
        self.values[segment_idx * self.n_periods + period] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn check_shape(&self, other: &TravelTimeTable) -> Result<()> {
        if self.n_segments != other.n_segments
            || self.n_periods != other.n_periods
            || self.period_s != other.period_s
        {
            return Err(Error::ShapeMismatch(format!(
                "({} segments x {} periods) vs ({} x {})",
                self.n_segments, self.n_periods, other.n_segments, other.n_periods
            )));
        }
        Ok(())
    }

    /// Elementwise blend `self * w + observed * (1 - w)`.
    pub fn blend(&self, observed: &TravelTimeTable, w: f64) -> Result<TravelTimeTable> {
        self.check_shape(observed)?;
        let mut out = self.clone();
        for (o, (a, b)) in out
            .values
            .iter_mut()
            .zip(self.values.iter().zip(observed.values.iter()))
        {
            *o = a * w + b * (1.0 - w);
        }
        Ok(out)
    }

    /// Largest relative elementwise change from `other` to `self`.
    pub fn max_rel_gap(&self, other: &TravelTimeTable) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs() / b.abs().max(1e-9))
            .fold(0.0, f64::max))
    }

    pub fn mean_s(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Blend of the previous iterate with observed supply times:
/// `t_next = t_prev * w + t_observed * (1 - w)`.
pub fn blend_travel_times(
    t_prev: &TravelTimeTable,
    t_observed: &TravelTimeTable,
    w: f64,
) -> Result<TravelTimeTable> {
    t_prev.blend(t_observed, w)
}
