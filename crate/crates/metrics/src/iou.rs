use serde::{Deserialize, Serialize};

use crate::MetricError;

/// Closed temporal interval in seconds with `start < end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Result<Self, MetricError> {
        if !(start < end) || !start.is_finite() || !end.is_finite() {
            return Err(MetricError::DegenerateInterval { start, end });
        }
        Ok(Interval { start, end })
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

/// Intersection over union of two intervals.
pub fn temporal_iou(a: Interval, b: Interval) -> Result<f64, MetricError> {
    let a = Interval::new(a.start, a.end)?;
    let b = Interval::new(b.start, b.end)?;
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.len() + b.len() - inter;
    Ok(inter / union)
}
