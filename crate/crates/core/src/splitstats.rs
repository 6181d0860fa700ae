//! Two-sample split statistics on a shared time grid.
//!
//! Both statistics are computed from per-group weighted counts at the distinct
//! times of the pooled sample. The forest's threshold scan maintains the same
//! count tables incrementally, so a split scored during growth and the same
//! split scored through [`logrank_score`] / [`gray_score`] agree exactly.

use crate::curves::{tabulate, WeightedSample};
use crate::error::Result;
use crate::survdata::Status;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitScore {
    pub value: f64,
    pub abs_value: f64,
    /// False when the statistic carries no information (never wins a split).
    pub valid: bool,
}

impl SplitScore {
    pub fn new(value: f64) -> Self {
        Self {
            value,
            abs_value: value.abs(),
            valid: true,
        }
    }

    pub fn invalid() -> Self {
        Self {
            value: 0.0,
            abs_value: 0.0,
            valid: false,
        }
    }

    /// True when `self` should replace `other` as the incumbent best split.
    pub fn beats(&self, other: Option<&SplitScore>) -> bool {
        self.valid && other.is_none_or(|o| self.abs_value > o.abs_value)
    }
}

/// Weighted counts of one group at each time of a shared grid.
#[derive(Debug, Clone)]
pub(crate) struct GroupCounts {
    pub removed: Vec<f64>,
    pub events: Vec<f64>,
    pub cause1: Vec<f64>,
    pub total: f64,
}

impl GroupCounts {
    pub fn zeros(m: usize) -> Self {
        Self {
            removed: vec![0.0; m],
            events: vec![0.0; m],
            cause1: vec![0.0; m],
            total: 0.0,
        }
    }

    pub fn add(&mut self, k: usize, status: Status, w: f64) {
        self.removed[k] += w;
        self.total += w;
        if status.is_event() {
            self.events[k] += w;
        }
        if status == Status::Cause1 {
            self.cause1[k] += w;
        }
    }

    pub fn remove(&mut self, k: usize, status: Status, w: f64) {
        self.removed[k] -= w;
        self.total -= w;
        if status.is_event() {
            self.events[k] -= w;
        }
        if status == Status::Cause1 {
            self.cause1[k] -= w;
        }
    }
}

/// Standardized log-rank statistic `U / sqrt(V)`, positive when the left group
/// has more events than expected.
pub(crate) fn logrank_counts(left: &GroupCounts, right: &GroupCounts) -> SplitScore {
    let (mut y_l, mut y_r) = (left.total, right.total);
    let (mut u, mut v) = (0.0, 0.0);
    for k in 0..left.removed.len() {
        let (d_l, d_r) = (left.events[k], right.events[k]);
        let d = d_l + d_r;
        if d > 0.0 {
            let y = y_l + y_r;
            // d_L - Y_L d / Y, written so that swapping groups negates it exactly
            u += (d_l * y_r - d_r * y_l) / y;
            if y > 1.0 {
                v += y_l * y_r * d * (y - d) / (y * y * (y - 1.0));
            }
        }
        y_l -= left.removed[k];
        y_r -= right.removed[k];
    }
    if v > 0.0 {
        SplitScore::new(u / v.sqrt())
    } else {
        SplitScore::invalid()
    }
}

/// `sum dF(t) / (1 - F(t-))` over cause-1 jumps at times `<= tau`, with `F`
/// the Aalen-Johansen cause-1 incidence of the group.
fn gray_integral(g: &GroupCounts, times: &[f64], tau: f64) -> f64 {
    let (mut y, mut s, mut f) = (g.total, 1.0_f64, 0.0_f64);
    let mut acc = 0.0;
    for (k, &t) in times.iter().enumerate() {
        if t > tau {
            break;
        }
        let d = g.events[k];
        if d > 0.0 {
            let df = s * g.cause1[k] / y;
            if df > 0.0 {
                let room = 1.0 - f;
                assert!(room > 0.0, "cause-1 jump after incidence mass was exhausted");
                acc += df / room;
                f += df;
            }
            s = if d >= y { 0.0 } else { s * (1.0 - d / y) };
        }
        y -= g.removed[k];
    }
    acc
}

/// Unstandardized Gray score with unit weight, truncated at `tau`.
pub(crate) fn gray_counts(left: &GroupCounts, right: &GroupCounts, times: &[f64], tau: f64) -> SplitScore {
    if left.total <= 0.0 || right.total <= 0.0 {
        return SplitScore::invalid();
    }
    SplitScore::new(gray_integral(left, times, tau) - gray_integral(right, times, tau))
}

/// Builds both groups' count tables on the pooled distinct-time grid.
fn pooled_counts(left: &[WeightedSample], right: &[WeightedSample]) -> Result<(Vec<f64>, GroupCounts, GroupCounts)> {
    let pooled: Vec<WeightedSample> = left.iter().chain(right).copied().collect();
    let (table, _) = tabulate(&pooled)?;
    let times: Vec<f64> = table.iter().map(|c| c.time).collect();
    let fill = |side: &[WeightedSample]| {
        let mut g = GroupCounts::zeros(times.len());
        for s in side {
            let k = times.partition_point(|&t| t < s.time);
            g.add(k, s.status, s.weight);
        }
        g
    };
    let (l, r) = (fill(left), fill(right));
    Ok((times, l, r))
}

pub fn logrank_score(left: &[WeightedSample], right: &[WeightedSample]) -> SplitScore {
    match pooled_counts(left, right) {
        Ok((_, l, r)) => logrank_counts(&l, &r),
        Err(_) => SplitScore::invalid(),
    }
}

pub fn gray_score(left: &[WeightedSample], right: &[WeightedSample], tau: f64) -> SplitScore {
    match pooled_counts(left, right) {
        Ok((times, l, r)) => gray_counts(&l, &r, &times, tau),
        Err(_) => SplitScore::invalid(),
    }
}
