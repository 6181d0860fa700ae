//! Exact step-function curves and the nonparametric estimators built on them.
//!
//! Curves are right-continuous with left limits: `values[i]` holds from
//! `jump_times[i]` up to (not including) the next jump, and `initial_value`
//! holds before the first jump. No time grid is involved anywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::survdata::Status;

pub const CURVE_SCHEMA: &str = "itrcr.curve.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Survival,
    Cif,
}

impl CurveKind {
    pub fn initial_value(self) -> f64 {
        match self {
            CurveKind::Survival => 1.0,
            CurveKind::Cif => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CurveKind::Survival => "survival",
            CurveKind::Cif => "cif",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCurve")]
pub struct StepCurve {
    kind: CurveKind,
    initial_value: f64,
    jump_times: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawCurve {
    kind: CurveKind,
    initial_value: f64,
    jump_times: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawCurve> for StepCurve {
    type Error = Error;

    fn try_from(r: RawCurve) -> Result<Self> {
        let c = StepCurve::new(r.kind, r.jump_times, r.values)?;
        if c.initial_value != r.initial_value {
            return Err(Error::data(format!(
                "{} curve must start at {}",
                r.kind.as_str(),
                c.initial_value
            )));
        }
        Ok(c)
    }
}

impl StepCurve {
    /// Validated constructor; enforces the monotonicity and range of `kind`.
    pub fn new(kind: CurveKind, jump_times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if jump_times.len() != values.len() {
            return Err(Error::data("jump_times and values differ in length"));
        }
        if jump_times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::data("jump times must be finite and nonnegative"));
        }
        if jump_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::data("jump times must be strictly increasing"));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::data("curve values must lie in [0, 1]"));
        }
        let initial_value = kind.initial_value();
        let monotone = std::iter::once(&initial_value)
            .chain(values.iter())
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| match kind {
                CurveKind::Survival => w[1] <= w[0],
                CurveKind::Cif => w[1] >= w[0],
            });
        if !monotone {
            return Err(Error::data(format!("{} curve is not monotone", kind.as_str())));
        }
        Ok(Self {
            kind,
            initial_value,
            jump_times,
            values,
        })
    }

    /// `S ≡ 1` or `F ≡ 0`.
    pub fn flat(kind: CurveKind) -> Self {
        Self {
            kind,
            initial_value: kind.initial_value(),
            jump_times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_value
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Right-continuous evaluation `C(t)`.
    pub fn at(&self, t: f64) -> f64 {
        match self.jump_times.partition_point(|&x| x <= t) {
            0 => self.initial_value,
            i => self.values[i - 1],
        }
    }

    /// Left limit `C(t-)`.
    pub fn left_limit(&self, t: f64) -> f64 {
        match self.jump_times.partition_point(|&x| x < t) {
            0 => self.initial_value,
            i => self.values[i - 1],
        }
    }

    /// Two-column CSV `time,value` preceded by the `(0, initial_value)` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,value\n");
        s.push_str(&format!("0,{}\n", self.initial_value));
        for (t, v) in self.jump_times.iter().zip(&self.values) {
            s.push_str(&format!("{t},{v}\n"));
        }
        s
    }

    /// Writes `path` (CSV) and `path.json` (sidecar header with the kind).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = serde_json::json!({
            "schema": CURVE_SCHEMA,
            "kind": self.kind,
            "initial_value": self.initial_value,
            "n_jumps": self.jump_times.len(),
        });
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".json");
        write_atomic(path, self.to_csv().as_bytes())?;
        write_atomic(Path::new(&sidecar), serde_json::to_string_pretty(&header)?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut sidecar = path.as_os_str().to_owned();
        sidecar.push(".json");
        let header: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?)?;
        if header["schema"] != CURVE_SCHEMA {
            return Err(Error::data(format!("unsupported curve schema {}", header["schema"])));
        }
        let kind: CurveKind = serde_json::from_value(header["kind"].clone())?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut rows = rdr.deserialize::<(f64, f64)>();
        match rows.next() {
            Some(Ok((t, v))) if t == 0.0 && v == kind.initial_value() => {}
            _ => return Err(Error::data("curve CSV must start with the initial row")),
        }
        let (mut times, mut values) = (Vec::new(), Vec::new());
        for r in rows {
            let (t, v) = r?;
            times.push(t);
            values.push(v);
        }
        StepCurve::new(kind, times, values)
    }
}

/// One observation with its case weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSample {
    pub time: f64,
    pub status: Status,
    pub weight: f64,
}

impl WeightedSample {
    pub fn new(time: f64, status: Status, weight: f64) -> Self {
        Self { time, status, weight }
    }

    pub fn unit(time: f64, status: Status) -> Self {
        Self::new(time, status, 1.0)
    }
}

/// Weighted counts at one distinct time.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct TimeCounts {
    pub time: f64,
    /// Total weight leaving the risk set at this time (events and censorings).
    pub removed: f64,
    pub cause1: f64,
    pub cause2: f64,
}

impl TimeCounts {
    pub fn events(&self) -> f64 {
        self.cause1 + self.cause2
    }
}

/// Groups samples by distinct time, and returns the counts alongside the risk
/// weight `Y(t)` just before each time (suffix sums, so ties count as at risk).
pub(crate) fn tabulate(samples: &[WeightedSample]) -> Result<(Vec<TimeCounts>, Vec<f64>)> {
    if samples
        .iter()
        .any(|s| !(s.weight.is_finite() && s.weight >= 0.0 && s.time.is_finite()))
    {
        return Err(Error::numeric("weights must be finite and nonnegative"));
    }
    let mut sorted: Vec<&WeightedSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut table: Vec<TimeCounts> = Vec::new();
    for s in sorted {
        if table.last().is_none_or(|c| c.time != s.time) {
            table.push(TimeCounts {
                time: s.time,
                ..Default::default()
            });
        }
        let c = table.last_mut().expect("just pushed");
        c.removed += s.weight;
        match s.status {
            Status::Censored => {}
            Status::Cause1 => c.cause1 += s.weight,
            Status::Cause2 => c.cause2 += s.weight,
        }
    }
    let mut at_risk = vec![0.0; table.len()];
    let mut acc = 0.0;
    for (k, c) in table.iter().enumerate().rev() {
        acc += c.removed;
        at_risk[k] = acc;
    }
    if at_risk.first().is_none_or(|&y| y <= 0.0) {
        return Err(Error::numeric("empty risk set"));
    }
    Ok((table, at_risk))
}

/// Product-limit estimate of all-cause survival. Any nonzero status is an event;
/// at tied times events are counted before censorings.
pub fn kaplan_meier(samples: &[WeightedSample]) -> Result<StepCurve> {
    let (table, at_risk) = tabulate(samples)?;
    let (times, values) = km_steps(&table, &at_risk);
    Ok(StepCurve {
        kind: CurveKind::Survival,
        initial_value: 1.0,
        jump_times: times,
        values,
    })
}

fn km_steps(table: &[TimeCounts], at_risk: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut s = 1.0;
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for (c, &y) in table.iter().zip(at_risk) {
        let d = c.events();
        if d > 0.0 {
            s = if d >= y { 0.0 } else { s * (1.0 - d / y) };
            times.push(c.time);
            values.push(s);
        }
    }
    (times, values)
}

/// Aalen-Johansen cumulative incidence for `cause` (1 or 2): accumulates
/// `S(u-) dN_j(u) / Y(u)` over event times, with `S` the all-cause Kaplan-Meier
/// of the same samples. With no competing events this is exactly `1 - KM`.
pub fn aalen_johansen(samples: &[WeightedSample], cause: Status) -> Result<StepCurve> {
    let (table, at_risk) = tabulate(samples)?;
    let own = |c: &TimeCounts| match cause {
        Status::Cause1 => c.cause1,
        Status::Cause2 => c.cause2,
        Status::Censored => 0.0,
    };
    if cause == Status::Censored {
        return Err(Error::data("cause must be 1 or 2"));
    }
    let (mut times, mut values) = (Vec::new(), Vec::new());
    let competing = table.iter().any(|c| c.events() - own(c) > 0.0);
    if !competing {
        let (km_t, km_v) = km_steps(&table, &at_risk);
        for (t, s) in km_t.into_iter().zip(km_v) {
            times.push(t);
            values.push(1.0 - s);
        }
    } else {
        let (mut s, mut f) = (1.0_f64, 0.0_f64);
        for (c, &y) in table.iter().zip(&at_risk) {
            let d = c.events();
            if d <= 0.0 {
                continue;
            }
            let dj = own(c);
            if dj > 0.0 {
                f = (f + s * dj / y).min(1.0);
                times.push(c.time);
                values.push(f);
            }
            s = if d >= y { 0.0 } else { s * (1.0 - d / y) };
        }
    }
    Ok(StepCurve {
        kind: CurveKind::Cif,
        initial_value: 0.0,
        jump_times: times,
        values,
    })
}

/// Exact area under the step curve on `[0, tau]`, flat beyond the last jump.
pub fn truncated_auc(curve: &StepCurve, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::numeric(format!("tau must be positive, got {tau}")));
    }
    let (mut prev_t, mut prev_v) = (0.0, curve.initial_value);
    let mut area = 0.0;
    for (&t, &v) in curve.jump_times.iter().zip(&curve.values) {
        if t >= tau {
            break;
        }
        area += prev_v * (t - prev_t);
        prev_t = t;
        prev_v = v;
    }
    area += prev_v * (tau - prev_t);
    Ok(area)
}

/// Pointwise weighted mean on the union of jump times. `weights = None` gives
/// equal weights. Identical inputs reproduce the input bit-for-bit.
pub fn average_curves(curves: &[&StepCurve], weights: Option<&[f64]>) -> Result<StepCurve> {
    let first = *curves
        .first()
        .ok_or_else(|| Error::data("cannot average an empty list of curves"))?;
    let kind = first.kind;
    if curves.iter().any(|c| c.kind != kind) {
        return Err(Error::data("cannot average curves of mixed kinds"));
    }
    if let Some(w) = weights {
        if w.len() != curves.len() {
            return Err(Error::data("one weight per curve required"));
        }
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::numeric("weights must be nonnegative"));
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::numeric(format!("weights must sum to 1, got {total}")));
        }
    }
    if curves.len() == 1 {
        return Ok(first.clone());
    }

    let mut grid: Vec<f64> = curves.iter().flat_map(|c| c.jump_times.iter().copied()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let n = curves.len() as f64;
    let mut cursors = vec![0usize; curves.len()];
    let mut current: Vec<f64> = curves.iter().map(|c| c.initial_value).collect();
    let mut values = Vec::with_capacity(grid.len());
    let mut last = kind.initial_value();
    for &t in &grid {
        for (i, c) in curves.iter().enumerate() {
            let k = &mut cursors[i];
            while *k < c.jump_times.len() && c.jump_times[*k] <= t {
                current[i] = c.values[*k];
                *k += 1;
            }
        }
        // shifted mean: exact whenever all inputs agree
        let base = current[0];
        let shift = match weights {
            None => current.iter().map(|v| v - base).sum::<f64>() / n,
            Some(w) => current.iter().zip(w).map(|(v, wi)| wi * (v - base)).sum::<f64>(),
        };
        let (lo, hi) = current
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let mut v = (base + shift).clamp(lo, hi);
        v = match kind {
            CurveKind::Survival => v.min(last),
            CurveKind::Cif => v.max(last),
        };
        values.push(v);
        last = v;
    }
    Ok(StepCurve {
        kind,
        initial_value: kind.initial_value(),
        jump_times: grid,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Status::*;

    fn samples(times: &[f64], statuses: &[Status]) -> Vec<WeightedSample> {
        times
            .iter()
            .zip(statuses)
            .map(|(&t, &s)| WeightedSample::unit(t, s))
            .collect()
    }

    #[test]
    fn km_all_censored_is_flat() {
        let km = kaplan_meier(&samples(&[1.0, 2.0, 3.0], &[Censored; 3])).unwrap();
        assert_eq!(km, StepCurve::flat(CurveKind::Survival));
    }

    #[test]
    fn km_no_censoring_is_empirical_survivor() {
        let km = kaplan_meier(&samples(&[1.0, 2.0, 3.0], &[Cause1, Cause2, Cause1])).unwrap();
        assert!((km.at(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.at(2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.at(3.0), 0.0);
    }

    #[test]
    fn km_hand_product_limit() {
        let km = kaplan_meier(&samples(&[1.0, 2.0, 3.0, 4.0], &[Cause1, Censored, Cause1, Censored])).unwrap();
        assert_eq!(km.jump_times(), &[1.0, 3.0]);
        assert_eq!(km.at(1.0), 0.75);
        assert_eq!(km.at(3.0), 0.375);
        assert_eq!(km.left_limit(3.0), 0.75);
        assert_eq!(km.at(100.0), 0.375);
    }

    #[test]
    fn km_ties_events_before_censoring() {
        // at t=1 the censored subject is still at risk: S = 1 - 1/2
        let km = kaplan_meier(&samples(&[1.0, 1.0], &[Cause1, Censored])).unwrap();
        assert_eq!(km.at(1.0), 0.5);
    }

    #[test]
    fn empty_risk_set() {
        let s = vec![WeightedSample::new(1.0, Cause1, 0.0)];
        assert_eq!(kaplan_meier(&s).unwrap_err().to_string(), "empty risk set");
        assert_eq!(aalen_johansen(&s, Cause1).unwrap_err().to_string(), "empty risk set");
        assert!(kaplan_meier(&[]).is_err());
    }

    #[test]
    fn aj_single_cause_is_one_minus_km() {
        let s = samples(
            &[1.0, 2.0, 2.0, 3.0, 5.0],
            &[Cause1, Censored, Cause1, Cause1, Censored],
        );
        let km = kaplan_meier(&s).unwrap();
        let aj = aalen_johansen(&s, Cause1).unwrap();
        assert_eq!(aj.jump_times(), km.jump_times());
        for (f, s) in aj.values().iter().zip(km.values()) {
            assert_eq!(*f, 1.0 - s);
        }
    }

    #[test]
    fn aj_without_cause_is_zero() {
        let s = samples(&[1.0, 2.0, 3.0], &[Cause2, Censored, Cause2]);
        assert_eq!(aalen_johansen(&s, Cause1).unwrap(), StepCurve::flat(CurveKind::Cif));
    }

    #[test]
    fn aj_hand_evaluation() {
        let s = samples(&[1.0, 2.0, 3.0, 4.0], &[Cause1, Cause2, Censored, Cause1]);
        let f1 = aalen_johansen(&s, Cause1).unwrap();
        let f2 = aalen_johansen(&s, Cause2).unwrap();
        let km = kaplan_meier(&s).unwrap();
        assert!((f1.at(1.0) - 0.25).abs() < 1e-15);
        assert!((f2.at(2.0) - 0.25).abs() < 1e-15);
        assert!((f1.at(4.0) - 0.75).abs() < 1e-15);
        assert!((km.at(4.0) + f1.at(4.0) + f2.at(4.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(truncated_auc(&StepCurve::flat(CurveKind::Survival), 5.0).unwrap(), 5.0);
        assert_eq!(truncated_auc(&StepCurve::flat(CurveKind::Cif), 5.0).unwrap(), 0.0);
        let km = kaplan_meier(&samples(&[1.0, 2.0, 3.0, 4.0], &[Cause1, Censored, Cause1, Censored])).unwrap();
        assert_eq!(truncated_auc(&km, 4.0).unwrap(), 2.875);
        // truncation inside a segment
        assert_eq!(truncated_auc(&km, 2.0).unwrap(), 1.75);
        assert!(truncated_auc(&km, 0.0).is_err());
        assert!(truncated_auc(&km, -1.0).is_err());
    }

    #[test]
    fn averaging() {
        let one = StepCurve::flat(CurveKind::Survival);
        assert_eq!(average_curves(&[&one], None).unwrap(), one);
        assert_eq!(average_curves(&[&one, &one], None).unwrap(), one);

        let a = StepCurve::new(CurveKind::Survival, vec![1.0], vec![0.5]).unwrap();
        let b = StepCurve::new(CurveKind::Survival, vec![2.0], vec![0.0]).unwrap();
        let m = average_curves(&[&a, &b], None).unwrap();
        assert_eq!(m.at(1.5), 0.75);
        assert_eq!(m.at(0.5), 1.0);
        assert_eq!(m.at(2.0), 0.25);

        let w = average_curves(&[&a, &b], Some(&[0.25, 0.75])).unwrap();
        assert_eq!(w.at(1.5), 0.875);

        let f = StepCurve::flat(CurveKind::Cif);
        assert!(average_curves(&[&a, &f], None).is_err());
        assert!(average_curves(&[], None).is_err());
        assert!(average_curves(&[&a, &b], Some(&[0.5, 0.6])).is_err());
    }

    #[test]
    fn constructor_rejects_bad_curves() {
        assert!(StepCurve::new(CurveKind::Survival, vec![1.0, 1.0], vec![0.5, 0.4]).is_err());
        assert!(StepCurve::new(CurveKind::Survival, vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
        assert!(StepCurve::new(CurveKind::Cif, vec![1.0], vec![1.5]).is_err());
        assert!(StepCurve::new(CurveKind::Cif, vec![1.0, 2.0], vec![0.2, 0.1]).is_err());
    }

    #[test]
    fn curve_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("km.csv");
        let km = kaplan_meier(&samples(&[0.0, 1.5, 3.0, 4.0], &[Cause1, Censored, Cause2, Censored])).unwrap();
        km.save(&path).unwrap();
        assert_eq!(StepCurve::load(&path).unwrap(), km);
        assert!(dir.path().join("km.csv.json").exists());
    }
}
