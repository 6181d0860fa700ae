//! Competing-risks data model, CSV ingestion and validation.
//!
//! A dataset is an ordered list of subjects observed up to `X = min(T, C)`,
//! each carrying an event status (censored, priority cause, other cause), the
//! treatment actually received and a covariate vector of fixed length `p`.
//! Causes beyond two must be collapsed by the caller before loading.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Schema tag written in the first comment line of every dataset CSV.
pub const DATASET_SCHEMA: &str = "itrcr.dataset.v1";

/// Quantile of observed times used as the horizon when none is configured.
pub const DEFAULT_HORIZON_QUANTILE: f64 = 0.95;

/// Event status, encoded on disk as 0/1/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Status {
    Censored = 0,
    Cause1 = 1,
    Cause2 = 2,
}

impl Status {
    pub fn is_event(self) -> bool {
        self != Status::Censored
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

impl TryFrom<u8> for Status {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Status::Censored),
            1 => Ok(Status::Cause1),
            2 => Ok(Status::Cause2),
            other => Err(format!("status {other} outside {{0,1,2}}")),
        }
    }
}

impl From<Status> for u8 {
    fn from(s: Status) -> u8 {
        s.code()
    }
}

/// A treatment label from the finite treatment space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Treatment(pub u32);

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Treatment {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.trim().parse().map(Treatment)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub time: f64,
    pub status: Status,
    pub treatment: Treatment,
    pub covariates: Vec<f64>,
    /// Allowed treatments for this subject; `None` means the whole space.
    pub feasible: Option<BTreeSet<Treatment>>,
}

/// Immutable collection of subjects sharing a covariate dimension and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CompetingRisksDataset {
    subjects: Vec<Subject>,
    treatment_space: BTreeSet<Treatment>,
    tau: f64,
    p: usize,
}

impl CompetingRisksDataset {
    /// Builds a dataset, checking every subject-level and dataset-level invariant.
    /// When `tau` is `None` the horizon defaults to the 0.95 quantile of observed times.
    pub fn new(subjects: Vec<Subject>, tau: Option<f64>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::data("no subjects"));
        }
        let p = subjects[0].covariates.len();
        for (i, s) in subjects.iter().enumerate() {
            let row = i + 1;
            if !s.time.is_finite() || s.time < 0.0 {
                return Err(Error::Row {
                    row,
                    message: format!("time must be a finite nonnegative number, got {}", s.time),
                });
            }
            if s.covariates.len() != p {
                return Err(Error::Row {
                    row,
                    message: format!("expected {p} covariates, got {}", s.covariates.len()),
                });
            }
            if s.covariates.iter().any(|z| !z.is_finite()) {
                return Err(Error::Row {
                    row,
                    message: "non-finite covariate".into(),
                });
            }
        }
        let treatment_space: BTreeSet<Treatment> = subjects.iter().map(|s| s.treatment).collect();
        for (i, s) in subjects.iter().enumerate() {
            if let Some(f) = &s.feasible {
                if f.is_empty() {
                    return Err(Error::Row {
                        row: i + 1,
                        message: "empty feasible set".into(),
                    });
                }
                if let Some(bad) = f.iter().find(|a| !treatment_space.contains(a)) {
                    return Err(Error::Row {
                        row: i + 1,
                        message: format!("feasible label {bad} not in the treatment space"),
                    });
                }
            }
        }
        let tau = match tau {
            Some(t) => t,
            None => {
                let t = default_horizon(&subjects);
                log::warn!("no horizon configured; using the 0.95 quantile of observed times, tau = {t}");
                t
            }
        };
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::config(format!("horizon tau must be positive, got {tau}")));
        }
        Ok(Self {
            subjects,
            treatment_space,
            tau,
            p,
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn treatment_space(&self) -> &BTreeSet<Treatment> {
        &self.treatment_space
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Covariate dimension.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Returns a copy of the dataset with a different horizon.
    pub fn with_tau(mut self, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::config(format!("horizon tau must be positive, got {tau}")));
        }
        self.tau = tau;
        Ok(self)
    }

    /// The feasible treatment set of subject `i`.
    pub fn feasible(&self, i: usize) -> BTreeSet<Treatment> {
        self.subjects[i]
            .feasible
            .clone()
            .unwrap_or_else(|| self.treatment_space.clone())
    }

    /// Subjects who received treatment `arm`, in original order.
    pub fn arm(&self, arm: Treatment) -> Vec<&Subject> {
        self.subjects.iter().filter(|s| s.treatment == arm).collect()
    }

    pub fn status_counts(&self) -> [usize; 3] {
        let mut c = [0usize; 3];
        for s in &self.subjects {
            c[s.status.code() as usize] += 1;
        }
        c
    }
}

fn default_horizon(subjects: &[Subject]) -> f64 {
    let mut times: Vec<f64> = subjects.iter().map(|s| s.time).collect();
    times.sort_by(f64::total_cmp);
    let rank = (DEFAULT_HORIZON_QUANTILE * times.len() as f64).ceil() as usize;
    times[rank.clamp(1, times.len()) - 1]
}

/// Column-name mapping for CSV ingestion.
#[derive(Debug, Clone)]
pub struct ColumnSchema {
    pub id: String,
    pub time: String,
    pub status: String,
    pub treatment: String,
    /// Covariates are the columns `<prefix>1 .. <prefix>p`.
    pub covariate_prefix: String,
    pub feasible: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            time: "time".into(),
            status: "status".into(),
            treatment: "treatment".into(),
            covariate_prefix: "z".into(),
            feasible: "feasible".into(),
        }
    }
}

/// Reads a dataset CSV. The horizon is taken from a `tau=` entry in the leading
/// comment block when present, otherwise it falls back to the default quantile.
pub fn load_dataset(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<CompetingRisksDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, schema)
}

pub fn parse_dataset(text: &str, schema: &ColumnSchema) -> Result<CompetingRisksDataset> {
    let tau = header_tau(text)?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let missing = |name: &str| Error::data(format!("missing column '{name}'"));

    let time_col = col(&schema.time).ok_or_else(|| missing(&schema.time))?;
    let status_col = col(&schema.status).ok_or_else(|| missing(&schema.status))?;
    let treat_col = col(&schema.treatment).ok_or_else(|| missing(&schema.treatment))?;
    let id_col = col(&schema.id);
    let feasible_col = col(&schema.feasible);

    let mut cov_cols = Vec::new();
    for j in 1.. {
        match col(&format!("{}{j}", schema.covariate_prefix)) {
            Some(c) => cov_cols.push(c),
            None => break,
        }
    }

    let mut subjects = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize, what: &str| -> Result<f64> {
            cell(c).parse::<f64>().map_err(|_| Error::Row {
                row,
                message: format!("non-numeric {what} '{}'", cell(c)),
            })
        };
        let time = num(time_col, "time")?;
        if time < 0.0 {
            return Err(Error::Row {
                row,
                message: format!("negative time {time}"),
            });
        }
        let code: u8 = cell(status_col).parse().map_err(|_| Error::Row {
            row,
            message: format!("non-numeric status '{}'", cell(status_col)),
        })?;
        let status = Status::try_from(code).map_err(|message| Error::Row { row, message })?;
        let treatment: Treatment = cell(treat_col).parse().map_err(|_| Error::Row {
            row,
            message: format!("invalid treatment label '{}'", cell(treat_col)),
        })?;
        let covariates = cov_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| num(c, &format!("covariate z{}", j + 1)))
            .collect::<Result<Vec<_>>>()?;
        let feasible = match feasible_col.map(cell) {
            None | Some("") => None,
            Some(s) => Some(
                s.split('|')
                    .map(|t| t.parse::<Treatment>())
                    .collect::<std::result::Result<BTreeSet<_>, _>>()
                    .map_err(|_| Error::Row {
                        row,
                        message: format!("invalid feasible set '{s}'"),
                    })?,
            ),
        };
        let id = id_col.map(|c| cell(c).to_string()).unwrap_or_else(|| row.to_string());
        subjects.push(Subject {
            id,
            time,
            status,
            treatment,
            covariates,
            feasible,
        });
    }
    CompetingRisksDataset::new(subjects, tau)
}

fn header_tau(text: &str) -> Result<Option<f64>> {
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        for tok in line.trim_start_matches('#').split_whitespace() {
            if let Some(v) = tok.strip_prefix("tau=") {
                return v
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::data(format!("invalid tau '{v}' in header")));
            }
        }
    }
    Ok(None)
}

/// Serializes the dataset to CSV text. Floats use shortest round-trip formatting.
pub fn dataset_to_csv(ds: &CompetingRisksDataset) -> Result<String> {
    let mut out = format!("# {DATASET_SCHEMA} tau={}\n", ds.tau);
    let with_feasible = ds.subjects.iter().any(|s| s.feasible.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "time".into(), "status".into(), "treatment".into()];
    header.extend((1..=ds.p).map(|j| format!("z{j}")));
    if with_feasible {
        header.push("feasible".into());
    }
    w.write_record(&header)?;
    for s in &ds.subjects {
        let mut rec = vec![
            s.id.clone(),
            s.time.to_string(),
            s.status.code().to_string(),
            s.treatment.to_string(),
        ];
        rec.extend(s.covariates.iter().map(f64::to_string));
        if with_feasible {
            rec.push(
                s.feasible
                    .as_ref()
                    .map(|f| f.iter().map(Treatment::to_string).collect::<Vec<_>>().join("|"))
                    .unwrap_or_default(),
            );
        }
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::data(e.to_string()))?;
    out.push_str(&String::from_utf8(bytes).expect("csv output is utf-8"));
    Ok(out)
}

pub fn save_dataset(ds: &CompetingRisksDataset, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), dataset_to_csv(ds)?.as_bytes())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ArmCounts {
    pub n: usize,
    pub censored: usize,
    pub cause1: usize,
    pub cause2: usize,
    /// Subjects with observed time at or beyond the horizon.
    pub at_risk_at_tau: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub arms: BTreeMap<Treatment, ArmCounts>,
    pub at_risk_at_tau: usize,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

pub fn validate(ds: &CompetingRisksDataset) -> ValidationReport {
    let mut arms: BTreeMap<Treatment, ArmCounts> = BTreeMap::new();
    for s in &ds.subjects {
        let c = arms.entry(s.treatment).or_default();
        c.n += 1;
        match s.status {
            Status::Censored => c.censored += 1,
            Status::Cause1 => c.cause1 += 1,
            Status::Cause2 => c.cause2 += 1,
        }
        if s.time >= ds.tau {
            c.at_risk_at_tau += 1;
        }
    }
    let at_risk_at_tau = arms.values().map(|c| c.at_risk_at_tau).sum();
    let mut warnings = Vec::new();
    for (a, c) in &arms {
        if c.cause1 == 0 {
            warnings.push(format!("RCIF degenerate in arm {a}: no cause-1 events"));
        }
        if c.at_risk_at_tau == 0 {
            warnings.push(format!("no risk at horizon in arm {a}"));
        }
    }
    ValidationReport {
        arms,
        at_risk_at_tau,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(body: &str) -> Result<CompetingRisksDataset> {
        parse_dataset(body, &ColumnSchema::default())
    }

    #[test]
    fn four_rows_two_events() {
        let ds = csv("time,status,treatment,z1\n1,1,0,0.5\n2,0,0,0.1\n3,1,1,0.2\n4,0,1,0.9\n").unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.p(), 1);
        let [cens, c1, c2] = ds.status_counts();
        assert_eq!((cens, c1 + c2), (2, 2));
        assert_eq!(ds.subjects()[2].id, "3");
    }

    #[test]
    fn bad_status_names_row() {
        let mut body = String::from("time,status,treatment,z1\n");
        for i in 1..=10 {
            let status = if i == 7 { 3 } else { 1 };
            body.push_str(&format!("{i},{status},0,0.5\n"));
        }
        let err = csv(&body).unwrap_err();
        assert!(matches!(err, Error::Row { row: 7, .. }), "{err}");
        assert!(err.to_string().contains("row 7"));
    }

    #[test]
    fn header_only_is_rejected() {
        let err = csv("time,status,treatment,z1\n").unwrap_err();
        assert_eq!(err.to_string(), "no subjects");
    }

    #[test]
    fn rejects_missing_column_negative_time_and_text() {
        assert!(csv("time,treatment\n1,0\n").unwrap_err().to_string().contains("status"));
        let e = csv("time,status,treatment\n1,1,0\n-2,1,0\n").unwrap_err();
        assert!(matches!(e, Error::Row { row: 2, .. }));
        let e = csv("time,status,treatment,z1\n1,1,0,abc\n").unwrap_err();
        assert!(matches!(e, Error::Row { row: 1, .. }));
    }

    #[test]
    fn horizon_from_header_or_quantile() {
        let ds = csv("# itrcr.dataset.v1 tau=2.5\ntime,status,treatment\n1,1,0\n3,0,0\n").unwrap();
        assert_eq!(ds.tau(), 2.5);
        let body: String = std::iter::once("time,status,treatment\n".to_string())
            .chain((1..=20).map(|i| format!("{i},1,0\n")))
            .collect();
        assert_eq!(csv(&body).unwrap().tau(), 19.0);
    }

    #[test]
    fn feasible_column() {
        let ds = csv("time,status,treatment,feasible\n1,1,0,0|1\n2,1,1,\n3,0,1,1\n").unwrap();
        assert_eq!(ds.feasible(0), BTreeSet::from([Treatment(0), Treatment(1)]));
        assert_eq!(ds.feasible(1), BTreeSet::from([Treatment(0), Treatment(1)]));
        assert_eq!(ds.feasible(2), BTreeSet::from([Treatment(1)]));
        assert!(csv("time,status,treatment,feasible\n1,1,0,5\n").is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let text = "time,status,treatment,z1,z2,feasible\n0.1,1,0,0.30000000000000004,1e-7,0\n2.25,2,1,0.5,3,0|1\n";
        let ds = csv(text).unwrap().with_tau(1.7).unwrap();
        let back = csv(&dataset_to_csv(&ds).unwrap()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn validation_warnings() {
        let ds = csv("# tau=2\ntime,status,treatment\n1,1,0\n3,0,0\n1,2,1\n4,0,1\n").unwrap();
        let rep = validate(&ds);
        assert_eq!(
            rep.warnings,
            vec!["RCIF degenerate in arm 1: no cause-1 events".to_string()]
        );
        assert_eq!(rep.at_risk_at_tau, 2);

        let ds = csv("# tau=10\ntime,status,treatment\n1,1,0\n3,0,0\n1,1,1\n4,0,1\n").unwrap();
        let rep = validate(&ds);
        assert!(rep.warnings.iter().all(|w| w.starts_with("no risk at horizon")));
        assert_eq!(rep.warnings.len(), 2);

        let ds = csv("# tau=2\ntime,status,treatment\n1,1,0\n3,0,0\n1,1,1\n4,0,1\n").unwrap();
        assert!(validate(&ds).is_clean());
    }
}
