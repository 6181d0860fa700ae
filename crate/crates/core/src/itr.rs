//! Two-phase, tolerance-constrained treatment recommendation.
//!
//! Phase 1 ranks the feasible treatments by restricted mean survival on
//! `[0, tau]`. Every treatment within a relative shortfall `alpha_phi` of the
//! best one stays eligible; if more than one does, Phase 2 picks the eligible
//! treatment with the smallest area under the priority-cause incidence curve.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{aalen_johansen, kaplan_meier, truncated_auc};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ArmData, Forest, ForestParams, OutcomeKind};
use crate::mix_seed;
use crate::survdata::{CompetingRisksDataset, Status, Treatment};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const POLICY_SCHEMA: &str = "itrcr.policy.v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItrConfig {
    pub alpha_phi: f64,
    pub tau: f64,
    pub forest_params: ForestParams,
}

impl ItrConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            alpha_phi: 0.07,
            tau,
            forest_params: ForestParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_phi > 0.0 && self.alpha_phi < 1.0) {
            return Err(Error::config(format!(
                "alpha_phi must lie in (0, 1), got {}",
                self.alpha_phi
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::config(format!("tau must be positive, got {}", self.tau)));
        }
        self.forest_params.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::One => "one",
            Phase::Two => "two",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub phi1: BTreeMap<Treatment, f64>,
    pub phi2: BTreeMap<Treatment, f64>,
    pub v1_star: f64,
    pub a1_star: Treatment,
    pub tolerance_set: BTreeSet<Treatment>,
    pub chosen: Treatment,
    pub phase: Phase,
}

/// Applies the two-phase rule to per-treatment criteria. `alpha` may be 0 here
/// (pure Phase 1); ties go to the lowest label.
pub fn two_phase(phi1: &BTreeMap<Treatment, f64>, phi2: &BTreeMap<Treatment, f64>, alpha: f64) -> PhaseTrace {
    assert!(!phi1.is_empty(), "empty treatment set");
    assert!((0.0..1.0).contains(&alpha), "alpha outside [0, 1)");
    let (mut a1_star, mut v1_star) = (Treatment(0), f64::NEG_INFINITY);
    for (&a, &v) in phi1 {
        if v > v1_star {
            a1_star = a;
            v1_star = v;
        }
    }
    assert!(v1_star > 0.0, "best restricted mean survival must be positive");
    let floor = (1.0 - alpha) * v1_star;
    let tolerance_set: BTreeSet<Treatment> = phi1.iter().filter(|(_, &v)| v >= floor).map(|(&a, _)| a).collect();
    let (chosen, phase) = if tolerance_set.len() == 1 {
        (a1_star, Phase::One)
    } else {
        let mut best = (a1_star, f64::INFINITY);
        for &a in &tolerance_set {
            let v = phi2[&a];
            if v < best.1 {
                best = (a, v);
            }
        }
        (best.0, Phase::Two)
    };
    PhaseTrace {
        phi1: phi1.clone(),
        phi2: phi2.clone(),
        v1_star,
        a1_star,
        tolerance_set,
        chosen,
        phase,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItrModel {
    pub config: ItrConfig,
    pub treatment_space: BTreeSet<Treatment>,
    pub survival: BTreeMap<Treatment, Forest>,
    pub cif: BTreeMap<Treatment, Forest>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile<M> {
    version: u32,
    model: M,
}

fn kind_stream(arm: Treatment, kind: OutcomeKind) -> u64 {
    (u64::from(arm.0) << 1) | (kind == OutcomeKind::Cause1Cif) as u64
}

fn arm_data_checked(ds: &CompetingRisksDataset, arm: Treatment) -> Result<ArmData> {
    let data = ArmData::from_dataset(ds, arm);
    if data.is_empty() {
        return Err(Error::data(format!("empty treatment arm {arm}")));
    }
    if !data.status.iter().any(|s| s.is_event()) {
        return Err(Error::data(format!("treatment arm {arm} has no events")));
    }
    Ok(data)
}

/// Fits a survival forest and a cause-1 incidence forest for every arm.
pub fn fit_itr(ds: &CompetingRisksDataset, config: &ItrConfig) -> Result<ItrModel> {
    config.validate()?;
    let arms: Vec<ArmData> = ds
        .treatment_space()
        .iter()
        .map(|&a| arm_data_checked(ds, a))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, OutcomeKind)> = (0..arms.len())
        .flat_map(|i| [(i, OutcomeKind::Survival), (i, OutcomeKind::Cause1Cif)])
        .collect();
    let forests = jobs
        .par_iter()
        .map(|&(i, kind)| {
            let params = ForestParams {
                seed: mix_seed(config.forest_params.seed, kind_stream(arms[i].arm, kind)),
                ..config.forest_params
            };
            fit_forest(&arms[i], kind, &params, config.tau)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut model = ItrModel {
        config: *config,
        treatment_space: ds.treatment_space().clone(),
        survival: BTreeMap::new(),
        cif: BTreeMap::new(),
    };
    for f in forests {
        match f.outcome_kind {
            OutcomeKind::Survival => model.survival.insert(f.arm, f),
            OutcomeKind::Cause1Cif => model.cif.insert(f.arm, f),
        };
    }
    Ok(model)
}

impl ItrModel {
    /// Predicted `(phi1, phi2)` for treatment `a` at covariates `z`.
    pub fn criteria(&self, z: &[f64], a: Treatment) -> Result<(f64, f64)> {
        let tau = self.config.tau;
        fn get(m: &BTreeMap<Treatment, Forest>, a: Treatment) -> Result<&Forest> {
            m.get(&a)
                .ok_or_else(|| Error::data(format!("treatment {a} is not in the model")))
        }
        let s = get(&self.survival, a)?.predict_curve(z)?;
        let f = get(&self.cif, a)?.predict_curve(z)?;
        Ok((truncated_auc(&s, tau)?, truncated_auc(&f, tau)?))
    }

    pub fn recommend(&self, z: &[f64], feasible: &BTreeSet<Treatment>) -> Result<PhaseTrace> {
        recommend(self, z, feasible)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile {
            version: MODEL_FORMAT_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: ModelFile<serde_json::Value> = serde_json::from_str(s)?;
        if v.version != MODEL_FORMAT_VERSION {
            return Err(Error::data(format!("unsupported model format version {}", v.version)));
        }
        let m: ItrModel = serde_json::from_value(v.model)?;
        let keys = |x: &BTreeMap<Treatment, Forest>| x.keys().copied().collect::<BTreeSet<_>>();
        if keys(&m.survival) != m.treatment_space || keys(&m.cif) != m.treatment_space {
            return Err(Error::data("model forests do not cover the treatment space"));
        }
        Ok(m)
    }
}

pub fn recommend(model: &ItrModel, z: &[f64], feasible: &BTreeSet<Treatment>) -> Result<PhaseTrace> {
    if feasible.is_empty() {
        return Err(Error::data("feasible treatment set is empty"));
    }
    let (mut phi1, mut phi2) = (BTreeMap::new(), BTreeMap::new());
    for &a in feasible {
        let (v1, v2) = model.criteria(z, a)?;
        phi1.insert(a, v1);
        phi2.insert(a, v2);
    }
    Ok(two_phase(&phi1, &phi2, model.config.alpha_phi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroOrderPolicy {
    pub chosen: Treatment,
    pub trace: PhaseTrace,
}

/// The two-phase rule on covariate-free pooled curves: one treatment for everyone.
pub fn zero_order_policy(ds: &CompetingRisksDataset, config: &ItrConfig) -> Result<ZeroOrderPolicy> {
    config.validate()?;
    let (mut phi1, mut phi2) = (BTreeMap::new(), BTreeMap::new());
    for &a in ds.treatment_space() {
        let data = arm_data_checked(ds, a)?;
        let all: Vec<usize> = (0..data.len()).collect();
        let samples = data.samples(&all);
        phi1.insert(a, truncated_auc(&kaplan_meier(&samples)?, config.tau)?);
        phi2.insert(
            a,
            truncated_auc(&aalen_johansen(&samples, Status::Cause1)?, config.tau)?,
        );
    }
    let trace = two_phase(&phi1, &phi2, config.alpha_phi);
    Ok(ZeroOrderPolicy {
        chosen: trace.chosen,
        trace,
    })
}

/// Per-subject recommendations as CSV:
/// `id,chosen,phase,v1_star,phi1_<a>...,phi2_<a>...`; infeasible arms are blank.
pub fn policy_csv(model: &ItrModel, ds: &CompetingRisksDataset) -> Result<String> {
    let traces = (0..ds.len())
        .into_par_iter()
        .map(|i| recommend(model, &ds.subjects()[i].covariates, &ds.feasible(i)))
        .collect::<Result<Vec<_>>>()?;
    let arms: Vec<Treatment> = model.treatment_space.iter().copied().collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "chosen".into(), "phase".into(), "v1_star".into()];
    header.extend(arms.iter().map(|a| format!("phi1_{a}")));
    header.extend(arms.iter().map(|a| format!("phi2_{a}")));
    w.write_record(&header)?;
    for (s, t) in ds.subjects().iter().zip(&traces) {
        let mut rec = vec![
            s.id.clone(),
            t.chosen.to_string(),
            t.phase.as_str().to_string(),
            t.v1_star.to_string(),
        ];
        let cell = |m: &BTreeMap<Treatment, f64>, a| m.get(a).map(f64::to_string).unwrap_or_default();
        rec.extend(arms.iter().map(|a| cell(&t.phi1, a)));
        rec.extend(arms.iter().map(|a| cell(&t.phi2, a)));
        w.write_record(&rec)?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Error::data(e.to_string()))?).expect("csv output is utf-8");
    Ok(format!("# {POLICY_SCHEMA}\n{body}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survdata::Subject;

    fn map(v: &[(u32, f64)]) -> BTreeMap<Treatment, f64> {
        v.iter().map(|&(a, x)| (Treatment(a), x)).collect()
    }

    #[test]
    fn tolerance_example() {
        let t = two_phase(&map(&[(0, 10.0), (1, 9.4)]), &map(&[(0, 3.0), (1, 1.0)]), 0.07);
        assert_eq!(t.tolerance_set, BTreeSet::from([Treatment(0), Treatment(1)]));
        assert_eq!(t.chosen, Treatment(1));
        assert_eq!(t.phase, Phase::Two);
        assert_eq!(t.a1_star, Treatment(0));
    }

    #[test]
    fn singleton_and_tight_tolerance() {
        let t = two_phase(&map(&[(4, 2.0)]), &map(&[(4, 1.0)]), 0.07);
        assert_eq!((t.chosen, t.phase), (Treatment(4), Phase::One));
        let t = two_phase(&map(&[(0, 9.99), (1, 10.0)]), &map(&[(0, 0.0), (1, 5.0)]), 1e-6);
        assert_eq!((t.chosen, t.phase), (Treatment(1), Phase::One));
        let t = two_phase(&map(&[(0, 9.99), (1, 10.0)]), &map(&[(0, 0.0), (1, 5.0)]), 0.0);
        assert_eq!(t.chosen, Treatment(1));
    }

    #[test]
    fn ties_go_to_lowest_label() {
        let t = two_phase(&map(&[(2, 5.0), (1, 5.0)]), &map(&[(2, 1.0), (1, 1.0)]), 0.0);
        assert_eq!(t.a1_star, Treatment(1));
        assert_eq!(t.chosen, Treatment(1));
        assert_eq!(t.phase, Phase::Two);
    }

    fn toy(n_per_arm: usize) -> CompetingRisksDataset {
        let mut subjects = Vec::new();
        for a in 0..2u32 {
            for i in 0..n_per_arm {
                let z = i as f64 / n_per_arm as f64;
                let base = if a == 0 { 1.0 } else { 2.0 };
                subjects.push(Subject {
                    id: format!("{a}-{i}"),
                    time: base + z + 0.01 * i as f64,
                    status: Status::try_from(((i + a as usize) % 3) as u8).unwrap(),
                    treatment: Treatment(a),
                    covariates: vec![z, (i % 5) as f64],
                    feasible: None,
                });
            }
        }
        CompetingRisksDataset::new(subjects, Some(3.0)).unwrap()
    }

    fn small_config(tau: f64) -> ItrConfig {
        ItrConfig {
            forest_params: ForestParams {
                n_tree: 10,
                seed: 11,
                ..Default::default()
            },
            ..ItrConfig::new(tau)
        }
    }

    #[test]
    fn fit_gives_four_forests_and_is_deterministic() {
        let ds = toy(30);
        let cfg = small_config(ds.tau());
        let m = fit_itr(&ds, &cfg).unwrap();
        assert_eq!(m.survival.len() + m.cif.len(), 4);
        let again = fit_itr(&ds, &cfg).unwrap();
        assert_eq!(m.to_json().unwrap(), again.to_json().unwrap());
        assert_eq!(ItrModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }

    #[test]
    fn arm_without_events_is_an_error() {
        let mut subjects = toy(10).subjects().to_vec();
        for s in subjects.iter_mut().filter(|s| s.treatment == Treatment(1)) {
            s.status = Status::Censored;
        }
        let ds = CompetingRisksDataset::new(subjects, Some(3.0)).unwrap();
        let e = fit_itr(&ds, &small_config(3.0)).unwrap_err();
        assert!(e.to_string().contains("arm 1"));
    }

    #[test]
    fn zero_order_matches_degenerate_forests() {
        let ds = toy(25);
        let cfg = ItrConfig {
            forest_params: ForestParams {
                n_tree: 3,
                n_min: 100,
                subsample_fraction: 1.0,
                ..Default::default()
            },
            ..ItrConfig::new(ds.tau())
        };
        let zo = zero_order_policy(&ds, &cfg).unwrap();
        let m = fit_itr(&ds, &cfg).unwrap();
        for s in ds.subjects() {
            let t = m.recommend(&s.covariates, ds.treatment_space()).unwrap();
            assert_eq!(t, zo.trace);
        }
    }

    #[test]
    fn zero_order_picks_dominant_arm() {
        // arm 1 survives uniformly longer; gap far beyond 7%
        let mut subjects = Vec::new();
        for i in 0..10 {
            let a = (i % 2) as u32;
            let time = if a == 0 {
                1.0 + i as f64 * 0.1
            } else {
                4.0 + i as f64 * 0.1
            };
            subjects.push(Subject {
                id: i.to_string(),
                time,
                status: Status::Cause1,
                treatment: Treatment(a),
                covariates: vec![0.0],
                feasible: None,
            });
        }
        let ds = CompetingRisksDataset::new(subjects, Some(5.0)).unwrap();
        let zo = zero_order_policy(&ds, &ItrConfig::new(5.0)).unwrap();
        // arm 0 times 1.0,1.2,...,1.8 -> RMST 1.4; arm 1 times 4.1,...,4.9 -> RMST 4.5
        assert!((zo.trace.phi1[&Treatment(0)] - 1.4).abs() < 1e-12);
        assert!((zo.trace.phi1[&Treatment(1)] - 4.5).abs() < 1e-12);
        assert_eq!(zo.chosen, Treatment(1));
        assert_eq!(zo.trace.phase, Phase::One);
    }

    #[test]
    fn policy_csv_layout() {
        let ds = toy(12);
        let m = fit_itr(&ds, &small_config(3.0)).unwrap();
        let text = policy_csv(&m, &ds).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# itrcr.policy.v1"));
        assert_eq!(
            lines.next(),
            Some("id,chosen,phase,v1_star,phi1_0,phi1_1,phi2_0,phi2_1")
        );
        assert_eq!(lines.count(), ds.len());
    }

    #[test]
    fn config_validation() {
        let mut c = ItrConfig::new(1.0);
        assert!(c.validate().is_ok());
        c.alpha_phi = 0.0;
        assert!(c.validate().is_err());
        c.alpha_phi = 0.5;
        c.tau = 0.0;
        assert!(c.validate().is_err());
    }
}
