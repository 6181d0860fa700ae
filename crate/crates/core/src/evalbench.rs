//! Value-function evaluation against the truth oracle, and the replication
//! benchmark harness.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::itr::{fit_itr, two_phase, zero_order_policy, ItrConfig, ItrModel};
use crate::mix_seed;
use crate::sim::{draw_population, generate, Scenario, TruthOracle};
use crate::survdata::Treatment;

pub const SUMMARY_SCHEMA: &str = "itrcr.benchmark.summary.v1";
pub const PER_REP_SCHEMA: &str = "itrcr.benchmark.per_rep.v1";
pub const DEFAULT_N_EVAL: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    /// Mean true restricted mean survival under the policy.
    pub v1: f64,
    /// Mean true priority-cause incidence area under the policy.
    pub v2: f64,
    pub n_eval: usize,
}

/// Evaluation subjects: covariates, the treatment the generator assigned, and the oracle.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub covariates: Vec<Vec<f64>>,
    pub observed: Vec<Treatment>,
    pub oracle: TruthOracle,
}

impl EvalSet {
    pub fn draw(oracle: &TruthOracle, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (covariates, observed) = draw_population(oracle.scenario(), n, &mut rng).into_iter().unzip();
        Self {
            covariates,
            observed,
            oracle: oracle.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn arms(&self) -> BTreeSet<Treatment> {
        self.oracle.scenario().beta1.keys().copied().collect()
    }
}

/// Mean true criteria when subject `i` receives `labels[i]`. Summation runs in index order.
pub fn value_of_assignments(labels: &[Treatment], eval: &EvalSet) -> PolicyValue {
    assert_eq!(labels.len(), eval.len());
    let phis: Vec<(f64, f64)> = labels
        .par_iter()
        .zip(&eval.covariates)
        .map(|(&a, z)| eval.oracle.phi(z, a))
        .collect();
    let n = labels.len() as f64;
    let (s1, s2) = phis.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    PolicyValue {
        v1: s1 / n,
        v2: s2 / n,
        n_eval: labels.len(),
    }
}

pub fn policy_value<F>(policy: F, eval: &EvalSet) -> PolicyValue
where
    F: Fn(&[f64]) -> Treatment + Sync,
{
    let labels: Vec<Treatment> = eval.covariates.par_iter().map(|z| policy(z)).collect();
    value_of_assignments(&labels, eval)
}

/// The two-phase rule applied to the oracle's true criteria.
pub fn true_optimal_rule(oracle: &TruthOracle, arms: &BTreeSet<Treatment>, alpha: f64, z: &[f64]) -> Treatment {
    let (mut phi1, mut phi2) = (BTreeMap::new(), BTreeMap::new());
    for &a in arms {
        let (v1, v2) = oracle.phi(z, a);
        phi1.insert(a, v1);
        phi2.insert(a, v2);
    }
    two_phase(&phi1, &phi2, alpha).chosen
}

pub fn model_labels(model: &ItrModel, eval: &EvalSet) -> Result<Vec<Treatment>> {
    let arms = model.treatment_space.clone();
    eval.covariates
        .par_iter()
        .map(|z| model.recommend(z, &arms).map(|t| t.chosen))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchPolicy {
    Proposed,
    ZeroOrder,
    Observed,
    TrueOptimal,
}

impl BenchPolicy {
    pub const ALL: [BenchPolicy; 4] = [
        BenchPolicy::Proposed,
        BenchPolicy::ZeroOrder,
        BenchPolicy::Observed,
        BenchPolicy::TrueOptimal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchPolicy::Proposed => "proposed",
            BenchPolicy::ZeroOrder => "zero_order",
            BenchPolicy::Observed => "observed",
            BenchPolicy::TrueOptimal => "true_optimal",
        }
    }
}

impl fmt::Display for BenchPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchPolicy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown policy '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub scenario: Scenario,
    pub itr: ItrConfig,
    pub n_reps: usize,
    pub n_eval: usize,
    pub policies: BTreeSet<BenchPolicy>,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RepOutcome {
    pub value: PolicyValue,
    /// `v1(true optimal) - v1(policy)`.
    pub regret_v1: f64,
    /// `v2(policy) - v2(true optimal)`.
    pub regret_v2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepResult {
    pub rep: usize,
    pub outcomes: BTreeMap<BenchPolicy, RepOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub v1: MeanSd,
    pub v2: MeanSd,
    pub regret_v1: MeanSd,
    pub regret_v2: MeanSd,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkSummary {
    pub n_reps: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub policies: BTreeMap<BenchPolicy, PolicySummary>,
    pub reps: Vec<RepResult>,
    pub wall_clock_secs: f64,
}

fn run_rep(cfg: &BenchmarkConfig, rep: usize) -> Result<RepResult> {
    let r = rep as u64;
    let (train, oracle) = generate(&cfg.scenario, mix_seed(cfg.master_seed, 3 * r))?;
    let eval = EvalSet::draw(&oracle, cfg.n_eval, mix_seed(cfg.master_seed, 3 * r + 1));
    let arms = eval.arms();
    let alpha = cfg.itr.alpha_phi;

    let optimal: Vec<Treatment> = eval
        .covariates
        .par_iter()
        .map(|z| true_optimal_rule(&oracle, &arms, alpha, z))
        .collect();
    let best = value_of_assignments(&optimal, &eval);

    let mut outcomes = BTreeMap::new();
    for &policy in &cfg.policies {
        let labels = match policy {
            BenchPolicy::TrueOptimal => optimal.clone(),
            BenchPolicy::Observed => eval.observed.clone(),
            BenchPolicy::ZeroOrder => vec![zero_order_policy(&train, &cfg.itr)?.chosen; eval.len()],
            BenchPolicy::Proposed => {
                let itr = ItrConfig {
                    forest_params: crate::ForestParams {
                        seed: mix_seed(cfg.master_seed, 3 * r + 2),
                        ..cfg.itr.forest_params
                    },
                    ..cfg.itr
                };
                model_labels(&fit_itr(&train, &itr)?, &eval)?
            }
        };
        let value = value_of_assignments(&labels, &eval);
        outcomes.insert(
            policy,
            RepOutcome {
                value,
                regret_v1: best.v1 - value.v1,
                regret_v2: value.v2 - best.v2,
            },
        );
    }
    Ok(RepResult { rep, outcomes })
}

pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkSummary> {
    if cfg.n_reps == 0 {
        return Err(Error::config("n_reps must be at least 1"));
    }
    if cfg.policies.is_empty() {
        return Err(Error::config("no policies requested"));
    }
    cfg.scenario.validate()?;
    cfg.itr.validate()?;
    if cfg.itr.tau != cfg.scenario.tau {
        return Err(Error::config("ITR horizon must equal the scenario horizon"));
    }
    let start = Instant::now();
    let reps = (0..cfg.n_reps)
        .into_par_iter()
        .map(|r| run_rep(cfg, r))
        .collect::<Result<Vec<_>>>()?;
    let mut policies = BTreeMap::new();
    for &p in &cfg.policies {
        let col = |f: &dyn Fn(&RepOutcome) -> f64| -> Vec<f64> { reps.iter().map(|r| f(&r.outcomes[&p])).collect() };
        policies.insert(
            p,
            PolicySummary {
                v1: MeanSd::of(&col(&|o| o.value.v1)),
                v2: MeanSd::of(&col(&|o| o.value.v2)),
                regret_v1: MeanSd::of(&col(&|o| o.regret_v1)),
                regret_v2: MeanSd::of(&col(&|o| o.regret_v2)),
            },
        );
    }
    Ok(BenchmarkSummary {
        n_reps: cfg.n_reps,
        n_train: cfg.scenario.n,
        n_eval: cfg.n_eval,
        policies,
        reps,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

impl BenchmarkSummary {
    /// `policy,metric,mean,sd,n_reps`.
    pub fn summary_csv(&self) -> String {
        let mut s = format!("# {SUMMARY_SCHEMA}\npolicy,metric,mean,sd,n_reps\n");
        for (p, m) in &self.policies {
            for (name, v) in [
                ("v1", m.v1),
                ("v2", m.v2),
                ("regret_v1", m.regret_v1),
                ("regret_v2", m.regret_v2),
            ] {
                let _ = writeln!(s, "{p},{name},{},{},{}", v.mean, v.sd, self.n_reps);
            }
        }
        s
    }

    /// `rep,policy,v1,v2,regret_v1,regret_v2,n_eval`.
    pub fn per_rep_csv(&self) -> String {
        let mut s = format!("# {PER_REP_SCHEMA}\nrep,policy,v1,v2,regret_v1,regret_v2,n_eval\n");
        for r in &self.reps {
            for (p, o) in &r.outcomes {
                let _ = writeln!(
                    s,
                    "{},{p},{},{},{},{},{}",
                    r.rep, o.value.v1, o.value.v2, o.regret_v1, o.regret_v2, o.value.n_eval
                );
            }
        }
        s
    }

    pub fn text_table(&self) -> String {
        let mut s = format!(
            "{} replications, n_train = {}, n_eval = {}, {:.1} s\n",
            self.n_reps, self.n_train, self.n_eval, self.wall_clock_secs
        );
        let _ = writeln!(
            s,
            "{:<14}{:>22}{:>22}{:>22}{:>22}",
            "policy", "v1 mean (sd)", "v2 mean (sd)", "v1 regret", "v2 regret"
        );
        let cell = |m: MeanSd| format!("{:.5} ({:.5})", m.mean, m.sd);
        for (p, m) in &self.policies {
            let _ = writeln!(
                s,
                "{:<14}{:>22}{:>22}{:>22}{:>22}",
                p.as_str(),
                cell(m.v1),
                cell(m.v2),
                cell(m.regret_v1),
                cell(m.regret_v2)
            );
        }
        s
    }

    /// Writes `summary.csv`, `per_rep.csv` and `summary.txt` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("summary.csv"), self.summary_csv().as_bytes())?;
        write_atomic(&dir.join("per_rep.csv"), self.per_rep_csv().as_bytes())?;
        write_atomic(&dir.join("summary.txt"), self.text_table().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::ForestParams;
    use crate::sim::{randomized_beta_pi, CensoringSpec, ScenarioKind};

    fn scenario(flip: bool) -> Scenario {
        let (b0, b1) = if flip {
            (vec![1.5, 0.0], vec![0.0, 1.5])
        } else {
            (vec![0.7, 0.2], vec![0.7, 0.2])
        };
        Scenario {
            kind: ScenarioKind::Exponential,
            p: 2,
            beta1: BTreeMap::from([(Treatment(0), b0.clone()), (Treatment(1), b1.clone())]),
            beta2: BTreeMap::from([(Treatment(0), b0), (Treatment(1), b1)]),
            beta_pi: randomized_beta_pi(2),
            mass_p: 0.5,
            censoring: CensoringSpec {
                rate: 0.2,
                ..Default::default()
            },
            tau: 1.0,
            n: 120,
            seed: 0,
        }
    }

    #[test]
    fn constant_policy_on_homogeneous_population() {
        let mut s = scenario(false);
        s.beta1.values_mut().for_each(|b| b.iter_mut().for_each(|x| *x = 0.0));
        let oracle = TruthOracle::new(s);
        let eval = EvalSet::draw(&oracle, 50, 1);
        let v = policy_value(|_| Treatment(1), &eval);
        let (p1, p2) = oracle.phi(&eval.covariates[0], Treatment(1));
        // beta2 still varies with z, so compare against the per-subject mean
        let m1 = eval
            .covariates
            .iter()
            .map(|z| oracle.phi(z, Treatment(1)).0)
            .sum::<f64>()
            / 50.0;
        assert!((v.v1 - m1).abs() < 1e-12);
        assert!(p1 > 0.0 && p2 > 0.0);
    }

    #[test]
    fn random_policy_on_symmetric_arms() {
        let oracle = TruthOracle::new(scenario(false));
        let eval = EvalSet::draw(&oracle, 200, 2);
        let v_obs = value_of_assignments(&eval.observed, &eval);
        let v0 = policy_value(|_| Treatment(0), &eval);
        let v1 = policy_value(|_| Treatment(1), &eval);
        assert!((v0.v1 - v1.v1).abs() < 1e-12);
        assert!((v_obs.v1 - v0.v1).abs() < 1e-9);
    }

    #[test]
    fn true_optimal_has_zero_regret_and_dominates_at_alpha_zero() {
        let s = scenario(true);
        let mut itr = ItrConfig::new(s.tau);
        itr.forest_params = ForestParams {
            n_tree: 20,
            ..Default::default()
        };
        let cfg = BenchmarkConfig {
            scenario: s.clone(),
            itr,
            n_reps: 1,
            n_eval: 200,
            policies: BTreeSet::from([BenchPolicy::TrueOptimal]),
            master_seed: 4,
        };
        let sum = run_benchmark(&cfg).unwrap();
        assert_eq!(sum.policies[&BenchPolicy::TrueOptimal].regret_v1.mean, 0.0);

        let oracle = TruthOracle::new(s);
        let eval = EvalSet::draw(&oracle, 300, 9);
        let arms = eval.arms();
        let best = policy_value(|z| true_optimal_rule(&oracle, &arms, 0.0, z), &eval);
        for other in [
            policy_value(|_| Treatment(0), &eval),
            policy_value(|_| Treatment(1), &eval),
            value_of_assignments(&eval.observed, &eval),
            policy_value(|z| if z[0] > 0.5 { Treatment(1) } else { Treatment(0) }, &eval),
        ] {
            assert!(best.v1 >= other.v1);
        }
    }

    #[test]
    fn benchmark_outputs_are_deterministic() {
        let s = scenario(true);
        let mut itr = ItrConfig::new(s.tau);
        itr.forest_params = ForestParams {
            n_tree: 10,
            ..Default::default()
        };
        let cfg = BenchmarkConfig {
            scenario: s,
            itr,
            n_reps: 2,
            n_eval: 100,
            policies: BenchPolicy::ALL.into_iter().collect(),
            master_seed: 8,
        };
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&cfg).unwrap();
        assert_eq!(a.summary_csv(), b.summary_csv());
        assert_eq!(a.per_rep_csv(), b.per_rep_csv());
        assert_eq!(a.per_rep_csv().lines().count(), 2 + 2 * 4);
        assert!(a.text_table().contains("zero_order"));
    }

    #[test]
    fn policy_names() {
        for p in BenchPolicy::ALL {
            assert_eq!(p.as_str().parse::<BenchPolicy>().unwrap(), p);
        }
        assert!("dtrsurv".parse::<BenchPolicy>().is_err());
    }
}
