//! Simulation settings with known truth.
//!
//! Two generators share one covariate and treatment-assignment mechanism:
//! covariates are independent `Uniform(0, 1)` draws and treatment follows a
//! logistic propensity. Failure times come either from independent
//! cause-specific exponentials or from a Fine-Gray subdistribution model for
//! the priority cause. Hazard coefficients are user inputs, read from a flat
//! `key=value` scenario file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::adaptive_simpson;
use crate::survdata::{CompetingRisksDataset, Status, Subject, Treatment};

pub const QUADRATURE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Exponential,
    FineGray,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensoringFamily {
    /// `C ~ Uniform(0, c_max)`.
    Uniform,
    /// `C ~ Exponential(rate)`.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoringSpec {
    pub family: CensoringFamily,
    /// Target overall proportion of censored subjects, administrative censoring included.
    pub rate: f64,
}

impl Default for CensoringSpec {
    fn default() -> Self {
        Self {
            family: CensoringFamily::Uniform,
            rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub p: usize,
    /// Cause-1 coefficients per arm.
    pub beta1: BTreeMap<Treatment, Vec<f64>>,
    /// Cause-2 coefficients per arm.
    pub beta2: BTreeMap<Treatment, Vec<f64>>,
    /// Propensity coefficients, intercept first (length `p + 1`).
    pub beta_pi: Vec<f64>,
    /// Fine-Gray ceiling parameter for the priority cause.
    pub mass_p: f64,
    pub censoring: CensoringSpec,
    pub tau: f64,
    pub n: usize,
    pub seed: u64,
}

/// Randomized assignment: `beta_pi = 0`.
pub fn randomized_beta_pi(p: usize) -> Vec<f64> {
    vec![0.0; p + 1]
}

/// Covariate-dependent assignment: `beta_pi = (0, -1/2, ..., -1/2)`.
pub fn observational_beta_pi(p: usize) -> Vec<f64> {
    std::iter::once(0.0).chain(std::iter::repeat_n(-0.5, p)).collect()
}

fn parse_vec(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("{key}: invalid number '{x}'")))
        })
        .collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.p == 0 {
            return bad("p must be positive".into());
        }
        if self.beta1.is_empty() {
            return bad("no arms configured (beta1_a<label>)".into());
        }
        if self.beta1.keys().ne(self.beta2.keys()) {
            return bad("beta1 and beta2 must name the same arms".into());
        }
        if self.beta1.keys().ne([Treatment(0), Treatment(1)].iter()) {
            return bad("simulated scenarios have exactly the arms 0 and 1".into());
        }
        for (a, b) in self.beta1.iter().chain(&self.beta2) {
            if b.len() != self.p {
                return bad(format!(
                    "coefficient vector for arm {a} has length {}, expected {}",
                    b.len(),
                    self.p
                ));
            }
        }
        if self.beta_pi.len() != self.p + 1 {
            return bad(format!("beta_pi must have length p + 1 = {}", self.p + 1));
        }
        if !(self.mass_p > 0.0 && self.mass_p < 1.0) {
            return bad(format!("mass_p must lie in (0, 1), got {}", self.mass_p));
        }
        if !(self.censoring.rate >= 0.0 && self.censoring.rate < 1.0) {
            return bad(format!("censor_rate must lie in [0, 1), got {}", self.censoring.rate));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        Ok(())
    }

    /// Parses the flat `key=value` scenario format (`#` starts a comment).
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key=value", lineno + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let take = |k: &str| kv.get(k).map(String::as_str);
        let num = |k: &str| -> Result<Option<f64>> {
            take(k)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| Error::config(format!("{k}: invalid number '{v}'")))
                })
                .transpose()
        };
        let int = |k: &str| -> Result<Option<u64>> {
            take(k)
                .map(|v| {
                    v.parse::<u64>()
                        .map_err(|_| Error::config(format!("{k}: invalid integer '{v}'")))
                })
                .transpose()
        };
        let kind = match take("kind") {
            Some("exponential") => ScenarioKind::Exponential,
            Some("finegray") | Some("fine_gray") => ScenarioKind::FineGray,
            Some(other) => return Err(Error::config(format!("unknown scenario kind '{other}'"))),
            None => return Err(Error::config("missing key 'kind'")),
        };
        let p = int("p")?.ok_or_else(|| Error::config("missing key 'p'"))? as usize;
        let mut beta1 = BTreeMap::new();
        let mut beta2 = BTreeMap::new();
        for (k, v) in &kv {
            for (prefix, target) in [("beta1_a", &mut beta1), ("beta2_a", &mut beta2)] {
                if let Some(label) = k.strip_prefix(prefix) {
                    let a: Treatment = label
                        .parse()
                        .map_err(|_| Error::config(format!("{k}: invalid arm label")))?;
                    target.insert(a, parse_vec(k, v)?);
                }
            }
        }
        let beta_pi = match (take("beta_pi"), take("assignment")) {
            (Some(v), _) => parse_vec("beta_pi", v)?,
            (None, None) | (None, Some("randomized")) => randomized_beta_pi(p),
            (None, Some("observational")) => observational_beta_pi(p),
            (None, Some(other)) => return Err(Error::config(format!("unknown assignment '{other}'"))),
        };
        let family = match take("censor_family") {
            None | Some("uniform") => CensoringFamily::Uniform,
            Some("exponential") => CensoringFamily::Exponential,
            Some(other) => return Err(Error::config(format!("unknown censor_family '{other}'"))),
        };
        let s = Scenario {
            kind,
            p,
            beta1,
            beta2,
            beta_pi,
            mass_p: num("mass_p")?.unwrap_or(0.5),
            censoring: CensoringSpec {
                family,
                rate: num("censor_rate")?.unwrap_or(0.0),
            },
            tau: num("tau")?.ok_or_else(|| Error::config("missing key 'tau'"))?,
            n: int("n")?.ok_or_else(|| Error::config("missing key 'n'"))? as usize,
            seed: int("seed")?.unwrap_or(0),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_config(&self) -> String {
        let mut s = String::from("# itrcr.scenario.v1\n");
        let kind = match self.kind {
            ScenarioKind::Exponential => "exponential",
            ScenarioKind::FineGray => "finegray",
        };
        let family = match self.censoring.family {
            CensoringFamily::Uniform => "uniform",
            CensoringFamily::Exponential => "exponential",
        };
        let _ = writeln!(s, "kind={kind}");
        let _ = writeln!(s, "p={}", self.p);
        let _ = writeln!(s, "n={}", self.n);
        let _ = writeln!(s, "tau={}", self.tau);
        let _ = writeln!(s, "mass_p={}", self.mass_p);
        let _ = writeln!(s, "censor_rate={}", self.censoring.rate);
        let _ = writeln!(s, "censor_family={family}");
        let _ = writeln!(s, "seed={}", self.seed);
        for (a, b) in &self.beta1 {
            let _ = writeln!(s, "beta1_a{a}={}", join(b));
        }
        for (a, b) in &self.beta2 {
            let _ = writeln!(s, "beta2_a{a}={}", join(b));
        }
        let _ = writeln!(s, "beta_pi={}", join(&self.beta_pi));
        s
    }

    fn linear(&self, beta: &BTreeMap<Treatment, Vec<f64>>, z: &[f64], a: Treatment) -> f64 {
        beta[&a].iter().zip(z).map(|(b, x)| b * x).sum()
    }

    /// Exponentiated linear predictors `(exp(z'beta1(a)), exp(z'beta2(a)))`.
    pub fn rates(&self, z: &[f64], a: Treatment) -> (f64, f64) {
        (
            self.linear(&self.beta1, z, a).exp(),
            self.linear(&self.beta2, z, a).exp(),
        )
    }

    /// Draws one uncensored `(time, cause)` pair for fixed `(z, a)`.
    pub fn draw_event<R: Rng>(&self, z: &[f64], a: Treatment, rng: &mut R) -> (f64, Status) {
        let (r1, r2) = self.rates(z, a);
        match self.kind {
            ScenarioKind::Exponential => {
                let t1 = Exp::new(r1).expect("positive rate").sample(rng);
                let t2 = Exp::new(r2).expect("positive rate").sample(rng);
                if t1 <= t2 {
                    (t1, Status::Cause1)
                } else {
                    (t2, Status::Cause2)
                }
            }
            ScenarioKind::FineGray => {
                let pi1 = finegray_cause1_prob(self.mass_p, r1);
                if rng.random::<f64>() < pi1 {
                    let q = rng.random::<f64>() * pi1;
                    (finegray_inverse(self.mass_p, r1, q), Status::Cause1)
                } else {
                    (Exp::new(r2).expect("positive rate").sample(rng), Status::Cause2)
                }
            }
        }
    }
}

/// `P(cause 1) = 1 - (1 - mass_p)^k`.
pub fn finegray_cause1_prob(mass_p: f64, k: f64) -> f64 {
    -((-mass_p).ln_1p() * k).exp_m1()
}

/// Priority-cause subdistribution `F1(t) = 1 - (1 - mass_p (1 - e^-t))^k`.
pub fn finegray_cif1(mass_p: f64, k: f64, t: f64) -> f64 {
    let g = -(-t).exp_m1();
    -((-mass_p * g).ln_1p() * k).exp_m1()
}

/// Solves `F1(t) = q` for `0 <= q < P(cause 1)` in closed form.
pub fn finegray_inverse(mass_p: f64, k: f64, q: f64) -> f64 {
    let root = -((-q).ln_1p() / k).exp_m1(); // 1 - (1 - q)^(1/k)
    let g = (root / mass_p).min(1.0);
    -(-g).ln_1p()
}

/// Logistic propensity of receiving treatment 1.
pub fn propensity(z: &[f64], beta_pi: &[f64]) -> f64 {
    let eta = beta_pi[0] + beta_pi[1..].iter().zip(z).map(|(b, x)| b * x).sum::<f64>();
    1.0 / (1.0 + (-eta).exp())
}

pub fn assign_treatment<R: Rng>(z: &[f64], beta_pi: &[f64], rng: &mut R) -> Treatment {
    if rng.random::<f64>() < propensity(z, beta_pi) {
        Treatment(1)
    } else {
        Treatment(0)
    }
}

/// Closed-form or quadrature truth for a scenario.
#[derive(Debug, Clone)]
pub struct TruthOracle {
    scenario: Scenario,
}

impl TruthOracle {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn cif1(&self, t: f64, z: &[f64], a: Treatment) -> f64 {
        let (r1, r2) = self.scenario.rates(z, a);
        match self.scenario.kind {
            ScenarioKind::Exponential => {
                let l = r1 + r2;
                r1 / l * -(-l * t).exp_m1()
            }
            ScenarioKind::FineGray => finegray_cif1(self.scenario.mass_p, r1, t),
        }
    }

    pub fn cif2(&self, t: f64, z: &[f64], a: Treatment) -> f64 {
        let (r1, r2) = self.scenario.rates(z, a);
        match self.scenario.kind {
            ScenarioKind::Exponential => {
                let l = r1 + r2;
                r2 / l * -(-l * t).exp_m1()
            }
            ScenarioKind::FineGray => (1.0 - finegray_cause1_prob(self.scenario.mass_p, r1)) * -(-r2 * t).exp_m1(),
        }
    }

    pub fn survival(&self, t: f64, z: &[f64], a: Treatment) -> f64 {
        match self.scenario.kind {
            ScenarioKind::Exponential => {
                let (r1, r2) = self.scenario.rates(z, a);
                (-(r1 + r2) * t).exp()
            }
            ScenarioKind::FineGray => 1.0 - self.cif1(t, z, a) - self.cif2(t, z, a),
        }
    }

    /// True `(phi1, phi2)`: closed form for exponential, quadrature for Fine-Gray.
    pub fn phi(&self, z: &[f64], a: Treatment) -> (f64, f64) {
        let tau = self.scenario.tau;
        match self.scenario.kind {
            ScenarioKind::Exponential => {
                let (r1, r2) = self.scenario.rates(z, a);
                let l = r1 + r2;
                let phi1 = -(-l * tau).exp_m1() / l;
                (phi1, r1 / l * (tau - phi1))
            }
            ScenarioKind::FineGray => self.phi_quadrature(z, a),
        }
    }

    /// `(phi1, phi2)` by adaptive Simpson on the model curves.
    pub fn phi_quadrature(&self, z: &[f64], a: Treatment) -> (f64, f64) {
        let tau = self.scenario.tau;
        (
            adaptive_simpson(|t| self.survival(t, z, a), 0.0, tau, QUADRATURE_TOL),
            adaptive_simpson(|t| self.cif1(t, z, a), 0.0, tau, QUADRATURE_TOL),
        )
    }
}

/// Observed `(X, status)` after random and administrative censoring at `tau`.
/// The censoring distribution's scale is calibrated on the supplied event times
/// so that the expected overall censored fraction equals `spec.rate`.
pub fn apply_censoring<R: Rng>(
    events: &[(f64, Status)],
    spec: &CensoringSpec,
    tau: f64,
    rng: &mut R,
) -> Result<Vec<(f64, Status)>> {
    let admin = |&(t, st): &(f64, Status)| if t <= tau { (t, st) } else { (tau, Status::Censored) };
    if spec.rate == 0.0 {
        return Ok(events.iter().map(admin).collect());
    }
    if !(spec.rate > 0.0 && spec.rate < 1.0) {
        return Err(Error::config(format!("censoring rate {} outside [0, 1)", spec.rate)));
    }
    let n = events.len() as f64;
    let admin_frac = events.iter().filter(|(t, _)| *t > tau).count() as f64 / n;
    let within: Vec<f64> = events.iter().map(|e| e.0).filter(|&t| t <= tau).collect();
    if spec.rate < admin_frac || within.iter().all(|&t| t == 0.0) {
        return Err(Error::config(format!(
            "censoring rate {} unattainable (administrative censoring alone is {admin_frac})",
            spec.rate
        )));
    }
    // expected censored fraction as a function of log-scale s, decreasing in s
    let expected = |s: f64| -> f64 {
        let scale = s.exp();
        let random: f64 = match spec.family {
            CensoringFamily::Uniform => within.iter().map(|&t| t.min(scale) / scale).sum(),
            CensoringFamily::Exponential => within.iter().map(|&t| -(-t / scale).exp_m1()).sum(),
        };
        admin_frac + random / n
    };
    let tmax = within.iter().cloned().fold(0.0, f64::max);
    let (mut lo, mut hi) = ((tmax * 1e-12).max(1e-300).ln(), (tmax * 1e12).ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) > spec.rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let scale = (0.5 * (lo + hi)).exp();
    log::debug!("calibrated censoring scale {scale} for target rate {}", spec.rate);
    Ok(events
        .iter()
        .map(|&(t, st)| {
            let c = match spec.family {
                CensoringFamily::Uniform => rng.random::<f64>() * scale,
                CensoringFamily::Exponential => Exp::new(1.0 / scale).expect("positive rate").sample(rng),
            };
            let limit = c.min(tau);
            if limit < t {
                (limit, Status::Censored)
            } else {
                (t, st)
            }
        })
        .collect())
}

/// Covariates and assigned treatments for `n` subjects.
pub fn draw_population<R: Rng>(scenario: &Scenario, n: usize, rng: &mut R) -> Vec<(Vec<f64>, Treatment)> {
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..scenario.p).map(|_| rng.random::<f64>()).collect();
            let a = assign_treatment(&z, &scenario.beta_pi, rng);
            (z, a)
        })
        .collect()
}

/// Simulates a training dataset of `scenario.n` subjects.
pub fn generate(scenario: &Scenario, seed: u64) -> Result<(CompetingRisksDataset, TruthOracle)> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let population = draw_population(scenario, scenario.n, &mut rng);
    let events: Vec<(f64, Status)> = population
        .iter()
        .map(|(z, a)| scenario.draw_event(z, *a, &mut rng))
        .collect();
    let observed = apply_censoring(&events, &scenario.censoring, scenario.tau, &mut rng)?;
    let subjects = population
        .into_iter()
        .zip(observed)
        .enumerate()
        .map(|(i, ((z, a), (time, status)))| Subject {
            id: (i + 1).to_string(),
            time,
            status,
            treatment: a,
            covariates: z,
            feasible: None,
        })
        .collect();
    let ds = CompetingRisksDataset::new(subjects, Some(scenario.tau))?;
    Ok((ds, TruthOracle::new(scenario.clone())))
}

pub fn gen_exponential(scenario: &Scenario, seed: u64) -> Result<(CompetingRisksDataset, TruthOracle)> {
    if scenario.kind != ScenarioKind::Exponential {
        return Err(Error::config("scenario kind is not exponential"));
    }
    generate(scenario, seed)
}

pub fn gen_finegray(scenario: &Scenario, seed: u64) -> Result<(CompetingRisksDataset, TruthOracle)> {
    if scenario.kind != ScenarioKind::FineGray {
        return Err(Error::config("scenario kind is not finegray"));
    }
    generate(scenario, seed)
}
