//! Per-arm random survival forests (log-rank splits, Kaplan-Meier leaves) and
//! random cumulative incidence forests (Gray splits, Aalen-Johansen leaves).
//!
//! Each tree is grown on its own subsample drawn without replacement from a
//! random stream derived from `(seed, tree index)`, so the fitted forest does
//! not depend on how trees are scheduled across threads.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{aalen_johansen, average_curves, kaplan_meier, CurveKind, StepCurve, WeightedSample};
use crate::error::{Error, Result};
use crate::splitstats::{gray_counts, logrank_counts, GroupCounts, SplitScore};
use crate::survdata::{CompetingRisksDataset, Status, Treatment};

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_tree: usize,
    /// Minimum subjects per child node.
    pub n_min: usize,
    /// Minimum all-cause events per child node.
    pub n_minevent: usize,
    /// Each child keeps at least this fraction of its parent.
    pub alpha_reg: f64,
    /// Probability that a node's split variable is drawn uniformly at random.
    pub psi_split: f64,
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_tree: 300,
            n_min: 5,
            n_minevent: 2,
            alpha_reg: 0.1,
            psi_split: 0.1,
            subsample_fraction: 0.8,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if self.n_tree < 1 {
            return bad("n_tree must be at least 1");
        }
        if self.n_min < 1 || self.n_minevent < 1 {
            return bad("n_min and n_minevent must be positive");
        }
        if !(self.alpha_reg > 0.0 && self.alpha_reg <= 0.5) {
            return bad("alpha_reg must lie in (0, 0.5]");
        }
        if !(self.psi_split > 0.0 && self.psi_split < 1.0) {
            return bad("psi_split must lie in (0, 1)");
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return bad("subsample_fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Survival,
    Cause1Cif,
}

impl OutcomeKind {
    pub fn curve_kind(self) -> CurveKind {
        match self {
            OutcomeKind::Survival => CurveKind::Survival,
            OutcomeKind::Cause1Cif => CurveKind::Cif,
        }
    }

    /// Node-conditional estimate stored in terminal nodes.
    pub fn estimate(self, samples: &[WeightedSample]) -> Result<StepCurve> {
        match self {
            OutcomeKind::Survival => kaplan_meier(samples),
            OutcomeKind::Cause1Cif => aalen_johansen(samples, Status::Cause1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// `z[feature] <= threshold` goes left.
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Terminal {
        n: usize,
        events: usize,
        curve: StepCurve,
    },
}

impl TreeNode {
    pub fn route(&self, z: &[f64]) -> &StepCurve {
        let mut node = self;
        loop {
            match node {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if z[*feature] <= *threshold { left } else { right },
                TreeNode::Terminal { curve, .. } => return curve,
            }
        }
    }

    pub fn terminals(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            match n {
                TreeNode::Internal { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
                t @ TreeNode::Terminal { .. } => out.push(t),
            }
        }
        out
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Internal { left, right, .. } => 1 + left.depth().max(right.depth()),
            TreeNode::Terminal { .. } => 0,
        }
    }
}

/// Training data for one treatment arm, column-friendly.
#[derive(Debug, Clone)]
pub struct ArmData {
    pub arm: Treatment,
    pub times: Vec<f64>,
    pub status: Vec<Status>,
    /// Row-major covariates, one row per subject.
    pub covariates: Vec<Vec<f64>>,
}

impl ArmData {
    pub fn from_dataset(ds: &CompetingRisksDataset, arm: Treatment) -> Self {
        let subjects = ds.arm(arm);
        Self {
            arm,
            times: subjects.iter().map(|s| s.time).collect(),
            status: subjects.iter().map(|s| s.status).collect(),
            covariates: subjects.iter().map(|s| s.covariates.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn p(&self) -> usize {
        self.covariates.first().map_or(0, Vec::len)
    }

    pub fn samples(&self, idx: &[usize]) -> Vec<WeightedSample> {
        idx.iter()
            .map(|&i| WeightedSample::unit(self.times[i], self.status[i]))
            .collect()
    }

    fn events(&self, idx: &[usize]) -> usize {
        idx.iter().filter(|&&i| self.status[i].is_event()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub score: SplitScore,
}

/// Best admissible split of the node holding rows `idx`, or `None` when the
/// node is too small or no threshold yields admissible children.
pub fn best_split<R: Rng>(
    data: &ArmData,
    idx: &[usize],
    kind: OutcomeKind,
    params: &ForestParams,
    tau: f64,
    rng: &mut R,
) -> Option<Split> {
    let n = idx.len();
    let p = data.p();
    let random_feature = rng.random_bool(params.psi_split);
    let features: Vec<usize> = if random_feature && p > 0 {
        vec![rng.random_range(0..p)]
    } else {
        (0..p).collect()
    };
    let n_events = data.events(idx);
    if n < 2 * params.n_min || n_events < 2 * params.n_minevent || p == 0 {
        return None;
    }

    let mut times: Vec<f64> = idx.iter().map(|&i| data.times[i]).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let slot: Vec<usize> = idx
        .iter()
        .map(|&i| times.partition_point(|&t| t < data.times[i]))
        .collect();
    let mut full = GroupCounts::zeros(times.len());
    for (j, &i) in idx.iter().enumerate() {
        full.add(slot[j], data.status[i], 1.0);
    }
    let min_child = params.n_min.max((params.alpha_reg * n as f64).ceil() as usize);

    let mut best: Option<Split> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for f in features {
        let x = |j: usize| data.covariates[idx[j]][f];
        order.sort_by(|&a, &b| x(a).total_cmp(&x(b)).then(a.cmp(&b)));
        let mut left = GroupCounts::zeros(times.len());
        let mut right = full.clone();
        let mut left_events = 0usize;
        for pos in 0..n - 1 {
            let j = order[pos];
            let st = data.status[idx[j]];
            left.add(slot[j], st, 1.0);
            right.remove(slot[j], st, 1.0);
            left_events += st.is_event() as usize;
            let (lo, hi) = (x(j), x(order[pos + 1]));
            if lo == hi {
                continue;
            }
            let n_left = pos + 1;
            if n_left < min_child || n - n_left < min_child {
                continue;
            }
            if left_events < params.n_minevent || n_events - left_events < params.n_minevent {
                continue;
            }
            let score = match kind {
                OutcomeKind::Survival => logrank_counts(&left, &right),
                OutcomeKind::Cause1Cif => gray_counts(&left, &right, &times, tau),
            };
            if score.beats(best.as_ref().map(|b| &b.score)) {
                best = Some(Split {
                    feature: f,
                    threshold: midpoint(lo, hi),
                    score,
                });
            }
        }
    }
    best
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + 0.5 * (hi - lo);
    if m >= hi {
        lo
    } else {
        m
    }
}

fn grow<R: Rng>(
    data: &ArmData,
    idx: Vec<usize>,
    kind: OutcomeKind,
    params: &ForestParams,
    tau: f64,
    rng: &mut R,
) -> Result<TreeNode> {
    match best_split(data, &idx, kind, params, tau, rng) {
        None => Ok(TreeNode::Terminal {
            n: idx.len(),
            events: data.events(&idx),
            curve: kind.estimate(&data.samples(&idx))?,
        }),
        Some(s) => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx
                .into_iter()
                .partition(|&i| data.covariates[i][s.feature] <= s.threshold);
            let left = grow(data, l, kind, params, tau, rng)?;
            let right = grow(data, r, kind, params, tau, rng)?;
            Ok(TreeNode::Internal {
                feature: s.feature,
                threshold: s.threshold,
                left: Box::new(left),
                right: Box::new(right),
            })
        }
    }
}

/// Random stream for tree `w` of a forest seeded with `seed`.
pub fn tree_rng(seed: u64, w: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(w as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub outcome_kind: OutcomeKind,
    pub arm: Treatment,
    pub tau: f64,
    pub p: usize,
    pub params: ForestParams,
    pub trees: Vec<TreeNode>,
}

#[derive(Serialize, Deserialize)]
struct ForestFile<F> {
    version: u32,
    forest: F,
}

pub fn fit_forest(data: &ArmData, kind: OutcomeKind, params: &ForestParams, tau: f64) -> Result<Forest> {
    params.validate()?;
    if data.is_empty() {
        return Err(Error::data(format!("empty treatment arm {}", data.arm)));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::config("tau must be positive"));
    }
    let n = data.len();
    let k = ((params.subsample_fraction * n as f64).round() as usize).clamp(1, n);
    let trees = (0..params.n_tree)
        .into_par_iter()
        .map(|w| {
            let mut rng = tree_rng(params.seed, w);
            let mut idx = index::sample(&mut rng, n, k).into_vec();
            idx.sort_unstable();
            grow(data, idx, kind, params, tau, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Forest {
        outcome_kind: kind,
        arm: data.arm,
        tau,
        p: data.p(),
        params: *params,
        trees,
    })
}

impl Forest {
    /// Mean of the terminal curves reached by `z` across all trees.
    pub fn predict_curve(&self, z: &[f64]) -> Result<StepCurve> {
        if z.len() != self.p {
            return Err(Error::data(format!(
                "covariate vector has length {}, forest was trained with {}",
                z.len(),
                self.p
            )));
        }
        let leaves: Vec<&StepCurve> = self.trees.iter().map(|t| t.route(z)).collect();
        average_curves(&leaves, None)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ForestFile {
            version: FOREST_FORMAT_VERSION,
            forest: self,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: ForestFile<serde_json::Value> = serde_json::from_str(s)?;
        if v.version != FOREST_FORMAT_VERSION {
            return Err(Error::data(format!("unsupported forest format version {}", v.version)));
        }
        Ok(serde_json::from_value(v.forest)?)
    }
}

pub fn predict_curve(forest: &Forest, z: &[f64]) -> Result<StepCurve> {
    forest.predict_curve(z)
}
