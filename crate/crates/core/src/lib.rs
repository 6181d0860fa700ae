//! Individualized treatment rules for right-censored survival data with
//! competing risks.
//!
//! Per treatment arm, a random survival forest estimates all-cause survival
//! and a random cumulative incidence forest estimates the priority-cause
//! incidence. A two-phase rule first protects restricted mean survival up to
//! a relative tolerance and then minimizes the priority-cause incidence area
//! among the treatments that remain eligible.
//!
//! Simulators with closed-form truth and a value-function benchmark harness
//! are included to validate the estimator.

pub mod cli;
pub mod curves;
pub mod error;
pub mod evalbench;
pub mod forest;
mod io;
pub mod itr;
pub mod quadrature;
pub mod sim;
pub mod splitstats;
pub mod survdata;

pub use curves::{aalen_johansen, average_curves, kaplan_meier, truncated_auc, CurveKind, StepCurve, WeightedSample};
pub use error::{Error, Result};
pub use forest::{fit_forest, predict_curve, ArmData, Forest, ForestParams, OutcomeKind};
pub use io::write_atomic;
pub use itr::{fit_itr, recommend, two_phase, zero_order_policy, ItrConfig, ItrModel, Phase, PhaseTrace};
pub use splitstats::{gray_score, logrank_score, SplitScore};
pub use survdata::{
    load_dataset, save_dataset, validate, ColumnSchema, CompetingRisksDataset, Status, Subject, Treatment,
};

/// SplitMix64 finalizer over `seed` and a stream id; used to derive
/// independent seeds for arms, replications and evaluation sets.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `f` on a dedicated pool with `threads` workers (`None`: rayon's default).
pub fn with_threads<T, F>(threads: Option<usize>, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}
