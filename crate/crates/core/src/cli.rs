//! Command-line front end.
//!
//! Exit codes: 0 ok, 2 usage or configuration error, 3 data error (I/O,
//! parsing, schema), 4 numeric or fitting error. `ITRCR_SEED` overrides
//! `--seed` when set. Every output file is written atomically.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evalbench::{self, BenchPolicy, BenchmarkConfig, EvalSet};
use crate::forest::ForestParams;
use crate::io::write_atomic;
use crate::itr::{fit_itr, policy_csv, ItrConfig, ItrModel};
use crate::sim::{generate, Scenario, TruthOracle};
use crate::survdata::{dataset_to_csv, load_dataset, validate, ColumnSchema, CompetingRisksDataset};
use crate::{with_threads, CurveKind};

pub const SEED_ENV: &str = "ITRCR_SEED";
pub const CURVES_SCHEMA: &str = "itrcr.curves.v1";
pub const VALUE_SCHEMA: &str = "itrcr.value.v1";

#[derive(Debug, Parser)]
#[command(
    name = "itrcr",
    version,
    about = "Individualized treatment rules for competing-risks survival data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a training dataset from a scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's sample size.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit per-arm survival and incidence forests.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Horizon; defaults to the dataset's.
        #[arg(long)]
        tau: Option<f64>,
        #[command(flatten)]
        itr: ItrArgs,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write predicted survival and incidence curves for every subject and arm.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Write per-subject recommendations with the two-phase trace.
    Policy {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Value of the fitted policy on a fresh evaluation set from a scenario.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = evalbench::DEFAULT_N_EVAL)]
        n_eval: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Replicated simulate-fit-evaluate benchmark.
    Benchmark {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = evalbench::DEFAULT_N_EVAL)]
        n_eval: usize,
        /// Comma-separated subset of proposed,zero_order,observed,true_optimal.
        #[arg(long, default_value = "proposed,zero_order,observed,true_optimal")]
        policies: String,
        #[command(flatten)]
        itr: ItrArgs,
        #[arg(long)]
        threads: Option<usize>,
    },
}

/// Flags mirroring `ItrConfig` and `ForestParams`.
#[derive(Debug, Clone, Args)]
pub struct ItrArgs {
    #[arg(long, default_value_t = 0.07)]
    pub alpha_phi: f64,
    #[arg(long, default_value_t = 300)]
    pub n_tree: usize,
    #[arg(long, default_value_t = 5)]
    pub n_min: usize,
    #[arg(long, default_value_t = 2)]
    pub n_minevent: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha_reg: f64,
    #[arg(long, default_value_t = 0.1)]
    pub psi_split: f64,
    #[arg(long, default_value_t = 0.8)]
    pub subsample_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ItrArgs {
    fn config(&self, tau: f64) -> Result<ItrConfig> {
        let cfg = ItrConfig {
            alpha_phi: self.alpha_phi,
            tau,
            forest_params: ForestParams {
                n_tree: self.n_tree,
                n_min: self.n_min,
                n_minevent: self.n_minevent,
                alpha_reg: self.alpha_reg,
                psi_split: self.psi_split,
                subsample_fraction: self.subsample_fraction,
                seed: resolve_seed(Some(self.seed))?.unwrap_or(self.seed),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } | Error::Row { .. } | Error::Data(_) | Error::Csv(_) | Error::Json(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn load_model(path: &Path) -> Result<ItrModel> {
    ItrModel::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

fn load_data(path: &Path) -> Result<CompetingRisksDataset> {
    load_dataset(path, &ColumnSchema::default())
}

fn curves_csv(model: &ItrModel, ds: &CompetingRisksDataset) -> Result<String> {
    let blocks = ds
        .subjects()
        .par_iter()
        .map(|s| {
            let mut out = String::new();
            for &a in &model.treatment_space {
                for (forest, kind) in [
                    (&model.survival[&a], CurveKind::Survival),
                    (&model.cif[&a], CurveKind::Cif),
                ] {
                    let c = forest.predict_curve(&s.covariates)?;
                    let _ = writeln!(out, "{},{a},0,{},{}", s.id, c.initial_value(), kind.as_str());
                    for (t, v) in c.jump_times().iter().zip(c.values()) {
                        let _ = writeln!(out, "{},{a},{t},{v},{}", s.id, kind.as_str());
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<String>>>()?;
    Ok(format!(
        "# {CURVES_SCHEMA}\nid,treatment,time,value,kind\n{}",
        blocks.concat()
    ))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate { scenario, out, seed, n } => {
            let mut sc = Scenario::load(&scenario)?;
            if let Some(n) = n {
                sc.n = n;
            }
            let seed = resolve_seed(seed)?.unwrap_or(sc.seed);
            sc.seed = seed;
            let (ds, _) = generate(&sc, seed)?;
            let mut echo = out.as_os_str().to_owned();
            echo.push(".scenario");
            write_atomic(&out, dataset_to_csv(&ds)?.as_bytes())?;
            write_atomic(Path::new(&echo), sc.to_config().as_bytes())?;
            let [c0, c1, c2] = ds.status_counts();
            println!(
                "simulated {} subjects (censored {c0}, cause 1 {c1}, cause 2 {c2}) -> {}",
                ds.len(),
                out.display()
            );
            Ok(())
        }
        Command::Fit {
            data,
            out,
            tau,
            itr,
            threads,
        } => {
            let mut ds = load_data(&data)?;
            if let Some(t) = tau {
                ds = ds.with_tau(t)?;
            }
            for w in validate(&ds).warnings {
                log::warn!("{w}");
            }
            let cfg = itr.config(ds.tau())?;
            let model = with_threads(threads, || fit_itr(&ds, &cfg))??;
            write_atomic(&out, model.to_json()?.as_bytes())?;
            println!(
                "fitted {} arms x 2 forests -> {}",
                model.treatment_space.len(),
                out.display()
            );
            Ok(())
        }
        Command::Predict {
            model,
            data,
            out,
            threads,
        } => {
            let model = load_model(&model)?;
            let ds = load_data(&data)?;
            let text = with_threads(threads, || curves_csv(&model, &ds))??;
            write_atomic(&out, text.as_bytes())
        }
        Command::Policy {
            model,
            data,
            out,
            threads,
        } => {
            let model = load_model(&model)?;
            let ds = load_data(&data)?;
            let text = with_threads(threads, || policy_csv(&model, &ds))??;
            write_atomic(&out, text.as_bytes())
        }
        Command::Evaluate {
            model,
            scenario,
            out,
            n_eval,
            seed,
            threads,
        } => {
            let model = load_model(&model)?;
            let sc = Scenario::load(&scenario)?;
            let seed = resolve_seed(seed)?.unwrap_or(sc.seed);
            let oracle = TruthOracle::new(sc);
            let eval = EvalSet::draw(&oracle, n_eval, seed);
            let value = with_threads(threads, || -> Result<_> {
                Ok(evalbench::value_of_assignments(
                    &evalbench::model_labels(&model, &eval)?,
                    &eval,
                ))
            })??;
            let json = serde_json::json!({
                "schema": VALUE_SCHEMA,
                "policy": "proposed",
                "v1": value.v1,
                "v2": value.v2,
                "n_eval": value.n_eval,
            });
            write_atomic(&out, serde_json::to_string_pretty(&json)?.as_bytes())?;
            println!(
                "v1 = {:.6}, v2 = {:.6} over {} subjects",
                value.v1, value.v2, value.n_eval
            );
            Ok(())
        }
        Command::Benchmark {
            scenario,
            out_dir,
            reps,
            n_eval,
            policies,
            itr,
            threads,
        } => {
            let sc = Scenario::load(&scenario)?;
            let policies = policies
                .split(',')
                .map(|p| p.trim().parse::<BenchPolicy>())
                .collect::<Result<BTreeSet<_>>>()?;
            let cfg = BenchmarkConfig {
                itr: itr.config(sc.tau)?,
                master_seed: resolve_seed(Some(itr.seed))?.unwrap_or(itr.seed),
                scenario: sc,
                n_reps: reps,
                n_eval,
                policies,
            };
            let summary = with_threads(threads, || evalbench::run_benchmark(&cfg))??;
            summary.write(&out_dir)?;
            print!("{}", summary.text_table());
            Ok(())
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
