//! C ABI over the `itrcr` library.
//!
//! Objects are opaque handles created by `*_load` / `*_fit` and released by the
//! matching `*_free`. Every fallible call returns an [`ItrcrStatus`]; on failure
//! `itrcr_last_error_message` describes the error for the calling thread.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use itrcr::{
    fit_itr, load_dataset, with_threads, write_atomic, ColumnSchema, CompetingRisksDataset, Error, ForestParams,
    ItrConfig, ItrModel, Phase, Treatment,
};

/// Opaque dataset handle.
pub struct ItrcrDataset(CompetingRisksDataset);

/// Opaque fitted-model handle.
pub struct ItrcrModel(ItrModel);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItrcrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Io = 5,
    Numeric = 6,
    Panic = 7,
}

/// Fitting options. Start from `itrcr_fit_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ItrcrFitOptions {
    pub alpha_phi: f64,
    /// Horizon; `<= 0` uses the dataset's.
    pub tau: f64,
    pub n_tree: usize,
    pub n_min: usize,
    pub n_minevent: usize,
    pub alpha_reg: f64,
    pub psi_split: f64,
    pub subsample_fraction: f64,
    pub seed: u64,
    /// Worker threads; 0 uses the global pool.
    pub threads: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ItrcrStatus {
    match e {
        Error::Config(_) => ItrcrStatus::Config,
        Error::Io { .. } => ItrcrStatus::Io,
        Error::Row { .. } | Error::Data(_) | Error::Csv(_) | Error::Json(_) => ItrcrStatus::Data,
        Error::Numeric(_) => ItrcrStatus::Numeric,
    }
}

struct Fail(ItrcrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(ItrcrStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ItrcrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ItrcrStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            ItrcrStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(ItrcrStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn itrcr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn itrcr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn itrcr_dataset_load(path: *const c_char, out: *mut *mut ItrcrDataset) -> ItrcrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let ds = load_dataset(path_arg(path)?, &ColumnSchema::default())?;
        *out = Box::into_raw(Box::new(ItrcrDataset(ds)));
        Ok(())
    })
}

/// # Safety
/// `ds` must come from `itrcr_dataset_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn itrcr_dataset_free(ds: *mut ItrcrDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live dataset handle; `n` and `p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn itrcr_dataset_shape(ds: *const ItrcrDataset, n: *mut usize, p: *mut usize) -> ItrcrStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.0;
        *out_arg(n, "n")? = ds.len();
        *out_arg(p, "p")? = ds.p();
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn itrcr_fit_options_default() -> ItrcrFitOptions {
    let fp = ForestParams::default();
    ItrcrFitOptions {
        alpha_phi: ItrConfig::new(1.0).alpha_phi,
        tau: 0.0,
        n_tree: fp.n_tree,
        n_min: fp.n_min,
        n_minevent: fp.n_minevent,
        alpha_reg: fp.alpha_reg,
        psi_split: fp.psi_split,
        subsample_fraction: fp.subsample_fraction,
        seed: fp.seed,
        threads: 0,
    }
}

/// Fits per-arm forests. `options` may be null for defaults.
///
/// # Safety
/// `ds` must be a live dataset handle; `options` null or readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn itrcr_model_fit(
    ds: *const ItrcrDataset,
    options: *const ItrcrFitOptions,
    out: *mut *mut ItrcrModel,
) -> ItrcrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let ds = &ds.as_ref().ok_or_else(|| null("dataset"))?.0;
        let o = options.as_ref().copied().unwrap_or_else(|| itrcr_fit_options_default());
        let tau = if o.tau > 0.0 { o.tau } else { ds.tau() };
        let ds = ds.clone().with_tau(tau)?;
        let cfg = ItrConfig {
            alpha_phi: o.alpha_phi,
            tau,
            forest_params: ForestParams {
                n_tree: o.n_tree,
                n_min: o.n_min,
                n_minevent: o.n_minevent,
                alpha_reg: o.alpha_reg,
                psi_split: o.psi_split,
                subsample_fraction: o.subsample_fraction,
                seed: o.seed,
            },
        };
        cfg.validate()?;
        let threads = (o.threads > 0).then_some(o.threads);
        let model = with_threads(threads, || fit_itr(&ds, &cfg))??;
        *out = Box::into_raw(Box::new(ItrcrModel(model)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn itrcr_model_load(path: *const c_char, out: *mut *mut ItrcrModel) -> ItrcrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let path = path_arg(path)?;
        let text =
            std::fs::read_to_string(&path).map_err(|e| Fail(ItrcrStatus::Io, format!("{}: {e}", path.display())))?;
        *out = Box::into_raw(Box::new(ItrcrModel(ItrModel::from_json(&text)?)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live model handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn itrcr_model_save(model: *const ItrcrModel, path: *const c_char) -> ItrcrStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        write_atomic(&path_arg(path)?, model.to_json()?.as_bytes())?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn itrcr_model_free(model: *mut ItrcrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Copies up to `cap` treatment labels into `labels` and stores the total
/// count in `count`. Pass `cap = 0` to query the count.
///
/// # Safety
/// `model` must be live; `labels` must hold `cap` elements; `count` writable.
#[no_mangle]
pub unsafe extern "C" fn itrcr_model_treatments(
    model: *const ItrcrModel,
    labels: *mut u32,
    cap: usize,
    count: *mut usize,
) -> ItrcrStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        *out_arg(count, "count")? = model.treatment_space.len();
        if cap > 0 {
            if labels.is_null() {
                return Err(null("labels"));
            }
            let dst = std::slice::from_raw_parts_mut(labels, cap);
            for (d, a) in dst.iter_mut().zip(&model.treatment_space) {
                *d = a.0;
            }
        }
        Ok(())
    })
}

/// Predicted restricted mean survival (`phi1`) and cause-1 incidence area
/// (`phi2`) at covariates `z` under `treatment`.
///
/// # Safety
/// `model` must be live; `z` must hold `p` values; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn itrcr_model_criteria(
    model: *const ItrcrModel,
    z: *const f64,
    p: usize,
    treatment: u32,
    phi1: *mut f64,
    phi2: *mut f64,
) -> ItrcrStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let (a, b) = model.criteria(slice_arg(z, p, "z")?, Treatment(treatment))?;
        *out_arg(phi1, "phi1")? = a;
        *out_arg(phi2, "phi2")? = b;
        Ok(())
    })
}

/// Recommends a treatment for covariates `z`. `feasible` lists the allowed
/// labels; null with `n_feasible = 0` allows every arm. `phase` receives 1 or 2.
///
/// # Safety
/// `model` must be live; `z` must hold `p` values; `feasible` must hold
/// `n_feasible` labels; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn itrcr_model_recommend(
    model: *const ItrcrModel,
    z: *const f64,
    p: usize,
    feasible: *const u32,
    n_feasible: usize,
    treatment: *mut u32,
    phase: *mut u32,
) -> ItrcrStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let z = slice_arg(z, p, "z")?;
        let allowed: BTreeSet<Treatment> = if n_feasible == 0 {
            model.treatment_space.clone()
        } else {
            slice_arg(feasible, n_feasible, "feasible")?
                .iter()
                .map(|&a| Treatment(a))
                .collect()
        };
        let trace = model.recommend(z, &allowed)?;
        *out_arg(treatment, "treatment")? = trace.chosen.0;
        *out_arg(phase, "phase")? = match trace.phase {
            Phase::One => 1,
            Phase::Two => 2,
        };
        Ok(())
    })
}
