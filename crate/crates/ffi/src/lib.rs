//! C interface to the solver.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free`. Every fallible call returns an [`SmStatus`]; on
//! failure [`sm_last_error`] describes the problem for the calling thread.
//! Strings returned through `char **` are freed with [`sm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use saddle_milp::harness::{generate_instance, prepare, solve_prepared, SolveReport};
use saddle_milp::simnet::{audit_staleness, Backend};
use saddle_milp::{ExperimentConfig, HarnessError, InstanceFile, MilpInstance};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidJson = 3,
    InvalidInput = 4,
    Runtime = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// A mixed-integer instance together with its Slater point.
pub struct SmInstance {
    instance: MilpInstance,
    slater_point: Vec<f64>,
}

/// Outcome of one solve.
pub struct SmResult {
    report: SolveReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = s);
}

struct Fail(SmStatus, String);

impl From<HarnessError> for Fail {
    fn from(e: HarnessError) -> Self {
        let code = match e {
            HarnessError::Config(_) | HarnessError::Model(_) | HarnessError::Analysis(_) => {
                SmStatus::InvalidInput
            }
            _ => SmStatus::Runtime,
        };
        Fail(code, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SmStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            SmStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(SmStatus::NullPointer, "null string argument".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(SmStatus::InvalidUtf8, e.to_string()))
}

fn parse<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, Fail> {
    serde_json::from_str(text).map_err(|e| Fail(SmStatus::InvalidJson, e.to_string()))
}

/// Null means the built-in desk profile.
unsafe fn read_config(p: *const c_char) -> Result<ExperimentConfig, Fail> {
    let cfg = if p.is_null() {
        ExperimentConfig::desk()
    } else {
        parse(read_str(p)?)?
    };
    cfg.validate()?;
    Ok(cfg)
}

unsafe fn out_ptr<'a, T>(out: *mut *mut T) -> Result<&'a mut *mut T, Fail> {
    out.as_mut()
        .ok_or_else(|| Fail(SmStatus::NullPointer, "null output pointer".into()))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(SmStatus::NullPointer, "null handle".into()))
}

fn to_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Fail(SmStatus::Runtime, e.to_string()))
}

/// Message for the last failed call on this thread; empty if none.
/// Valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn sm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses an instance document. `slater_point` must be present.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sm_instance_from_json(
    json: *const c_char,
    out: *mut *mut SmInstance,
) -> SmStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let file: InstanceFile = parse(read_str(json)?)?;
        let slater_point = file.slater_point.ok_or_else(|| {
            Fail(
                SmStatus::InvalidInput,
                "missing field `slater_point`".into(),
            )
        })?;
        if slater_point.len() != file.instance.dim() {
            return Err(Fail(
                SmStatus::InvalidInput,
                format!(
                    "slater_point has length {}, expected {}",
                    slater_point.len(),
                    file.instance.dim()
                ),
            ));
        }
        *out = Box::into_raw(Box::new(SmInstance {
            instance: file.instance,
            slater_point,
        }));
        Ok(())
    })
}

/// Draws a random instance; `config_json` may be null for the desk profile.
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sm_instance_generate(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut SmInstance,
) -> SmStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let cfg = read_config(config_json)?;
        let instance = generate_instance(&cfg, seed)?;
        let slater_point = vec![0.0; instance.dim()];
        *out = Box::into_raw(Box::new(SmInstance {
            instance,
            slater_point,
        }));
        Ok(())
    })
}

/// # Safety
/// `inst` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sm_instance_to_json(
    inst: *const SmInstance,
    out: *mut *mut c_char,
) -> SmStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let inst = handle(inst)?;
        let file = InstanceFile {
            instance: inst.instance.clone(),
            slater_point: Some(inst.slater_point.clone()),
        };
        let text =
            serde_json::to_string(&file).map_err(|e| Fail(SmStatus::Runtime, e.to_string()))?;
        *out = to_c_string(text)?;
        Ok(())
    })
}

/// Number of variables, or 0 for a null handle.
///
/// # Safety
/// `inst` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_instance_dim(inst: *const SmInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.instance.dim())
}

/// # Safety
/// `inst` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_instance_free(inst: *mut SmInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Runs the asynchronous solver and rounds its output.
/// `config_json` may be null for the desk profile.
///
/// # Safety
/// `inst` must be a live handle, `config_json` null or NUL-terminated and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sm_solve(
    inst: *const SmInstance,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut SmResult,
) -> SmStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let inst = handle(inst)?;
        let cfg = read_config(config_json)?;
        let prepared = prepare(&cfg, inst.instance.clone(), inst.slater_point.clone())?;
        let report = solve_prepared(&cfg, &prepared, seed, false, Backend::Sequential)?;
        *out = Box::into_raw(Box::new(SmResult { report }));
        Ok(())
    })
}

/// Summary of a solve as JSON.
///
/// # Safety
/// `res` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sm_result_to_json(
    res: *const SmResult,
    out: *mut *mut c_char,
) -> SmStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let r = &handle(res)?.report;
        let doc = serde_json::json!({
            "converged": r.trace.converged,
            "epochs": r.trace.epochs_run(),
            "gamma": r.gamma,
            "beta": r.beta,
            "theta": r.theta,
            "saddle_cost": r.saddle_cost,
            "certificate": r.certificate,
            "envelopes": r.trace.envelope_report(),
            "audit": audit_staleness(&r.trace),
            "solution": r.recovered,
        });
        *out = to_c_string(doc.to_string())?;
        Ok(())
    })
}

/// Copies the rounded solution into `buf`. `len` must be at least the
/// instance dimension; `written` (optional) receives the dimension.
///
/// # Safety
/// `res` must be a live handle and `buf` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sm_result_solution(
    res: *const SmResult,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> SmStatus {
    guard(|| {
        let x = &handle(res)?.report.recovered.x;
        if let Some(w) = written.as_mut() {
            *w = x.len();
        }
        if buf.is_null() {
            return Err(Fail(SmStatus::NullPointer, "null buffer".into()));
        }
        if len < x.len() {
            return Err(Fail(
                SmStatus::BufferTooSmall,
                format!("buffer holds {len}, need {}", x.len()),
            ));
        }
        std::slice::from_raw_parts_mut(buf, x.len()).copy_from_slice(x);
        Ok(())
    })
}

/// Cost of the rounded solution and whether it satisfies every constraint.
///
/// # Safety
/// `res` must be a live handle; `cost` and `feasible` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn sm_result_cost(
    res: *const SmResult,
    cost: *mut f64,
    feasible: *mut bool,
) -> SmStatus {
    guard(|| {
        let r = &handle(res)?.report;
        let (Some(c), Some(f)) = (cost.as_mut(), feasible.as_mut()) else {
            return Err(Fail(SmStatus::NullPointer, "null output pointer".into()));
        };
        *c = r.recovered.cost;
        *f = r.recovered.feasible();
        Ok(())
    })
}

/// # Safety
/// `res` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_result_free(res: *mut SmResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn sm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
