//! C interface to `coalfed`.
//!
//! Every fallible function returns a [`CflStatus`] and writes results
//! through out-pointers. On failure the message is kept per thread and read
//! with [`cfl_last_error`]. Objects are opaque handles released with their
//! matching `_free` function; strings returned by the library are released
//! with [`cfl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use coalfed::bounds::{precision_bound, recall_bound, CouponCollectorParams};
use coalfed::models::Model;
use coalfed::policy::{generate_policies, Context, GuidancePackage, PolicySet, Subject};
use coalfed::scenario::{self, Scenario};
use coalfed::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CflStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Domain = 3,
    Parse = 4,
    Config = 5,
    Schema = 6,
    Io = 7,
    Runtime = 8,
    Panic = 9,
}

/// Parsed policy set.
pub struct CflPolicySet(PolicySet);

/// Loaded, resolved scenario.
pub struct CflScenario(Scenario);

/// Trained model.
pub struct CflModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CflStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Domain(_) | Error::UndefinedReference(_) | Error::OutOfDomain => CflStatus::Domain,
            Error::Parse { .. } => CflStatus::Parse,
            Error::Config(_) => CflStatus::Config,
            Error::Schema(_) | Error::ArchMismatch { .. } | Error::UnresolvableFormat { .. } => CflStatus::Schema,
            Error::Io(_) | Error::Csv(_) => CflStatus::Io,
            _ => CflStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(CflStatus::Config, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CflStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            CflStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CflStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn utf8<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CflStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(CflStatus::Runtime, "output contains a nul byte".into()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn cfl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null after a success.
/// Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn cfl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn cfl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `max(0, 1 - c0 * exp(-2 q (1 - nu)))`.
///
/// # Safety
/// `result` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfl_precision_bound(c0: f64, q: u64, nu: f64, result: *mut f64) -> CflStatus {
    guard(|| {
        let params = CouponCollectorParams::new(c0, 1.0, 1, 1)?;
        *out(result, "result")? = precision_bound(&params, q, nu)?;
        Ok(())
    })
}

/// `max(0, 1 - c1 * exp(-q (1 - nu)))`.
///
/// # Safety
/// `result` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfl_recall_bound(c1: f64, q: u64, nu: f64, result: *mut f64) -> CflStatus {
    guard(|| {
        let params = CouponCollectorParams::new(1.0, c1, 1, 1)?;
        *out(result, "result")? = recall_bound(&params, q, nu)?;
        Ok(())
    })
}

/// Parses policy text, one policy per line.
///
/// # Safety
/// `text` must be a nul-terminated string and `set` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfl_policy_set_parse(text: *const c_char, set: *mut *mut CflPolicySet) -> CflStatus {
    guard(|| {
        let slot = out(set, "set")?;
        let parsed = PolicySet::parse(utf8(text, "text")?)?;
        *slot = Box::into_raw(Box::new(CflPolicySet(parsed)));
        Ok(())
    })
}

/// Instantiates the guidance templates for a context. Both inputs are JSON;
/// a null `guidance_json` selects the default guidance.
///
/// # Safety
/// String arguments must be null or nul-terminated; `set` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cfl_generate_policies(
    context_json: *const c_char,
    guidance_json: *const c_char,
    set: *mut *mut CflPolicySet,
) -> CflStatus {
    guard(|| {
        let slot = out(set, "set")?;
        let context: Context = serde_json::from_str(utf8(context_json, "context_json")?)?;
        let guidance: GuidancePackage = if guidance_json.is_null() {
            GuidancePackage::default()
        } else {
            serde_json::from_str(utf8(guidance_json, "guidance_json")?)?
        };
        let generated = generate_policies(&guidance, &context)?;
        *slot = Box::into_raw(Box::new(CflPolicySet(generated)));
        Ok(())
    })
}

/// Number of policies, 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfl_policy_set_len(set: *const CflPolicySet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// Canonical text of the set; free with [`cfl_string_free`].
///
/// # Safety
/// `set` must be a live handle and `text_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfl_policy_set_to_text(set: *const CflPolicySet, text_out: *mut *mut c_char) -> CflStatus {
    guard(|| {
        let slot = out(text_out, "text_out")?;
        *slot = owned_string(handle(set, "set")?.0.to_text())?;
        Ok(())
    })
}

/// Evaluates the set against a JSON object of attributes and returns the
/// decision as JSON; free with [`cfl_string_free`].
///
/// # Safety
/// `set` must be a live handle, `subject_json` nul-terminated and
/// `decision_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfl_policy_set_evaluate(
    set: *const CflPolicySet,
    subject_json: *const c_char,
    decision_json: *mut *mut c_char,
) -> CflStatus {
    guard(|| {
        let slot = out(decision_json, "decision_json")?;
        let set = handle(set, "set")?;
        let subject: Subject = serde_json::from_str(utf8(subject_json, "subject_json")?)?;
        let decision = set.0.evaluate(&subject.normalized())?;
        *slot = owned_string(serde_json::to_string(&decision)?)?;
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cfl_policy_set_free(set: *mut CflPolicySet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Loads and resolves a scenario file. Relative data paths resolve against
/// the file's directory.
///
/// # Safety
/// `path` must be nul-terminated and `scenario` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfl_scenario_load(path: *const c_char, scenario: *mut *mut CflScenario) -> CflStatus {
    guard(|| {
        let slot = out(scenario, "scenario")?;
        let s = Scenario::load(Path::new(utf8(path, "path")?))?.resolved(None)?;
        *slot = Box::into_raw(Box::new(CflScenario(s)));
        Ok(())
    })
}

/// Parses and resolves scenario TOML text.
///
/// # Safety
/// `toml` must be nul-terminated and `scenario` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfl_scenario_from_toml(toml: *const c_char, scenario: *mut *mut CflScenario) -> CflStatus {
    guard(|| {
        let slot = out(scenario, "scenario")?;
        let s = Scenario::from_toml(utf8(toml, "toml")?)?.resolved(None)?;
        *slot = Box::into_raw(Box::new(CflScenario(s)));
        Ok(())
    })
}

/// Re-seeds a scenario in place.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfl_scenario_set_seed(scenario: *mut CflScenario, seed: u64) -> CflStatus {
    guard(|| {
        let s = out(scenario, "scenario")?;
        s.0 = s.0.clone().resolved(Some(seed))?;
        Ok(())
    })
}

/// Runs the scenario, writes its artifacts under `out_dir` and returns the
/// summary (metrics and artifact paths) as JSON.
///
/// # Safety
/// `scenario` must be a live handle, `out_dir` nul-terminated and
/// `summary_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfl_scenario_run(
    scenario: *const CflScenario,
    out_dir: *const c_char,
    summary_json: *mut *mut c_char,
) -> CflStatus {
    guard(|| {
        let slot = out(summary_json, "summary_json")?;
        let s = handle(scenario, "scenario")?;
        let summary = scenario::run(&s.0, Path::new(utf8(out_dir, "out_dir")?))?;
        *slot = owned_string(serde_json::to_string(&summary)?)?;
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cfl_scenario_free(scenario: *mut CflScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Loads a model written by the library.
///
/// # Safety
/// `path` must be nul-terminated and `model` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cfl_model_load(path: *const c_char, model: *mut *mut CflModel) -> CflStatus {
    guard(|| {
        let slot = out(model, "model")?;
        let m = Model::load(Path::new(utf8(path, "path")?))?;
        *slot = Box::into_raw(Box::new(CflModel(m)));
        Ok(())
    })
}

/// Input width the model expects.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cfl_model_input_dim(model: *const CflModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.arch().input_dim)
}

/// Regression output or class index for one feature row of `len` values.
///
/// # Safety
/// `model` must be a live handle, `x` must point to `len` doubles and
/// `result` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cfl_model_predict(
    model: *const CflModel,
    x: *const f64,
    len: usize,
    result: *mut f64,
) -> CflStatus {
    guard(|| {
        let slot = out(result, "result")?;
        let m = handle(model, "model")?;
        if x.is_null() {
            return Err(null("x"));
        }
        let want = m.0.arch().input_dim;
        if len != want {
            return Err(Failure(CflStatus::Domain, format!("expected {want} features, got {len}")));
        }
        *slot = m.0.predict(std::slice::from_raw_parts(x, len));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cfl_model_free(model: *mut CflModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
