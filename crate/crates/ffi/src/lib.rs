//! C ABI over the `robustmd` library.
//!
//! Every function returns an [`RmdStatus`]; on failure a message describing
//! the error can be read with [`rmd_last_error`] on the same thread. Handles
//! are opaque and must be released with their `_free` function. Parameters
//! are passed as column-major `double` arrays of `rows * cols` entries.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use robustmd::bench::{self, ExperimentConfig, ExperimentReport};
use robustmd::estimators::{self, CorruptionBudget};
use robustmd::geometry::{BallConstraint, Geometry};
use robustmd::{Error, Param};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RmdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DimensionMismatch = 3,
    BudgetInfeasible = 4,
    Numerical = 5,
    Config = 6,
    Parse = 7,
    Io = 8,
    Panic = 9,
}

impl From<&Error> for RmdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) => RmdStatus::InvalidInput,
            Error::DimensionMismatch { .. } => RmdStatus::DimensionMismatch,
            Error::BudgetInfeasible { .. } => RmdStatus::BudgetInfeasible,
            Error::Numerical(_) => RmdStatus::Numerical,
            Error::Config(_) => RmdStatus::Config,
            Error::Parse { .. } => RmdStatus::Parse,
            Error::Io(_) => RmdStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NUL removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(RmdStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(RmdStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(RmdStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<RmdStatus, Failure>) -> RmdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RmdStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(RmdStatus::InvalidInput, format!("{what} is not valid UTF-8")))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rmd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |m| m.as_ptr()))
}

/// Trimmed mean of `n` values (quantiles from the first half, average of the
/// clipped second half).
///
/// # Safety
/// `values` must point to `n` readable doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn rmd_trimmed_mean(values: *const f64, n: usize, alpha: f64, out: *mut f64) -> RmdStatus {
    guard(|| {
        let v = slice(values, n, "values")?;
        *out_ref(out, "out")? = estimators::trimmed_mean(v, alpha)?;
        Ok(RmdStatus::Ok)
    })
}

/// `k`-th smallest (1-based) of `n` values.
///
/// # Safety
/// `values` must point to `n` readable doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn rmd_select_kth(values: *const f64, n: usize, k: usize, out: *mut f64) -> RmdStatus {
    guard(|| {
        let v = slice(values, n, "values")?;
        *out_ref(out, "out")? = estimators::select_kth(v, k)?;
        Ok(RmdStatus::Ok)
    })
}

/// Trimming level for corruption fraction `eta`, failure probability `delta`
/// and `n` samples.
///
/// # Safety
/// `out` must point to one writable double.
#[no_mangle]
pub unsafe extern "C" fn rmd_alpha_from_budget(eta: f64, delta: f64, n: usize, out: *mut f64) -> RmdStatus {
    guard(|| {
        *out_ref(out, "out")? = estimators::alpha_from_budget(CorruptionBudget { eta, delta, n })?;
        Ok(RmdStatus::Ok)
    })
}

/// Opaque geometry handle.
pub struct RmdGeometry {
    inner: Geometry,
}

unsafe fn geometry_new(make: impl FnOnce() -> robustmd::Result<Geometry>, out: *mut *mut RmdGeometry) -> RmdStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        *out = Box::into_raw(Box::new(RmdGeometry { inner: make()? }));
        Ok(RmdStatus::Ok)
    })
}

/// Sparse vectors of dimension `d`.
///
/// # Safety
/// `out` must point to a writable handle pointer.
#[no_mangle]
pub unsafe extern "C" fn rmd_geometry_vanilla(d: usize, out: *mut *mut RmdGeometry) -> RmdStatus {
    geometry_new(|| Geometry::vanilla(d), out)
}

/// `rows x cols` parameters whose rows are the groups.
///
/// # Safety
/// `out` must point to a writable handle pointer.
#[no_mangle]
pub unsafe extern "C" fn rmd_geometry_group(rows: usize, cols: usize, out: *mut *mut RmdGeometry) -> RmdStatus {
    geometry_new(|| Geometry::group(rows, cols), out)
}

/// Low-rank `p x q` matrices.
///
/// # Safety
/// `out` must point to a writable handle pointer.
#[no_mangle]
pub unsafe extern "C" fn rmd_geometry_lowrank(p: usize, q: usize, out: *mut *mut RmdGeometry) -> RmdStatus {
    geometry_new(|| Geometry::low_rank(p, q), out)
}

/// # Safety
/// `geometry` must be null or a handle returned by a constructor and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rmd_geometry_free(geometry: *mut RmdGeometry) {
    if !geometry.is_null() {
        drop(Box::from_raw(geometry));
    }
}

/// # Safety
/// `geometry` must be a live handle; `rows` and `cols` writable.
#[no_mangle]
pub unsafe extern "C" fn rmd_geometry_shape(
    geometry: *const RmdGeometry,
    rows: *mut usize,
    cols: *mut usize,
) -> RmdStatus {
    guard(|| {
        let g = &geometry.as_ref().ok_or_else(|| null("geometry"))?.inner;
        let (r, c) = g.shape();
        *out_ref(rows, "rows")? = r;
        *out_ref(cols, "cols")? = c;
        Ok(RmdStatus::Ok)
    })
}

unsafe fn param(g: &Geometry, p: *const f64, len: usize, what: &str) -> Result<Param, Failure> {
    let (r, c) = g.shape();
    if len != r * c {
        return Err(Error::DimensionMismatch { expected: r * c, got: len }.into());
    }
    Ok(Param::from_column_slice(r, c, slice(p, len, what)?))
}

unsafe fn with_geometry(
    geometry: *const RmdGeometry,
    f: impl FnOnce(&Geometry) -> Result<RmdStatus, Failure>,
) -> RmdStatus {
    guard(|| f(&geometry.as_ref().ok_or_else(|| null("geometry"))?.inner))
}

/// Geometry norm of `theta`.
///
/// # Safety
/// `theta` must point to `len` readable doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn rmd_geometry_norm(
    geometry: *const RmdGeometry,
    theta: *const f64,
    len: usize,
    out: *mut f64,
) -> RmdStatus {
    with_geometry(geometry, |g| {
        let t = param(g, theta, len, "theta")?;
        *out_ref(out, "out")? = g.norm(&t)?;
        Ok(RmdStatus::Ok)
    })
}

/// Dual norm of `theta`.
///
/// # Safety
/// `theta` must point to `len` readable doubles and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn rmd_geometry_dual_norm(
    geometry: *const RmdGeometry,
    theta: *const f64,
    len: usize,
    out: *mut f64,
) -> RmdStatus {
    with_geometry(geometry, |g| {
        let t = param(g, theta, len, "theta")?;
        *out_ref(out, "out")? = g.dual_norm(&t)?;
        Ok(RmdStatus::Ok)
    })
}

/// Prox mapping of `w` onto the norm ball of `radius` around `center`.
///
/// # Safety
/// `w`, `center` and `out` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmd_geometry_prox_ball(
    geometry: *const RmdGeometry,
    w: *const f64,
    center: *const f64,
    len: usize,
    radius: f64,
    out: *mut f64,
) -> RmdStatus {
    with_geometry(geometry, |g| {
        let w = param(g, w, len, "w")?;
        let ball = BallConstraint::new(param(g, center, len, "center")?, radius)?;
        let theta = g.prox_ball(&w, &ball)?;
        slice_mut(out, len, "out")?.copy_from_slice(theta.as_slice());
        Ok(RmdStatus::Ok)
    })
}

/// Keeps the `s` largest coordinates, groups or singular values of `theta`.
///
/// # Safety
/// `theta` and `out` must each point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rmd_geometry_sparsify(
    geometry: *const RmdGeometry,
    theta: *const f64,
    len: usize,
    s: usize,
    out: *mut f64,
) -> RmdStatus {
    with_geometry(geometry, |g| {
        let t = param(g, theta, len, "theta")?;
        let sparse = g.sparsify(&t, s)?;
        slice_mut(out, len, "out")?.copy_from_slice(sparse.as_slice());
        Ok(RmdStatus::Ok)
    })
}

/// Opaque experiment: a configuration being assembled.
pub struct RmdExperiment {
    pairs: Vec<(String, String)>,
    config: ExperimentConfig,
}

/// Opaque result of a run.
pub struct RmdResult {
    report: ExperimentReport,
}

/// One trace record. Error fields are NaN when the truth is unknown.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmdRecord {
    pub stage: usize,
    pub iter: usize,
    pub elapsed_ms: f64,
    pub l2_error: f64,
    pub norm_error: f64,
    pub objective: f64,
}

/// Parses a `key = value` configuration (may be empty for all defaults).
///
/// # Safety
/// `config_text` must be a NUL-terminated string; `out` a writable handle pointer.
#[no_mangle]
pub unsafe extern "C" fn rmd_experiment_new(config_text: *const c_char, out: *mut *mut RmdExperiment) -> RmdStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let pairs = bench::parse_pairs(text(config_text, "config_text")?)?;
        let config = ExperimentConfig::from_pairs(pairs.clone())?;
        *out = Box::into_raw(Box::new(RmdExperiment { pairs, config }));
        Ok(RmdStatus::Ok)
    })
}

/// Overrides one key. On error the experiment is left unchanged.
///
/// # Safety
/// `experiment` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn rmd_experiment_set(
    experiment: *mut RmdExperiment,
    key: *const c_char,
    value: *const c_char,
) -> RmdStatus {
    guard(|| {
        let exp = experiment.as_mut().ok_or_else(|| null("experiment"))?;
        let mut pairs = exp.pairs.clone();
        pairs.push((text(key, "key")?.to_string(), text(value, "value")?.to_string()));
        exp.config = ExperimentConfig::from_pairs(pairs.clone())?;
        exp.pairs = pairs;
        Ok(RmdStatus::Ok)
    })
}

/// # Safety
/// `experiment` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rmd_experiment_free(experiment: *mut RmdExperiment) {
    if !experiment.is_null() {
        drop(Box::from_raw(experiment));
    }
}

/// Runs all repeats. When a repeat fails numerically the result is still
/// returned (holding the records made before the failure) together with
/// `RMD_STATUS_NUMERICAL`.
///
/// # Safety
/// `experiment` must be a live handle; `out` a writable handle pointer.
#[no_mangle]
pub unsafe extern "C" fn rmd_experiment_run(experiment: *const RmdExperiment, out: *mut *mut RmdResult) -> RmdStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let exp = experiment.as_ref().ok_or_else(|| null("experiment"))?;
        let report = bench::run_experiment(&exp.config)?;
        let failure = report.failure().map(|r| {
            let e = r.error.as_ref().expect("failed run has an error");
            Failure(RmdStatus::from(e), format!("repeat {} failed: {e}", r.run_id))
        });
        *out = Box::into_raw(Box::new(RmdResult { report }));
        match failure {
            Some(f) => Err(f),
            None => Ok(RmdStatus::Ok),
        }
    })
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rmd_result_free(result: *mut RmdResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

unsafe fn with_run(
    result: *const RmdResult,
    repeat: usize,
    f: impl FnOnce(&bench::RunOutcome) -> Result<RmdStatus, Failure>,
) -> RmdStatus {
    guard(|| {
        let res = result.as_ref().ok_or_else(|| null("result"))?;
        let run = res.report.runs.get(repeat).ok_or_else(|| {
            Failure(RmdStatus::InvalidInput, format!("repeat {repeat} out of range ({} repeats)", res.report.runs.len()))
        })?;
        f(run)
    })
}

/// Number of repeats.
///
/// # Safety
/// `result` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rmd_result_repeats(result: *const RmdResult, out: *mut usize) -> RmdStatus {
    guard(|| {
        let res = result.as_ref().ok_or_else(|| null("result"))?;
        *out_ref(out, "out")? = res.report.runs.len();
        Ok(RmdStatus::Ok)
    })
}

/// Number of trace records of a repeat.
///
/// # Safety
/// `result` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rmd_result_record_count(result: *const RmdResult, repeat: usize, out: *mut usize) -> RmdStatus {
    with_run(result, repeat, |run| {
        *out_ref(out, "out")? = run.trace.records.len();
        Ok(RmdStatus::Ok)
    })
}

/// Trace record `index` of a repeat.
///
/// # Safety
/// `result` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rmd_result_record(
    result: *const RmdResult,
    repeat: usize,
    index: usize,
    out: *mut RmdRecord,
) -> RmdStatus {
    with_run(result, repeat, |run| {
        let r = run
            .trace
            .records
            .get(index)
            .ok_or_else(|| Failure(RmdStatus::InvalidInput, format!("record {index} out of range")))?;
        *out_ref(out, "out")? = RmdRecord {
            stage: r.stage,
            iter: r.iter,
            elapsed_ms: r.elapsed_ms,
            l2_error: r.metrics.l2_error.unwrap_or(f64::NAN),
            norm_error: r.metrics.norm_error.unwrap_or(f64::NAN),
            objective: r.metrics.objective,
        };
        Ok(RmdStatus::Ok)
    })
}

/// Final estimate of a repeat (column-major, `len` entries).
///
/// # Safety
/// `result` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn rmd_result_theta(result: *const RmdResult, repeat: usize, out: *mut f64, len: usize) -> RmdStatus {
    with_run(result, repeat, |run| {
        let theta = run.theta.as_ref().ok_or_else(|| {
            Failure(RmdStatus::Numerical, format!("repeat {repeat} failed and has no estimate"))
        })?;
        if len != theta.len() {
            return Err(Error::DimensionMismatch { expected: theta.len(), got: len }.into());
        }
        slice_mut(out, len, "out")?.copy_from_slice(theta.as_slice());
        Ok(RmdStatus::Ok)
    })
}

/// Writes the detail CSV (same format as the command line tool) to `path`.
///
/// # Safety
/// `result` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rmd_result_write_detail(result: *const RmdResult, path: *const c_char) -> RmdStatus {
    guard(|| {
        let res = result.as_ref().ok_or_else(|| null("result"))?;
        let file = std::fs::File::create(text(path, "path")?).map_err(Error::from)?;
        bench::write_detail(&res.report, std::io::BufWriter::new(file))?;
        Ok(RmdStatus::Ok)
    })
}
