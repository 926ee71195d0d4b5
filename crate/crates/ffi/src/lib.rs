//! C ABI over `walkmeta`.
//!
//! Every fallible function returns a [`WmStatus`] and writes results through
//! out-pointers. On failure, [`wm_last_error`] describes the most recent error
//! on the calling thread. Handles are opaque and must be released with their
//! matching `*_free` function; passing NULL to a `*_free` function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use walkmeta::config::ExperimentConfig;
use walkmeta::privacy::{account_network_dp, noise_variance};
use walkmeta::simulator::{comm_cost, run, Method, MethodKind, RunRecord};
use walkmeta::topology::{sigma2, stationary_distribution, Graph, TransitionMatrix};
use walkmeta::Error;

/// Result codes shared by every function in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidParameter = 3,
    Config = 4,
    Numerical = 5,
    Io = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// Parsed and validated experiment configuration.
pub struct WmConfig {
    inner: ExperimentConfig,
}

/// Outcome of one simulated run.
pub struct WmRecord {
    inner: RunRecord,
}

/// Communication graph with its transition matrix.
pub struct WmTopology {
    graph: Graph,
    transition: TransitionMatrix,
}

/// One evaluation row of a run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct WmRow {
    pub iteration: u64,
    pub comm_units: u64,
    /// Active client at evaluation time, or -1 when none.
    pub active_client: i64,
    pub train_metric: f64,
    pub unseen_metric: f64,
    /// NaN when the run skipped gradient-norm evaluation.
    pub grad_norm_sq: f64,
}

/// Network-level privacy guarantee of a perturbed run.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct WmDpReport {
    pub epsilon_prime: f64,
    pub delta_total: f64,
    pub n_u: f64,
    pub q: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> WmStatus {
    match err {
        Error::Parameter { .. } => WmStatus::InvalidParameter,
        Error::Config(_) | Error::Format(_) => WmStatus::Config,
        Error::Numerical(_) | Error::Generation { .. } => WmStatus::Numerical,
        Error::Io(_) => WmStatus::Io,
    }
}

fn fail(err: Error) -> WmStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn null(what: &str) -> WmStatus {
    set_error(format!("{what} is NULL"));
    WmStatus::NullPointer
}

/// Runs `f`, converting panics into `WmStatus::Panic`.
fn guard(f: impl FnOnce() -> WmStatus) -> WmStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            WmStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, WmStatus> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        WmStatus::InvalidUtf8
    })
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn wm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// Configuration

/// Parses TOML configuration text. `*out` receives a new handle on success.
///
/// # Safety
/// `text` must be NULL or a NUL-terminated string; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wm_config_parse(text: *const c_char, out: *mut *mut WmConfig) -> WmStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let text = match read_str(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ExperimentConfig::parse(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(WmConfig { inner: cfg }));
                WmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Loads configuration from a file path.
///
/// # Safety
/// As for [`wm_config_parse`].
#[no_mangle]
pub unsafe extern "C" fn wm_config_load(path: *const c_char, out: *mut *mut WmConfig) -> WmStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ExperimentConfig::from_file(Path::new(path)) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(WmConfig { inner: cfg }));
                WmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Overrides the run seed.
///
/// # Safety
/// `cfg` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn wm_config_set_seed(cfg: *mut WmConfig, seed: u64) -> WmStatus {
    guard(|| match cfg.as_mut() {
        Some(c) => {
            c.inner.run.seed = seed;
            WmStatus::Ok
        }
        None => null("cfg"),
    })
}

/// # Safety
/// `cfg` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wm_config_free(cfg: *mut WmConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

// ---------------------------------------------------------------------------
// Runs

/// Runs the configured experiment. A run that aborts on a numerical failure
/// still yields a record; check [`wm_record_aborted`].
///
/// # Safety
/// `cfg` must be NULL or a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wm_run(cfg: *const WmConfig, out: *mut *mut WmRecord) -> WmStatus {
    guard(|| {
        let Some(cfg) = cfg.as_ref() else { return null("cfg") };
        if out.is_null() {
            return null("out");
        }
        let result = cfg.inner.build().and_then(|setup| run(&setup, cfg.inner.method.method()));
        match result {
            Ok(rec) => {
                if let Some(f) = &rec.failure {
                    set_error(format!("run aborted at iteration {}: {}", f.iteration, f.message));
                }
                *out = Box::into_raw(Box::new(WmRecord { inner: rec }));
                WmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `rec` must be NULL or a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wm_record_row_count(rec: *const WmRecord, out: *mut usize) -> WmStatus {
    guard(|| match (rec.as_ref(), out.is_null()) {
        (None, _) => null("rec"),
        (_, true) => null("out"),
        (Some(r), false) => {
            *out = r.inner.rows.len();
            WmStatus::Ok
        }
    })
}

/// Copies evaluation row `index` into `*out`.
///
/// # Safety
/// `rec` must be NULL or a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wm_record_row(rec: *const WmRecord, index: usize, out: *mut WmRow) -> WmStatus {
    guard(|| {
        let Some(r) = rec.as_ref() else { return null("rec") };
        if out.is_null() {
            return null("out");
        }
        let Some(row) = r.inner.rows.get(index) else {
            set_error(format!("row {index} out of range (have {})", r.inner.rows.len()));
            return WmStatus::OutOfRange;
        };
        *out = WmRow {
            iteration: row.iteration,
            comm_units: row.comm_units,
            active_client: row.active_client.map_or(-1, |c| c as i64),
            train_metric: row.eval.train_metric,
            unseen_metric: row.eval.unseen_metric,
            grad_norm_sq: row.eval.grad_norm_sq,
        };
        WmStatus::Ok
    })
}

/// Total communication units spent by the run.
///
/// # Safety
/// `rec` must be NULL or a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wm_record_comm_units(rec: *const WmRecord, out: *mut u64) -> WmStatus {
    guard(|| match (rec.as_ref(), out.is_null()) {
        (None, _) => null("rec"),
        (_, true) => null("out"),
        (Some(r), false) => {
            *out = r.inner.comm_units;
            WmStatus::Ok
        }
    })
}

/// Writes 1 to `*out` if the run stopped early on a numerical failure, else 0.
///
/// # Safety
/// `rec` must be NULL or a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wm_record_aborted(rec: *const WmRecord, out: *mut i32) -> WmStatus {
    guard(|| match (rec.as_ref(), out.is_null()) {
        (None, _) => null("rec"),
        (_, true) => null("out"),
        (Some(r), false) => {
            *out = i32::from(r.inner.failure.is_some());
            WmStatus::Ok
        }
    })
}

/// Copies the final meta-parameters into `buf`. `*len` holds the buffer
/// capacity on entry and the parameter count on return; if the buffer is too
/// small nothing is copied and `WM_STATUS_OUT_OF_RANGE` is returned.
///
/// # Safety
/// `buf` must be NULL or point to `*len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn wm_record_final_params(rec: *const WmRecord, buf: *mut f64, len: *mut usize) -> WmStatus {
    guard(|| {
        let Some(r) = rec.as_ref() else { return null("rec") };
        if len.is_null() {
            return null("len");
        }
        copy_out(&r.inner.final_params, buf, len)
    })
}

/// Writes the run CSV to `path`.
///
/// # Safety
/// `rec` must be NULL or a live handle; `path` must be NULL or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn wm_record_write_csv(rec: *const WmRecord, path: *const c_char) -> WmStatus {
    guard(|| {
        let Some(r) = rec.as_ref() else { return null("rec") };
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match r.inner.write_csv(Path::new(path)) {
            Ok(()) => WmStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Network-DP report of a perturbed run. Returns `WM_STATUS_INVALID_PARAMETER`
/// when the run added no noise.
///
/// # Safety
/// `rec` must be NULL or a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wm_record_dp(rec: *const WmRecord, out: *mut WmDpReport) -> WmStatus {
    guard(|| {
        let Some(r) = rec.as_ref() else { return null("rec") };
        if out.is_null() {
            return null("out");
        }
        match &r.inner.dp {
            Some(dp) => {
                *out = WmDpReport {
                    epsilon_prime: dp.epsilon_prime,
                    delta_total: dp.delta_total,
                    n_u: dp.n_u,
                    q: dp.q,
                };
                WmStatus::Ok
            }
            None => {
                set_error("run was not perturbed; no privacy report");
                WmStatus::InvalidParameter
            }
        }
    })
}

/// # Safety
/// `rec` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wm_record_free(rec: *mut WmRecord) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

// ---------------------------------------------------------------------------
// Topology

/// Builds the configured communication graph and transition matrix.
///
/// # Safety
/// `cfg` must be NULL or a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wm_topology_from_config(cfg: *const WmConfig, out: *mut *mut WmTopology) -> WmStatus {
    guard(|| {
        let Some(cfg) = cfg.as_ref() else { return null("cfg") };
        if out.is_null() {
            return null("out");
        }
        match cfg.inner.build_transition() {
            Ok((graph, transition)) => {
                *out = Box::into_raw(Box::new(WmTopology { graph, transition }));
                WmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `topo` must be NULL or a live handle; pointers must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wm_topology_size(topo: *const WmTopology, nodes: *mut usize, edges: *mut usize) -> WmStatus {
    guard(|| {
        let Some(t) = topo.as_ref() else { return null("topo") };
        if nodes.is_null() || edges.is_null() {
            return null("nodes/edges");
        }
        *nodes = t.graph.n();
        *edges = t.graph.edge_count();
        WmStatus::Ok
    })
}

/// Second-largest eigenvalue magnitude of the transition matrix.
///
/// # Safety
/// `topo` must be NULL or a live handle; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wm_topology_sigma2(topo: *const WmTopology, out: *mut f64) -> WmStatus {
    guard(|| {
        let Some(t) = topo.as_ref() else { return null("topo") };
        if out.is_null() {
            return null("out");
        }
        match sigma2(&t.transition) {
            Ok(s) => {
                *out = s;
                WmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Stationary distribution, with the same buffer protocol as
/// [`wm_record_final_params`].
///
/// # Safety
/// `buf` must be NULL or point to `*len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn wm_topology_stationary(topo: *const WmTopology, buf: *mut f64, len: *mut usize) -> WmStatus {
    guard(|| {
        let Some(t) = topo.as_ref() else { return null("topo") };
        if len.is_null() {
            return null("len");
        }
        match stationary_distribution(&t.transition) {
            Ok(pi) => copy_out(&pi, buf, len),
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `topo` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wm_topology_free(topo: *mut WmTopology) {
    if !topo.is_null() {
        drop(Box::from_raw(topo));
    }
}

// ---------------------------------------------------------------------------
// Stateless helpers

/// Per-coordinate variance of the Gaussian perturbation.
///
/// # Safety
/// `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wm_noise_variance(epsilon: f64, delta: f64, m_meta: f64, out: *mut f64) -> WmStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        match noise_variance(epsilon, delta, m_meta) {
            Ok(v) => {
                *out = v;
                WmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Network-level guarantee after `iterations` steps over `clients` clients.
///
/// # Safety
/// `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wm_account_network_dp(
    epsilon: f64,
    delta: f64,
    delta_hat: f64,
    iterations: u64,
    clients: usize,
    out: *mut WmDpReport,
) -> WmStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        match account_network_dp(epsilon, delta, delta_hat, iterations, clients) {
            Ok(r) => {
                *out = WmDpReport {
                    epsilon_prime: r.epsilon_prime,
                    delta_total: r.delta_total,
                    n_u: r.n_u,
                    q: r.q,
                };
                WmStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Communication units per iteration for a method named as in configs
/// (`lodmeta`, `lodmeta_basic`, `lodmeta_sgd`, `centralized_maml`).
/// `n_active` is used only by `centralized_maml`.
///
/// # Safety
/// `method` must be NULL or NUL-terminated; `out` must be NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn wm_comm_cost(method: *const c_char, n_active: usize, out: *mut u64) -> WmStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        let name = match read_str(method, "method") {
            Ok(m) => m,
            Err(s) => return s,
        };
        let kind: MethodKind = match name.parse() {
            Ok(k) => k,
            Err(e) => return fail(e),
        };
        let method = match kind {
            MethodKind::Lodmeta => Method::Lodmeta,
            MethodKind::LodmetaBasic => Method::LodmetaBasic,
            MethodKind::LodmetaSgd => Method::LodmetaSgd,
            MethodKind::CentralizedMaml if n_active == 0 => {
                set_error("centralized_maml needs n_active >= 1");
                return WmStatus::InvalidParameter;
            }
            MethodKind::CentralizedMaml => Method::CentralizedMaml { n_active },
        };
        *out = comm_cost(method);
        WmStatus::Ok
    })
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: *mut usize) -> WmStatus {
    let capacity = *len;
    *len = values.len();
    if buf.is_null() || capacity < values.len() {
        set_error(format!("buffer holds {capacity} values, need {}", values.len()));
        return WmStatus::OutOfRange;
    }
    std::ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    WmStatus::Ok
}
