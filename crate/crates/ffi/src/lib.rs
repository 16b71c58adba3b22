//! C ABI for `hilbert-ot`.
//!
//! Conventions:
//! - Every fallible function returns a [`HotStatus`]; results go through out
//!   pointers, which are written only on success.
//! - Matrices are dense, row-major `double` buffers of `rows * cols` entries.
//! - After a non-`OK` status, [`hot_last_error_message`] describes the failure
//!   on the calling thread.
//! - Transport maps are opaque [`HotTransport`] handles released with
//!   [`hot_transport_free`].
//! - Panics never cross the boundary; they surface as `HOT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hilbert_ot::datasets::{self, DatasetKind, DatasetSpec};
use hilbert_ot::experiment::{self, ExperimentConfig};
use hilbert_ot::gaussian::NoiseSchedule;
use hilbert_ot::models::TransportNet;
use hilbert_ot::ot_eval::{self, CostMatrix};
use hilbert_ot::spectral::BasisSpec;
use hilbert_ot::{trainer, Error};
use ndarray::{Array2, ArrayView2};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HotStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Config = 4,
    Io = 5,
    NonFinite = 6,
    Training = 7,
    MissingArtifact = 8,
    BasisMismatch = 9,
    Panic = 10,
    Other = 11,
}

/// Synthetic dataset pairs.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HotDataset {
    Perpendicular = 0,
    Parallel = 1,
    OneToMany = 2,
    Grid = 3,
}

impl From<HotDataset> for DatasetKind {
    fn from(d: HotDataset) -> Self {
        match d {
            HotDataset::Perpendicular => DatasetKind::Perpendicular,
            HotDataset::Parallel => DatasetKind::Parallel,
            HotDataset::OneToMany => DatasetKind::OneToMany,
            HotDataset::Grid => DatasetKind::Grid,
        }
    }
}

/// Held-out evaluation of a transport map.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HotMetrics {
    pub d_cost: f64,
    pub d_target: f64,
    pub w2sq_mu_nu: f64,
    pub mean_transport_cost: f64,
    pub n: usize,
}

/// Opaque trained or loaded transport map.
pub struct HotTransport {
    net: TransportNet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HotStatus {
    match e {
        Error::ShapeMismatch { .. } => HotStatus::ShapeMismatch,
        Error::NonFinite(_) => HotStatus::NonFinite,
        Error::Training { .. } => HotStatus::Training,
        Error::Config(_) | Error::Json(_) => HotStatus::Config,
        Error::MissingArtifact(_) => HotStatus::MissingArtifact,
        Error::BasisMismatch { .. } => HotStatus::BasisMismatch,
        Error::Io(_) => HotStatus::Io,
        Error::InvalidArgument(_)
        | Error::IndexOutOfRange { .. }
        | Error::OutsideDomain(_)
        | Error::GridTooSmall(_)
        | Error::GridNotIncreasing(_) => HotStatus::InvalidArgument,
        Error::Parse(_) => HotStatus::Other,
    }
}

struct Failure(HotStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(HotStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(HotStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HotStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            HotStatus::Panic
        }
    }
}

unsafe fn matrix<'a>(data: *const f64, rows: usize, cols: usize, what: &str) -> Result<ArrayView2<'a, f64>, Failure> {
    if data.is_null() {
        return Err(null(what));
    }
    let len = rows.checked_mul(cols).ok_or_else(|| invalid(format!("{what}: size overflow")))?;
    let slice = std::slice::from_raw_parts(data, len);
    ArrayView2::from_shape((rows, cols), slice).map_err(|e| invalid(format!("{what}: {e}")))
}

unsafe fn write_matrix(out: *mut f64, m: &Array2<f64>, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    let dst = std::slice::from_raw_parts_mut(out, m.len());
    for (d, s) in dst.iter_mut().zip(m.iter()) {
        *d = *s;
    }
    Ok(())
}

unsafe fn utf8<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hot_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Clears the thread's last error.
#[no_mangle]
pub extern "C" fn hot_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Noise level at `epoch` of the linear annealing schedule; the schedule
/// itself is validated first.
///
/// # Safety
/// `out` must be valid for one `double` write.
#[no_mangle]
pub unsafe extern "C" fn hot_sigma_at(
    sigma_max: f64,
    sigma_min: f64,
    total_epochs: usize,
    active_fraction: f64,
    epoch: usize,
    out: *mut f64,
) -> HotStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = NoiseSchedule {
            sigma_max,
            sigma_min,
            total_epochs,
            active_fraction,
        };
        s.validate()?;
        *out = s.sigma_at(epoch)?;
        Ok(())
    })
}

/// Draws `n` source and `n` target samples with `num_modes` Fourier
/// coefficients each. Both buffers need `n * num_modes` doubles.
///
/// # Safety
/// `source_out` and `target_out` must be valid for `n * num_modes` writes.
#[no_mangle]
pub unsafe extern "C" fn hot_generate(
    dataset: HotDataset,
    n: usize,
    num_modes: usize,
    seed: u64,
    source_out: *mut f64,
    target_out: *mut f64,
) -> HotStatus {
    guard(|| {
        if source_out.is_null() || target_out.is_null() {
            return Err(null("output buffer"));
        }
        let spec = DatasetSpec {
            kind: dataset.into(),
            n,
            seed,
            basis: BasisSpec::fourier(num_modes)?,
        };
        let (s, t) = datasets::generate(&spec)?;
        write_matrix(source_out, s.data(), "source_out")?;
        write_matrix(target_out, t.data(), "target_out")
    })
}

/// Exact empirical squared 2-Wasserstein distance between two `n x dim`
/// point clouds with uniform weights.
///
/// # Safety
/// `a` and `b` must each point to `n * dim` readable doubles; `out` must be
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hot_empirical_w2sq(
    a: *const f64,
    b: *const f64,
    n: usize,
    dim: usize,
    out: *mut f64,
) -> HotStatus {
    guard(|| {
        let a = matrix(a, n, dim, "a")?;
        let b = matrix(b, n, dim, "b")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ot_eval::empirical_w2sq(a, b)?;
        Ok(())
    })
}

/// Minimum-cost perfect matching for an `n x n` cost matrix. Row `i` is
/// matched to column `permutation_out[i]`; ties resolve to the
/// lexicographically smallest permutation.
///
/// # Safety
/// `cost` must point to `n * n` readable doubles, `permutation_out` must be
/// valid for `n` writes and `total_out` for one write.
#[no_mangle]
pub unsafe extern "C" fn hot_solve_assignment(
    cost: *const f64,
    n: usize,
    permutation_out: *mut usize,
    total_out: *mut f64,
) -> HotStatus {
    guard(|| {
        let c = matrix(cost, n, n, "cost")?;
        if permutation_out.is_null() || total_out.is_null() {
            return Err(null("output pointer"));
        }
        let a = ot_eval::solve_assignment(&CostMatrix::new(c.to_owned())?);
        std::slice::from_raw_parts_mut(permutation_out, n).copy_from_slice(&a.permutation);
        *total_out = a.total_cost;
        Ok(())
    })
}

/// Loads a transport checkpoint written by `hilbert-ot train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for one
/// pointer write. The handle must be released with [`hot_transport_free`].
#[no_mangle]
pub unsafe extern "C" fn hot_transport_load(path: *const c_char, out: *mut *mut HotTransport) -> HotStatus {
    guard(|| {
        let path = Path::new(utf8(path, "path")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let (net, _) = experiment::load_transport_with_basis(path)?;
        *out = Box::into_raw(Box::new(HotTransport { net }));
        Ok(())
    })
}

/// Number of coefficients the map expects per row.
///
/// # Safety
/// `handle` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hot_transport_num_modes(handle: *const HotTransport) -> usize {
    handle.as_ref().map_or(0, |h| h.net.num_modes())
}

/// Applies the map to `n` rows of `dim` coefficients; `out` receives `n * dim`
/// doubles and may not alias `x`.
///
/// # Safety
/// `handle` must be a live handle; `x` must point to `n * dim` readable
/// doubles and `out` to `n * dim` writable ones.
#[no_mangle]
pub unsafe extern "C" fn hot_transport_apply(
    handle: *const HotTransport,
    x: *const f64,
    n: usize,
    dim: usize,
    out: *mut f64,
) -> HotStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        if dim != h.net.num_modes() {
            return Err(Failure(
                HotStatus::ShapeMismatch,
                format!("map expects {} columns, got {dim}", h.net.num_modes()),
            ));
        }
        let x = matrix(x, n, dim, "x")?;
        let y = h.net.forward(x)?;
        write_matrix(out, &y, "out")
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `handle` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hot_transport_free(handle: *mut HotTransport) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Trains from a JSON experiment config (same schema as the CLI; `{}` gives
/// the defaults). Nothing is written to disk. `metrics_out` may be NULL;
/// otherwise it receives the held-out metrics (all NaN when `epochs = 0`).
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` valid for one
/// pointer write. The handle must be released with [`hot_transport_free`].
#[no_mangle]
pub unsafe extern "C" fn hot_train(
    config_json: *const c_char,
    out: *mut *mut HotTransport,
    metrics_out: *mut HotMetrics,
) -> HotStatus {
    guard(|| {
        let cfg = ExperimentConfig::from_json(utf8(config_json, "config_json")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let output = trainer::train(&cfg.train_config()?, cfg.dataset)?;
        if !metrics_out.is_null() {
            *metrics_out = if cfg.trainer.epochs > 0 {
                metrics(&experiment::evaluate(&cfg, &output.transport)?)
            } else {
                HotMetrics {
                    d_cost: f64::NAN,
                    d_target: f64::NAN,
                    w2sq_mu_nu: f64::NAN,
                    mean_transport_cost: f64::NAN,
                    n: 0,
                }
            };
        }
        *out = Box::into_raw(Box::new(HotTransport { net: output.transport }));
        Ok(())
    })
}

/// Evaluates a handle on the held-out set defined by a JSON config.
///
/// # Safety
/// `handle` must be a live handle, `config_json` NUL-terminated and
/// `metrics_out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn hot_evaluate(
    handle: *const HotTransport,
    config_json: *const c_char,
    metrics_out: *mut HotMetrics,
) -> HotStatus {
    guard(|| {
        let h = handle.as_ref().ok_or_else(|| null("handle"))?;
        let cfg = ExperimentConfig::from_json(utf8(config_json, "config_json")?)?;
        if metrics_out.is_null() {
            return Err(null("metrics_out"));
        }
        if cfg.basis.num_modes != h.net.num_modes() {
            return Err(Failure(
                HotStatus::BasisMismatch,
                format!("config has {} modes, map has {}", cfg.basis.num_modes, h.net.num_modes()),
            ));
        }
        *metrics_out = metrics(&experiment::evaluate(&cfg, &h.net)?);
        Ok(())
    })
}

fn metrics(m: &ot_eval::MetricsReport) -> HotMetrics {
    HotMetrics {
        d_cost: m.d_cost,
        d_target: m.d_target,
        w2sq_mu_nu: m.w2sq_mu_nu,
        mean_transport_cost: m.mean_transport_cost,
        n: m.n,
    }
}
