//! C ABI for the `gpgroup` library.
//!
//! Objects are opaque handles created by `gpg_*_new`-style functions and
//! released with the matching `*_free`. Every fallible function returns a
//! [`GpgStatus`]; on failure the message is available from
//! [`gpg_last_error`] on the same thread. Group labels cross the boundary
//! 1-based, matching the JSON formats.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gpgroup::covariance::{sandwich_all, wald_intervals, WaldInterval, WindowConfig};
use gpgroup::estimate::{bca_fit, random_init, BcaConfig, FitResult};
use gpgroup::gpd::{gp_cdf, gp_quantile, return_level, GpParams, ReturnLevelSpec};
use gpgroup::groupsearch::{rand_index, select_by_bic, two_stage_hier, SearchConfig};
use gpgroup::io::read_long_csv_path;
use gpgroup::panel::{ExcessPanel, GroupAssignment};
use gpgroup::rng::{stream_rng, STREAM_ESTIMATE};
use gpgroup::simgen::{simulate_panel, Dependence, SimConfig};
use gpgroup::Error;

/// Status codes. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpgStatus {
    Ok = 0,
    NullPointer = 1,
    Parse = 2,
    Estimation = 3,
    Infeasible = 4,
    InvalidArgument = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Dependence structure of simulated panels.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpgDependence {
    Independence = 0,
    CrossSectional = 1,
    BlockWise = 2,
}

/// Opaque excess panel.
pub struct GpgPanel {
    inner: ExcessPanel,
}

/// Opaque fitted model with its Wald intervals.
pub struct GpgFit {
    fit: FitResult,
    intervals: Vec<WaldInterval>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> GpgStatus {
    match e {
        Error::InvalidArgument(_) | Error::NonFinite(_) | Error::Dimension(_) | Error::Support(_) => {
            GpgStatus::InvalidArgument
        }
        _ => match e.exit_code() {
            2 => GpgStatus::Parse,
            4 => GpgStatus::Infeasible,
            _ => GpgStatus::Estimation,
        },
    }
}

fn guard<F: FnOnce() -> Result<(), GpgStatus>>(f: F) -> GpgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GpgStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            GpgStatus::Panic
        }
    }
}

fn fail(e: Error) -> GpgStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> GpgStatus {
    set_error(format!("null pointer: {what}"));
    GpgStatus::NullPointer
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gpg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Reads a long-format CSV and thresholds it at the per-subject
/// `quantile`. `covariates` is a comma-separated list of columns, or null
/// for every non-reserved column.
///
/// # Safety
/// `path` and `covariates` (if not null) must be NUL-terminated strings;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpg_panel_read_csv(
    path: *const c_char,
    covariates: *const c_char,
    quantile: f64,
    out: *mut *mut GpgPanel,
) -> GpgStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null("path/out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(Error::InvalidArgument("path is not UTF-8".into())))?;
        let covs: Option<Vec<String>> = if covariates.is_null() {
            None
        } else {
            let s = CStr::from_ptr(covariates)
                .to_str()
                .map_err(|_| fail(Error::InvalidArgument("covariates are not UTF-8".into())))?;
            Some(
                s.split(',')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect(),
            )
        };
        let table = read_long_csv_path(Path::new(path), covs.as_deref()).map_err(fail)?;
        let th = table.threshold(quantile).map_err(fail)?;
        *out = Box::into_raw(Box::new(GpgPanel { inner: th.panel }));
        Ok(())
    })
}

/// Simulates a panel at the default true parameters (12 subjects).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpg_panel_simulate(
    n_times: usize,
    dependence: GpgDependence,
    block_len: usize,
    within_corr: f64,
    seed: u64,
    out: *mut *mut GpgPanel,
) -> GpgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = SimConfig {
            n_times,
            dependence: match dependence {
                GpgDependence::Independence => Dependence::Independence,
                GpgDependence::CrossSectional => Dependence::CrossSectional,
                GpgDependence::BlockWise => Dependence::BlockWise { m: block_len },
            },
            within_group_corr: within_corr,
            seed,
            ..SimConfig::default()
        };
        let p = simulate_panel(&cfg, seed).map_err(fail)?;
        *out = Box::into_raw(Box::new(GpgPanel { inner: p }));
        Ok(())
    })
}

/// # Safety
/// `panel` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gpg_panel_free(panel: *mut GpgPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// # Safety
/// `panel` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpg_panel_n_subjects(panel: *const GpgPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.inner.n_subjects())
}

/// # Safety
/// `panel` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpg_panel_n_excess(panel: *const GpgPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.inner.n_excess())
}

unsafe fn labels(ptr: *const u32, n: usize) -> Option<Vec<usize>> {
    (!ptr.is_null()).then(|| std::slice::from_raw_parts(ptr, n).iter().map(|&v| v as usize).collect())
}

fn finish_fit(panel: &ExcessPanel, fit: FitResult, window: usize) -> Result<GpgFit, Error> {
    let sw = sandwich_all(panel, &fit, WindowConfig::new(window))?;
    let intervals = wald_intervals(&fit, &sw, 0.95)?;
    let mut fit = fit;
    fit.covariance = Some(sw);
    Ok(GpgFit { fit, intervals })
}

/// Fits the model at a fixed assignment. `scale_groups` and
/// `shape_groups` hold `n` 1-based labels each; pass null for both to fit
/// a single group. Intervals are 95% Wald intervals from the sandwich
/// covariance with dependence window `window`.
///
/// # Safety
/// `panel` must be a live handle; label arrays must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn gpg_fit(
    panel: *const GpgPanel,
    scale_groups: *const u32,
    shape_groups: *const u32,
    n: usize,
    window: usize,
    seed: u64,
    out: *mut *mut GpgFit,
) -> GpgStatus {
    guard(|| {
        let (Some(p), false) = (panel.as_ref(), out.is_null()) else {
            return Err(null("panel/out"));
        };
        let p = &p.inner;
        let a = match (labels(scale_groups, n), labels(shape_groups, n)) {
            (Some(s), Some(d)) => GroupAssignment::from_one_based(&s, &d),
            (None, None) => GroupAssignment::single(p.n_subjects()),
            _ => return Err(null("scale_groups/shape_groups")),
        }
        .map_err(fail)?;
        let mut rng = stream_rng(seed, STREAM_ESTIMATE);
        let init = random_init(p, &a, &mut rng).map_err(fail)?;
        let fit = bca_fit(p, &a, &init, &BcaConfig::default()).map_err(fail)?;
        let f = finish_fit(p, fit, window).map_err(fail)?;
        *out = Box::into_raw(Box::new(f));
        Ok(())
    })
}

/// Searches group structures over the given grids. `hierarchical != 0`
/// uses the two-stage search with hierarchical merging (the shape grid is
/// then ignored); otherwise the full BIC comparison.
///
/// # Safety
/// `panel` must be a live handle; grids must hold the stated counts.
#[no_mangle]
pub unsafe extern "C" fn gpg_select_groups(
    panel: *const GpgPanel,
    g_scale: *const u32,
    n_scale: usize,
    g_shape: *const u32,
    n_shape: usize,
    runs_per_pair: usize,
    hierarchical: i32,
    window: usize,
    seed: u64,
    out: *mut *mut GpgFit,
) -> GpgStatus {
    guard(|| {
        let (Some(p), false) = (panel.as_ref(), out.is_null()) else {
            return Err(null("panel/out"));
        };
        let (Some(gs), Some(gd)) = (labels(g_scale, n_scale), labels(g_shape, n_shape)) else {
            return Err(null("grids"));
        };
        let p = &p.inner;
        let mut cfg = SearchConfig::new(gs, gd, seed);
        cfg.runs_per_pair = runs_per_pair;
        let res = if hierarchical != 0 {
            two_stage_hier(p, &cfg)
        } else {
            select_by_bic(p, &cfg)
        }
        .map_err(fail)?;
        let f = finish_fit(p, res.best_fit, window).map_err(fail)?;
        *out = Box::into_raw(Box::new(f));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gpg_fit_free(fit: *mut GpgFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// BIC of the fit, NaN for a null handle.
///
/// # Safety
/// `fit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpg_fit_bic(fit: *const GpgFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.fit.bic)
}

/// Composite log-likelihood of the fit, NaN for a null handle.
///
/// # Safety
/// `fit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpg_fit_loglik(fit: *const GpgFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.fit.comp_loglik)
}

/// Number of scale and shape groups.
///
/// # Safety
/// `fit`, `g_scale` and `g_shape` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gpg_fit_dims(fit: *const GpgFit, g_scale: *mut usize, g_shape: *mut usize) -> GpgStatus {
    guard(|| {
        let Some(f) = fit.as_ref() else { return Err(null("fit")) };
        if g_scale.is_null() || g_shape.is_null() {
            return Err(null("g_scale/g_shape"));
        }
        *g_scale = f.fit.assignment.g_scale();
        *g_shape = f.fit.assignment.g_shape();
        Ok(())
    })
}

/// Writes the 1-based group labels of each subject into arrays of length
/// `n`, which must equal the number of subjects.
///
/// # Safety
/// `fit` must be a live handle; both arrays must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn gpg_fit_assignment(
    fit: *const GpgFit,
    scale: *mut u32,
    shape: *mut u32,
    n: usize,
) -> GpgStatus {
    guard(|| {
        let Some(f) = fit.as_ref() else { return Err(null("fit")) };
        if scale.is_null() || shape.is_null() {
            return Err(null("scale/shape"));
        }
        let a = &f.fit.assignment;
        if n != a.n_subjects() {
            set_error(format!("need arrays of {} subjects", a.n_subjects()));
            return Err(GpgStatus::BufferTooSmall);
        }
        let s = std::slice::from_raw_parts_mut(scale, n);
        let d = std::slice::from_raw_parts_mut(shape, n);
        for i in 0..n {
            s[i] = (a.scale()[i] + 1) as u32;
            d[i] = (a.shape()[i] + 1) as u32;
        }
        Ok(())
    })
}

/// Number of coefficients (all γ's, then all δ's).
///
/// # Safety
/// `fit` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpg_fit_n_coefficients(fit: *const GpgFit) -> usize {
    fit.as_ref().map_or(0, |f| f.intervals.len())
}

/// Copies estimates, standard errors and interval bounds into arrays of
/// length `len`, which must be at least [`gpg_fit_n_coefficients`]. Any
/// array may be null to skip it.
///
/// # Safety
/// Non-null arrays must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn gpg_fit_coefficients(
    fit: *const GpgFit,
    estimate: *mut f64,
    se: *mut f64,
    lo: *mut f64,
    hi: *mut f64,
    len: usize,
) -> GpgStatus {
    guard(|| {
        let Some(f) = fit.as_ref() else { return Err(null("fit")) };
        if len < f.intervals.len() {
            set_error(format!("need {} slots", f.intervals.len()));
            return Err(GpgStatus::BufferTooSmall);
        }
        for (k, iv) in f.intervals.iter().enumerate() {
            for (dst, v) in [(estimate, iv.estimate), (se, iv.se), (lo, iv.lo), (hi, iv.hi)] {
                if !dst.is_null() {
                    *dst.add(k) = v;
                }
            }
        }
        Ok(())
    })
}

/// JSON of the full fit (with covariances). Release with [`gpg_string_free`].
///
/// # Safety
/// `fit` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn gpg_fit_to_json(fit: *const GpgFit, out: *mut *mut c_char) -> GpgStatus {
    guard(|| {
        let Some(f) = fit.as_ref() else { return Err(null("fit")) };
        if out.is_null() {
            return Err(null("out"));
        }
        let s = serde_json::to_string(&f.fit).map_err(|e| fail(e.into()))?;
        *out = CString::new(s)
            .map_err(|_| fail(Error::InvalidArgument("NUL in JSON".into())))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn gpg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn scalar(out: *mut f64, f: impl FnOnce() -> Result<f64, Error>) -> GpgStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let v = f().map_err(fail)?;
        // SAFETY: checked non-null above; the caller guarantees validity.
        unsafe { *out = v };
        Ok(())
    })
}

/// GP distribution function.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpg_gp_cdf(z: f64, scale: f64, shape: f64, out: *mut f64) -> GpgStatus {
    scalar(out, || gp_cdf(z, &GpParams::new(scale, shape)?))
}

/// GP quantile function.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpg_gp_quantile(p: f64, scale: f64, shape: f64, out: *mut f64) -> GpgStatus {
    scalar(out, || gp_quantile(p, &GpParams::new(scale, shape)?))
}

/// Level exceeded once every `period` observations on average, for
/// exceedance probability `zeta` of `threshold`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpg_return_level(
    threshold: f64,
    zeta: f64,
    period: f64,
    scale: f64,
    shape: f64,
    out: *mut f64,
) -> GpgStatus {
    scalar(out, || {
        return_level(
            &ReturnLevelSpec::new(threshold, zeta, period)?,
            &GpParams::new(scale, shape)?,
        )
    })
}

/// Rand index of two labelings of `n` subjects.
///
/// # Safety
/// `a` and `b` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gpg_rand_index(a: *const u32, b: *const u32, n: usize, out: *mut f64) -> GpgStatus {
    let (Some(a), Some(b)) = (labels(a, n), labels(b, n)) else {
        return null("a/b");
    };
    scalar(out, || rand_index(&a, &b))
}
