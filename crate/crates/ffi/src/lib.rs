//! C ABI over the core library: opaque handles for observation series and
//! fit results, plain C structs for parameter vectors, integer status
//! codes and a thread-local last-error message.
//!
//! The generated header lands in `include/oscgeo.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use oscgeo::error::Error;
use oscgeo::npf::{self, ModelParams, ObservationSeries, StateEstimate};
use oscgeo::pipeline::{self, PipelineConfig};
use oscgeo::qmle::{self, FitOptions};
use oscgeo::{geometry, simulate};

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("error message had NUL").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Status codes returned by every fallible function. Values above 0 match
/// the pipeline exit codes where one exists.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OscgeoStatus {
    Ok = 0,
    /// A supplied pointer was null or an argument was invalid.
    InvalidArgument = 1,
    DataError = 2,
    FitFailure = 3,
    NumericError = 4,
    DegenerateStatistics = 5,
    IoError = 6,
}

fn status_of(e: &Error) -> OscgeoStatus {
    match e {
        Error::InvalidArgument(_) => OscgeoStatus::InvalidArgument,
        Error::Data { .. } | Error::TooShort { .. } => OscgeoStatus::DataError,
        Error::FitFailure(_) => OscgeoStatus::FitFailure,
        Error::Numeric { .. } => OscgeoStatus::NumericError,
        Error::Degenerate(_) => OscgeoStatus::DegenerateStatistics,
        Error::Io(_) => OscgeoStatus::IoError,
    }
}

fn fail(e: Error) -> OscgeoStatus {
    let status = status_of(&e);
    set_last_error(e.to_string());
    status
}

fn fail_null(what: &str) -> OscgeoStatus {
    set_last_error(format!("{what} must not be null"));
    OscgeoStatus::InvalidArgument
}

/// Opaque observation series handle.
pub struct OscgeoSeries {
    inner: ObservationSeries,
}

/// Model parameter vector: three positive scales and four nuisance
/// third-derivative constants.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OscgeoParams {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma_eps: f64,
    pub theta0: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub theta3: f64,
}

impl From<ModelParams> for OscgeoParams {
    fn from(p: ModelParams) -> Self {
        OscgeoParams {
            sigma1: p.sigma1,
            sigma2: p.sigma2,
            sigma_eps: p.sigma_eps,
            theta0: p.theta0,
            theta1: p.theta1,
            theta2: p.theta2,
            theta3: p.theta3,
        }
    }
}

impl From<OscgeoParams> for ModelParams {
    fn from(p: OscgeoParams) -> Self {
        ModelParams::new(
            p.sigma1, p.sigma2, p.sigma_eps, p.theta0, p.theta1, p.theta2, p.theta3,
        )
    }
}

/// Fit outcome.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OscgeoFitReport {
    pub params: OscgeoParams,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Options for `oscgeo_fit`. Zero-initialize and set fields; a zero
/// `max_iter` means the library default.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OscgeoFitOptions {
    /// Iteration budget; 0 selects the default (2000).
    pub max_iter: usize,
    /// Simplex-spread tolerance; 0 selects the default (1e-6).
    pub tol: f64,
    /// Number of optimizer starts; 0 selects 1.
    pub multi_start: usize,
    pub seed: u64,
}

/// Per-step geometry output written by `oscgeo_filter_geometry`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct OscgeoGeometryRow {
    pub norm_v: f64,
    pub norm_nabla_v: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// 1 when the covariant-derivative norm is within tolerance of zero.
    pub geodesic: u8,
}

/// Last error message for this thread, or null when the previous call
/// succeeded. The pointer stays valid until the next failing call on the
/// same thread.
#[no_mangle]
pub extern "C" fn oscgeo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(msg) => msg.as_ptr(),
        None => ptr::null(),
    })
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn oscgeo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Build a series from a caller-owned buffer of observations with uniform
/// step `dt`. The buffer is copied.
///
/// # Safety
/// `values` must point to `len` readable doubles and `out` to a writable
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn oscgeo_series_from_values(
    values: *const f64,
    len: usize,
    dt: f64,
    out: *mut *mut OscgeoSeries,
) -> OscgeoStatus {
    clear_last_error();
    if out.is_null() {
        return fail_null("out");
    }
    if values.is_null() {
        return fail_null("values");
    }
    let slice = std::slice::from_raw_parts(values, len);
    match ObservationSeries::new(slice.to_vec(), dt, None) {
        Ok(series) => {
            *out = Box::into_raw(Box::new(OscgeoSeries { inner: series }));
            OscgeoStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Read a `date,price` CSV and transform to log relative price.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn oscgeo_series_read_csv(
    path: *const c_char,
    dt: f64,
    out: *mut *mut OscgeoSeries,
) -> OscgeoStatus {
    clear_last_error();
    if out.is_null() {
        return fail_null("out");
    }
    if path.is_null() {
        return fail_null("path");
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p,
        Err(_) => {
            set_last_error("path is not valid UTF-8".to_string());
            return OscgeoStatus::InvalidArgument;
        }
    };
    match pipeline::ingest_csv(Path::new(path), dt) {
        Ok(ingested) => {
            *out = Box::into_raw(Box::new(OscgeoSeries {
                inner: ingested.series,
            }));
            OscgeoStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Number of observations in a series, 0 for a null handle.
///
/// # Safety
/// `series` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn oscgeo_series_len(series: *const OscgeoSeries) -> usize {
    if series.is_null() {
        return 0;
    }
    (*series).inner.len()
}

/// Release a series handle. Null is accepted.
///
/// # Safety
/// `series` must be a handle returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oscgeo_series_free(series: *mut OscgeoSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Generate a synthetic damped-oscillator series (the built-in test
/// drift) and return it as a handle.
///
/// # Safety
/// `out` must be a writable slot.
#[no_mangle]
pub unsafe extern "C" fn oscgeo_series_simulate_oscillator(
    sigma2: f64,
    sigma_eps: f64,
    dt: f64,
    n: usize,
    seed: u64,
    out: *mut *mut OscgeoSeries,
) -> OscgeoStatus {
    clear_last_error();
    if out.is_null() {
        return fail_null("out");
    }
    let drift = simulate::DriftSpec::damped_oscillator();
    let result = simulate::simulate_sde(&drift, 0.0, sigma2, (0.1, 0.0), dt, n, 10, seed)
        .and_then(|path| simulate::observe(&path, sigma_eps, seed.wrapping_add(1000)));
    match result {
        Ok(series) => {
            *out = Box::into_raw(Box::new(OscgeoSeries { inner: series }));
            OscgeoStatus::Ok
        }
        Err(e) => fail(e),
    }
}

fn fit_options(opts: *const OscgeoFitOptions, init_state: StateEstimate) -> FitOptions {
    let mut out = FitOptions {
        init_state: Some(init_state),
        ..FitOptions::default()
    };
    if !opts.is_null() {
        let o = unsafe { &*opts };
        if o.max_iter > 0 {
            out.max_iter = o.max_iter;
        }
        if o.tol > 0.0 {
            out.tol = o.tol;
        }
        if o.multi_start > 0 {
            out.multi_start = o.multi_start;
        }
        out.seed = o.seed;
    }
    out
}

/// Maximize the quasi likelihood from the given starting parameters.
///
/// # Safety
/// `series` must be a live handle; `init` and `report` must point to
/// valid structs; `options` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn oscgeo_fit(
    series: *const OscgeoSeries,
    init: *const OscgeoParams,
    options: *const OscgeoFitOptions,
    report: *mut OscgeoFitReport,
) -> OscgeoStatus {
    clear_last_error();
    if series.is_null() {
        return fail_null("series");
    }
    if init.is_null() {
        return fail_null("init");
    }
    if report.is_null() {
        return fail_null("report");
    }
    let series = &(*series).inner;
    let init: ModelParams = (*init).into();
    let init_state = StateEstimate::initial(series.values()[0], init.sigma_eps);
    let opts = fit_options(options, init_state);
    match qmle::fit(series, &init, &opts) {
        Ok(r) => {
            *report = OscgeoFitReport {
                params: r.params.into(),
                log_likelihood: r.log_likelihood,
                iterations: r.iterations,
                converged: r.converged,
            };
            OscgeoStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Quasi log likelihood at fixed parameters.
///
/// # Safety
/// `series`, `params` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn oscgeo_log_likelihood(
    series: *const OscgeoSeries,
    params: *const OscgeoParams,
    out: *mut f64,
) -> OscgeoStatus {
    clear_last_error();
    if series.is_null() {
        return fail_null("series");
    }
    if params.is_null() {
        return fail_null("params");
    }
    if out.is_null() {
        return fail_null("out");
    }
    let series = &(*series).inner;
    let params: ModelParams = (*params).into();
    let init = StateEstimate::initial(series.values()[0], params.sigma_eps);
    match npf::log_likelihood(series, &params, &init) {
        Ok(ll) => {
            *out = ll;
            OscgeoStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Filter the series at fixed parameters and write one geometry row per
/// transition (series length minus one) into `rows`.
///
/// `geodesic_tol` <= 0 selects the default tolerance, a small fraction of
/// the median covariant-derivative norm.
///
/// # Safety
/// `rows` must have capacity for `rows_capacity` entries; `written` must
/// be a writable slot.
#[no_mangle]
pub unsafe extern "C" fn oscgeo_filter_geometry(
    series: *const OscgeoSeries,
    params: *const OscgeoParams,
    geodesic_tol: f64,
    rows: *mut OscgeoGeometryRow,
    rows_capacity: usize,
    written: *mut usize,
) -> OscgeoStatus {
    clear_last_error();
    if series.is_null() {
        return fail_null("series");
    }
    if params.is_null() {
        return fail_null("params");
    }
    if rows.is_null() {
        return fail_null("rows");
    }
    if written.is_null() {
        return fail_null("written");
    }
    let series = &(*series).inner;
    let params: ModelParams = (*params).into();
    let steps = series.len() - 1;
    if rows_capacity < steps {
        set_last_error(format!(
            "rows_capacity {rows_capacity} is smaller than required {steps}"
        ));
        return OscgeoStatus::InvalidArgument;
    }

    let init = StateEstimate::initial(series.values()[0], params.sigma_eps);
    let run = match npf::run_filter(series, &params, &init) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    let states = &run.filtered[1..];

    let tol = if geodesic_tol > 0.0 {
        geodesic_tol
    } else {
        let mut norms = Vec::with_capacity(states.len());
        for s in states {
            match geometry::DriftState::from_state(s) {
                Ok(d) => norms.push(geometry::covariant_derivative(&d).1.norm()),
                Err(e) => return fail(e),
            }
        }
        match geometry::median_fraction_tol(&norms, 0.01) {
            Ok(t) => t,
            Err(e) => return fail(e),
        }
    };

    let out = std::slice::from_raw_parts_mut(rows, steps);
    for (slot, state) in out.iter_mut().zip(states) {
        match geometry::geometry_sample(state, tol) {
            Ok(sample) => {
                *slot = OscgeoGeometryRow {
                    norm_v: sample.norm_v,
                    norm_nabla_v: sample.norm_nabla_v,
                    beta1: sample.beta[0],
                    beta2: sample.beta[1],
                    geodesic: sample.geodesic as u8,
                };
            }
            Err(e) => return fail(e),
        }
    }
    *written = steps;
    OscgeoStatus::Ok
}

/// Run the complete file pipeline: ingest `input_csv`, fit, filter,
/// aggregate and write every artifact under `out_dir`.
///
/// # Safety
/// `input_csv` and `out_dir` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn oscgeo_run_pipeline(
    input_csv: *const c_char,
    out_dir: *const c_char,
    dt: f64,
    burn_in_fraction: f64,
    max_iter: usize,
) -> OscgeoStatus {
    clear_last_error();
    if input_csv.is_null() {
        return fail_null("input_csv");
    }
    if out_dir.is_null() {
        return fail_null("out_dir");
    }
    let input = match CStr::from_ptr(input_csv).to_str() {
        Ok(p) => p.to_string(),
        Err(_) => {
            set_last_error("input_csv is not valid UTF-8".to_string());
            return OscgeoStatus::InvalidArgument;
        }
    };
    let out = match CStr::from_ptr(out_dir).to_str() {
        Ok(p) => p.to_string(),
        Err(_) => {
            set_last_error("out_dir is not valid UTF-8".to_string());
            return OscgeoStatus::InvalidArgument;
        }
    };
    let mut config = PipelineConfig {
        input,
        out_dir: out,
        ..PipelineConfig::default()
    };
    if dt > 0.0 {
        config.dt = dt;
    }
    if burn_in_fraction >= 0.0 {
        config.burn_in_fraction = burn_in_fraction;
    }
    if max_iter > 0 {
        config.max_iter = max_iter;
    }
    match pipeline::run_pipeline(&config) {
        Ok(_) => OscgeoStatus::Ok,
        Err(e) => fail(e),
    }
}
