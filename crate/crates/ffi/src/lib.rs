//! C interface to the qmcr library.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `_free` function. Every fallible function returns a [`QmcrStatus`];
//! on failure [`qmcr_last_error_message`] describes the error for the calling
//! thread until its next failing call.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qmcr::chains1d::{truncate_line, truncate_numeric};
use qmcr::channels::{self, KrausMap};
use qmcr::model::{mixed_local, mixed_on, Model, ModelFile};
use qmcr::recurrence::{kac_correction, LimitPolicy, MonitoredSystem, RecurrenceReport, SubspaceSpec};
use qmcr::{c64, ComplexMatrix, ComplexVector, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmcrStatus {
    Ok = 0,
    NullPointer = 1,
    /// Malformed input: parse errors, bad dimensions, unknown names.
    Invalid = 2,
    NoConvergence = 3,
    /// Singular systems, missing invariant states and similar numerical failures.
    Numerical = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QmcrTopology {
    Finite = 0,
    HalfLine = 1,
    Line = 2,
}

/// Return statistics; `tau` is `INFINITY` when the expected return time diverges.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QmcrReturnStats {
    pub pi: f64,
    pub tau: f64,
    pub recurrent: bool,
    pub positive_recurrent: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QmcrKac {
    pub ideal: f64,
    pub correction: f64,
    pub tau: f64,
}

/// A parsed model file with its current parameter bindings.
pub struct QmcrModel {
    file: ModelFile,
    params: BTreeMap<String, f64>,
    bound: Model,
}

/// A quantum channel given by Kraus operators.
pub struct QmcrChannel {
    map: KrausMap,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> QmcrStatus {
    match qmcr::cli::exit_code(e) {
        qmcr::cli::EXIT_INVALID => QmcrStatus::Invalid,
        qmcr::cli::EXIT_NO_CONVERGENCE => QmcrStatus::NoConvergence,
        _ => QmcrStatus::Numerical,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QmcrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QmcrStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            QmcrStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            QmcrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::Invalid(format!("{what} is not UTF-8"))))
}

unsafe fn opt_str<'a>(p: *const c_char, what: &'static str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn complex_slice(re: *const f64, im: *const f64, len: usize, what: &'static str) -> Result<Vec<c64>, Fail> {
    if re.is_null() {
        return Err(Fail::Null(what));
    }
    let re = std::slice::from_raw_parts(re, len);
    let im = if im.is_null() { None } else { Some(std::slice::from_raw_parts(im, len)) };
    Ok((0..len).map(|k| c64::new(re[k], im.map_or(0.0, |v| v[k]))).collect())
}

fn stats(r: &RecurrenceReport) -> QmcrReturnStats {
    QmcrReturnStats { pi: r.pi, tau: r.tau, recurrent: r.recurrent, positive_recurrent: r.positive_recurrent }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qmcr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qmcr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Forgets the last error of this thread.
#[no_mangle]
pub extern "C" fn qmcr_clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn new_model(file: ModelFile) -> Result<Box<QmcrModel>, Fail> {
    let params = file.parameters.clone();
    let bound = file.bind(&params)?;
    Ok(Box::new(QmcrModel { file, params, bound }))
}

/// Parses a model from a NUL-terminated JSON string.
///
/// # Safety
/// `json` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qmcr_model_from_json(json: *const c_char, out_model: *mut *mut QmcrModel) -> QmcrStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let text = str_arg(json, "json")?;
        *slot = Box::into_raw(new_model(ModelFile::from_json(text)?)?);
        Ok(())
    })
}

/// Loads a model file from disk.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qmcr_model_load(path: *const c_char, out_model: *mut *mut QmcrModel) -> QmcrStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let path = str_arg(path, "path")?;
        *slot = Box::into_raw(new_model(ModelFile::load(Path::new(path))?)?);
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn qmcr_model_free(model: *mut QmcrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn qmcr_model_topology(model: *const QmcrModel, out_topology: *mut QmcrTopology) -> QmcrStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        *out(out_topology, "out_topology")? = match m.bound {
            Model::Finite(_) => QmcrTopology::Finite,
            Model::HalfLine(_) => QmcrTopology::HalfLine,
            Model::Line(_) => QmcrTopology::Line,
        };
        Ok(())
    })
}

/// Binds a parameter and rebuilds the model. On failure the previous binding is kept.
///
/// # Safety
/// `model` must be valid and `name` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn qmcr_model_set_param(model: *mut QmcrModel, name: *const c_char, value: f64) -> QmcrStatus {
    guard(|| {
        let m = model.as_mut().ok_or(Fail::Null("model"))?;
        let name = str_arg(name, "name")?;
        let mut params = m.params.clone();
        params.insert(name.to_string(), value);
        m.bound = m.file.bind(&params)?;
        m.params = params;
        Ok(())
    })
}

/// Return statistics to a vertex (finite label, or integer site of a chain written
/// as a string). `state` names a state of the model file; NULL means maximally mixed.
///
/// # Safety
/// Pointers must be valid; `state` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn qmcr_model_return_site(
    model: *const QmcrModel,
    site: *const c_char,
    state: *const c_char,
    out_stats: *mut QmcrReturnStats,
) -> QmcrStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let site = str_arg(site, "site")?;
        let state = opt_str(state, "state")?;
        let slot = out(out_stats, "out_stats")?;
        let report = match &m.bound {
            Model::Finite(t) => {
                let h0 = m.file.site_subspace(site)?;
                let rho = match state {
                    Some(s) => m.file.state_density(s)?,
                    None => mixed_on(&h0),
                };
                MonitoredSystem::for_tom(t, &h0)?.report(&rho, 0, LimitPolicy::Auto)?
            }
            chain => {
                let s: i64 = site
                    .trim()
                    .parse()
                    .map_err(|_| Error::Invalid(format!("chain sites are integers, got `{site}`")))?;
                let rho = match state {
                    Some(name) => {
                        let (at, rho) = m.file.chain_state(name)?;
                        if at != s {
                            return Err(Error::Invalid(format!("state `{name}` lives at site {at}, not {s}")).into());
                        }
                        rho
                    }
                    None => mixed_local(m.file.internal_dim),
                };
                let tr = match chain {
                    Model::HalfLine(h) => {
                        let s = usize::try_from(s).map_err(|_| Error::Invalid("half-line sites are non-negative".into()))?;
                        truncate_numeric(h, 16.max(s + 2), s, &rho)?
                    }
                    Model::Line(l) => truncate_line(l, 16.max(s.unsigned_abs() as usize + 2), s, &rho)?,
                    Model::Finite(_) => unreachable!(),
                };
                if !tr.converged {
                    return Err(Error::NoConvergence("truncation did not settle before the size cap".into()).into());
                }
                tr.report
            }
        };
        *slot = stats(&report);
        Ok(())
    })
}

/// Return statistics to a named subspace of a finite model.
///
/// # Safety
/// Pointers must be valid; `state` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn qmcr_model_return_subspace(
    model: *const QmcrModel,
    subspace: *const c_char,
    state: *const c_char,
    out_stats: *mut QmcrReturnStats,
) -> QmcrStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let name = str_arg(subspace, "subspace")?;
        let state = opt_str(state, "state")?;
        let slot = out(out_stats, "out_stats")?;
        let Model::Finite(t) = &m.bound else {
            return Err(Error::Invalid("subspaces are defined for finite models".into()).into());
        };
        let h0 = m.file.subspace(name)?;
        let rho = match state {
            Some(s) => m.file.state_density(s)?,
            None => mixed_on(&h0),
        };
        *slot = stats(&MonitoredSystem::for_tom(t, &h0)?.report(&rho, 0, LimitPolicy::Auto)?);
        Ok(())
    })
}

/// Builds a channel on `ℂᵈ` from `n_kraus` Kraus operators stored one after the
/// other, each `d×d` in row-major order. `im` may be NULL for real operators.
///
/// # Safety
/// `re` (and `im` if non-NULL) must point to `n_kraus·d·d` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qmcr_channel_new(
    d: usize,
    n_kraus: usize,
    re: *const f64,
    im: *const f64,
    out_channel: *mut *mut QmcrChannel,
) -> QmcrStatus {
    guard(|| {
        let slot = out(out_channel, "out_channel")?;
        if d == 0 || n_kraus == 0 {
            return Err(Error::Invalid("dimension and Kraus count must be positive".into()).into());
        }
        let vals = complex_slice(re, im, n_kraus * d * d, "re")?;
        let ks = vals.chunks(d * d).map(|c| ComplexMatrix::from_row_slice(d, d, c)).collect();
        let map = KrausMap::new(d, ks)?;
        let r = map.tp_residual();
        if r > qmcr::Tolerances::default().tp_tol {
            return Err(Error::Invalid(format!("channel is not trace preserving (residual {r:.3e})")).into());
        }
        *slot = Box::into_raw(Box::new(QmcrChannel { map }));
        Ok(())
    })
}

/// # Safety
/// `channel` must come from this library and not be used afterwards; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn qmcr_channel_free(channel: *mut QmcrChannel) {
    if !channel.is_null() {
        drop(Box::from_raw(channel));
    }
}

/// Return statistics of the pure state `ψ` (length `d`, normalized internally) to itself.
///
/// # Safety
/// `channel` and `out` must be valid; `re` (and `im` if non-NULL) must hold `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn qmcr_channel_return_pure(
    channel: *const QmcrChannel,
    re: *const f64,
    im: *const f64,
    out_stats: *mut QmcrReturnStats,
) -> QmcrStatus {
    guard(|| {
        let c = channel.as_ref().ok_or(Fail::Null("channel"))?;
        let slot = out(out_stats, "out_stats")?;
        let psi = ComplexVector::from_vec(complex_slice(re, im, c.map.dim(), "re")?);
        let nrm = psi.norm();
        if nrm == 0.0 {
            return Err(Error::Invalid("zero state vector".into()).into());
        }
        let psi = psi.unscale(nrm);
        let sys = MonitoredSystem::for_channel(&c.map, &SubspaceSpec::pure(&psi))?;
        *slot = stats(&sys.report(&(&psi * psi.adjoint()), 0, LimitPolicy::Auto)?);
        Ok(())
    })
}

/// Kac's formula for `ψ` with respect to the invariant state of an irreducible channel.
///
/// # Safety
/// As for [`qmcr_channel_return_pure`].
#[no_mangle]
pub unsafe extern "C" fn qmcr_channel_kac(
    channel: *const QmcrChannel,
    re: *const f64,
    im: *const f64,
    out_kac: *mut QmcrKac,
) -> QmcrStatus {
    guard(|| {
        let c = channel.as_ref().ok_or(Fail::Null("channel"))?;
        let slot = out(out_kac, "out_kac")?;
        let psi = ComplexVector::from_vec(complex_slice(re, im, c.map.dim(), "re")?);
        if !channels::is_irreducible(&c.map) {
            return Err(Error::NotIrreducible.into());
        }
        let chi = channels::invariant_states(&c.map)?.remove(0);
        let k = kac_correction(&c.map, chi.matrix(), &psi)?;
        *slot = QmcrKac { ideal: k.ideal, correction: k.correction, tau: k.tau };
        Ok(())
    })
}
