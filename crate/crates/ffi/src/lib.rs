//! C ABI for qpforce.
//!
//! Maps are opaque `QpMap` handles built from a TOML or JSON config string.
//! Every entry point returns a [`QpStatus`]; on failure the message is kept
//! per thread and read with [`qp_last_error`]. Strings returned to the caller
//! are owned by it and released with [`qp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qpforce::classify::{classify, Budgets, MapConfig, Thresholds};
use qpforce::cocycle::lyapunov_seeds;
use qpforce::models::LiftedSkewMap;
use qpforce::rotation::{rational_relation_search, rotation_number_orbit};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// The config did not parse or does not describe a valid map.
    Config = 3,
    /// A computation rejected its arguments or failed.
    Compute = 4,
    Panic = 5,
}

/// Opaque forced circle map.
pub struct QpMap {
    map: LiftedSkewMap,
    config: MapConfig,
}

/// l + kω + qρ = 0 with q > 0.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QpRelation {
    pub l: i64,
    pub k: i64,
    pub q: i64,
    pub residual: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QpRotation {
    pub value: f64,
    pub spread: f64,
    pub n_iterates: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(QpStatus, String);

fn fail<E: std::fmt::Display>(status: QpStatus) -> impl Fn(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            QpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside qpforce".into());
            QpStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(QpStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(QpStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn read_map<'a>(p: *const QpMap) -> Result<&'a QpMap, Failure> {
    p.as_ref().ok_or(Failure(QpStatus::NullPointer, "map handle is null".into()))
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(QpStatus::NullPointer, format!("{what} is null")));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn qp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a map config. `format` is "toml" or "json".
///
/// # Safety
/// `src` and `format` must be NUL-terminated strings; `out` must be writable.
/// The handle written to `*out` must be released with [`qp_map_free`].
#[no_mangle]
pub unsafe extern "C" fn qp_map_from_config(src: *const c_char, format: *const c_char, out: *mut *mut QpMap) -> QpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(QpStatus::NullPointer, "out is null".into()));
        }
        let src = read_str(src, "src")?;
        let format = read_str(format, "format")?;
        let config = MapConfig::from_str_ext(src, format).map_err(fail(QpStatus::Config))?;
        let map = config.build(None).map_err(fail(QpStatus::Config))?;
        out.write(Box::into_raw(Box::new(QpMap { map, config })));
        Ok(())
    })
}

/// # Safety
/// `map` must be NULL or a handle from [`qp_map_from_config`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qp_map_free(map: *mut QpMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// # Safety
/// `map` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qp_map_omega(map: *const QpMap, out: *mut f64) -> QpStatus {
    guard(|| write(out, read_map(map)?.map.omega(), "out"))
}

/// The fibre lift T̂_θ(x̂).
///
/// # Safety
/// `map` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qp_map_lift(map: *const QpMap, theta: f64, x: f64, out: *mut f64) -> QpStatus {
    guard(|| write(out, read_map(map)?.map.lift(theta, x), "out"))
}

/// Orbit estimate of the fibrewise rotation number from (θ₀, x̂₀).
///
/// # Safety
/// `map` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qp_rotation_number(
    map: *const QpMap,
    theta0: f64,
    x0: f64,
    n: u64,
    out: *mut QpRotation,
) -> QpStatus {
    guard(|| {
        let r = rotation_number_orbit(&read_map(map)?.map, theta0, x0, n).map_err(fail(QpStatus::Compute))?;
        write(
            out,
            QpRotation {
                value: r.value,
                spread: r.spread,
                n_iterates: r.n_iterates,
            },
            "out",
        )
    })
}

/// Smallest relation l + kω + qρ = 0 with q ≤ max_q, |k| ≤ max_k within `tol`.
/// `*found` is set to 0 when there is none, and `*out` is then left untouched.
///
/// # Safety
/// `out` and `found` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qp_relation_search(
    omega: f64,
    rho: f64,
    max_q: u32,
    max_k: u32,
    tol: f64,
    out: *mut QpRelation,
    found: *mut bool,
) -> QpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(QpStatus::NullPointer, "out is null".into()));
        }
        let r = rational_relation_search(omega, rho, max_q, max_k, tol).map_err(fail(QpStatus::Compute))?;
        if let Some(r) = r {
            out.write(QpRelation {
                l: r.l,
                k: r.k,
                q: r.q,
                residual: r.residual,
            });
        }
        write(found, r.is_some(), "found")
    })
}

/// Mean Lyapunov exponent over `seeds` random start vectors. Only maps built
/// from a projective cocycle have one.
///
/// # Safety
/// `map` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qp_lyapunov(map: *const QpMap, n: u64, seeds: u32, seed: u64, out: *mut f64) -> QpStatus {
    guard(|| {
        let m = read_map(map)?;
        let c = m
            .map
            .cocycle()
            .ok_or_else(|| Failure(QpStatus::Compute, "map has no cocycle".into()))?;
        let r = lyapunov_seeds(c, 0.0, n, seeds as usize, seed).map_err(fail(QpStatus::Compute))?;
        write(out, r.value, "out")
    })
}

/// Runs the full classification and writes the JSON report to `*out_json`.
/// Budgets and thresholds come from the config when present; `seed`
/// overrides the budget seed.
///
/// # Safety
/// `map` must be a live handle and `out_json` writable. The string must be
/// released with [`qp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn qp_classify(map: *const QpMap, seed: u64, out_json: *mut *mut c_char) -> QpStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(Failure(QpStatus::NullPointer, "out_json is null".into()));
        }
        let m = read_map(map)?;
        let mut budgets = m.config.budgets.clone().unwrap_or_else(Budgets::default);
        budgets.seed = seed;
        let thresholds = m.config.thresholds.clone().unwrap_or_else(Thresholds::default);
        let report = classify(&m.map, &budgets, &thresholds).map_err(fail(QpStatus::Compute))?;
        let json = CString::new(report.to_json()).map_err(fail(QpStatus::Compute))?;
        out_json.write(json.into_raw());
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
