//! C interface to the distributed MMSE precoding simulator.
//!
//! The API follows the usual out-parameter convention: every function
//! returns a [`TmmseStatus`] and writes results through pointers supplied
//! by the caller. Scenarios are opaque handles created by the
//! `tmmse_scenario_*` constructors and released with
//! [`tmmse_scenario_free`]. Strings returned by the library are owned by
//! the caller and must be released with [`tmmse_string_free`].
//!
//! All functions are panic-safe: a panic inside the library is caught at
//! the boundary and reported as [`TmmseStatus::Panic`] instead of
//! unwinding into C.

use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::str::FromStr;

use tmmse::channel::{build_radio_stripe_scenario, iid_scenario, NetworkScenario};
use tmmse::error::Error;
use tmmse::precoding::{SchemeEngine, SchemeKind};
use tmmse::rates::evaluate_rates;

/// Result code of every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TmmseStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Scenario parameters or sample counts are out of range.
    InvalidArgument = 2,
    /// The computation failed numerically (singular statistics, degenerate
    /// SINR, ...).
    NumericalFailure = 3,
    /// The scheme tag does not name a known precoding scheme.
    UnknownScheme = 4,
    /// Serializing the scenario failed.
    SerializationFailure = 5,
    /// A panic was caught at the language boundary.
    Panic = 6,
}

/// Opaque scenario handle.
pub struct TmmseScenario(NetworkScenario);

fn classify(e: &Error) -> TmmseStatus {
    match e {
        Error::UnsupportedScheme(_) => TmmseStatus::UnknownScheme,
        Error::Config(_) | Error::InvalidScenario(_) | Error::InvalidGeometry(_) => {
            TmmseStatus::InvalidArgument
        }
        Error::Json(_) => TmmseStatus::SerializationFailure,
        Error::Context { source, .. } => classify(source),
        _ => TmmseStatus::NumericalFailure,
    }
}

fn guarded(f: impl FnOnce() -> TmmseStatus) -> TmmseStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(TmmseStatus::Panic)
}

unsafe fn emit_scenario(
    built: Result<NetworkScenario, Error>,
    out: *mut *mut TmmseScenario,
) -> TmmseStatus {
    match built {
        Ok(s) => {
            *out = Box::into_raw(Box::new(TmmseScenario(s)));
            TmmseStatus::Ok
        }
        Err(e) => classify(&e),
    }
}

/// Create a circular radio-stripe scenario: `tx_count` transmitters evenly
/// spaced on a circle of radius `stripe_radius_m`, `user_count` users
/// placed uniformly in the concentric disc of radius `user_disc_radius_m`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one
/// `TmmseScenario*`. On success it receives an owned handle that must be
/// released with [`tmmse_scenario_free`]; on failure it is left untouched.
#[no_mangle]
pub unsafe extern "C" fn tmmse_scenario_radio_stripe(
    tx_count: usize,
    antennas_per_tx: usize,
    user_count: usize,
    stripe_radius_m: f64,
    user_disc_radius_m: f64,
    seed: u64,
    out: *mut *mut TmmseScenario,
) -> TmmseStatus {
    guarded(|| {
        if out.is_null() {
            return TmmseStatus::NullPointer;
        }
        let built = build_radio_stripe_scenario(
            tx_count,
            antennas_per_tx,
            user_count,
            stripe_radius_m,
            user_disc_radius_m,
            seed,
        );
        emit_scenario(built, out)
    })
}

/// Create a scenario with unit channel gains everywhere, Rayleigh fading
/// and perfect channel estimates. `per_user_power` is the transmit power
/// budget per user in mW.
///
/// # Safety
/// Same contract as [`tmmse_scenario_radio_stripe`].
#[no_mangle]
pub unsafe extern "C" fn tmmse_scenario_iid(
    tx_count: usize,
    antennas_per_tx: usize,
    user_count: usize,
    per_user_power: f64,
    out: *mut *mut TmmseScenario,
) -> TmmseStatus {
    guarded(|| {
        if out.is_null() {
            return TmmseStatus::NullPointer;
        }
        emit_scenario(
            iid_scenario(tx_count, antennas_per_tx, user_count, per_user_power),
            out,
        )
    })
}

/// Release a scenario handle. Passing null is a no-op.
///
/// # Safety
/// `scenario` must be null or a handle obtained from a `tmmse_scenario_*`
/// constructor that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn tmmse_scenario_free(scenario: *mut TmmseScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Number of users in the scenario.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer to one
/// `uintptr_t`.
#[no_mangle]
pub unsafe extern "C" fn tmmse_scenario_user_count(
    scenario: *const TmmseScenario,
    out: *mut usize,
) -> TmmseStatus {
    guarded(|| {
        if scenario.is_null() || out.is_null() {
            return TmmseStatus::NullPointer;
        }
        *out = (*scenario).0.user_count;
        TmmseStatus::Ok
    })
}

/// Serialize the scenario to a JSON document.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer to one
/// `char*`. On success `*out` receives an owned NUL-terminated string that
/// must be released with [`tmmse_string_free`].
#[no_mangle]
pub unsafe extern "C" fn tmmse_scenario_json(
    scenario: *const TmmseScenario,
    out: *mut *mut c_char,
) -> TmmseStatus {
    guarded(|| {
        if scenario.is_null() || out.is_null() {
            return TmmseStatus::NullPointer;
        }
        let json = match (*scenario).0.to_json() {
            Ok(j) => j,
            Err(e) => return classify(&e),
        };
        match CString::new(json) {
            Ok(c) => {
                *out = c.into_raw();
                TmmseStatus::Ok
            }
            Err(_) => TmmseStatus::SerializationFailure,
        }
    })
}

/// Release a string returned by this library. Passing null is a no-op.
///
/// # Safety
/// `s` must be null or a string obtained from this library that has not
/// been freed yet.
#[no_mangle]
pub unsafe extern "C" fn tmmse_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Evaluate one precoding scheme on a scenario and report per-user
/// ergodic rates under the hardening bound.
///
/// `scheme_tag` selects the scheme by its serialized name (`"mrt"`,
/// `"local_tmmse"`, `"uni_tmmse"`, `"seq_zf"`, `"sgd"`, `"sgd_robust"`,
/// `"obe"`, `"local_mmse_lsfd"`, `"centralized_recursive"`,
/// `"centralized_direct"`). `m_stats` sets the sample count used to learn
/// long-term statistics (at least 2) and `m_eval` the Monte-Carlo
/// evaluation sample count (at least 1).
///
/// Each output array may independently be null to skip that quantity;
/// non-null arrays must hold one `double` per user. `rate_bits` receives
/// rates in bits per channel use, `mse` the per-user mean square error,
/// `sinr_db` the effective SINR in dB and `p_mw` the allocated downlink
/// power in mW.
///
/// # Safety
/// `scenario` must be a live handle, `scheme_tag` a valid NUL-terminated
/// string, and every non-null output array valid for `user_count` writes.
#[no_mangle]
pub unsafe extern "C" fn tmmse_evaluate(
    scenario: *const TmmseScenario,
    scheme_tag: *const c_char,
    m_stats: usize,
    m_eval: usize,
    seed: u64,
    rate_bits: *mut f64,
    mse: *mut f64,
    sinr_db: *mut f64,
    p_mw: *mut f64,
) -> TmmseStatus {
    guarded(|| {
        if scenario.is_null() || scheme_tag.is_null() {
            return TmmseStatus::NullPointer;
        }
        if m_stats < 2 || m_eval < 1 {
            return TmmseStatus::InvalidArgument;
        }
        let tag = match CStr::from_ptr(scheme_tag).to_str() {
            Ok(t) => t,
            Err(_) => return TmmseStatus::InvalidArgument,
        };
        let kind = match SchemeKind::from_str(tag) {
            Ok(k) => k,
            Err(e) => return classify(&e),
        };
        let s = &(*scenario).0;
        let report = match SchemeEngine::prepare(kind, s, m_stats, seed)
            .and_then(|engine| evaluate_rates(s, &engine, m_eval, seed))
        {
            Ok(r) => r,
            Err(e) => return classify(&e),
        };
        for (slot, user) in report.users.iter().enumerate() {
            if !rate_bits.is_null() {
                *rate_bits.add(slot) = user.rate_bits;
            }
            if !mse.is_null() {
                *mse.add(slot) = user.mse;
            }
            if !sinr_db.is_null() {
                *sinr_db.add(slot) = 10.0 * user.sinr_uatf.log10();
            }
            if !p_mw.is_null() {
                *p_mw.add(slot) = user.p_mw;
            }
        }
        TmmseStatus::Ok
    })
}

/// Static description of a status code. Never returns null and the
/// returned string must not be freed.
#[no_mangle]
pub extern "C" fn tmmse_status_message(status: TmmseStatus) -> *const c_char {
    let msg: &'static [u8] = match status {
        TmmseStatus::Ok => b"ok\0",
        TmmseStatus::NullPointer => b"a required pointer argument was null\0",
        TmmseStatus::InvalidArgument => b"invalid scenario parameters or sample counts\0",
        TmmseStatus::NumericalFailure => b"the computation failed numerically\0",
        TmmseStatus::UnknownScheme => b"unknown precoding scheme tag\0",
        TmmseStatus::SerializationFailure => b"serialization failed\0",
        TmmseStatus::Panic => b"internal panic caught at the language boundary\0",
    };
    msg.as_ptr() as *const c_char
}
