//! C ABI for the manifold-hmm library.
//!
//! Conventions:
//! - every fallible function returns an [`MhmmStatus`]; outputs go through
//!   out-pointers that are written only on `MHMM_STATUS_OK`;
//! - on failure, [`mhmm_last_error_message`] returns a NUL-terminated
//!   description, valid on the calling thread until its next failing call;
//! - objects are opaque handles created and released by the matching
//!   `*_free` function; strings returned through out-pointers are released
//!   with [`mhmm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use manifold_hmm::error::Error;
use manifold_hmm::experiment::{fit_chain, FitOptions, RunRecord};
use manifold_hmm::manifold::{self, ManifoldPoint};
use manifold_hmm::markov::{self, ChainSample, HmmParams};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MhmmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NumericalFailure = 4,
    IoFailure = 5,
    Unsupported = 6,
}

/// Opaque handle around a validated parameter set.
pub struct MhmmParams {
    inner: HmmParams,
}

/// Opaque handle around a simulated (or loaded) chain.
pub struct MhmmChain {
    inner: ChainSample,
}

/// Opaque handle around one fitted run: scores, aligned estimates, and the
/// decoded state sequence.
pub struct MhmmFit {
    record: RunRecord,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: MhmmStatus, message: impl std::fmt::Display) -> MhmmStatus {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(text).unwrap_or_default();
    });
    status
}

fn fail_error(e: Error) -> MhmmStatus {
    let status = match &e {
        Error::UnsupportedKind { .. } => MhmmStatus::Unsupported,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) => MhmmStatus::IoFailure,
        Error::KindMismatch { .. }
        | Error::InvalidPoint(_)
        | Error::InvalidArgument(_)
        | Error::InvalidModel { .. }
        | Error::Config(_) => MhmmStatus::InvalidArgument,
        _ => MhmmStatus::NumericalFailure,
    };
    fail(status, e)
}

fn guarded(body: impl FnOnce() -> MhmmStatus) -> MhmmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(MhmmStatus::NumericalFailure, "internal panic"),
    }
}

/// Last error message for this thread; never NULL, valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn mhmm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mhmm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Releases a string returned through an out-pointer.
///
/// # Safety
/// `s` must be a pointer previously returned by this library through a
/// `char**` out-parameter, not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn mhmm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, MhmmStatus> {
    if ptr.is_null() {
        return Err(fail(MhmmStatus::NullPointer, "NULL string argument"));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| fail(MhmmStatus::InvalidUtf8, e))
}

fn write_out<T>(out: *mut T, value: T) -> MhmmStatus {
    if out.is_null() {
        return fail(MhmmStatus::NullPointer, "NULL output pointer");
    }
    unsafe { out.write(value) };
    MhmmStatus::Ok
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Parses a parameter set from its JSON document (the same schema the CLI
/// uses) and returns an owned handle.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_params_from_json(
    json: *const c_char,
    out: *mut *mut MhmmParams,
) -> MhmmStatus {
    guarded(|| {
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match serde_json::from_str::<HmmParams>(text) {
            Ok(params) => write_out(
                out,
                Box::into_raw(Box::new(MhmmParams { inner: params })),
            ),
            Err(e) => fail(MhmmStatus::InvalidArgument, e),
        }
    })
}

/// Serializes a parameter set back to JSON; release the string with
/// [`mhmm_string_free`].
///
/// # Safety
/// `params` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_params_to_json(
    params: *const MhmmParams,
    out: *mut *mut c_char,
) -> MhmmStatus {
    guarded(|| {
        if params.is_null() {
            return fail(MhmmStatus::NullPointer, "NULL params handle");
        }
        let json = match serde_json::to_string_pretty(&(*params).inner) {
            Ok(j) => j,
            Err(e) => return fail(MhmmStatus::IoFailure, e),
        };
        match CString::new(json) {
            Ok(c) => write_out(out, c.into_raw()),
            Err(e) => fail(MhmmStatus::InvalidArgument, e),
        }
    })
}

/// # Safety
/// `params` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_params_n_states(
    params: *const MhmmParams,
    out: *mut usize,
) -> MhmmStatus {
    if params.is_null() {
        return fail(MhmmStatus::NullPointer, "NULL params handle");
    }
    write_out(out, (*params).inner.n_states())
}

/// # Safety
/// `params` must be a handle from this library, not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn mhmm_params_free(params: *mut MhmmParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

// ---------------------------------------------------------------------------
// Simulation and chains
// ---------------------------------------------------------------------------

/// Simulates a chain of `length` observations; deterministic per seed.
///
/// # Safety
/// `params` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_simulate(
    params: *const MhmmParams,
    length: usize,
    seed: u64,
    out: *mut *mut MhmmChain,
) -> MhmmStatus {
    guarded(|| {
        if params.is_null() {
            return fail(MhmmStatus::NullPointer, "NULL params handle");
        }
        match markov::simulate_chain(&(*params).inner, length, seed) {
            Ok(chain) => write_out(out, Box::into_raw(Box::new(MhmmChain { inner: chain }))),
            Err(e) => fail_error(e),
        }
    })
}

/// # Safety
/// `chain` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_chain_len(chain: *const MhmmChain, out: *mut usize) -> MhmmStatus {
    if chain.is_null() {
        return fail(MhmmStatus::NullPointer, "NULL chain handle");
    }
    write_out(out, (*chain).inner.len())
}

/// Number of coordinates per observation: 2 on the disk, d·d on SPD(d).
///
/// # Safety
/// `chain` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_chain_point_dim(
    chain: *const MhmmChain,
    out: *mut usize,
) -> MhmmStatus {
    if chain.is_null() {
        return fail(MhmmStatus::NullPointer, "NULL chain handle");
    }
    let inner = &(*chain).inner;
    write_out(out, inner.observations[0].coords().len())
}

/// Hidden state (1-based) at position `t` (0-based).
///
/// # Safety
/// `chain` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_chain_state(
    chain: *const MhmmChain,
    t: usize,
    out: *mut usize,
) -> MhmmStatus {
    if chain.is_null() {
        return fail(MhmmStatus::NullPointer, "NULL chain handle");
    }
    let inner = &(*chain).inner;
    if t >= inner.len() {
        return fail(
            MhmmStatus::InvalidArgument,
            format!("index {t} out of range 0..{}", inner.len()),
        );
    }
    write_out(out, inner.states[t])
}

/// Writes the coordinates of observation `t` into `buf` (disk: re, im;
/// SPD: row-major entries). `buf_len` must be at least the value reported
/// by [`mhmm_chain_point_dim`].
///
/// # Safety
/// `chain` must be a live handle and `buf` must point to `buf_len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mhmm_chain_point(
    chain: *const MhmmChain,
    t: usize,
    buf: *mut f64,
    buf_len: usize,
) -> MhmmStatus {
    if chain.is_null() || buf.is_null() {
        return fail(MhmmStatus::NullPointer, "NULL argument");
    }
    let inner = &(*chain).inner;
    if t >= inner.len() {
        return fail(
            MhmmStatus::InvalidArgument,
            format!("index {t} out of range 0..{}", inner.len()),
        );
    }
    let coords = inner.observations[t].coords();
    if buf_len < coords.len() {
        return fail(
            MhmmStatus::InvalidArgument,
            format!("buffer holds {buf_len} doubles, need {}", coords.len()),
        );
    }
    std::ptr::copy_nonoverlapping(coords.as_ptr(), buf, coords.len());
    MhmmStatus::Ok
}

/// # Safety
/// `chain` must be a handle from this library, not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn mhmm_chain_free(chain: *mut MhmmChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Hyperbolic distance between two Poincaré-disk points.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_disk_distance(
    re1: f64,
    im1: f64,
    re2: f64,
    im2: f64,
    out: *mut f64,
) -> MhmmStatus {
    guarded(|| {
        let d = ManifoldPoint::disk(re1, im1)
            .and_then(|x| ManifoldPoint::disk(re2, im2).map(|y| (x, y)))
            .and_then(|(x, y)| manifold::distance(&x, &y));
        match d {
            Ok(d) => write_out(out, d),
            Err(e) => fail_error(e),
        }
    })
}

/// Affine-invariant distance between two SPD matrices given as row-major
/// `dim`×`dim` buffers.
///
/// # Safety
/// `x` and `y` must point to `dim*dim` readable doubles; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_spd_distance(
    dim: usize,
    x: *const f64,
    y: *const f64,
    out: *mut f64,
) -> MhmmStatus {
    guarded(|| {
        if x.is_null() || y.is_null() {
            return fail(MhmmStatus::NullPointer, "NULL matrix argument");
        }
        if dim == 0 {
            return fail(MhmmStatus::InvalidArgument, "dim must be >= 1");
        }
        let xs = std::slice::from_raw_parts(x, dim * dim);
        let ys = std::slice::from_raw_parts(y, dim * dim);
        let to_point = |s: &[f64]| {
            ManifoldPoint::spd(nalgebra::DMatrix::from_row_slice(dim, dim, s))
        };
        let d = to_point(xs)
            .and_then(|a| to_point(ys).map(|b| (a, b)))
            .and_then(|(a, b)| manifold::distance(&a, &b));
        match d {
            Ok(d) => write_out(out, d),
            Err(e) => fail_error(e),
        }
    })
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

/// Runs the full pipeline on a chain: K-means initialization on the first
/// `delta` observations, online fine-tuning on the rest, filtered decoding
/// and scoring against `reference`. Pass `step_exponent <= 0` for the
/// default (0.5).
///
/// # Safety
/// `chain` and `reference` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_fit(
    chain: *const MhmmChain,
    reference: *const MhmmParams,
    delta: usize,
    seed: u64,
    step_exponent: f64,
    out: *mut *mut MhmmFit,
) -> MhmmStatus {
    guarded(|| {
        if chain.is_null() || reference.is_null() {
            return fail(MhmmStatus::NullPointer, "NULL handle argument");
        }
        let options = FitOptions {
            kmeans_max_iter: 100,
            kmeans_tol: 1e-9,
            step_exponent: if step_exponent > 0.0 {
                step_exponent
            } else {
                0.5
            },
            trace_every: 0,
        };
        match fit_chain(&(*chain).inner, &(*reference).inner, delta, seed, &options) {
            Ok((record, _)) => write_out(out, Box::into_raw(Box::new(MhmmFit { record }))),
            Err(e) => fail_error(e),
        }
    })
}

/// # Safety
/// `fit` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_fit_accuracy(fit: *const MhmmFit, out: *mut f64) -> MhmmStatus {
    if fit.is_null() {
        return fail(MhmmStatus::NullPointer, "NULL fit handle");
    }
    write_out(out, (*fit).record.accuracy)
}

/// # Safety
/// `fit` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_fit_transition_rmse(
    fit: *const MhmmFit,
    out: *mut f64,
) -> MhmmStatus {
    if fit.is_null() {
        return fail(MhmmStatus::NullPointer, "NULL fit handle");
    }
    write_out(out, (*fit).record.transition_rmse)
}

/// Length of the decoded state sequence.
///
/// # Safety
/// `fit` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_fit_decoded_len(
    fit: *const MhmmFit,
    out: *mut usize,
) -> MhmmStatus {
    if fit.is_null() {
        return fail(MhmmStatus::NullPointer, "NULL fit handle");
    }
    write_out(out, (*fit).record.decoded.len())
}

/// Copies the decoded (1-based) states into `buf`.
///
/// # Safety
/// `fit` must be a live handle; `buf` must point to `buf_len` writable
/// `size_t`s.
#[no_mangle]
pub unsafe extern "C" fn mhmm_fit_decoded(
    fit: *const MhmmFit,
    buf: *mut usize,
    buf_len: usize,
) -> MhmmStatus {
    if fit.is_null() || buf.is_null() {
        return fail(MhmmStatus::NullPointer, "NULL argument");
    }
    let decoded = &(*fit).record.decoded;
    if buf_len < decoded.len() {
        return fail(
            MhmmStatus::InvalidArgument,
            format!("buffer holds {buf_len} entries, need {}", decoded.len()),
        );
    }
    std::ptr::copy_nonoverlapping(decoded.as_ptr(), buf, decoded.len());
    MhmmStatus::Ok
}

/// The full run record (aligned transition matrix, centers, sigmas,
/// deltas, timings) as a JSON document; release with [`mhmm_string_free`].
///
/// # Safety
/// `fit` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mhmm_fit_record_json(
    fit: *const MhmmFit,
    out: *mut *mut c_char,
) -> MhmmStatus {
    guarded(|| {
        if fit.is_null() {
            return fail(MhmmStatus::NullPointer, "NULL fit handle");
        }
        let json = match serde_json::to_string_pretty(&(*fit).record) {
            Ok(j) => j,
            Err(e) => return fail(MhmmStatus::IoFailure, e),
        };
        match CString::new(json) {
            Ok(c) => write_out(out, c.into_raw()),
            Err(e) => fail(MhmmStatus::InvalidArgument, e),
        }
    })
}

/// # Safety
/// `fit` must be a handle from this library, not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn mhmm_fit_free(fit: *mut MhmmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    fn params_json() -> CString {
        CString::new(
            r#"{
            "n_states": 3,
            "transition": [[0.4,0.3,0.3],[0.2,0.6,0.2],[0.1,0.1,0.8]],
            "initial": [1.0, 0.0, 0.0],
            "components": [
                {"center": [0.0, 0.0], "sigma": 0.2},
                {"center": [0.29, 0.82], "sigma": 1.0},
                {"center": [-0.29, 0.82], "sigma": 1.0}
            ]
        }"#,
        )
        .unwrap()
    }

    fn make_params() -> *mut MhmmParams {
        let mut out = ptr::null_mut();
        let status = unsafe { mhmm_params_from_json(params_json().as_ptr(), &mut out) };
        assert_eq!(status, MhmmStatus::Ok);
        assert!(!out.is_null());
        out
    }

    #[test]
    fn version_is_a_c_string() {
        let v = unsafe { CStr::from_ptr(mhmm_version()) };
        assert!(!v.to_str().unwrap().is_empty());
    }

    #[test]
    fn params_round_trip_through_json() {
        let params = make_params();
        let mut n = 0usize;
        assert_eq!(
            unsafe { mhmm_params_n_states(params, &mut n) },
            MhmmStatus::Ok
        );
        assert_eq!(n, 3);
        let mut json = ptr::null_mut();
        assert_eq!(
            unsafe { mhmm_params_to_json(params, &mut json) },
            MhmmStatus::Ok
        );
        let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_string();
        unsafe { mhmm_string_free(json) };
        assert!(text.contains("\"n_states\": 3"));
        let reparsed = CString::new(text).unwrap();
        let mut again = ptr::null_mut();
        assert_eq!(
            unsafe { mhmm_params_from_json(reparsed.as_ptr(), &mut again) },
            MhmmStatus::Ok
        );
        unsafe {
            mhmm_params_free(again);
            mhmm_params_free(params);
        }
    }

    #[test]
    fn bad_input_reports_status_and_message() {
        let mut out = ptr::null_mut();
        assert_eq!(
            unsafe { mhmm_params_from_json(ptr::null(), &mut out) },
            MhmmStatus::NullPointer
        );
        let bad = CString::new(r#"{"n_states": 1}"#).unwrap();
        assert_eq!(
            unsafe { mhmm_params_from_json(bad.as_ptr(), &mut out) },
            MhmmStatus::InvalidArgument
        );
        let msg = unsafe { CStr::from_ptr(mhmm_last_error_message()) };
        assert!(!msg.to_str().unwrap().is_empty());
    }

    #[test]
    fn simulate_and_read_back() {
        let params = make_params();
        let mut chain = ptr::null_mut();
        assert_eq!(
            unsafe { mhmm_simulate(params, 50, 7, &mut chain) },
            MhmmStatus::Ok
        );
        let mut len = 0usize;
        assert_eq!(unsafe { mhmm_chain_len(chain, &mut len) }, MhmmStatus::Ok);
        assert_eq!(len, 50);
        let mut dim = 0usize;
        assert_eq!(
            unsafe { mhmm_chain_point_dim(chain, &mut dim) },
            MhmmStatus::Ok
        );
        assert_eq!(dim, 2);
        let mut state = 0usize;
        assert_eq!(
            unsafe { mhmm_chain_state(chain, 0, &mut state) },
            MhmmStatus::Ok
        );
        assert_eq!(state, 1); // certain start
        let mut buf = [0.0f64; 2];
        assert_eq!(
            unsafe { mhmm_chain_point(chain, 10, buf.as_mut_ptr(), 2) },
            MhmmStatus::Ok
        );
        assert!((buf[0] * buf[0] + buf[1] * buf[1]).sqrt() < 1.0);
        // out-of-range and short-buffer errors
        assert_eq!(
            unsafe { mhmm_chain_state(chain, 50, &mut state) },
            MhmmStatus::InvalidArgument
        );
        assert_eq!(
            unsafe { mhmm_chain_point(chain, 0, buf.as_mut_ptr(), 1) },
            MhmmStatus::InvalidArgument
        );
        unsafe {
            mhmm_chain_free(chain);
            mhmm_params_free(params);
        }
    }

    #[test]
    fn distances_through_the_abi() {
        let mut d = 0.0f64;
        assert_eq!(
            unsafe { mhmm_disk_distance(0.0, 0.0, 0.5, 0.0, &mut d) },
            MhmmStatus::Ok
        );
        assert!((d - 1.0986122886681098).abs() < 1e-12);
        assert_eq!(
            unsafe { mhmm_disk_distance(1.5, 0.0, 0.0, 0.0, &mut d) },
            MhmmStatus::InvalidArgument
        );

        let e = std::f64::consts::E;
        let x = [1.0, 0.0, 0.0, 1.0];
        let y = [e, 0.0, 0.0, 1.0 / e];
        assert_eq!(
            unsafe { mhmm_spd_distance(2, x.as_ptr(), y.as_ptr(), &mut d) },
            MhmmStatus::Ok
        );
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fit_smoke_test() {
        let params = make_params();
        let mut chain = ptr::null_mut();
        assert_eq!(
            unsafe { mhmm_simulate(params, 400, 3, &mut chain) },
            MhmmStatus::Ok
        );
        let mut fit = ptr::null_mut();
        assert_eq!(
            unsafe { mhmm_fit(chain, params, 80, 3, 0.0, &mut fit) },
            MhmmStatus::Ok
        );
        let mut acc = 0.0f64;
        assert_eq!(
            unsafe { mhmm_fit_accuracy(fit, &mut acc) },
            MhmmStatus::Ok
        );
        assert!((0.0..=1.0).contains(&acc));
        let mut rmse = 0.0f64;
        assert_eq!(
            unsafe { mhmm_fit_transition_rmse(fit, &mut rmse) },
            MhmmStatus::Ok
        );
        assert!(rmse >= 0.0);
        let mut n = 0usize;
        assert_eq!(
            unsafe { mhmm_fit_decoded_len(fit, &mut n) },
            MhmmStatus::Ok
        );
        assert_eq!(n, 400);
        let mut decoded = vec![0usize; n];
        assert_eq!(
            unsafe { mhmm_fit_decoded(fit, decoded.as_mut_ptr(), n) },
            MhmmStatus::Ok
        );
        assert!(decoded.iter().all(|&s| (1..=3).contains(&s)));
        let mut json = ptr::null_mut();
        assert_eq!(
            unsafe { mhmm_fit_record_json(fit, &mut json) },
            MhmmStatus::Ok
        );
        let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap();
        assert!(text.contains("\"transition\""));
        unsafe {
            mhmm_string_free(json);
            mhmm_fit_free(fit);
            mhmm_chain_free(chain);
            mhmm_params_free(params);
        }
    }

    #[test]
    fn generated_header_exists_and_declares_the_api() {
        let header = std::fs::read_to_string(
            std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/manifold_hmm.h"),
        )
        .expect("header generated by build.rs");
        for needle in [
            "MANIFOLD_HMM_H",
            "typedef struct MhmmParams MhmmParams;",
            "typedef struct MhmmChain MhmmChain;",
            "typedef struct MhmmFit MhmmFit;",
            "mhmm_params_from_json",
            "mhmm_simulate",
            "mhmm_fit",
            "mhmm_last_error_message",
        ] {
            assert!(header.contains(needle), "header is missing {needle:?}");
        }
    }
}
