//! C ABI over the clair pipeline.
//!
//! A caller creates a session from `K` client weight matrices, runs the
//! pipeline with a parameter struct, then copies results out into caller-owned
//! buffers. Matrices cross the boundary as row-major `double` arrays; a stack
//! of client matrices is client-major (`K * q * p` values).
//!
//! Every function returns a [`ClairStatus`]. On failure a message is kept in
//! thread-local storage and can be read with [`clair_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use clair::pipeline::{run_clair, ClairConfig};
use clair::{ClairError, TauMode};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClairStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InsufficientClients = 3,
    DimensionMismatch = 4,
    NumericFailure = 5,
    NotRun = 6,
    BufferSize = 7,
    Panic = 8,
}

/// Pipeline parameters. Obtain defaults from [`clair_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClairParams {
    /// `lambda_L = lambda_l_c1 / sqrt(K)`.
    pub lambda_l_c1: f64,
    /// `lambda_S = lambda_s_c2 / K^1.5`.
    pub lambda_s_c2: f64,
    /// Majority-vote fraction in `[0.5, 1)`.
    pub alpha: f64,
    /// Fixed vote threshold; any negative value selects the largest-gap rule.
    pub tau: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Shared row-space rank.
    pub rank: usize,
}

struct RunResult {
    collaborative: Vec<bool>,
    refined: Vec<DMatrix<f64>>,
    projector: DMatrix<f64>,
    tau: f64,
    iterations: usize,
    converged: bool,
}

/// Opaque session handle.
pub struct ClairSession {
    q: usize,
    p: usize,
    locals: Vec<DMatrix<f64>>,
    result: Option<RunResult>,
}

struct Failure {
    status: ClairStatus,
    message: String,
}

impl Failure {
    fn new(status: ClairStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<ClairError> for Failure {
    fn from(e: ClairError) -> Self {
        let status = match e {
            ClairError::InsufficientClients(_) => ClairStatus::InsufficientClients,
            ClairError::Dimension { .. } | ClairError::Rank { .. } => ClairStatus::DimensionMismatch,
            ClairError::Numeric(_) | ClairError::Divergence(_) | ClairError::IllPosed(_) => ClairStatus::NumericFailure,
            _ => ClairStatus::InvalidArgument,
        };
        Self::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ClairStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            ClairStatus::Ok
        }
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(_) => {
            set_last_error("internal panic");
            ClairStatus::Panic
        }
    }
}

fn session_ref<'a>(session: *const ClairSession) -> Result<&'a ClairSession, Failure> {
    // SAFETY: callers pass a handle from `clair_session_new` or null.
    unsafe { session.as_ref() }.ok_or_else(|| Failure::new(ClairStatus::NullPointer, "session is null"))
}

fn finished(session: &ClairSession) -> Result<&RunResult, Failure> {
    session
        .result
        .as_ref()
        .ok_or_else(|| Failure::new(ClairStatus::NotRun, "clair_session_run has not succeeded yet"))
}

fn output_slice<'a, T>(out: *mut T, len: usize, needed: usize) -> Result<&'a mut [T], Failure> {
    if out.is_null() {
        return Err(Failure::new(ClairStatus::NullPointer, "output buffer is null"));
    }
    if len != needed {
        return Err(Failure::new(
            ClairStatus::BufferSize,
            format!("output buffer holds {len} values, expected {needed}"),
        ));
    }
    // SAFETY: non-null and the caller guarantees `len` writable elements.
    Ok(unsafe { std::slice::from_raw_parts_mut(out, len) })
}

fn write_row_major(m: &DMatrix<f64>, out: &mut [f64]) {
    let cols = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..cols {
            out[i * cols + j] = m[(i, j)];
        }
    }
}

/// Defaults matching the library: `c1 = 0.3`, `c2 = 1.0`, `alpha = 0.5`,
/// largest-gap threshold, 2000 iterations, tolerance `1e-9`, rank 2.
#[no_mangle]
pub extern "C" fn clair_params_default() -> ClairParams {
    let cfg = ClairConfig::default();
    ClairParams {
        lambda_l_c1: cfg.lambda_l_c1,
        lambda_s_c2: cfg.lambda_s_c2,
        alpha: cfg.detection.alpha,
        tau: -1.0,
        max_iters: cfg.max_iters,
        tol: cfg.tol,
        rank: cfg.rank,
    }
}

/// Create a session holding `clients` matrices of shape `q x p`.
///
/// # Safety
/// `weights` must point to `clients * q * p` readable doubles and `out` to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn clair_session_new(
    clients: usize,
    q: usize,
    p: usize,
    weights: *const f64,
    out: *mut *mut ClairSession,
) -> ClairStatus {
    guard(|| {
        if out.is_null() || weights.is_null() {
            return Err(Failure::new(ClairStatus::NullPointer, "weights or handle slot is null"));
        }
        if clients < 2 {
            return Err(ClairError::InsufficientClients(clients).into());
        }
        if q == 0 || p == 0 {
            return Err(Failure::new(ClairStatus::InvalidArgument, "q and p must be positive"));
        }
        let per = q
            .checked_mul(p)
            .filter(|n| n.checked_mul(clients).is_some())
            .ok_or_else(|| Failure::new(ClairStatus::InvalidArgument, "dimensions overflow"))?;
        // SAFETY: the caller guarantees `clients * q * p` readable doubles.
        let data = unsafe { std::slice::from_raw_parts(weights, per * clients) };
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Failure::new(ClairStatus::NumericFailure, "weights contain non-finite values"));
        }
        let locals = data.chunks_exact(per).map(|c| DMatrix::from_row_slice(q, p, c)).collect();
        let session = Box::new(ClairSession {
            q,
            p,
            locals,
            result: None,
        });
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = Box::into_raw(session) };
        Ok(())
    })
}

/// Release a session. Null is accepted.
///
/// # Safety
/// `session` must come from [`clair_session_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn clair_session_free(session: *mut ClairSession) {
    if !session.is_null() {
        // SAFETY: ownership returns from the pointer created in `clair_session_new`.
        drop(unsafe { Box::from_raw(session) });
    }
}

/// Run decomposition, detection and refinement. `params` may be null for
/// defaults. A failed run clears earlier results.
///
/// # Safety
/// `session` must be a live handle; `params` null or readable.
#[no_mangle]
pub unsafe extern "C" fn clair_session_run(session: *mut ClairSession, params: *const ClairParams) -> ClairStatus {
    guard(|| {
        // SAFETY: live handle or null, per the contract.
        let session = unsafe { session.as_mut() }.ok_or_else(|| Failure::new(ClairStatus::NullPointer, "session is null"))?;
        session.result = None;
        // SAFETY: null or readable, per the contract.
        let params = unsafe { params.as_ref() }.copied().unwrap_or_else(|| clair_params_default());
        let mut cfg = ClairConfig {
            lambda_l_c1: params.lambda_l_c1,
            lambda_s_c2: params.lambda_s_c2,
            max_iters: params.max_iters,
            tol: params.tol,
            rank: params.rank,
            ..Default::default()
        };
        cfg.detection.alpha = params.alpha;
        cfg.detection.tau = if params.tau < 0.0 {
            TauMode::LargestGap
        } else {
            TauMode::Fixed(params.tau)
        };
        let out = run_clair(&session.locals, &cfg)?;
        let clients = session.locals.len();
        session.result = Some(RunResult {
            collaborative: (0..clients)
                .map(|k| out.detection.collaborative_set.contains(&k))
                .collect(),
            refined: out.estimates(&session.locals),
            projector: out.decomposition.projector.matrix().clone(),
            tau: out.detection.tau_used,
            iterations: out.decomposition.trace.iterations,
            converged: out.decomposition.trace.converged,
        });
        Ok(())
    })
}

/// # Safety
/// `session` must be a live handle; each output pointer null or writable.
#[no_mangle]
pub unsafe extern "C" fn clair_session_dims(
    session: *const ClairSession,
    clients: *mut usize,
    q: *mut usize,
    p: *mut usize,
) -> ClairStatus {
    guard(|| {
        let s = session_ref(session)?;
        // SAFETY: each pointer is null or writable.
        unsafe {
            if let Some(c) = clients.as_mut() {
                *c = s.locals.len();
            }
            if let Some(x) = q.as_mut() {
                *x = s.q;
            }
            if let Some(x) = p.as_mut() {
                *x = s.p;
            }
        }
        Ok(())
    })
}

/// Write 1 for clients in the collaborative set and 0 otherwise. `len` must
/// equal `K`.
///
/// # Safety
/// `session` must be a live handle and `out` point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn clair_session_collaborative_mask(
    session: *const ClairSession,
    out: *mut u8,
    len: usize,
) -> ClairStatus {
    guard(|| {
        let r = finished(session_ref(session)?)?;
        let buf = output_slice(out, len, r.collaborative.len())?;
        for (slot, &member) in buf.iter_mut().zip(&r.collaborative) {
            *slot = u8::from(member);
        }
        Ok(())
    })
}

/// Refined weights, client-major and row-major. Clients outside the set
/// receive their input weights. `len` must equal `K * q * p`.
///
/// # Safety
/// `session` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn clair_session_refined_weights(
    session: *const ClairSession,
    out: *mut f64,
    len: usize,
) -> ClairStatus {
    guard(|| {
        let s = session_ref(session)?;
        let r = finished(s)?;
        let per = s.q * s.p;
        let buf = output_slice(out, len, per * r.refined.len())?;
        for (m, chunk) in r.refined.iter().zip(buf.chunks_exact_mut(per)) {
            write_row_major(m, chunk);
        }
        Ok(())
    })
}

/// The estimated `p x p` row-space projector. `len` must equal `p * p`.
///
/// # Safety
/// `session` must be a live handle and `out` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn clair_session_projector(
    session: *const ClairSession,
    out: *mut f64,
    len: usize,
) -> ClairStatus {
    guard(|| {
        let s = session_ref(session)?;
        let r = finished(s)?;
        let buf = output_slice(out, len, s.p * s.p)?;
        write_row_major(&r.projector, buf);
        Ok(())
    })
}

/// Threshold used by the vote, plus solver iteration count and convergence
/// flag. Any output pointer may be null.
///
/// # Safety
/// `session` must be a live handle; each output pointer null or writable.
#[no_mangle]
pub unsafe extern "C" fn clair_session_diagnostics(
    session: *const ClairSession,
    tau: *mut f64,
    iterations: *mut usize,
    converged: *mut u8,
) -> ClairStatus {
    guard(|| {
        let r = finished(session_ref(session)?)?;
        // SAFETY: each pointer is null or writable.
        unsafe {
            if let Some(t) = tau.as_mut() {
                *t = r.tau;
            }
            if let Some(i) = iterations.as_mut() {
                *i = r.iterations;
            }
            if let Some(c) = converged.as_mut() {
                *c = u8::from(r.converged);
            }
        }
        Ok(())
    })
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn clair_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}
