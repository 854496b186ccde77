//! C ABI over the assignment, role-model and expert routines of `comil`.
//!
//! Conventions:
//!
//! * Every fallible function returns a status code (`COMIL_OK` on success)
//!   and writes results through caller-provided out-pointers.
//! * Objects are opaque handles created by `*_new` / `*_from_json` and
//!   released with the matching `*_free`.
//! * After a non-zero status, `comil_last_error_message` describes the error.
//!   The message is thread-local and valid until the next failing call on the
//!   same thread.
//! * Panics never cross the boundary; they are reported as `COMIL_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use comil::assign::{index_trajectories, min_cost_assignment, role_features, CostMode};
use comil::hmm::{Observations, VariationalHmm};
use comil::mdp::ExpertTeam;
use comil::pursuit::{GridPos, WorldState};

pub const COMIL_OK: i32 = 0;
pub const COMIL_NULL_POINTER: i32 = 1;
pub const COMIL_INVALID_ARGUMENT: i32 = 2;
pub const COMIL_PARSE_ERROR: i32 = 3;
pub const COMIL_COMPUTE_ERROR: i32 = 4;
pub const COMIL_PANIC: i32 = 5;

/// Opaque variational HMM.
pub struct ComilHmm {
    inner: VariationalHmm,
}

/// Opaque team of solved role experts.
pub struct ComilExperts {
    inner: ExpertTeam,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

struct Failure(i32, String);

impl From<comil::Error> for Failure {
    fn from(e: comil::Error) -> Self {
        let code = match e {
            comil::Error::Json { .. } => COMIL_PARSE_ERROR,
            comil::Error::InvalidParameter { .. }
            | comil::Error::InvalidDiscount(_)
            | comil::Error::DimensionMismatch(_)
            | comil::Error::SymbolOutOfRange { .. }
            | comil::Error::InvalidCostMatrix(_)
            | comil::Error::InvalidState(_)
            | comil::Error::LengthMismatch(_) => COMIL_INVALID_ARGUMENT,
            _ => COMIL_COMPUTE_ERROR,
        };
        Failure(code, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(COMIL_INVALID_ARGUMENT, message.into())
}

fn null(name: &str) -> Failure {
    Failure(COMIL_NULL_POINTER, format!("`{name}` is null"))
}

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> i32 {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => COMIL_OK,
        Ok(Err(Failure(code, message))) => {
            set_error(message);
            code
        }
        Err(_) => {
            set_error("internal panic");
            COMIL_PANIC
        }
    }
}

/// # Safety
/// `p` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

/// # Safety
/// `p` must be null or valid for `len` writes.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

/// Message of the last failure on this thread, or null if none. Owned by the
/// library.
#[no_mangle]
pub extern "C" fn comil_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Minimum-cost perfect matching of a `k x k` row-major cost matrix:
/// `perm_out[i]` is the column matched to row `i`. Among optimal matchings the
/// lexicographically smallest is returned.
///
/// # Safety
/// `cost` must hold `k * k` doubles and `perm_out` room for `k` entries;
/// `total_out` may be null.
#[no_mangle]
pub unsafe extern "C" fn comil_hungarian(
    cost: *const f64,
    k: usize,
    perm_out: *mut usize,
    total_out: *mut f64,
) -> i32 {
    guard(|| {
        if k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        let n = k.checked_mul(k).ok_or_else(|| invalid("k is too large"))?;
        let flat = unsafe { slice(cost, n, "cost") }?;
        let perm = unsafe { slice_mut(perm_out, k, "perm_out") }?;
        let rows: Vec<Vec<f64>> = flat.chunks(k).map(<[f64]>::to_vec).collect();
        let a = min_cost_assignment(&rows)?;
        perm.copy_from_slice(&a.perm);
        if !total_out.is_null() {
            unsafe { *total_out = a.total_cost };
        }
        Ok(())
    })
}

/// Parses a role model from its JSON checkpoint.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn comil_hmm_from_json(json: *const c_char, out: *mut *mut ComilHmm) -> i32 {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = unsafe { CStr::from_ptr(json) }
            .to_str()
            .map_err(|_| Failure(COMIL_PARSE_ERROR, "json is not valid UTF-8".into()))?;
        let inner = VariationalHmm::from_json(text)?;
        unsafe { *out = Box::into_raw(Box::new(ComilHmm { inner })) };
        Ok(())
    })
}

/// Releases a role model. Null is ignored.
///
/// # Safety
/// `hmm` must come from `comil_hmm_from_json` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn comil_hmm_free(hmm: *mut ComilHmm) {
    if !hmm.is_null() {
        drop(unsafe { Box::from_raw(hmm) });
    }
}

/// Number of latent states, or 0 for a null handle.
///
/// # Safety
/// `hmm` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn comil_hmm_num_states(hmm: *const ComilHmm) -> usize {
    unsafe { hmm.as_ref() }.map_or(0, |h| h.inner.num_states)
}

/// # Safety
/// `hmm` must be null or a live handle.
unsafe fn model<'a>(hmm: *const ComilHmm) -> Result<&'a VariationalHmm, Failure> {
    unsafe { hmm.as_ref() }
        .map(|h| &h.inner)
        .ok_or_else(|| null("hmm"))
}

fn decode_into(
    model: &VariationalHmm,
    obs: Observations,
    states: &mut [usize],
) -> Result<(), Failure> {
    let path = role_features(model, &obs)?;
    states.copy_from_slice(&path);
    Ok(())
}

/// Most likely state sequence of a symbol sequence (categorical model).
///
/// # Safety
/// `symbols` and `states_out` must each hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn comil_hmm_viterbi(
    hmm: *const ComilHmm,
    symbols: *const usize,
    len: usize,
    states_out: *mut usize,
) -> i32 {
    guard(|| {
        let m = unsafe { model(hmm) }?;
        if len == 0 {
            return Err(invalid("sequence is empty"));
        }
        let xs = unsafe { slice(symbols, len, "symbols") }?;
        let out = unsafe { slice_mut(states_out, len, "states_out") }?;
        decode_into(m, Observations::Symbols(xs.to_vec()), out)
    })
}

/// Most likely state sequence of a vector sequence (diagonal Gaussian model);
/// `data` is `len x dims`, row-major.
///
/// # Safety
/// `data` must hold `len * dims` doubles and `states_out` `len` entries.
#[no_mangle]
pub unsafe extern "C" fn comil_hmm_viterbi_vectors(
    hmm: *const ComilHmm,
    data: *const f64,
    len: usize,
    dims: usize,
    states_out: *mut usize,
) -> i32 {
    guard(|| {
        let m = unsafe { model(hmm) }?;
        if len == 0 || dims == 0 {
            return Err(invalid("sequence is empty"));
        }
        let n = len
            .checked_mul(dims)
            .ok_or_else(|| invalid("len * dims overflows"))?;
        let flat = unsafe { slice(data, n, "data") }?;
        let out = unsafe { slice_mut(states_out, len, "states_out") }?;
        decode_into(
            m,
            Observations::Vectors(flat.chunks(dims).map(<[f64]>::to_vec).collect()),
            out,
        )
    })
}

/// Indexes one unordered set of `k` equal-length symbol sequences (`k x len`,
/// row-major, `k` = number of states). `order_out[j]` is the input sequence
/// assigned to role `j`; `entropy_out` (nullable) receives the entropy
/// estimate of the assignment.
///
/// # Safety
/// `symbols` must hold `k * len` entries and `order_out` `k` entries.
#[no_mangle]
pub unsafe extern "C" fn comil_hmm_assign_categorical(
    hmm: *const ComilHmm,
    symbols: *const usize,
    k: usize,
    len: usize,
    order_out: *mut usize,
    entropy_out: *mut f64,
) -> i32 {
    guard(|| {
        let m = unsafe { model(hmm) }?;
        if k != m.num_states {
            return Err(invalid(format!(
                "{k} sequences for a {}-state model",
                m.num_states
            )));
        }
        if len == 0 {
            return Err(invalid("sequences are empty"));
        }
        let n = k
            .checked_mul(len)
            .ok_or_else(|| invalid("k * len overflows"))?;
        let flat = unsafe { slice(symbols, n, "symbols") }?;
        let out = unsafe { slice_mut(order_out, k, "order_out") }?;
        let obs: Vec<Observations> = flat
            .chunks(len)
            .map(|c| Observations::Symbols(c.to_vec()))
            .collect();
        let indexing = index_trajectories(m, &obs, CostMode::RowRescaled)?;
        out.copy_from_slice(indexing.order());
        if !entropy_out.is_null() {
            unsafe { *entropy_out = indexing.entropy };
        }
        Ok(())
    })
}

/// Solves the four surround-role experts on a `grid_side` torus.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn comil_experts_new(
    grid_side: i32,
    discount: f64,
    out: *mut *mut ComilExperts,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if grid_side < 3 {
            return Err(invalid("grid_side must be at least 3"));
        }
        let inner = ExpertTeam::surround(grid_side, discount)?;
        unsafe { *out = Box::into_raw(Box::new(ComilExperts { inner })) };
        Ok(())
    })
}

/// Releases an expert team. Null is ignored.
///
/// # Safety
/// `experts` must come from `comil_experts_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn comil_experts_free(experts: *mut ComilExperts) {
    if !experts.is_null() {
        drop(unsafe { Box::from_raw(experts) });
    }
}

/// Move of the expert for `role` controlling `predator`. `cells` holds
/// `num_predators + 1` `(x, y)` pairs: the predators, then the prey. The move
/// is written as an index into N, S, E, W, Stay (north is +y).
///
/// # Safety
/// `cells` must hold `2 * (num_predators + 1)` ints; `move_out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn comil_experts_action(
    experts: *const ComilExperts,
    role: usize,
    cells: *const i32,
    num_predators: usize,
    predator: usize,
    move_out: *mut u8,
) -> i32 {
    guard(|| {
        let team = unsafe { experts.as_ref() }
            .map(|e| &e.inner)
            .ok_or_else(|| null("experts"))?;
        if move_out.is_null() {
            return Err(null("move_out"));
        }
        if role >= team.num_roles() {
            return Err(invalid(format!(
                "role {role} out of range (team has {})",
                team.num_roles()
            )));
        }
        if predator >= num_predators {
            return Err(invalid(format!("predator {predator} out of range")));
        }
        let flat = unsafe { slice(cells, 2 * (num_predators + 1), "cells") }?;
        let mut pos: Vec<GridPos> = flat.chunks(2).map(|c| GridPos::new(c[0], c[1])).collect();
        let prey = pos.pop().expect("at least the prey cell");
        let world = WorldState::new(pos, prey, team.grid_side())?;
        unsafe { *move_out = team.action(role, &world, predator).index() as u8 };
        Ok(())
    })
}
