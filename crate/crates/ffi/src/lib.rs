//! C ABI for sparselab.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns an
//! [`SlStatus`]; the message of the last failure on the calling thread is
//! available from [`sl_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sparselab::grid::{self, DyadicCube, GridFunction};
use sparselab::kernels::{self, KernelSample, PairSampling};
use sparselab::oscillation::{self, LernerDecomposition};
use sparselab::{certify, io, weights, Error};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlStatus {
    SlOk = 0,
    SlNullPointer = 1,
    SlDomain = 2,
    SlDimension = 3,
    SlIo = 4,
    SlParse = 5,
    SlCheckFailed = 6,
    SlPanic = 7,
}

/// A function on the dyadic grid of the torus.
pub struct SlGrid(GridFunction);

/// A Lerner decomposition: sparse family, oscillations and median.
pub struct SlLerner(LernerDecomposition);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SlStatus {
    match e {
        Error::Domain(_) => SlStatus::SlDomain,
        Error::Dimension(_) => SlStatus::SlDimension,
        Error::Io(_) => SlStatus::SlIo,
        Error::Parse { .. } | Error::Json(_) => SlStatus::SlParse,
        Error::CheckFailed(_) => SlStatus::SlCheckFailed,
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

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> SlStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SlStatus::SlOk,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            SlStatus::SlNullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SlStatus::SlPanic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn cube(dim: usize, level: u32, index: &[u32]) -> Result<DyadicCube, Fail> {
    if index.len() != dim {
        return Err(
            Error::Dimension(format!("a {dim}-dimensional cube needs {dim} indices")).into(),
        );
    }
    Ok(DyadicCube::new(dim, level, index)?)
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `len = 2^{dim·resolution}` values (row-major) into a new grid.
///
/// # Safety
/// `values` must point to `len` readable doubles and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn sl_grid_new(
    dim: usize,
    resolution: u32,
    values: *const f64,
    len: usize,
    out_grid: *mut *mut SlGrid,
) -> SlStatus {
    guard(|| {
        let dst = out(out_grid, "out_grid")?;
        let v = slice(values, len, "values")?.to_vec();
        *dst = Box::into_raw(Box::new(SlGrid(GridFunction::new(dim, resolution, v)?)));
        Ok(())
    })
}

/// Reads a grid from a GFN1 text file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_grid` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_grid_read(path: *const c_char, out_grid: *mut *mut SlGrid) -> SlStatus {
    guard(|| {
        let dst = out(out_grid, "out_grid")?;
        let p = CStr::from_ptr(get(path, "path")?);
        let path = p
            .to_str()
            .map_err(|_| Error::Domain("path is not valid UTF-8".into()))?;
        *dst = Box::into_raw(Box::new(SlGrid(io::read_grid(Path::new(path))?)));
        Ok(())
    })
}

/// Releases a grid; NULL is ignored.
///
/// # Safety
/// `grid` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_grid_free(grid: *mut SlGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of cells of the grid, 0 for NULL.
///
/// # Safety
/// `grid` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sl_grid_len(grid: *const SlGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.len())
}

/// Copies up to `cap` values into `buf`.
///
/// # Safety
/// `buf` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_grid_values(
    grid: *const SlGrid,
    buf: *mut f64,
    cap: usize,
) -> SlStatus {
    guard(|| {
        let g = get(grid, "grid")?;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        if cap < g.0.len() {
            return Err(Error::Dimension(format!(
                "buffer holds {cap} values, grid has {}",
                g.0.len()
            ))
            .into());
        }
        ptr::copy_nonoverlapping(g.0.values().as_ptr(), buf, g.0.len());
        Ok(())
    })
}

/// `⟨f⟩_{Q,p0}` over the cube `(level, index[0..dim])`.
///
/// # Safety
/// `index` must hold `dim` entries, `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_grid_average(
    grid: *const SlGrid,
    level: u32,
    index: *const u32,
    p0: f64,
    out_value: *mut f64,
) -> SlStatus {
    guard(|| {
        let g = &get(grid, "grid")?.0;
        let dst = out(out_value, "out_value")?;
        let idx = std::slice::from_raw_parts(get(index, "index")?, g.dim());
        *dst = grid::average(g, &cube(g.dim(), level, idx)?, p0)?;
        Ok(())
    })
}

/// Dyadic `[w]_{A_p}` over cubes of level at most `maxlevel`.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_ap_constant(
    w: *const SlGrid,
    p: f64,
    maxlevel: u32,
    out_value: *mut f64,
) -> SlStatus {
    guard(|| {
        let dst = out(out_value, "out_value")?;
        *dst = weights::ap_constant(&get(w, "w")?.0, p, maxlevel)?.value;
        Ok(())
    })
}

/// Dyadic `[w]_{RH_q}`; pass `INFINITY` for `q = ∞`.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_rh_constant(
    w: *const SlGrid,
    q: f64,
    maxlevel: u32,
    out_value: *mut f64,
) -> SlStatus {
    guard(|| {
        let dst = out(out_value, "out_value")?;
        *dst = weights::rh_constant(&get(w, "w")?.0, q, maxlevel)?.value;
        Ok(())
    })
}

/// `‖f‖_{L^{q,∞}}`.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_weak_norm(f: *const SlGrid, q: f64, out_value: *mut f64) -> SlStatus {
    guard(|| {
        let dst = out(out_value, "out_value")?;
        *dst = grid::weak_norm(&get(f, "f")?.0, q)?;
        Ok(())
    })
}

/// `f*(t)`.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_rearrangement(
    f: *const SlGrid,
    t: f64,
    out_value: *mut f64,
) -> SlStatus {
    guard(|| {
        let dst = out(out_value, "out_value")?;
        *dst = grid::rearrangement(&get(f, "f")?.0, t)?;
        Ok(())
    })
}

/// Lerner decomposition of `f` on the cube `(level, index[0..dim])`.
///
/// # Safety
/// `index` must hold `dim` entries, `out_dec` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_lerner_decompose(
    f: *const SlGrid,
    level: u32,
    index: *const u32,
    out_dec: *mut *mut SlLerner,
) -> SlStatus {
    guard(|| {
        let g = &get(f, "f")?.0;
        let dst = out(out_dec, "out_dec")?;
        let idx = std::slice::from_raw_parts(get(index, "index")?, g.dim());
        let dec = oscillation::lerner_decompose(g, &cube(g.dim(), level, idx)?)?;
        *dst = Box::into_raw(Box::new(SlLerner(dec)));
        Ok(())
    })
}

/// Releases a decomposition; NULL is ignored.
///
/// # Safety
/// `dec` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_lerner_free(dec: *mut SlLerner) {
    if !dec.is_null() {
        drop(Box::from_raw(dec));
    }
}

/// Number of cubes in the family, 0 for NULL.
///
/// # Safety
/// `dec` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sl_lerner_len(dec: *const SlLerner) -> usize {
    dec.as_ref().map_or(0, |d| d.0.family.len())
}

/// Median of `f` on the root cube.
///
/// # Safety
/// `out_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_lerner_median(dec: *const SlLerner, out_value: *mut f64) -> SlStatus {
    guard(|| {
        *out(out_value, "out_value")? = get(dec, "dec")?.0.median;
        Ok(())
    })
}

/// Cube `i` of the family: its level, `dim` indices and oscillation.
///
/// # Safety
/// `out_index` must hold the grid dimension's number of entries.
#[no_mangle]
pub unsafe extern "C" fn sl_lerner_cube(
    dec: *const SlLerner,
    i: usize,
    out_level: *mut u32,
    out_index: *mut u32,
    out_omega: *mut f64,
) -> SlStatus {
    guard(|| {
        let d = &get(dec, "dec")?.0;
        let cubes = d.family.cubes();
        let q = cubes
            .get(i)
            .ok_or_else(|| Error::Dimension(format!("cube {i} of a family of {}", cubes.len())))?;
        *out(out_level, "out_level")? = q.level();
        if out_index.is_null() {
            return Err(Fail::Null("out_index"));
        }
        ptr::copy_nonoverlapping(q.index().as_ptr(), out_index, q.dim());
        *out(out_omega, "out_omega")? = d.omegas[i];
        Ok(())
    })
}

/// Checks `|f - m| <= 2 Σ ω χ_Q` pointwise with relative tolerance `tol`;
/// a violation returns `SL_CHECK_FAILED`.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn sl_lerner_verify(
    dec: *const SlLerner,
    f: *const SlGrid,
    tol: f64,
) -> SlStatus {
    guard(|| {
        let d = &get(dec, "dec")?.0;
        if d.verify(&get(f, "f")?.0, tol)? {
            Ok(())
        } else {
            let (excess, cell) = d.excess(&get(f, "f")?.0)?;
            Err(Error::CheckFailed(format!(
                "|f - m| exceeds the bound by {excess} at cell {cell}"
            ))
            .into())
        }
    })
}

/// Periodic Hilbert transform of a 1D grid.
///
/// # Safety
/// `out_grid` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_hilbert_transform(
    f: *const SlGrid,
    out_grid: *mut *mut SlGrid,
) -> SlStatus {
    guard(|| {
        let dst = out(out_grid, "out_grid")?;
        let h = kernels::hilbert_transform(&get(f, "f")?.0)?;
        *dst = Box::into_raw(Box::new(SlGrid(h)));
        Ok(())
    })
}

/// Fitted decay exponent `δ̂` of the exact Hilbert kernel at resolution `L`,
/// on rings `jmin..=jmax` of the cube `(cube_level, 0)`. `out_delta0` may be NULL.
///
/// # Safety
/// `out_delta_hat` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_check_h2_hilbert(
    resolution: u32,
    p0: f64,
    cube_level: u32,
    jmin: u32,
    jmax: u32,
    out_delta_hat: *mut f64,
    out_delta0: *mut f64,
) -> SlStatus {
    guard(|| {
        let dst = out(out_delta_hat, "out_delta_hat")?;
        let k = KernelSample::hilbert_exact(resolution);
        let q = DyadicCube::new(1, cube_level, &[0])?;
        let rep = kernels::check_h2(&k, p0, &q, jmin, jmax, PairSampling::default())?;
        let d = rep
            .delta_hat
            .ok_or_else(|| Error::Domain("degenerate kernel: some ring vanishes".into()))?;
        *dst = d;
        if let Some(d0) = out_delta0.as_mut() {
            *d0 = rep.delta0.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// `β = max(1, max_i (p_i/p0)'/p)` for exponents `p[0..m]`.
///
/// # Safety
/// `p` must hold `m` doubles.
#[no_mangle]
pub unsafe extern "C" fn sl_beta_exponent(
    p: *const f64,
    m: usize,
    p0: f64,
    out_value: *mut f64,
) -> SlStatus {
    guard(|| {
        let dst = out(out_value, "out_value")?;
        *dst = certify::beta_exponent(slice(p, m, "p")?, p0)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_status() {
        let st = guard(|| panic!("boom"));
        assert_eq!(st, SlStatus::SlPanic);
        let msg = unsafe { CStr::from_ptr(sl_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }

    #[test]
    fn codes_are_stable() {
        assert_eq!(SlStatus::SlCheckFailed as i32, 6);
        assert_eq!(
            status_of(&Error::Parse {
                line: 1,
                column: 1,
                message: String::new()
            }),
            SlStatus::SlParse
        );
        assert_eq!(
            status_of(&Error::CheckFailed(String::new())),
            SlStatus::SlCheckFailed
        );
    }
}
