//! C ABI over the core grid, Moran embedding, interpolation and metric
//! routines.
//!
//! Conventions: every function returns an [`SxlStatus`]; out-parameters
//! receive results only on `Ok`. Grids and stacks are opaque handles that
//! must be released with the matching `_free` function. On failure a
//! thread-local message is stored and can be retrieved with
//! `sxl_last_error_message`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sxl_core::grid::{Grid, GridStack};
use sxl_core::interp::{interpolate_grid, BaselineMethod};
use sxl_core::metrics::{mmd2, rmse, Bandwidth, MmdConfig};
use sxl_core::moran::{local_moran, multires_moran, MoranConfig};
use sxl_core::{grdf, grid::make_neighborhood, SxlError};

/// Status codes returned by every FFI call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum SxlStatus {
    Ok = 0,
    /// A precondition on the inputs was violated (bad argument, bad file
    /// format, null pointer).
    InvalidArgument = 1,
    /// I/O or numerical failure at runtime.
    RuntimeError = 2,
    /// A panic crossed the FFI boundary; the handle state is unchanged.
    InternalError = 3,
}

/// Opaque single-channel grid handle.
pub struct SxlGrid(Grid);

/// Opaque multi-channel grid stack handle.
pub struct SxlGridStack(GridStack);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &SxlError) -> SxlStatus {
    match e {
        SxlError::InvalidArgument(_) | SxlError::Format { .. } => SxlStatus::InvalidArgument,
        SxlError::Io(_) | SxlError::Numerical(_) => SxlStatus::RuntimeError,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guarded(f: impl FnOnce() -> Result<(), (SxlStatus, String)>) -> SxlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SxlStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".to_string());
            SxlStatus::InternalError
        }
    }
}

fn err_of(e: SxlError) -> (SxlStatus, String) {
    (status_of(&e), e.to_string())
}

fn invalid(msg: &str) -> (SxlStatus, String) {
    (SxlStatus::InvalidArgument, msg.to_string())
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, (SxlStatus, String)> {
    if ptr.is_null() {
        return Err(invalid("path is null"));
    }
    let s = unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

/// Returns the message of the most recent error on this thread, or null.
/// The pointer is valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sxl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(ptr::null(), |c| c.as_ptr())
    })
}

/// Creates a rows x cols grid from a row-major value buffer.
///
/// # Safety
/// `values` must point to `rows * cols` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sxl_grid_create(
    rows: usize,
    cols: usize,
    values: *const f64,
    out: *mut *mut SxlGrid,
) -> SxlStatus {
    guarded(|| {
        if values.is_null() || out.is_null() {
            return Err(invalid("null pointer argument"));
        }
        let data = unsafe { std::slice::from_raw_parts(values, rows * cols) }.to_vec();
        let grid = Grid::new(rows, cols, data).map_err(err_of)?;
        unsafe { *out = Box::into_raw(Box::new(SxlGrid(grid))) };
        Ok(())
    })
}

/// Releases a grid handle. Null is a no-op.
///
/// # Safety
/// `grid` must be a pointer returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn sxl_grid_free(grid: *mut SxlGrid) {
    if !grid.is_null() {
        drop(unsafe { Box::from_raw(grid) });
    }
}

/// # Safety
/// `stack` must be a pointer returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn sxl_grid_stack_free(stack: *mut SxlGridStack) {
    if !stack.is_null() {
        drop(unsafe { Box::from_raw(stack) });
    }
}

/// Writes grid dimensions to `rows`/`cols`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sxl_grid_shape(
    grid: *const SxlGrid,
    rows: *mut usize,
    cols: *mut usize,
) -> SxlStatus {
    guarded(|| {
        if grid.is_null() || rows.is_null() || cols.is_null() {
            return Err(invalid("null pointer argument"));
        }
        let g = unsafe { &(*grid).0 };
        unsafe {
            *rows = g.rows();
            *cols = g.cols();
        }
        Ok(())
    })
}

/// Copies the row-major grid values into `buffer` (length `len`).
///
/// # Safety
/// `buffer` must point to at least `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sxl_grid_values(
    grid: *const SxlGrid,
    buffer: *mut f64,
    len: usize,
) -> SxlStatus {
    guarded(|| {
        if grid.is_null() || buffer.is_null() {
            return Err(invalid("null pointer argument"));
        }
        let g = unsafe { &(*grid).0 };
        if len != g.len() {
            return Err(invalid("buffer length does not match grid size"));
        }
        unsafe { std::slice::from_raw_parts_mut(buffer, len) }.copy_from_slice(g.values());
        Ok(())
    })
}

/// Reads a single-channel GRDF file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sxl_grid_read(path: *const c_char, out: *mut *mut SxlGrid) -> SxlStatus {
    guarded(|| {
        if out.is_null() {
            return Err(invalid("null pointer argument"));
        }
        let path = unsafe { path_arg(path) }?;
        let stack = grdf::read_grid(&path).map_err(err_of)?;
        if stack.n_channels() != 1 {
            return Err(invalid("expected a single-channel grid file"));
        }
        let grid = stack.channels()[0].clone();
        unsafe { *out = Box::into_raw(Box::new(SxlGrid(grid))) };
        Ok(())
    })
}

/// Writes a grid as a single-channel GRDF file.
///
/// # Safety
/// `grid` must be a valid handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sxl_grid_write(grid: *const SxlGrid, path: *const c_char) -> SxlStatus {
    guarded(|| {
        if grid.is_null() {
            return Err(invalid("null pointer argument"));
        }
        let path = unsafe { path_arg(path) }?;
        let g = unsafe { &(*grid).0 };
        grdf::write_grid(&GridStack::single(g.clone()), &path).map_err(err_of)
    })
}

/// Computes the local Moran's I embedding of a grid.
///
/// # Safety
/// `grid` must be a valid handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sxl_local_moran(
    grid: *const SxlGrid,
    out: *mut *mut SxlGrid,
) -> SxlStatus {
    guarded(|| {
        if grid.is_null() || out.is_null() {
            return Err(invalid("null pointer argument"));
        }
        let g = unsafe { &(*grid).0 };
        let nb = make_neighborhood(g.rows(), g.cols()).map_err(err_of)?;
        let result = local_moran(g, &nb).map_err(err_of)?;
        unsafe { *out = Box::into_raw(Box::new(SxlGrid(result))) };
        Ok(())
    })
}

/// Computes the multi-resolution Moran stack with the given level count.
///
/// # Safety
/// `grid` must be a valid handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sxl_multires_moran(
    grid: *const SxlGrid,
    levels: usize,
    out: *mut *mut SxlGridStack,
) -> SxlStatus {
    guarded(|| {
        if grid.is_null() || out.is_null() {
            return Err(invalid("null pointer argument"));
        }
        let g = unsafe { &(*grid).0 };
        let cfg = MoranConfig {
            levels,
            pool_factor: 2,
        };
        let stack = multires_moran(g, &cfg).map_err(err_of)?;
        unsafe { *out = Box::into_raw(Box::new(SxlGridStack(stack))) };
        Ok(())
    })
}

/// Number of channels in a stack.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sxl_grid_stack_channels(
    stack: *const SxlGridStack,
    out: *mut usize,
) -> SxlStatus {
    guarded(|| {
        if stack.is_null() || out.is_null() {
            return Err(invalid("null pointer argument"));
        }
        unsafe { *out = (*stack).0.n_channels() };
        Ok(())
    })
}

/// Extracts one channel of a stack as a new grid handle.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sxl_grid_stack_channel(
    stack: *const SxlGridStack,
    index: usize,
    out: *mut *mut SxlGrid,
) -> SxlStatus {
    guarded(|| {
        if stack.is_null() || out.is_null() {
            return Err(invalid("null pointer argument"));
        }
        let s = unsafe { &(*stack).0 };
        if index >= s.n_channels() {
            return Err(invalid("channel index out of range"));
        }
        unsafe { *out = Box::into_raw(Box::new(SxlGrid(s.channel(index).clone()))) };
        Ok(())
    })
}

/// Doubles the grid resolution with the named baseline method
/// ("bicubic", "idw", "ok" or "uk").
///
/// # Safety
/// `grid` and `out` must be valid; `method` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sxl_interpolate(
    grid: *const SxlGrid,
    method: *const c_char,
    out: *mut *mut SxlGrid,
) -> SxlStatus {
    guarded(|| {
        if grid.is_null() || method.is_null() || out.is_null() {
            return Err(invalid("null pointer argument"));
        }
        let method = unsafe { CStr::from_ptr(method) }
            .to_str()
            .map_err(|_| invalid("method is not UTF-8"))?;
        let method = BaselineMethod::parse(method).map_err(err_of)?;
        let g = unsafe { &(*grid).0 };
        let result = interpolate_grid(g, method).map_err(err_of)?;
        unsafe { *out = Box::into_raw(Box::new(SxlGrid(result))) };
        Ok(())
    })
}

/// Root mean squared error between two equally-shaped grids.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sxl_rmse(
    truth: *const SxlGrid,
    pred: *const SxlGrid,
    out: *mut f64,
) -> SxlStatus {
    guarded(|| {
        if truth.is_null() || pred.is_null() || out.is_null() {
            return Err(invalid("null pointer argument"));
        }
        let value = rmse(unsafe { &(*truth).0 }, unsafe { &(*pred).0 }).map_err(err_of)?;
        unsafe { *out = value };
        Ok(())
    })
}

/// Squared MMD between two equally-sized samples of grid handles, with an
/// explicit RBF bandwidth (`bandwidth <= 0` selects the median heuristic).
///
/// # Safety
/// `x`/`y` must point to `n` valid grid handles each; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sxl_mmd2(
    x: *const *const SxlGrid,
    y: *const *const SxlGrid,
    n: usize,
    bandwidth: f64,
    out: *mut f64,
) -> SxlStatus {
    guarded(|| {
        if x.is_null() || y.is_null() || out.is_null() {
            return Err(invalid("null pointer argument"));
        }
        let collect = |p: *const *const SxlGrid| -> Result<Vec<Grid>, (SxlStatus, String)> {
            unsafe { std::slice::from_raw_parts(p, n) }
                .iter()
                .map(|&h| {
                    if h.is_null() {
                        Err(invalid("null grid handle in sample"))
                    } else {
                        Ok(unsafe { &(*h).0 }.clone())
                    }
                })
                .collect()
        };
        let xs = collect(x)?;
        let ys = collect(y)?;
        let cfg = MmdConfig {
            bandwidth: if bandwidth > 0.0 {
                Bandwidth::Fixed(bandwidth)
            } else {
                Bandwidth::MedianHeuristic
            },
        };
        let value = mmd2(&xs, &ys, &cfg).map_err(err_of)?;
        unsafe { *out = value };
        Ok(())
    })
}
