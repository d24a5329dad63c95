//! C ABI over the `diracgraph` toolkit.
//!
//! Every fallible call returns a [`DgStatus`]; on failure the message can be
//! read with [`dg_last_error`] on the same thread. Handles are opaque and must
//! be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use diracgraph::dirac_op::{assemble_dirac, assemble_laplacian_kirchhoff};
use diracgraph::discretize::{HalflineTreatment, Mesh};
use diracgraph::graph::{parse_graph, MetricGraph};
use diracgraph::newton::NewtonOptions;
use diracgraph::nld::{lift_from_nls, solve_newton, virial_check, BoundState, NldProblem};
use diracgraph::nls::{default_guess, solve_newton_nls, NlsBoundState, NlsProblem};
use diracgraph::spectrum::{discrete_spectrum, SpectralWindow};
use diracgraph::Error;

/// Status codes; the nonzero ones equal the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgStatus {
    Ok = 0,
    Io = 1,
    Validation = 2,
    Parse = 3,
    Solver = 4,
    Invariant = 5,
    /// A required pointer was null or a string was not UTF-8.
    InvalidArgument = 6,
    /// The caller's buffer is too small; the required length was written.
    BufferTooSmall = 7,
    /// A panic was caught at the boundary.
    Internal = 8,
}

/// Operator selector for [`dg_spectrum`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgOperator {
    Dirac = 0,
    Laplacian = 1,
}

/// Newton controls; see [`dg_solver_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgSolverOptions {
    pub tol: f64,
    pub max_iter: u32,
    pub damping: bool,
}

pub struct DgGraph(MetricGraph);

pub struct DgNlsState {
    graph: MetricGraph,
    state: NlsBoundState,
}

pub struct DgNldState {
    graph: MetricGraph,
    state: BoundState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DgStatus {
    match e.exit_code() {
        1 => DgStatus::Io,
        2 => DgStatus::Validation,
        3 => DgStatus::Parse,
        4 => DgStatus::Solver,
        _ => DgStatus::Invariant,
    }
}

enum Fail {
    Lib(Error),
    Arg(&'static str),
    Buffer,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DgStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DgStatus::Ok,
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg.to_string());
            DgStatus::InvalidArgument
        }
        Ok(Err(Fail::Buffer)) => {
            set_error("buffer too small".into());
            DgStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic".into());
            DgStatus::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Arg(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Arg(what))
}

impl DgSolverOptions {
    fn to_options(self) -> NewtonOptions {
        NewtonOptions {
            tol: self.tol,
            max_iter: self.max_iter as usize,
            damping: self.damping,
        }
    }
}

/// Copies `text` plus a NUL into `buf` when it fits; always stores the
/// required size (including the NUL) in `len`.
unsafe fn write_text(text: &str, buf: *mut c_char, cap: usize, len: *mut usize) -> Result<(), Fail> {
    let need = text.len() + 1;
    *out_ptr(len, "len is null")? = need;
    if buf.is_null() || cap < need {
        return Err(Fail::Buffer);
    }
    ptr::copy_nonoverlapping(text.as_ptr().cast::<c_char>(), buf, text.len());
    *buf.add(text.len()) = 0;
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn dg_solver_options_default() -> DgSolverOptions {
    let d = NewtonOptions::default();
    DgSolverOptions {
        tol: d.tol,
        max_iter: d.max_iter as u32,
        damping: d.damping,
    }
}

/// Parses graph text (the `.graph` format) into a new handle.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dg_graph_parse(text: *const c_char, out: *mut *mut DgGraph) -> DgStatus {
    guard(|| {
        let out = out_ptr(out, "out is null")?;
        *out = ptr::null_mut();
        if text.is_null() {
            return Err(Fail::Arg("text is null"));
        }
        let text = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| Fail::Arg("text is not UTF-8"))?;
        *out = Box::into_raw(Box::new(DgGraph(parse_graph(text)?)));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from [`dg_graph_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dg_graph_free(graph: *mut DgGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// # Safety
/// `graph` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dg_graph_vertex_count(graph: *const DgGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.vertex_count())
}

/// # Safety
/// `graph` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dg_graph_bounded_edge_count(graph: *const DgGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.bounded_edges().len())
}

/// # Safety
/// `graph` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dg_graph_halfline_count(graph: *const DgGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.halflines().len())
}

/// Up to `count` eigenvalues in `[lo, hi]` nearest the window centre, in
/// increasing order. Half-lines are truncated at `l_inf`. `values` needs room
/// for `count` entries; the number found is stored in `found`.
///
/// # Safety
/// `graph` must be a live handle, `values` must hold `count` doubles and
/// `found` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dg_spectrum(
    graph: *const DgGraph,
    op: DgOperator,
    m: f64,
    c: f64,
    h: f64,
    l_inf: f64,
    lo: f64,
    hi: f64,
    count: usize,
    values: *mut f64,
    found: *mut usize,
) -> DgStatus {
    guard(|| {
        let g = &deref(graph, "graph is null")?.0;
        let found = out_ptr(found, "found is null")?;
        *found = 0;
        if values.is_null() {
            return Err(Fail::Arg("values is null"));
        }
        let mesh = Mesh::new(g, h, HalflineTreatment::Truncate { length: l_inf }, &[])?;
        let op = match op {
            DgOperator::Dirac => assemble_dirac(&mesh, m, c)?,
            DgOperator::Laplacian => assemble_laplacian_kirchhoff(&mesh)?,
        };
        let ev = discrete_spectrum(&op, &SpectralWindow::new(lo, hi, count)?, false)?.eigenvalues;
        ptr::copy_nonoverlapping(ev.as_ptr(), values, ev.len());
        *found = ev.len();
        Ok(())
    })
}

/// Ground state of the NLS problem on `graph` at frequency `lambda < 0`.
/// A NaN `alpha` selects the default `2m`.
///
/// # Safety
/// `graph` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dg_nls_solve(
    graph: *const DgGraph,
    m: f64,
    lambda: f64,
    p: f64,
    alpha: f64,
    h: f64,
    opts: DgSolverOptions,
    out: *mut *mut DgNlsState,
) -> DgStatus {
    guard(|| {
        let out = out_ptr(out, "out is null")?;
        *out = ptr::null_mut();
        let g = &deref(graph, "graph is null")?.0;
        let alpha = (!alpha.is_nan()).then_some(alpha);
        let prob = NlsProblem::new(g, m, lambda, p, alpha, h)?;
        let state = solve_newton_nls(&prob, &default_guess(&prob)?, &opts.to_options())?;
        *out = Box::into_raw(Box::new(DgNlsState {
            graph: g.clone(),
            state,
        }));
        Ok(())
    })
}

/// # Safety
/// `state` must come from [`dg_nls_solve`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dg_nls_free(state: *mut DgNlsState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Residual, functional value and core mass, in that order.
///
/// # Safety
/// `state` must be a live handle; each output may be null.
#[no_mangle]
pub unsafe extern "C" fn dg_nls_summary(
    state: *const DgNlsState,
    residual: *mut f64,
    functional: *mut f64,
    core_mass: *mut f64,
) -> DgStatus {
    guard(|| {
        let s = &deref(state, "state is null")?.state;
        for (p, v) in [
            (residual, s.residual_norm),
            (functional, s.j_value),
            (core_mass, s.core_mass),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Node values as CSV, written with the size protocol of the `_csv`
/// functions: `len` receives the needed size; the text is copied only if
/// `cap` suffices.
///
/// # Safety
/// `state` must be a live handle, `buf` must hold `cap` bytes (or be null)
/// and `len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dg_nls_csv(
    state: *const DgNlsState,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> DgStatus {
    guard(|| {
        let s = deref(state, "state is null")?;
        write_text(&s.state.u.to_csv(&s.graph), buf, cap, len)
    })
}

/// NLD bound state at frequency `omega` inside the gap, started from the
/// lifted NLS profile at `lambda = 2m(omega − mc²)`.
///
/// # Safety
/// `graph` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn dg_nld_solve(
    graph: *const DgGraph,
    m: f64,
    c: f64,
    omega: f64,
    p: f64,
    h: f64,
    opts: DgSolverOptions,
    out: *mut *mut DgNldState,
) -> DgStatus {
    guard(|| {
        let out = out_ptr(out, "out is null")?;
        *out = ptr::null_mut();
        let g = &deref(graph, "graph is null")?.0;
        let opts = opts.to_options();
        let prob = NldProblem::new(g, m, c, omega, p, h)?;
        let nls = NlsProblem::new(g, m, 2.0 * m * (omega - m * c * c), p, None, h)?;
        let u = solve_newton_nls(&nls, &default_guess(&nls)?, &opts)?.u;
        let state = solve_newton(&prob, &lift_from_nls(&u, &prob)?, &opts)?;
        *out = Box::into_raw(Box::new(DgNldState {
            graph: g.clone(),
            state,
        }));
        Ok(())
    })
}

/// # Safety
/// `state` must come from [`dg_nld_solve`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dg_nld_free(state: *mut DgNldState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Residual, action, core mass and relative virial error.
///
/// # Safety
/// `state` must be a live handle; each output may be null.
#[no_mangle]
pub unsafe extern "C" fn dg_nld_summary(
    state: *const DgNldState,
    residual: *mut f64,
    action: *mut f64,
    core_mass: *mut f64,
    virial: *mut f64,
) -> DgStatus {
    guard(|| {
        let s = &deref(state, "state is null")?.state;
        let vals = [
            (residual, s.residual_norm),
            (action, s.action),
            (core_mass, s.core_mass),
            (virial, virial_check(s)),
        ];
        for (p, v) in vals {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Spinor values as CSV; same size protocol as [`dg_nls_csv`].
///
/// # Safety
/// As for [`dg_nls_csv`].
#[no_mangle]
pub unsafe extern "C" fn dg_nld_csv(
    state: *const DgNldState,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> DgStatus {
    guard(|| {
        let s = deref(state, "state is null")?;
        write_text(&s.state.psi.to_csv(&s.graph), buf, cap, len)
    })
}
