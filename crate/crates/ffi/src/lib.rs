//! C interface to `evstar`.
//!
//! Objects are opaque handles created by `*_new` (or returned through an out
//! pointer) and released by the matching `*_free`. Every call returns an
//! [`EvstarStatus`]; on failure the message is kept per thread and can be
//! read with [`evstar_last_error`]. Rotations are nine `double`s, row major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use evstar::averaging::{build_graph, re_orient, solve, Anchor, AttitudeSolution, Init, SolveOptions};
use evstar::bank::{collect_edges, plan_instances, Bank, EdgeSet, Estimator};
use evstar::config::Config;
use evstar::hough::{DirectionGrid, HoughAccumulator, HoughConfig};
use evstar::{angular_distance, CameraIntrinsics, Error, Event, Polarity, Rotation, SensorSize};

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvstarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    EmptyInput = 5,
    InsufficientCorrespondences = 6,
    Disconnected = 7,
    Numerical = 8,
    Panic = 9,
}

/// One event. `polarity` is 0 or 1.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct EvstarEvent {
    pub t_us: u64,
    pub x: f64,
    pub y: f64,
    pub polarity: u8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct EvstarIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Hough transform settings; see [`evstar_hough_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct EvstarHoughConfig {
    pub subdivision_level: u32,
    pub delta: u32,
    pub bin_size: f64,
    pub time_scale_ms: f64,
    pub eps_dir: f64,
}

/// Streaming Hough accumulator for one window.
pub struct EvstarAccumulator {
    inner: HoughAccumulator,
}

/// Multiresolution bank over a stream of known duration.
pub struct EvstarBank {
    inner: Option<Bank>,
    dt_us: u64,
}

/// Relative rotations between grid times.
pub struct EvstarEdges {
    inner: EdgeSet,
}

/// Absolute attitudes on the time grid.
pub struct EvstarSolution {
    inner: AttitudeSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EvstarStatus {
    match e {
        Error::Parse { .. } => EvstarStatus::Parse,
        Error::Io(_) => EvstarStatus::Io,
        Error::EmptyStream | Error::EmptyChunk { .. } => EvstarStatus::EmptyInput,
        Error::InsufficientCorrespondences { .. } => EvstarStatus::InsufficientCorrespondences,
        Error::Disconnected { .. } => EvstarStatus::Disconnected,
        Error::BehindCamera | Error::DegenerateLine(_) | Error::OptimizerAbort(_) => EvstarStatus::Numerical,
        Error::MissingGroundTruth(_) | Error::InvalidArgument(_) => EvstarStatus::InvalidArgument,
    }
}

struct Fail(EvstarStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(EvstarStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EvstarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EvstarStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            EvstarStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn write_rotation(out: *mut f64, r: &Rotation) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("rotation output"));
    }
    ptr::copy_nonoverlapping(r.to_row_major().as_ptr(), out, 9);
    Ok(())
}

unsafe fn read_rotation(p: *const f64, what: &str) -> Result<Rotation, Fail> {
    let s = slice(p, 9, what)?;
    let mut m = [0.0; 9];
    m.copy_from_slice(s);
    Ok(Rotation::from_row_major(&m))
}

fn to_event(e: &EvstarEvent) -> Result<Event, Fail> {
    let polarity = match e.polarity {
        0 => Polarity::Negative,
        1 => Polarity::Positive,
        p => return Err(Fail(EvstarStatus::InvalidArgument, format!("polarity {p} is not 0 or 1"))),
    };
    Ok(Event::new(e.t_us, e.x, e.y, polarity))
}

fn intrinsics(k: &EvstarIntrinsics) -> Result<CameraIntrinsics, Fail> {
    Ok(CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy)?)
}

fn hough_config(c: &EvstarHoughConfig) -> HoughConfig {
    HoughConfig {
        subdivision_level: c.subdivision_level,
        delta: c.delta,
        bin_size: c.bin_size,
        time_scale_ms: c.time_scale_ms,
        eps_dir: c.eps_dir,
    }
}

unsafe fn config_from_text(text: *const c_char) -> Result<Config, Fail> {
    if text.is_null() {
        return Ok(Config::default());
    }
    let s = CStr::from_ptr(text)
        .to_str()
        .map_err(|_| Fail(EvstarStatus::InvalidArgument, "configuration is not UTF-8".into()))?;
    Ok(Config::parse(s)?)
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn evstar_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn evstar_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn evstar_hough_config_default() -> EvstarHoughConfig {
    let c = HoughConfig::default();
    EvstarHoughConfig {
        subdivision_level: c.subdivision_level,
        delta: c.delta,
        bin_size: c.bin_size,
        time_scale_ms: c.time_scale_ms,
        eps_dir: c.eps_dir,
    }
}

/// Angle in radians between two rotations.
///
/// # Safety
/// `a` and `b` must each point to nine readable doubles.
#[no_mangle]
pub unsafe extern "C" fn evstar_angular_distance(a: *const f64, b: *const f64, out: *mut f64) -> EvstarStatus {
    guard(|| {
        let (ra, rb) = (read_rotation(a, "a")?, read_rotation(b, "b")?);
        *get_mut(out, "out")? = angular_distance(&ra, &rb);
        Ok(())
    })
}

/// Creates an accumulator for the window `[alpha_us, beta_us]`, recentred on
/// the middle of the sensor × window box.
///
/// # Safety
/// `config` and `k` must be valid pointers; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evstar_accumulator_new(
    config: *const EvstarHoughConfig,
    k: *const EvstarIntrinsics,
    width: u32,
    height: u32,
    alpha_us: u64,
    beta_us: u64,
    out: *mut *mut EvstarAccumulator,
) -> EvstarStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        *out = ptr::null_mut();
        let config = hough_config(get(config, "config")?);
        let k = intrinsics(get(k, "intrinsics")?)?;
        config.validate()?;
        let grid = Arc::new(DirectionGrid::build(config.subdivision_level));
        let sensor = SensorSize { width, height };
        let inner = HoughAccumulator::streaming(config, grid, k, sensor, alpha_us, beta_us)?;
        *out = Box::into_raw(Box::new(EvstarAccumulator { inner }));
        Ok(())
    })
}

/// Votes `n` time-ordered events.
///
/// # Safety
/// `acc` must come from [`evstar_accumulator_new`]; `events` must point to
/// `n` events.
#[no_mangle]
pub unsafe extern "C" fn evstar_accumulator_push(
    acc: *mut EvstarAccumulator,
    events: *const EvstarEvent,
    n: usize,
) -> EvstarStatus {
    guard(|| {
        let acc = get_mut(acc, "accumulator")?;
        let events: Vec<Event> = slice(events, n, "events")?
            .iter()
            .map(to_event)
            .collect::<Result<_, _>>()?;
        if events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Fail(EvstarStatus::InvalidArgument, "events must be sorted by time".into()));
        }
        acc.inner.process_events(&events)?;
        Ok(())
    })
}

/// Current correspondence matrix `C`, row major.
///
/// # Safety
/// `acc` must be a live accumulator; `out` must hold nine doubles.
#[no_mangle]
pub unsafe extern "C" fn evstar_accumulator_correspondence(acc: *const EvstarAccumulator, out: *mut f64) -> EvstarStatus {
    guard(|| {
        let c = get(acc, "accumulator")?.inner.correspondence_matrix();
        let s = std::slice::from_raw_parts_mut(get_mut(out, "out")?, 9);
        for i in 0..3 {
            for j in 0..3 {
                s[3 * i + j] = c[(i, j)];
            }
        }
        Ok(())
    })
}

/// Relative rotation `R_alpha·R_betaᵀ` from the votes so far.
///
/// # Safety
/// `acc` must be a live accumulator; `rotation` must hold nine doubles;
/// `n_correspondences` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn evstar_accumulator_finalize(
    acc: *const EvstarAccumulator,
    rotation: *mut f64,
    n_correspondences: *mut usize,
) -> EvstarStatus {
    guard(|| {
        let r = get(acc, "accumulator")?.inner.finalize()?;
        write_rotation(rotation, &r.rotation)?;
        if let Some(n) = n_correspondences.as_mut() {
            *n = r.n_correspondences;
        }
        Ok(())
    })
}

/// # Safety
/// `acc` must come from [`evstar_accumulator_new`] or be NULL, and must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn evstar_accumulator_free(acc: *mut EvstarAccumulator) {
    if !acc.is_null() {
        drop(Box::from_raw(acc));
    }
}

/// Creates a bank planned over `[0, duration_us]`. `config_text` holds
/// `key=value` lines, or is NULL for the defaults.
///
/// # Safety
/// `config_text` must be NULL or a NUL-terminated string; `k` valid; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn evstar_bank_new(
    config_text: *const c_char,
    k: *const EvstarIntrinsics,
    width: u32,
    height: u32,
    duration_us: u64,
    out: *mut *mut EvstarBank,
) -> EvstarStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        *out = ptr::null_mut();
        let config = config_from_text(config_text)?;
        let k = intrinsics(get(k, "intrinsics")?)?;
        let bank_config = config.bank()?;
        let plan = plan_instances(duration_us, &bank_config)?;
        let sensor = SensorSize { width, height };
        let bank = Bank::new(plan, &bank_config, Estimator::Hough, k, sensor)?;
        *out = Box::into_raw(Box::new(EvstarBank {
            inner: Some(bank),
            dt_us: bank_config.dt_us,
        }));
        Ok(())
    })
}

/// Dispatches `n` events, which must continue the stream in time order.
///
/// # Safety
/// `bank` must be a live bank; `events` must point to `n` events.
#[no_mangle]
pub unsafe extern "C" fn evstar_bank_push(bank: *mut EvstarBank, events: *const EvstarEvent, n: usize) -> EvstarStatus {
    guard(|| {
        let bank = get_mut(bank, "bank")?
            .inner
            .as_mut()
            .ok_or_else(|| Fail(EvstarStatus::InvalidArgument, "bank already finished".into()))?;
        for e in slice(events, n, "events")? {
            bank.push(&to_event(e)?)?;
        }
        Ok(())
    })
}

/// Closes every window and returns the successful relative rotations. The
/// bank accepts no more events afterwards but must still be freed.
///
/// # Safety
/// `bank` must be a live bank; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn evstar_bank_finish(bank: *mut EvstarBank, out: *mut *mut EvstarEdges) -> EvstarStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        *out = ptr::null_mut();
        let bank = get_mut(bank, "bank")?;
        let inner = bank
            .inner
            .take()
            .ok_or_else(|| Fail(EvstarStatus::InvalidArgument, "bank already finished".into()))?;
        let output = inner.finish()?;
        let edges = collect_edges(&output.results, bank.dt_us)?;
        *out = Box::into_raw(Box::new(EvstarEdges { inner: edges }));
        Ok(())
    })
}

/// # Safety
/// `bank` must come from [`evstar_bank_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn evstar_bank_free(bank: *mut EvstarBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Creates an empty edge set, to be filled with [`evstar_edges_add`].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evstar_edges_new(out: *mut *mut EvstarEdges) -> EvstarStatus {
    guard(|| {
        *get_mut(out, "out")? = Box::into_raw(Box::new(EvstarEdges {
            inner: EdgeSet::default(),
        }));
        Ok(())
    })
}

/// Appends the relative rotation `R_alpha·R_betaᵀ`.
///
/// # Safety
/// `edges` must be live; `rotation` must point to nine doubles.
#[no_mangle]
pub unsafe extern "C" fn evstar_edges_add(
    edges: *mut EvstarEdges,
    alpha_us: u64,
    beta_us: u64,
    rotation: *const f64,
) -> EvstarStatus {
    guard(|| {
        let edges = get_mut(edges, "edges")?;
        if beta_us <= alpha_us {
            return Err(Fail(EvstarStatus::InvalidArgument, "beta must follow alpha".into()));
        }
        let rotation = read_rotation(rotation, "rotation")?;
        edges.inner.edges.push(evstar::bank::Edge {
            alpha: alpha_us,
            beta: beta_us,
            rotation,
        });
        Ok(())
    })
}

/// Number of edges; 0 for NULL.
///
/// # Safety
/// `edges` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn evstar_edges_len(edges: *const EvstarEdges) -> usize {
    edges.as_ref().map_or(0, |e| e.inner.len())
}

/// # Safety
/// `edges` must be live; the outputs writable (`rotation`: nine doubles).
#[no_mangle]
pub unsafe extern "C" fn evstar_edges_get(
    edges: *const EvstarEdges,
    i: usize,
    alpha_us: *mut u64,
    beta_us: *mut u64,
    rotation: *mut f64,
) -> EvstarStatus {
    guard(|| {
        let edges = get(edges, "edges")?;
        let e = edges
            .inner
            .edges
            .get(i)
            .ok_or_else(|| Fail(EvstarStatus::InvalidArgument, format!("edge {i} out of range")))?;
        *get_mut(alpha_us, "alpha_us")? = e.alpha;
        *get_mut(beta_us, "beta_us")? = e.beta;
        write_rotation(rotation, &e.rotation)
    })
}

/// # Safety
/// `edges` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn evstar_edges_free(edges: *mut EvstarEdges) {
    if !edges.is_null() {
        drop(Box::from_raw(edges));
    }
}

/// Fuses `edges` with `n_anchors` absolute attitudes (`anchor_times_us[i]`,
/// rotation at `anchor_rotations + 9·i`) and re-orients the result.
/// `max_iters == 0` selects the default iteration cap.
///
/// # Safety
/// `edges` must be live; the anchor arrays must hold `n_anchors` entries;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn evstar_average(
    edges: *const EvstarEdges,
    anchor_times_us: *const u64,
    anchor_rotations: *const f64,
    n_anchors: usize,
    dt_us: u64,
    anchor_weight: f64,
    max_iters: usize,
    tol: f64,
    out: *mut *mut EvstarSolution,
) -> EvstarStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        *out = ptr::null_mut();
        let edges = get(edges, "edges")?;
        let times = slice(anchor_times_us, n_anchors, "anchor times")?;
        let rotations = slice(anchor_rotations, 9 * n_anchors, "anchor rotations")?;
        let anchors: Vec<Anchor> = times
            .iter()
            .zip(rotations.chunks_exact(9))
            .map(|(&t_us, r)| {
                let mut m = [0.0; 9];
                m.copy_from_slice(r);
                Anchor {
                    t_us,
                    rotation: Rotation::from_row_major(&m),
                }
            })
            .collect();
        let graph = build_graph(&edges.inner, &anchors, dt_us, anchor_weight)?;
        let defaults = SolveOptions::default();
        let opts = SolveOptions {
            max_iters: if max_iters == 0 { defaults.max_iters } else { max_iters },
            tol,
            init: Init::SpanningTree,
        };
        if opts.tol.is_nan() || opts.tol <= 0.0 {
            return Err(Fail(EvstarStatus::InvalidArgument, "tol must be positive".into()));
        }
        let solution = re_orient(solve(&graph, &opts)?);
        *out = Box::into_raw(Box::new(EvstarSolution { inner: solution }));
        Ok(())
    })
}

/// Number of solved attitudes; 0 for NULL.
///
/// # Safety
/// `solution` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn evstar_solution_len(solution: *const EvstarSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.inner.times.len())
}

/// Whether the solver met its tolerance; false for NULL.
///
/// # Safety
/// `solution` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn evstar_solution_converged(solution: *const EvstarSolution) -> bool {
    solution.as_ref().is_some_and(|s| s.inner.converged)
}

/// # Safety
/// `solution` must be live; outputs writable (`rotation`: nine doubles).
#[no_mangle]
pub unsafe extern "C" fn evstar_solution_get(
    solution: *const EvstarSolution,
    i: usize,
    t_us: *mut u64,
    rotation: *mut f64,
) -> EvstarStatus {
    guard(|| {
        let s = &get(solution, "solution")?.inner;
        let t = *s
            .times
            .get(i)
            .ok_or_else(|| Fail(EvstarStatus::InvalidArgument, format!("node {i} out of range")))?;
        *get_mut(t_us, "t_us")? = t;
        write_rotation(rotation, &s.attitudes[i])
    })
}

/// # Safety
/// `solution` must come from [`evstar_average`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn evstar_solution_free(solution: *mut EvstarSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_stable_codes() {
        assert_eq!(status_of(&Error::EmptyStream), EvstarStatus::EmptyInput);
        assert_eq!(
            status_of(&Error::Disconnected {
                gap_start_us: 0,
                gap_end_us: 1
            }),
            EvstarStatus::Disconnected
        );
        assert_eq!(status_of(&Error::DegenerateLine(0.0)), EvstarStatus::Numerical);
        assert_eq!(EvstarStatus::Panic as i32, 9);
    }

    #[test]
    fn panics_stop_at_the_boundary() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, EvstarStatus::Panic);
        let msg = unsafe { CStr::from_ptr(evstar_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "internal panic");
        assert_eq!(guard(|| Ok(())), EvstarStatus::Ok);
    }
}
