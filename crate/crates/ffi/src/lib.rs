//! C ABI over the `speakmatch` library.
//!
//! Conventions:
//! - Every fallible call returns an [`SmStatus`]; `SM_STATUS_OK` is zero.
//! - On failure, [`sm_last_error_message`] describes the error. The string
//!   belongs to the calling thread and lives until that thread's next call.
//! - Objects are opaque handles released with their `*_free` function.
//! - Strings are NUL-terminated UTF-8.
//! - Panics never cross the boundary; they surface as `SM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use speakmatch::io::{load_pins, load_segments, load_tracks, write_jsonl, AssignmentRecord};
use speakmatch::pipeline::{assign, AssignConfig};
use speakmatch::{
    corr_objective, cosine_distance, DiagonalPolicy, DistanceMatrix, EmbeddingVector, Error, FaceTrack, PinSet,
    SolverConfig, SpeechSegment, TimeInterval,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    PinConflict = 6,
    TooLarge = 7,
    Internal = 8,
    Panic = 9,
}

impl From<&Error> for SmStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => SmStatus::Io,
            Error::Parse { .. } => SmStatus::Parse,
            Error::Validation { .. } | Error::MissingGroundTruth(_) => SmStatus::Validation,
            Error::PinConflict { .. } => SmStatus::PinConflict,
            Error::TooLarge(_) => SmStatus::TooLarge,
            Error::CacheInconsistency { .. } => SmStatus::Internal,
            _ => SmStatus::InvalidArgument,
        }
    }
}

/// Solver and pipeline settings. Obtain defaults from [`sm_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SmConfig {
    pub partition_size: usize,
    pub max_epochs: usize,
    pub convergence_eps: f64,
    pub tie_eps: f64,
    pub seed: u64,
    pub restarts: usize,
    pub exclude_diagonal: bool,
    pub tau: f64,
    pub stage2: bool,
    pub min_overlap: f64,
    /// 0 uses every core.
    pub workers: usize,
}

impl From<&SmConfig> for AssignConfig {
    fn from(c: &SmConfig) -> Self {
        AssignConfig {
            solver: SolverConfig {
                partition_size: c.partition_size,
                max_epochs: c.max_epochs,
                convergence_eps: c.convergence_eps,
                tie_eps: c.tie_eps,
                seed: c.seed,
                diagonal_policy: policy(c.exclude_diagonal),
                restarts: c.restarts,
            },
            tau: c.tau,
            stage2: c.stage2,
            min_overlap: c.min_overlap,
            workers: c.workers,
        }
    }
}

/// One segment's decision, borrowed from an [`SmResult`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SmAssignment {
    pub segment_id: *const c_char,
    /// NULL when the segment is off-screen.
    pub track_id: *const c_char,
    /// Row correlation of the stage-1 choice.
    pub score: f64,
    pub offscreen: bool,
}

/// Segments, tracks and pins ready to solve.
pub struct SmProblem {
    segments: Vec<SpeechSegment>,
    tracks: Vec<FaceTrack>,
    pins: PinSet,
}

/// Output of [`sm_assign`].
pub struct SmResult {
    records: Vec<AssignmentRecord>,
    strings: Vec<(CString, Option<CString>)>,
    objectives: Vec<f64>,
    converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let clean = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

fn policy(exclude: bool) -> DiagonalPolicy {
    if exclude {
        DiagonalPolicy::Exclude
    } else {
        DiagonalPolicy::Include
    }
}

fn fail(status: SmStatus, message: impl AsRef<str>) -> SmStatus {
    set_last_error(message.as_ref());
    status
}

fn from_error(e: Error) -> SmStatus {
    fail(SmStatus::from(&e), e.to_string())
}

/// Runs `body`, converting panics to `SM_STATUS_PANIC`.
fn guard(body: impl FnOnce() -> SmStatus) -> SmStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(SmStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, SmStatus> {
    if p.is_null() {
        return Err(fail(SmStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SmStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], SmStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SmStatus::NullPointer, format!("{name} is NULL")));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// Optional id array: `ids[i]` when given, else `prefix{i}`.
unsafe fn ids_arg(ids: *const *const c_char, n: usize, prefix: &str) -> Result<Vec<String>, SmStatus> {
    if ids.is_null() {
        return Ok((0..n).map(|i| format!("{prefix}{i}")).collect());
    }
    slice::from_raw_parts(ids, n)
        .iter()
        .map(|&p| str_arg(p, "id").map(str::to_owned))
        .collect()
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

macro_rules! core {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return from_error(e),
        }
    };
}

/// Default settings: partitions of 500, 50 epochs, tau 0.1, stage 2 on.
#[no_mangle]
pub extern "C" fn sm_config_default() -> SmConfig {
    let c = AssignConfig::default();
    SmConfig {
        partition_size: c.solver.partition_size,
        max_epochs: c.solver.max_epochs,
        convergence_eps: c.solver.convergence_eps,
        tie_eps: c.solver.tie_eps,
        seed: c.solver.seed,
        restarts: c.solver.restarts,
        exclude_diagonal: c.solver.diagonal_policy == DiagonalPolicy::Exclude,
        tau: c.tau,
        stage2: c.stage2,
        min_overlap: c.min_overlap,
        workers: c.workers,
    }
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn sm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after success.
#[no_mangle]
pub extern "C" fn sm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a problem from `segments.jsonl`, `tracks.jsonl` and an optional
/// pins file (`pins_path` may be NULL).
///
/// # Safety
/// Path arguments must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_problem_from_files(
    segments_path: *const c_char,
    tracks_path: *const c_char,
    pins_path: *const c_char,
    out: *mut *mut SmProblem,
) -> SmStatus {
    guard(|| {
        if out.is_null() {
            return fail(SmStatus::NullPointer, "out is NULL");
        }
        let seg = tri!(str_arg(segments_path, "segments_path"));
        let trk = tri!(str_arg(tracks_path, "tracks_path"));
        let pins = if pins_path.is_null() {
            PinSet::new()
        } else {
            core!(load_pins(Path::new(tri!(str_arg(pins_path, "pins_path")))))
        };
        let problem = SmProblem {
            segments: core!(load_segments(Path::new(seg))),
            tracks: core!(load_tracks(Path::new(trk))),
            pins,
        };
        *out = Box::into_raw(Box::new(problem));
        SmStatus::Ok
    })
}

/// Builds a problem from raw arrays. Embeddings are row-major
/// (`n_segments x audio_dim`, `n_tracks x visual_dim`). Id arrays may be
/// NULL, in which case ids are `s<i>` and `t<j>`.
///
/// # Safety
/// Every non-NULL pointer must reference at least the stated number of
/// elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_problem_new(
    n_segments: usize,
    segment_ids: *const *const c_char,
    segment_starts: *const f64,
    segment_ends: *const f64,
    segment_embeddings: *const f64,
    audio_dim: usize,
    n_tracks: usize,
    track_ids: *const *const c_char,
    track_starts: *const f64,
    track_ends: *const f64,
    track_embeddings: *const f64,
    visual_dim: usize,
    out: *mut *mut SmProblem,
) -> SmStatus {
    guard(|| {
        if out.is_null() {
            return fail(SmStatus::NullPointer, "out is NULL");
        }
        if audio_dim == 0 || visual_dim == 0 {
            return fail(SmStatus::InvalidArgument, "embedding dimensions must be positive");
        }
        let seg_ids = tri!(ids_arg(segment_ids, n_segments, "s"));
        let seg_starts = tri!(slice_arg(segment_starts, n_segments, "segment_starts"));
        let seg_ends = tri!(slice_arg(segment_ends, n_segments, "segment_ends"));
        let seg_emb = tri!(slice_arg(
            segment_embeddings,
            n_segments * audio_dim,
            "segment_embeddings"
        ));
        let trk_ids = tri!(ids_arg(track_ids, n_tracks, "t"));
        let trk_starts = tri!(slice_arg(track_starts, n_tracks, "track_starts"));
        let trk_ends = tri!(slice_arg(track_ends, n_tracks, "track_ends"));
        let trk_emb = tri!(slice_arg(track_embeddings, n_tracks * visual_dim, "track_embeddings"));

        let segments = core!(seg_ids
            .into_iter()
            .enumerate()
            .map(|(i, id)| {
                Ok(SpeechSegment {
                    interval: TimeInterval::new(seg_starts[i], seg_ends[i])?,
                    embedding: EmbeddingVector::new(seg_emb[i * audio_dim..(i + 1) * audio_dim].to_vec())?,
                    id,
                })
            })
            .collect::<speakmatch::Result<Vec<_>>>());
        let tracks = core!(trk_ids
            .into_iter()
            .enumerate()
            .map(|(j, id)| {
                Ok(FaceTrack {
                    interval: TimeInterval::new(trk_starts[j], trk_ends[j])?,
                    embedding: EmbeddingVector::new(trk_emb[j * visual_dim..(j + 1) * visual_dim].to_vec())?,
                    frame_count: None,
                    id,
                })
            })
            .collect::<speakmatch::Result<Vec<_>>>());
        *out = Box::into_raw(Box::new(SmProblem {
            segments,
            tracks,
            pins: PinSet::new(),
        }));
        SmStatus::Ok
    })
}

/// Freezes `segment_id` to `track_id` during optimization.
///
/// # Safety
/// `problem` must come from an `sm_problem_*` constructor; ids must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn sm_problem_pin(
    problem: *mut SmProblem,
    segment_id: *const c_char,
    track_id: *const c_char,
) -> SmStatus {
    guard(|| {
        let Some(problem) = problem.as_mut() else {
            return fail(SmStatus::NullPointer, "problem is NULL");
        };
        let seg = tri!(str_arg(segment_id, "segment_id"));
        let trk = tri!(str_arg(track_id, "track_id"));
        problem.pins.insert(seg.to_owned(), trk.to_owned());
        SmStatus::Ok
    })
}

/// Number of segments in the problem, 0 for NULL.
///
/// # Safety
/// `problem` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_problem_segment_count(problem: *const SmProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.segments.len())
}

/// # Safety
/// `problem` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_problem_free(problem: *mut SmProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Runs stage 1 and (if enabled) stage 2. `config` may be NULL for defaults.
///
/// # Safety
/// `problem` must be a live handle, `config` NULL or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sm_assign(
    problem: *const SmProblem,
    config: *const SmConfig,
    out: *mut *mut SmResult,
) -> SmStatus {
    guard(|| {
        let Some(problem) = problem.as_ref() else {
            return fail(SmStatus::NullPointer, "problem is NULL");
        };
        if out.is_null() {
            return fail(SmStatus::NullPointer, "out is NULL");
        }
        let config = config.as_ref().map_or_else(AssignConfig::default, AssignConfig::from);
        let run = core!(assign(&problem.segments, &problem.tracks, &problem.pins, &config));
        let strings = run
            .records
            .iter()
            .map(|r| {
                let seg = CString::new(r.segment_id.as_str()).unwrap_or_default();
                let trk = r.track_id.as_deref().map(|t| CString::new(t).unwrap_or_default());
                (seg, trk)
            })
            .collect();
        *out = Box::into_raw(Box::new(SmResult {
            converged: run.converged(),
            objectives: run.partitions.iter().map(|p| p.objective).collect(),
            records: run.records,
            strings,
        }));
        SmStatus::Ok
    })
}

/// Number of assigned segments, 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_result_len(result: *const SmResult) -> usize {
    result.as_ref().map_or(0, |r| r.records.len())
}

/// Copies entry `index` into `out`. The strings stay owned by `result`.
///
/// # Safety
/// `result` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sm_result_get(result: *const SmResult, index: usize, out: *mut SmAssignment) -> SmStatus {
    guard(|| {
        let Some(result) = result.as_ref() else {
            return fail(SmStatus::NullPointer, "result is NULL");
        };
        if out.is_null() {
            return fail(SmStatus::NullPointer, "out is NULL");
        }
        let (Some(rec), Some((seg, trk))) = (result.records.get(index), result.strings.get(index)) else {
            return fail(
                SmStatus::InvalidArgument,
                format!("index {index} out of range for {} entries", result.records.len()),
            );
        };
        *out = SmAssignment {
            segment_id: seg.as_ptr(),
            track_id: trk.as_ref().map_or(ptr::null(), |t| t.as_ptr()),
            score: rec.score,
            offscreen: rec.offscreen,
        };
        SmStatus::Ok
    })
}

/// Whether every partition converged before `max_epochs`.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_result_converged(result: *const SmResult) -> bool {
    result.as_ref().is_some_and(|r| r.converged)
}

/// Mean of the partition objectives; NaN for NULL or an empty result.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_result_mean_objective(result: *const SmResult) -> f64 {
    match result.as_ref() {
        Some(r) if !r.objectives.is_empty() => r.objectives.iter().sum::<f64>() / r.objectives.len() as f64,
        _ => f64::NAN,
    }
}

/// Writes the result in the `assignments.jsonl` format.
///
/// # Safety
/// `result` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sm_result_write_jsonl(result: *const SmResult, path: *const c_char) -> SmStatus {
    guard(|| {
        let Some(result) = result.as_ref() else {
            return fail(SmStatus::NullPointer, "result is NULL");
        };
        let path = tri!(str_arg(path, "path"));
        core!(write_jsonl(Path::new(path), &result.records));
        SmStatus::Ok
    })
}

/// # Safety
/// `result` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_result_free(result: *mut SmResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Cosine distance `1 - cos(a, b)` of two `dim`-vectors.
///
/// # Safety
/// `a` and `b` must hold `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_cosine_distance(a: *const f64, b: *const f64, dim: usize, out: *mut f64) -> SmStatus {
    guard(|| {
        if out.is_null() {
            return fail(SmStatus::NullPointer, "out is NULL");
        }
        let u = core!(EmbeddingVector::new(tri!(slice_arg(a, dim, "a")).to_vec()));
        let v = core!(EmbeddingVector::new(tri!(slice_arg(b, dim, "b")).to_vec()));
        *out = core!(cosine_distance(&u, &v));
        SmStatus::Ok
    })
}

/// Mean row-wise Pearson correlation of two `n x n` row-major distance
/// matrices (symmetric, zero diagonal, entries in [0, 2]).
///
/// # Safety
/// `sd` and `fd` must hold `n * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_corr_objective(
    sd: *const f64,
    fd: *const f64,
    n: usize,
    exclude_diagonal: bool,
    out: *mut f64,
) -> SmStatus {
    guard(|| {
        if out.is_null() {
            return fail(SmStatus::NullPointer, "out is NULL");
        }
        let order: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let sd = core!(DistanceMatrix::from_values(
            tri!(slice_arg(sd, n * n, "sd")).to_vec(),
            order.clone()
        ));
        let fd = core!(DistanceMatrix::from_values(
            tri!(slice_arg(fd, n * n, "fd")).to_vec(),
            order
        ));
        *out = core!(corr_objective(&sd, &fd, policy(exclude_diagonal)));
        SmStatus::Ok
    })
}
