//! C ABI over the asmseq decoder, model files and metrics.
//!
//! Every fallible function returns an [`AsmseqStatus`]; on failure the
//! message is available from [`asmseq_last_error`] on the same thread.
//! Array arguments are row-major and must hold the stated number of
//! elements. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use asmseq::decoder::{DecodeError, Initial, Problem, ScoreTable, TransitionModel};
use asmseq::io::{self, IoError};
use asmseq::metrics;
use asmseq::ModelParams;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsmseqStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Infeasible = 5,
    Panic = 6,
}

/// A trained model loaded from a model file.
pub struct AsmseqModel {
    inner: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(AsmseqStatus, String);

impl From<DecodeError> for Failure {
    fn from(e: DecodeError) -> Self {
        let status = match e {
            DecodeError::NoFeasiblePath => AsmseqStatus::Infeasible,
            _ => AsmseqStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let status = match e {
            IoError::Io { .. } => AsmseqStatus::Io,
            _ => AsmseqStatus::Parse,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(AsmseqStatus::InvalidArgument, msg.into())
}

fn run(f: impl FnOnce() -> Result<(), Failure>) -> AsmseqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AsmseqStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AsmseqStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(AsmseqStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be null or point to `len` readable elements.
unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failure on the same thread.
#[no_mangle]
pub extern "C" fn asmseq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn asmseq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a model file. On success `*out` owns a handle to release with
/// [`asmseq_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn asmseq_model_load(path: *const c_char, out: *mut *mut AsmseqModel) -> AsmseqStatus {
    run(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not valid UTF-8"))?;
        let inner = io::read_model(Path::new(path))?;
        *out = Box::into_raw(Box::new(AsmseqModel { inner }));
        Ok(())
    })
}

/// Release a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`asmseq_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn asmseq_model_free(model: *mut AsmseqModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of states in the model vocabulary; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asmseq_model_num_states(model: *const AsmseqModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.vocabulary.len())
}

/// Transition weight of the model.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asmseq_model_w_seq(model: *const AsmseqModel, out: *mut f64) -> AsmseqStatus {
    run(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).inner.w_seq;
        Ok(())
    })
}

/// Index of the empty assembly, or -1 when the vocabulary lacks it.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn asmseq_model_empty_state(model: *const AsmseqModel) -> i64 {
    model
        .as_ref()
        .and_then(|m| m.inner.vocabulary.empty_state())
        .map_or(-1, |s| s as i64)
}

/// Copy the model's transition log-probabilities (`-inf` when unattested)
/// and allowed flags into `states * states` arrays indexed `from * states + to`.
/// Either output may be null.
///
/// # Safety
/// Non-null outputs must hold `states * states` elements, where `states`
/// equals [`asmseq_model_num_states`].
#[no_mangle]
pub unsafe extern "C" fn asmseq_model_transitions(
    model: *const AsmseqModel,
    states: usize,
    out_log_prob: *mut f64,
    out_allowed: *mut u8,
) -> AsmseqStatus {
    run(|| {
        non_null(model, "model")?;
        let tm = &(*model).inner.transitions;
        if states != tm.states() {
            return Err(invalid(format!("model has {} states, caller passed {states}", tm.states())));
        }
        for u in 0..states {
            for v in 0..states {
                if !out_log_prob.is_null() {
                    *out_log_prob.add(u * states + v) = tm.log_prob(u, v);
                }
                if !out_allowed.is_null() {
                    *out_allowed.add(u * states + v) = u8::from(tm.allowed(u, v));
                }
            }
        }
        Ok(())
    })
}

struct RawProblem {
    scores: ScoreTable,
    transitions: TransitionModel,
    initial: Initial,
}

/// # Safety
/// See [`asmseq_segmental_viterbi`].
unsafe fn raw_problem(
    scores: *const f64,
    frames: usize,
    states: usize,
    log_prob: *const f64,
    allowed: *const u8,
    initial_state: i64,
) -> Result<RawProblem, Failure> {
    if frames == 0 || states == 0 {
        return Err(invalid("frames and states must be positive"));
    }
    let cells = frames.checked_mul(states).ok_or_else(|| invalid("score table too large"))?;
    let pairs = states.checked_mul(states).ok_or_else(|| invalid("transition table too large"))?;
    let scores = input(scores, cells, "scores")?;
    let log_prob = input(log_prob, pairs, "log_prob")?.to_vec();
    let mask = if allowed.is_null() {
        vec![true; pairs]
    } else {
        input(allowed, pairs, "allowed")?.iter().map(|&a| a != 0).collect()
    };
    let rows: Vec<Vec<f64>> = scores.chunks(states).map(<[f64]>::to_vec).collect();
    let initial = match initial_state {
        -1 => Initial::Free,
        s if s >= 0 && (s as u64) < states as u64 => Initial::Forced(s as usize),
        s => return Err(invalid(format!("initial state {s} out of range"))),
    };
    Ok(RawProblem {
        scores: ScoreTable::from_rows(&rows)?,
        transitions: TransitionModel::from_parts(states, log_prob, mask)?,
        initial,
    })
}

/// Semi-Markov Viterbi over raw arrays.
///
/// `scores` is `frames x states`; `log_prob` and `allowed` are
/// `states x states` (`allowed` may be null for "all allowed"; `-inf` in
/// `log_prob` forbids a transition). `initial_state` is -1 for a free
/// start. `max_duration` of 0 means unbounded. Writes one state per frame
/// to `out_labels` and the optimal score to `out_score`. Returns
/// `Infeasible` when no labeling has finite score.
///
/// # Safety
/// Every non-null pointer must reference the stated number of elements;
/// outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn asmseq_segmental_viterbi(
    scores: *const f64,
    frames: usize,
    states: usize,
    log_prob: *const f64,
    allowed: *const u8,
    w_seq: f64,
    initial_state: i64,
    max_duration: usize,
    out_labels: *mut u32,
    out_score: *mut f64,
) -> AsmseqStatus {
    run(|| {
        non_null(out_labels, "out_labels")?;
        non_null(out_score, "out_score")?;
        let raw = raw_problem(scores, frames, states, log_prob, allowed, initial_state)?;
        let problem = Problem::new(&raw.scores, &raw.transitions, w_seq).with_initial(raw.initial.clone());
        let r = if max_duration == 0 {
            problem.segmental()?
        } else {
            problem.segmental_bounded(max_duration)?
        };
        write_result(&r.frame_labels, r.total_score, out_labels, out_score);
        Ok(())
    })
}

/// Viterbi with fixed segment boundaries. `segment_ends` lists the
/// exclusive end frame of each of `n_segments` segments in increasing
/// order; the last must equal `frames`. Other arguments as in
/// [`asmseq_segmental_viterbi`].
///
/// # Safety
/// As for [`asmseq_segmental_viterbi`]; `segment_ends` must hold
/// `n_segments` elements.
#[no_mangle]
pub unsafe extern "C" fn asmseq_viterbi_known_boundaries(
    scores: *const f64,
    frames: usize,
    states: usize,
    log_prob: *const f64,
    allowed: *const u8,
    w_seq: f64,
    initial_state: i64,
    segment_ends: *const usize,
    n_segments: usize,
    out_labels: *mut u32,
    out_score: *mut f64,
) -> AsmseqStatus {
    run(|| {
        non_null(out_labels, "out_labels")?;
        non_null(out_score, "out_score")?;
        let raw = raw_problem(scores, frames, states, log_prob, allowed, initial_state)?;
        let ends = input(segment_ends, n_segments, "segment_ends")?;
        let mut spans = Vec::with_capacity(ends.len());
        let mut begin = 0;
        for &end in ends {
            spans.push((begin, end));
            begin = end;
        }
        let problem = Problem::new(&raw.scores, &raw.transitions, w_seq).with_initial(raw.initial.clone());
        let r = problem.known_boundaries(&spans)?;
        write_result(&r.frame_labels, r.total_score, out_labels, out_score);
        Ok(())
    })
}

unsafe fn write_result(labels: &[usize], score: f64, out_labels: *mut u32, out_score: *mut f64) {
    for (t, &s) in labels.iter().enumerate() {
        *out_labels.add(t) = s as u32;
    }
    *out_score = score;
}

/// Segment-level edit score of two label sequences (runs collapsed).
///
/// # Safety
/// `pred` and `truth` must hold `n_pred` and `n_truth` elements (either may
/// be null when its length is 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asmseq_edit_score(
    pred: *const i32,
    n_pred: usize,
    truth: *const i32,
    n_truth: usize,
    out: *mut f64,
) -> AsmseqStatus {
    run(|| {
        non_null(out, "out")?;
        let pred = input(pred, n_pred, "pred")?;
        let truth = input(truth, n_truth, "truth")?;
        *out = metrics::edit_score(pred, truth);
        Ok(())
    })
}

/// Fraction of the `n` frames where `pred` equals `truth`.
///
/// # Safety
/// `pred` and `truth` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asmseq_frame_accuracy(
    pred: *const i32,
    truth: *const i32,
    n: usize,
    out: *mut f64,
) -> AsmseqStatus {
    run(|| {
        non_null(out, "out")?;
        if n == 0 {
            return Err(invalid("frame accuracy of an empty sequence"));
        }
        let pred = input(pred, n, "pred")?;
        let truth = input(truth, n, "truth")?;
        *out = metrics::frame_accuracy(pred, truth).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    })
}
