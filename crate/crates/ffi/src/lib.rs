//! C interface to `lsf-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`,
//! `*_load` or `*_run` functions and released by the matching `*_free`.
//! Every fallible function returns an [`LsfStatus`]; on failure the message
//! is kept per thread and read with [`lsf_last_error`]. Panics never unwind
//! into the caller; they surface as [`LsfStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use lsf_core::dct::dct_matrix;
use lsf_core::format::{read_video, write_video};
use lsf_core::harness::{run_attack, AttackConfig, AttackRun};
use lsf_core::logo::synthesize_logo_set;
use lsf_core::metrics::{occluded_area, warping_error, Outcome};
use lsf_core::oracle::{generate_dataset, train_classifier, BlackBox, ToyClassifier};
use lsf_core::video::{Dims, VideoTensor};
use lsf_core::LsfError;

/// Result code of every fallible call. The nonzero values 1 to 4 match the
/// exit codes of the `lsf` command-line tool.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsfStatus {
    Ok = 0,
    Failed = 1,
    Invariant = 2,
    BudgetExhausted = 3,
    BadInput = 4,
    NullPointer = 5,
    Panic = 6,
}

/// Stage at which an attack ended.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsfOutcome {
    Success = 0,
    BudgetExhausted = 1,
    StageFailed = 2,
}

/// Summary of a finished attack. `success_stage` and `final_label` are
/// `-1` when not applicable.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct LsfAttackSummary {
    pub outcome: LsfOutcome,
    pub success_stage: i32,
    pub q1: u64,
    pub q2: u64,
    pub q3: u64,
    pub final_label: i64,
    pub final_score: f64,
}

/// Video tensor handle.
pub struct LsfVideo(VideoTensor);

/// Toy classifier handle.
pub struct LsfClassifier(ToyClassifier);

/// Attack result handle.
pub struct LsfAttack(AttackRun);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &LsfError) -> LsfStatus {
    match e.exit_code() {
        2 => LsfStatus::Invariant,
        3 => LsfStatus::BudgetExhausted,
        4 => LsfStatus::BadInput,
        _ => LsfStatus::Failed,
    }
}

enum Fail {
    Core(LsfError),
    Null(&'static str),
}

impl From<LsfError> for Fail {
    fn from(e: LsfError) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LsfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsfStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            LsfStatus::NullPointer
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LsfStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| LsfError::BadInput(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_slot<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lsf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `t*h*w*c` floats in `(t, h, w, c)` order into a new video.
/// Values must lie in `[0, 1]`.
///
/// # Safety
/// `data` must point to `len` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsf_video_new(
    t: usize,
    h: usize,
    w: usize,
    c: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut LsfVideo,
) -> LsfStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        if data.is_null() {
            return Err(Fail::Null("data"));
        }
        let values = std::slice::from_raw_parts(data, len).to_vec();
        *out = boxed(LsfVideo(VideoTensor::new(Dims::new(t, h, w, c), values)?));
        Ok(())
    })
}

/// Reads an LSFV1 file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsf_video_read(path: *const c_char, out: *mut *mut LsfVideo) -> LsfStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        *out = boxed(LsfVideo(read_video(path_arg(path, "path")?)?));
        Ok(())
    })
}

/// Writes an LSFV1 file.
///
/// # Safety
/// `video` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lsf_video_write(video: *const LsfVideo, path: *const c_char) -> LsfStatus {
    guard(|| {
        write_video(path_arg(path, "path")?, &handle(video, "video")?.0)?;
        Ok(())
    })
}

/// Writes `[t, h, w, c]` into `dims`.
///
/// # Safety
/// `video` must be a live handle; `dims` must point to 4 writable values.
#[no_mangle]
pub unsafe extern "C" fn lsf_video_dims(video: *const LsfVideo, dims: *mut usize) -> LsfStatus {
    guard(|| {
        let v = handle(video, "video")?;
        if dims.is_null() {
            return Err(Fail::Null("dims"));
        }
        let d = v.0.dims();
        std::slice::from_raw_parts_mut(dims, 4).copy_from_slice(&[d.t, d.h, d.w, d.c]);
        Ok(())
    })
}

/// Borrowed pointer to the samples and their count. Valid while the
/// handle lives.
///
/// # Safety
/// `video` must be a live handle; `data` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsf_video_data(video: *const LsfVideo, data: *mut *const f32, len: *mut usize) -> LsfStatus {
    guard(|| {
        let v = handle(video, "video")?;
        let (data, len) = (out_slot(data, "data")?, out_slot(len, "len")?);
        *data = v.0.data().as_ptr();
        *len = v.0.data().len();
        Ok(())
    })
}

/// # Safety
/// `video` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lsf_video_free(video: *mut LsfVideo) {
    if !video.is_null() {
        drop(Box::from_raw(video));
    }
}

/// Loads an LSFC1 checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsf_classifier_load(path: *const c_char, out: *mut *mut LsfClassifier) -> LsfStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        *out = boxed(LsfClassifier(ToyClassifier::load(path_arg(path, "path")?)?));
        Ok(())
    })
}

/// Generates the synthetic dataset from `data_seed` and trains a
/// classifier on it. `held_out_accuracy` may be null.
///
/// # Safety
/// `out` must be writable; `held_out_accuracy` null or writable.
#[no_mangle]
pub unsafe extern "C" fn lsf_classifier_train(
    data_seed: u64,
    per_class: usize,
    epochs: usize,
    lr: f64,
    train_seed: u64,
    out: *mut *mut LsfClassifier,
    held_out_accuracy: *mut f64,
) -> LsfStatus {
    guard(|| {
        let out = out_slot(out, "out")?;
        let model = train_classifier(&generate_dataset(data_seed, per_class)?, epochs, lr, train_seed)?;
        if let Some(acc) = held_out_accuracy.as_mut() {
            *acc = model.held_out_accuracy;
        }
        *out = boxed(LsfClassifier(model.classifier));
        Ok(())
    })
}

/// Saves an LSFC1 checkpoint.
///
/// # Safety
/// `classifier` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lsf_classifier_save(classifier: *const LsfClassifier, path: *const c_char) -> LsfStatus {
    guard(|| {
        handle(classifier, "classifier")?.0.save(path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Top-1 label and softmax score. No query budget is involved.
///
/// # Safety
/// Handles must be live; `label` and `score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsf_classifier_top1(
    classifier: *const LsfClassifier,
    video: *const LsfVideo,
    label: *mut usize,
    score: *mut f64,
) -> LsfStatus {
    guard(|| {
        let c = handle(classifier, "classifier")?;
        let v = handle(video, "video")?;
        let (label, score) = (out_slot(label, "label")?, out_slot(score, "score")?);
        let r = c.0.top1(&v.0).top1;
        *label = r.label;
        *score = r.score;
        Ok(())
    })
}

/// # Safety
/// `classifier` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lsf_classifier_free(classifier: *mut LsfClassifier) {
    if !classifier.is_null() {
        drop(Box::from_raw(classifier));
    }
}

/// Fills `out` (row-major, `n * n` entries) with the orthonormal DCT-II
/// matrix of order `n`.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lsf_dct_matrix(n: usize, out: *mut f64, len: usize) -> LsfStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let m = dct_matrix(n)?;
        if len != m.entries().len() {
            return Err(LsfError::BadInput(format!("buffer holds {len} values, need {}", m.entries().len())).into());
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(m.entries());
        Ok(())
    })
}

/// Runs the three-stage attack on `video` (true label `label`). `config`
/// holds `key = value` lines and may be null for defaults. Logos are the
/// synthesized letter set drawn from `logo_seed`. A finished attack returns
/// `Ok` whatever its outcome; read it with [`lsf_attack_summary`].
///
/// # Safety
/// Handles must be live; `config` null or NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lsf_attack_run(
    classifier: *const LsfClassifier,
    video: *const LsfVideo,
    label: usize,
    config: *const c_char,
    logo_seed: u64,
    out: *mut *mut LsfAttack,
) -> LsfStatus {
    guard(|| {
        let c = handle(classifier, "classifier")?;
        let v = handle(video, "video")?;
        let out = out_slot(out, "out")?;
        let cfg = if config.is_null() {
            AttackConfig::default()
        } else {
            let text = CStr::from_ptr(config)
                .to_str()
                .map_err(|_| LsfError::BadInput("config is not UTF-8".into()))?;
            AttackConfig::parse(text)?
        };
        let pool = synthesize_logo_set(logo_seed, cfg.n_logos)?;
        *out = boxed(LsfAttack(run_attack(&cfg, "video", &v.0, label, &c.0, &pool)?));
        Ok(())
    })
}

/// # Safety
/// `attack` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsf_attack_summary(attack: *const LsfAttack, out: *mut LsfAttackSummary) -> LsfStatus {
    guard(|| {
        let t = &handle(attack, "attack")?.0.trace;
        *out_slot(out, "out")? = LsfAttackSummary {
            outcome: match t.outcome {
                Outcome::Success => LsfOutcome::Success,
                Outcome::BudgetExhausted => LsfOutcome::BudgetExhausted,
                Outcome::StageFailed => LsfOutcome::StageFailed,
            },
            success_stage: t.success_stage.map_or(-1, |s| s as i32),
            q1: t.queries.q1,
            q2: t.queries.q2,
            q3: t.queries.q3,
            final_label: t.final_label.map_or(-1, |l| l as i64),
            final_score: t.final_score.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// New handle holding a copy of the adversarial video. Fails with
/// `BadInput` when the attack produced none.
///
/// # Safety
/// `attack` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsf_attack_adversarial(attack: *const LsfAttack, out: *mut *mut LsfVideo) -> LsfStatus {
    guard(|| {
        let a = handle(attack, "attack")?;
        let out = out_slot(out, "out")?;
        let v = a
            .0
            .adversarial
            .clone()
            .ok_or_else(|| LsfError::BadInput("attack produced no adversarial video".into()))?;
        *out = boxed(LsfVideo(v));
        Ok(())
    })
}

/// Writes the JSON-lines trace.
///
/// # Safety
/// `attack` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lsf_attack_write_trace(attack: *const LsfAttack, path: *const c_char) -> LsfStatus {
    guard(|| {
        handle(attack, "attack")?.0.write_trace(path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `attack` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lsf_attack_free(attack: *mut LsfAttack) {
    if !attack.is_null() {
        drop(Box::from_raw(attack));
    }
}

/// Temporal inconsistency (mean warping error) of an RGB video.
///
/// # Safety
/// `video` must be a live handle; `ti` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lsf_warping_error(video: *const LsfVideo, ti: *mut f64) -> LsfStatus {
    guard(|| {
        let v = handle(video, "video")?;
        *out_slot(ti, "ti")? = warping_error(&v.0)?.ti;
        Ok(())
    })
}

/// Occluded area in percent of the frame for a logo of `logo_h x logo_w`
/// scaled by `k` on a `frame_h x frame_w` frame.
#[no_mangle]
pub extern "C" fn lsf_aoa(k: f64, logo_h: usize, logo_w: usize, frame_h: usize, frame_w: usize) -> f64 {
    occluded_area(k, logo_h, logo_w, frame_h, frame_w)
}
