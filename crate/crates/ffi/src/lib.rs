//! C ABI over `distillkit`.
//!
//! Every function returns a [`DkStatus`]; results come back through out
//! pointers. On failure, [`dk_last_error`] describes the most recent error
//! on the calling thread. Models are opaque handles created by
//! `dk_build_teacher`, `dk_derive_student` or `dk_model_load` and released
//! with `dk_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use distillkit::config::Family;
use distillkit::harness::{paired_t_test, relative_delta_acc};
use distillkit::ig::{integrated_gradients, IGConfig, TargetKind};
use distillkit::losses::{cross_entropy, kd_loss};
use distillkit::netblocks::{
    build_student, build_teacher, compression_factor, load_checkpoint, save_checkpoint, Model,
};
use distillkit::{Error, Tensor};

/// Status codes returned by every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Format = 5,
    Io = 6,
    Numeric = 7,
    Panic = 8,
}

/// Opaque network handle.
pub struct DkModel {
    inner: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> DkStatus {
    match err {
        Error::Config(_) => DkStatus::Config,
        Error::Data(_) => DkStatus::Data,
        Error::Format { .. } | Error::Provenance { .. } => DkStatus::Format,
        Error::Io(_) => DkStatus::Io,
        Error::NonFiniteGradient { .. } | Error::Degenerate(_) => DkStatus::Numeric,
        _ => DkStatus::InvalidArgument,
    }
}

struct Fail(DkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(DkStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(DkStatus::InvalidArgument, msg.into())
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> DkStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            DkStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            DkStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn model_arg<'a>(m: *const DkModel) -> Result<&'a DkModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

unsafe fn write<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = value;
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a randomly initialized full-depth network. `family` is
/// `"mobilenet_v2"`, `"micronet"` or `"micro:D:B:S"`.
///
/// # Safety
/// `family` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dk_build_teacher(
    num_classes: usize,
    family: *const c_char,
    seed: u64,
    out: *mut *mut DkModel,
) -> DkStatus {
    guard(|| {
        let family: Family = str_arg(family, "family")?.parse()?;
        let inner = build_teacher::<f32>(num_classes, &family.width_config(), seed)?;
        write(out, Box::into_raw(Box::new(DkModel { inner })), "out")
    })
}

/// Builds a randomly initialized student with the last `blocks_removed`
/// inverted residuals of `teacher` dropped.
///
/// # Safety
/// `teacher` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dk_derive_student(
    teacher: *const DkModel,
    blocks_removed: usize,
    seed: u64,
    out: *mut *mut DkModel,
) -> DkStatus {
    guard(|| {
        let teacher = model_arg(teacher)?;
        let inner = build_student::<f32>(&teacher.inner.spec, blocks_removed, seed)?;
        write(out, Box::into_raw(Box::new(DkModel { inner })), "out")
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dk_model_load(path: *const c_char, out: *mut *mut DkModel) -> DkStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let inner = load_checkpoint(&path)?;
        write(out, Box::into_raw(Box::new(DkModel { inner })), "out")
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dk_model_save(model: *const DkModel, path: *const c_char) -> DkStatus {
    guard(|| {
        let model = model_arg(model)?;
        let path = PathBuf::from(str_arg(path, "path")?);
        save_checkpoint(&model.inner, &path)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dk_model_free(model: *mut DkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dk_model_param_count(model: *const DkModel, out: *mut usize) -> DkStatus {
    guard(|| write(out, model_arg(model)?.inner.param_count(), "out"))
}

/// Writes `C, H, W` of a single input and the class count.
///
/// # Safety
/// `model` must be a live handle, `shape` must point to 3 writable values
/// and `num_classes` to one.
#[no_mangle]
pub unsafe extern "C" fn dk_model_shape(
    model: *const DkModel,
    shape: *mut usize,
    num_classes: *mut usize,
) -> DkStatus {
    guard(|| {
        let m = &model_arg(model)?.inner;
        slice_out(shape, 3, "shape")?.copy_from_slice(&m.input_shape());
        write(num_classes, m.num_classes(), "num_classes")
    })
}

/// Inference-mode logits for `batch` images laid out `N×C×H×W`; `logits`
/// receives `batch × num_classes` values.
///
/// # Safety
/// `input` must hold `batch·C·H·W` floats and `logits` room for
/// `logits_len` floats.
#[no_mangle]
pub unsafe extern "C" fn dk_model_forward(
    model: *const DkModel,
    input: *const f32,
    batch: usize,
    logits: *mut f32,
    logits_len: usize,
) -> DkStatus {
    guard(|| {
        let m = &model_arg(model)?.inner;
        let [c, h, w] = m.input_shape();
        let k = m.num_classes();
        if batch == 0 {
            return Err(invalid("batch must be at least 1"));
        }
        if logits_len != batch * k {
            return Err(invalid(format!(
                "logits buffer holds {logits_len} values, need {}",
                batch * k
            )));
        }
        let data = slice_arg(input, batch * c * h * w, "input")?.to_vec();
        let x = Tensor::new(vec![batch, c, h, w], data)?;
        let y = m.infer(&x)?;
        slice_out(logits, logits_len, "logits")?.copy_from_slice(y.data());
        Ok(())
    })
}

/// Mean cross-entropy of `n×k` logits against `n` labels.
///
/// # Safety
/// `logits` must hold `n·k` values and `labels` `n` values.
#[no_mangle]
pub unsafe extern "C" fn dk_cross_entropy(
    logits: *const f64,
    labels: *const usize,
    n: usize,
    k: usize,
    out: *mut f64,
) -> DkStatus {
    guard(|| {
        let z = Tensor::new(vec![n, k], slice_arg(logits, n * k, "logits")?.to_vec())?;
        let labels = slice_arg(labels, n, "labels")?;
        write(out, cross_entropy(&z, labels)?, "out")
    })
}

/// Temperature-scaled distillation loss of `n×k` student logits against
/// teacher logits, including the `T²` factor.
///
/// # Safety
/// `student` and `teacher` must each hold `n·k` values.
#[no_mangle]
pub unsafe extern "C" fn dk_kd_loss(
    student: *const f64,
    teacher: *const f64,
    n: usize,
    k: usize,
    temperature: f64,
    out: *mut f64,
) -> DkStatus {
    guard(|| {
        let s = Tensor::new(vec![n, k], slice_arg(student, n * k, "student")?.to_vec())?;
        let t = Tensor::new(vec![n, k], slice_arg(teacher, n * k, "teacher")?.to_vec())?;
        write(out, kd_loss(&s, &t, temperature)?, "out")
    })
}

/// Integrated gradients of one `C×H×W` image against a zero baseline.
/// `attributions` receives the signed `C×H×W` map. `log_prob` selects the
/// log-probability as target score instead of the logit.
///
/// # Safety
/// `image` and `attributions` must each hold `C·H·W` values.
#[no_mangle]
pub unsafe extern "C" fn dk_integrated_gradients(
    model: *const DkModel,
    image: *const f32,
    target: usize,
    steps: usize,
    log_prob: bool,
    attributions: *mut f64,
    len: usize,
) -> DkStatus {
    guard(|| {
        let m = &model_arg(model)?.inner;
        let [c, h, w] = m.input_shape();
        if len != c * h * w {
            return Err(invalid(format!(
                "attribution buffer holds {len} values, need {}",
                c * h * w
            )));
        }
        let x: Vec<f64> = slice_arg(image, len, "image")?
            .iter()
            .map(|&v| v as f64)
            .collect();
        let x = Tensor::new(vec![c, h, w], x)?;
        let mut m64 = m.cast::<f64>();
        let config = IGConfig {
            target_kind: if log_prob {
                TargetKind::LogProb
            } else {
                TargetKind::Logit
            },
            ..IGConfig::new(target).with_steps(steps)
        };
        let map = integrated_gradients(&mut m64, &x, &config)?;
        slice_out(attributions, len, "attributions")?.copy_from_slice(map.raw.data());
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dk_compression_factor(
    teacher_params: usize,
    student_params: usize,
    out: *mut f64,
) -> DkStatus {
    guard(|| {
        write(
            out,
            compression_factor(teacher_params, student_params)?,
            "out",
        )
    })
}

/// Share of the teacher/baseline gap recovered by distillation, in percent.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dk_relative_delta_acc(
    teacher: f64,
    baseline: f64,
    distilled: f64,
    out: *mut f64,
) -> DkStatus {
    guard(|| {
        write(
            out,
            relative_delta_acc(teacher, baseline, distilled)?,
            "out",
        )
    })
}

/// Two-sided paired t-test of `a` against `b`.
///
/// # Safety
/// `a` and `b` must each hold `n` values; `t` and `p` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dk_paired_t_test(
    a: *const f64,
    b: *const f64,
    n: usize,
    t: *mut f64,
    p: *mut f64,
) -> DkStatus {
    guard(|| {
        let r = paired_t_test(slice_arg(a, n, "a")?, slice_arg(b, n, "b")?)?;
        write(t, r.t, "t")?;
        write(p, r.p, "p")
    })
}
