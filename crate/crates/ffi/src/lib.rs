//! C ABI over the `margreg` core: opaque model handles, marginal-density
//! gradients and AUROC.
//!
//! Every fallible function returns a [`MargregStatus`]; on failure the
//! message is available from [`margreg_last_error`] on the same thread.
//! Handles are not thread-safe; use one handle per thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use margreg::autodiff::Tensor;
use margreg::density_reg::{
    input_grad_penalty_vec, marginal_grad_efficient, marginal_grad_naive, marginal_grad_stable,
};
use margreg::evalrep::auroc;
use margreg::model::{Activation, Model};
use margreg::Error;

/// Result codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MargregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Format = 5,
    NonFinite = 6,
    Stability = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MargregActivation {
    Relu = 0,
    Softplus = 1,
}

/// Which input gradient to compute.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MargregVariant {
    /// Gradient of the label logit; `classes` holds the labels.
    InputGrad = 0,
    /// Literal ratio of summed exponentials; may overflow.
    MarginalNaive = 1,
    /// Two backward passes; `classes` picks the class per row.
    MarginalStable = 2,
    /// One backward pass; `classes` picks the class per row.
    MarginalEfficient = 3,
}

/// Opaque model handle.
pub struct MargregModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MargregStatus {
    match e {
        Error::Shape(_) | Error::ClassOutOfRange { .. } => MargregStatus::Shape,
        Error::Io { .. } => MargregStatus::Io,
        Error::BadMagic { .. }
        | Error::UnsupportedVersion(_)
        | Error::Truncated { .. }
        | Error::Malformed(_) => MargregStatus::Format,
        Error::NonFinite(_) => MargregStatus::NonFinite,
        Error::Stability { .. } => MargregStatus::Stability,
        _ => MargregStatus::InvalidArgument,
    }
}

fn fail(status: MargregStatus, msg: impl Into<String>) -> MargregStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), MargregStatus>) -> MargregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MargregStatus::Ok
        }
        Ok(Err(status)) => status,
        Err(_) => fail(MargregStatus::Internal, "internal panic"),
    }
}

fn lift<T>(r: margreg::Result<T>) -> Result<T, MargregStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), MargregStatus> {
    if p.is_null() {
        Err(fail(MargregStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<String, MargregStatus> {
    non_null(p, "path")?;
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| fail(MargregStatus::InvalidArgument, "path is not UTF-8"))
}

unsafe fn model_ref<'a>(m: *const MargregModel) -> Result<&'a Model, MargregStatus> {
    non_null(m, "model")?;
    Ok(&(*m).inner)
}

unsafe fn input_tensor(x: *const f64, rows: usize, cols: usize) -> Result<Tensor, MargregStatus> {
    non_null(x, "x")?;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(MargregStatus::Shape, "rows × cols overflows"))?;
    lift(Tensor::matrix(rows, cols, std::slice::from_raw_parts(x, n).to_vec()))
}

unsafe fn write_out(values: &[f64], out: *mut f64, out_len: usize) -> Result<(), MargregStatus> {
    non_null(out, "out")?;
    if out_len != values.len() {
        return Err(fail(
            MargregStatus::Shape,
            format!("output buffer holds {out_len} values, result has {}", values.len()),
        ));
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on this thread.
#[no_mangle]
pub extern "C" fn margreg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn margreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Glorot-initialized fully connected model with `n_sizes` layer widths.
///
/// # Safety
/// `sizes` must point to `n_sizes` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn margreg_model_init(
    sizes: *const usize,
    n_sizes: usize,
    activation: MargregActivation,
    seed: u64,
    out: *mut *mut MargregModel,
) -> MargregStatus {
    guard(|| {
        non_null(sizes, "sizes")?;
        non_null(out, "out")?;
        let act = match activation {
            MargregActivation::Relu => Activation::Relu,
            MargregActivation::Softplus => Activation::Softplus,
        };
        let model = lift(Model::init(std::slice::from_raw_parts(sizes, n_sizes), act, seed))?;
        *out = Box::into_raw(Box::new(MargregModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn margreg_model_load(
    path: *const c_char,
    out: *mut *mut MargregModel,
) -> MargregStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let model = lift(Model::load(path))?;
        *out = Box::into_raw(Box::new(MargregModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn margreg_model_save(
    model: *const MargregModel,
    path: *const c_char,
) -> MargregStatus {
    guard(|| {
        let m = model_ref(model)?;
        lift(m.save(path_arg(path)?))
    })
}

/// Releases a handle. Null is a no-op.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn margreg_model_free(model: *mut MargregModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn margreg_model_input_dim(model: *const MargregModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.input_dim())
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn margreg_model_class_count(model: *const MargregModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.class_count())
}

/// Logits for a row-major `rows × cols` batch into `out`
/// (`rows × classes` values).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn margreg_model_forward(
    model: *const MargregModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> MargregStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = input_tensor(x, rows, cols)?;
        let logits = lift(m.forward(&x))?;
        write_out(logits.values(), out, out_len)
    })
}

/// Per-row input gradient of the chosen variant into `out` (`rows × cols`
/// values). `classes` holds `rows` class indices; it is ignored by the
/// naive variant and may then be null. `finite` (nullable) receives whether
/// every entry is finite.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn margreg_input_gradient(
    model: *const MargregModel,
    variant: MargregVariant,
    x: *const f64,
    rows: usize,
    cols: usize,
    classes: *const usize,
    out: *mut f64,
    out_len: usize,
    finite: *mut bool,
) -> MargregStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = input_tensor(x, rows, cols)?;
        let classes = || -> Result<&[usize], MargregStatus> {
            non_null(classes, "classes")?;
            Ok(std::slice::from_raw_parts(classes, rows))
        };
        let (values, all_finite) = match variant {
            MargregVariant::MarginalNaive => {
                let g = lift(marginal_grad_naive(m, &x))?;
                (g.gradient.to_vec(), g.finite)
            }
            MargregVariant::MarginalStable => {
                let g = lift(marginal_grad_stable(m, &x, classes()?))?;
                (g.gradient.to_vec(), g.finite)
            }
            MargregVariant::MarginalEfficient => {
                let g = lift(marginal_grad_efficient(m, &x, classes()?))?;
                (g.gradient.to_vec(), g.finite)
            }
            MargregVariant::InputGrad => {
                let g = lift(input_grad_penalty_vec(m, &x, classes()?))?;
                let f = g.all_finite();
                (g.to_vec(), f)
            }
        };
        write_out(&values, out, out_len)?;
        if !finite.is_null() {
            *finite = all_finite;
        }
        Ok(())
    })
}

/// Rank-statistic AUROC of in- versus out-of-distribution scores.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn margreg_auroc(
    in_scores: *const f64,
    n_in: usize,
    out_scores: *const f64,
    n_out: usize,
    result: *mut f64,
) -> MargregStatus {
    guard(|| {
        non_null(in_scores, "in_scores")?;
        non_null(out_scores, "out_scores")?;
        non_null(result, "result")?;
        let a = std::slice::from_raw_parts(in_scores, n_in);
        let b = std::slice::from_raw_parts(out_scores, n_out);
        *result = lift(auroc(a, b))?;
        Ok(())
    })
}
