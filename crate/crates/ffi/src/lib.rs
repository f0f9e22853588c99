//! C ABI over ftcnkit.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `_free` function. Every function returns an
//! [`FtcnStatus`]; on failure the message is available from
//! [`ftcn_last_error_message`] on the same thread. Strings returned by the
//! library are released with [`ftcn_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use ftcnkit::arch::{
    apply_rule, build_canonical_scaled, count_params, infer_shapes, output_shape, parse_arch, render_arch, ArchSpec,
    CanonicalName,
};
use ftcnkit::eval::auc;
use ftcnkit::model::{load_checkpoint, HeadConfig, Model};
use ftcnkit::train::{lr_schedule, TrainConfig};
use ftcnkit::{Error, Tensor};

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FtcnStatus {
    Ok = 0,
    InvalidArgument = 1,
    Shape = 2,
    Parse = 3,
    Format = 4,
    Io = 5,
    Json = 6,
    TapeConsumed = 7,
    NullPointer = 8,
    Utf8 = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Architecture specification.
pub struct FtcnArch(ArchSpec);

/// Trained model with its architecture and head.
pub struct FtcnModel(Model<f32>);

enum Fail {
    Core(Error),
    Null(&'static str),
    Utf8(&'static str),
    Small(usize),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

impl Fail {
    fn status(&self) -> FtcnStatus {
        match self {
            Fail::Core(e) => match e {
                Error::Shape(_) => FtcnStatus::Shape,
                Error::InvalidArgument(_) => FtcnStatus::InvalidArgument,
                Error::Parse { .. } => FtcnStatus::Parse,
                Error::Format(_) => FtcnStatus::Format,
                Error::TapeConsumed => FtcnStatus::TapeConsumed,
                Error::Io(_) => FtcnStatus::Io,
                Error::Json(_) => FtcnStatus::Json,
            },
            Fail::Null(_) => FtcnStatus::NullPointer,
            Fail::Utf8(_) => FtcnStatus::Utf8,
            Fail::Small(_) => FtcnStatus::BufferTooSmall,
        }
    }

    fn message(&self) -> String {
        match self {
            Fail::Core(e) => e.to_string(),
            Fail::Null(what) => format!("null pointer: {what}"),
            Fail::Utf8(what) => format!("{what} is not valid UTF-8"),
            Fail::Small(need) => format!("buffer too small: {need} elements required"),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FtcnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FtcnStatus::Ok
        }
        Ok(Err(fail)) => {
            set_error(fail.message());
            fail.status()
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown".into());
            set_error(format!("panic: {msg}"));
            FtcnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

fn write_shape(out: *mut usize, shape: [usize; 4]) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("shape"));
    }
    unsafe { ptr::copy_nonoverlapping(shape.as_ptr(), out, 4) };
    Ok(())
}

/// Message of the last failed call on this thread, or NULL after a
/// successful call. Release with [`ftcn_string_free`].
#[no_mangle]
pub extern "C" fn ftcn_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// Releases a string returned by this library. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ftcn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn ftcn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses the text form of an architecture.
#[no_mangle]
pub unsafe extern "C" fn ftcn_arch_parse(text: *const c_char, out: *mut *mut FtcnArch) -> FtcnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let spec = parse_arch(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(FtcnArch(spec)));
        Ok(())
    })
}

/// Builds a canonical architecture (`ftcn`, `r50`, `spatial`, `fhcn`,
/// `fwcn`, `sp`, `fk3`, `fk5`) with channel widths divided by
/// `width_div`. `input` points to C,T,H,W or is NULL for the full-size
/// input.
#[no_mangle]
pub unsafe extern "C" fn ftcn_arch_canonical(
    name: *const c_char,
    width_div: usize,
    input: *const usize,
    out: *mut *mut FtcnArch,
) -> FtcnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let name: CanonicalName = str_arg(name, "name")?.parse()?;
        if width_div == 0 {
            return Err(Error::InvalidArgument("width_div must be at least 1".into()).into());
        }
        let input = if input.is_null() {
            ftcnkit::arch::FULL_INPUT
        } else {
            let s = slice::from_raw_parts(input, 4);
            [s[0], s[1], s[2], s[3]]
        };
        let spec = build_canonical_scaled(name, width_div, input);
        *out = Box::into_raw(Box::new(FtcnArch(spec)));
        Ok(())
    })
}

/// Rewrites an architecture by rule name (`ftcn`, `spatial`, `fhcn`,
/// `fwcn`, `fk3`, `fk5`) into a new handle.
#[no_mangle]
pub unsafe extern "C" fn ftcn_arch_transform(
    arch: *const FtcnArch,
    rule: *const c_char,
    out: *mut *mut FtcnArch,
) -> FtcnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let spec = apply_rule(&ref_arg(arch, "arch")?.0, str_arg(rule, "rule")?)?;
        *out = Box::into_raw(Box::new(FtcnArch(spec)));
        Ok(())
    })
}

/// Text form of an architecture. Release with [`ftcn_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ftcn_arch_render(arch: *const FtcnArch, out: *mut *mut c_char) -> FtcnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = into_c_string(render_arch(&ref_arg(arch, "arch")?.0));
        Ok(())
    })
}

/// Backbone parameter count (convolutions and their batch norms).
#[no_mangle]
pub unsafe extern "C" fn ftcn_arch_count_params(arch: *const FtcnArch, out: *mut u64) -> FtcnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = count_params(&ref_arg(arch, "arch")?.0, &HeadConfig::None).backbone as u64;
        Ok(())
    })
}

/// Output shape C,T,H,W of the backbone, written to `out[0..4]`.
#[no_mangle]
pub unsafe extern "C" fn ftcn_arch_output_shape(arch: *const FtcnArch, out: *mut usize) -> FtcnStatus {
    guard(|| write_shape(out, output_shape(&ref_arg(arch, "arch")?.0)?))
}

/// Shapes after every top-level layer, four values per layer, written to
/// `out[0..4·layers]`. `layers` receives the layer count even when the
/// buffer of `capacity` elements is too small.
#[no_mangle]
pub unsafe extern "C" fn ftcn_arch_shapes(
    arch: *const FtcnArch,
    out: *mut usize,
    capacity: usize,
    layers: *mut usize,
) -> FtcnStatus {
    guard(|| {
        let layers = out_arg(layers, "layers")?;
        let shapes = infer_shapes(&ref_arg(arch, "arch")?.0)?;
        *layers = shapes.len();
        let need = 4 * shapes.len();
        if capacity < need {
            return Err(Fail::Small(need));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        for (i, (_, s)) in shapes.iter().enumerate() {
            ptr::copy_nonoverlapping(s.as_ptr(), out.add(4 * i), 4);
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ftcn_arch_free(arch: *mut FtcnArch) {
    if !arch.is_null() {
        drop(Box::from_raw(arch));
    }
}

/// Loads a checkpoint directory written by `ftcnkit train`.
#[no_mangle]
pub unsafe extern "C" fn ftcn_model_load(dir: *const c_char, out: *mut *mut FtcnModel) -> FtcnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = load_checkpoint(Path::new(str_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(FtcnModel(model)));
        Ok(())
    })
}

/// Clip shape C,T,H,W the model expects, written to `out[0..4]`.
#[no_mangle]
pub unsafe extern "C" fn ftcn_model_input_shape(model: *const FtcnModel, out: *mut usize) -> FtcnStatus {
    guard(|| write_shape(out, ref_arg(model, "model")?.0.arch().input))
}

/// Fake probabilities of `n` clips stored contiguously as N×C×T×H×W
/// floats in [0,1]. Writes `n` values to `probs`.
#[no_mangle]
pub unsafe extern "C" fn ftcn_model_predict(
    model: *const FtcnModel,
    clips: *const f32,
    n: usize,
    probs: *mut f32,
) -> FtcnStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.0;
        if n == 0 {
            return Ok(());
        }
        let [c, t, h, w] = model.arch().input;
        let data = slice_arg(clips, n * c * t * h * w, "clips")?;
        if probs.is_null() {
            return Err(Fail::Null("probs"));
        }
        let batch = Tensor::new(vec![n, c, t, h, w], data.to_vec())?;
        let p = model.predict(&batch)?;
        ptr::copy_nonoverlapping(p.as_ptr(), probs, n);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ftcn_model_free(model: *mut FtcnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Area under the ROC curve of `n` scores with labels 0 (real) or 1
/// (fake); ties count one half.
#[no_mangle]
pub unsafe extern "C" fn ftcn_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> FtcnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = auc(slice_arg(scores, n, "scores")?, slice_arg(labels, n, "labels")?)?;
        Ok(())
    })
}

/// Learning rate at `epoch` of a linear warm-up from `lr_start` to
/// `lr_peak` over `warmup` epochs followed by cosine decay to zero at
/// `epochs`.
#[no_mangle]
pub unsafe extern "C" fn ftcn_lr_schedule(
    epoch: usize,
    warmup: usize,
    epochs: usize,
    lr_start: f64,
    lr_peak: f64,
    out: *mut f64,
) -> FtcnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let cfg = TrainConfig {
            warmup_epochs: warmup,
            epochs,
            lr_start,
            lr_peak,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        *out = lr_schedule(epoch, &cfg)?;
        Ok(())
    })
}
