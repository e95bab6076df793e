//! C ABI over the translator and the evaluation metrics.
//!
//! Every entry point returns an [`AttncutStatus`]; on failure the message is
//! kept per thread and read with [`attncut_last_error_message`]. Panics are
//! caught at the boundary and reported as `ATTNCUT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use attncut::cli::translate_rgb8;
use attncut::contrastive::info_nce;
use attncut::generator::Generator;
use attncut::metrics::{fid, inception_score, swd, EmbeddedSet};
use attncut::trainer::load_generator;
use attncut::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttncutStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Checkpoint = 5,
    Numeric = 6,
    Panic = 7,
}

/// Opaque handle owning a generator loaded from a checkpoint.
pub struct AttncutTranslator {
    generator: Generator,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> AttncutStatus {
    match e {
        Error::Io { .. } | Error::EmptyDomain(_) | Error::Decode { .. } => AttncutStatus::Io,
        Error::Checkpoint { .. } => AttncutStatus::Checkpoint,
        Error::Shape(_) | Error::UnknownTap(_) => AttncutStatus::Shape,
        Error::NonFinite(_) | Error::Numeric(_) | Error::Tensor(_) => AttncutStatus::Numeric,
        Error::Config(_) | Error::InvalidArgument(_) => AttncutStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AttncutStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            AttncutStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for `{what}`"));
            AttncutStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
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
            AttncutStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: caller guarantees a valid, writable location when non-null.
    unsafe { p.as_mut() }.ok_or(Failure::Null(what))
}

unsafe fn embedded(p: *const f64, m: usize, dim: usize, what: &'static str) -> Result<EmbeddedSet, Failure> {
    let n = m
        .checked_mul(dim)
        .ok_or(Failure::Core(Error::InvalidArgument(format!("{what}: {m}×{dim} overflows"))))?;
    Ok(EmbeddedSet::from_row_major(slice_in(p, n, what)?, m, dim, "ffi")?)
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length plus one.
///
/// # Safety
/// `buf` must be null or valid for `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn attncut_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn attncut_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the generator of a training checkpoint.
///
/// # Safety
/// `checkpoint_path` must be a NUL-terminated UTF-8 string; `out` must be
/// writable. Release the handle with [`attncut_translator_free`].
#[no_mangle]
pub unsafe extern "C" fn attncut_translator_open(
    checkpoint_path: *const c_char,
    out: *mut *mut AttncutTranslator,
) -> AttncutStatus {
    guard(|| {
        if checkpoint_path.is_null() {
            return Err(Failure::Null("checkpoint_path"));
        }
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = CStr::from_ptr(checkpoint_path)
            .to_str()
            .map_err(|_| Error::InvalidArgument("checkpoint path is not UTF-8".into()))?;
        let (_, generator) = load_generator(&PathBuf::from(path))?;
        *out = Box::into_raw(Box::new(AttncutTranslator { generator }));
        Ok(())
    })
}

/// # Safety
/// `translator` must come from [`attncut_translator_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn attncut_translator_free(translator: *mut AttncutTranslator) {
    if !translator.is_null() {
        drop(Box::from_raw(translator));
    }
}

/// Translates one packed RGB image (`width × height × 3` bytes, row-major)
/// into `out_pixels` of the same size.
///
/// # Safety
/// `pixels` and `out_pixels` must each be valid for `width·height·3` bytes.
#[no_mangle]
pub unsafe extern "C" fn attncut_translate_rgb8(
    translator: *const AttncutTranslator,
    pixels: *const u8,
    width: u32,
    height: u32,
    out_pixels: *mut u8,
) -> AttncutStatus {
    guard(|| {
        let t = translator.as_ref().ok_or(Failure::Null("translator"))?;
        let n = width as usize * height as usize * 3;
        let input = slice_in(pixels, n, "pixels")?;
        if out_pixels.is_null() {
            return Err(Failure::Null("out_pixels"));
        }
        let result = translate_rgb8(&t.generator, width, height, input)?;
        ptr::copy_nonoverlapping(result.as_ptr(), out_pixels, n);
        Ok(())
    })
}

/// Fréchet distance between two row-major feature matrices.
///
/// # Safety
/// `a` and `b` must hold `m_a·dim` and `m_b·dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn attncut_fid(
    a: *const f64,
    m_a: usize,
    b: *const f64,
    m_b: usize,
    dim: usize,
    out: *mut f64,
) -> AttncutStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = fid(&embedded(a, m_a, dim, "a")?, &embedded(b, m_b, dim, "b")?)?;
        Ok(())
    })
}

/// Sliced Wasserstein distance (order 2) between two row-major feature matrices.
///
/// # Safety
/// As for [`attncut_fid`].
#[no_mangle]
pub unsafe extern "C" fn attncut_swd(
    a: *const f64,
    m_a: usize,
    b: *const f64,
    m_b: usize,
    dim: usize,
    n_projections: usize,
    seed: u64,
    out: *mut f64,
) -> AttncutStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = swd(&embedded(a, m_a, dim, "a")?, &embedded(b, m_b, dim, "b")?, n_projections, seed)?;
        Ok(())
    })
}

/// Inception Score of `m` row-major probability rows over `classes` classes.
///
/// # Safety
/// `probs` must hold `m·classes` doubles; `mean` and `std` must be writable.
#[no_mangle]
pub unsafe extern "C" fn attncut_inception_score(
    probs: *const f64,
    m: usize,
    classes: usize,
    splits: usize,
    mean: *mut f64,
    std: *mut f64,
) -> AttncutStatus {
    guard(|| {
        let mean = out_ptr(mean, "mean")?;
        let std = out_ptr(std, "std")?;
        if classes == 0 {
            return Err(Error::InvalidArgument("classes must be ≥ 1".into()).into());
        }
        let flat = slice_in(probs, m * classes, "probs")?;
        let rows: Vec<Vec<f64>> = flat.chunks_exact(classes).map(<[f64]>::to_vec).collect();
        (*mean, *std) = inception_score(&rows, splits)?;
        Ok(())
    })
}

/// InfoNCE cross-entropy for one query, its positive and `n_negatives`
/// row-major negatives, all unit vectors of length `dim`.
///
/// # Safety
/// Pointers must hold `dim`, `dim` and `n_negatives·dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn attncut_info_nce(
    query: *const f64,
    positive: *const f64,
    negatives: *const f64,
    n_negatives: usize,
    dim: usize,
    tau: f64,
    out: *mut f64,
) -> AttncutStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let q = slice_in(query, dim, "query")?;
        let p = slice_in(positive, dim, "positive")?;
        let negs: Vec<Vec<f64>> = if n_negatives == 0 {
            Vec::new()
        } else {
            slice_in(negatives, n_negatives * dim, "negatives")?
                .chunks_exact(dim.max(1))
                .map(<[f64]>::to_vec)
                .collect()
        };
        *out = info_nce(q, p, &negs, tau)?;
        Ok(())
    })
}
