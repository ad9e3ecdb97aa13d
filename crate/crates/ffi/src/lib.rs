//! C interface to `funnel-core`.
//!
//! Objects cross the boundary as opaque handles (`FtLayout`, `FtModel`)
//! created and destroyed here. Every fallible call returns an [`FtStatus`];
//! on failure the message is kept per thread and read with
//! [`ft_last_error`]. Panics are caught and reported as `FT_STATUS_PANIC`.
//!
//! Enumerated inputs (mode, attention route) are plain `uint32_t` so that an
//! out-of-range value from C is an error rather than undefined behaviour.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use funnel_core::checkpoint::load_model;
use funnel_core::config::ModelConfig;
use funnel_core::corpus::PAD;
use funnel_core::cost::{effective_layers, flops_exact, flops_ratio, param_count, Mode};
use funnel_core::layout::{format_layout, parse_layout, LayoutSpec};
use funnel_core::model::FunnelModel;
use funnel_core::relattn::AttnVariant;
use funnel_core::verify::verify_attention;
use funnel_core::FunnelError;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    BufferTooSmall = 4,
    Parse = 5,
    Validation = 6,
    Config = 7,
    Io = 8,
    Checkpoint = 9,
    Shape = 10,
    Contract = 11,
    Dimension = 12,
    Numeric = 13,
    Diverged = 14,
    Panic = 15,
}

pub const FT_MODE_FINETUNE: u32 = 0;
pub const FT_MODE_PRETRAIN: u32 = 1;

pub const FT_ATTN_NAIVE: u32 = 0;
pub const FT_ATTN_GATHER: u32 = 1;
pub const FT_ATTN_FACTORIZED: u32 = 2;

/// A parsed layout string such as `B6-6-6H768D2`.
pub struct FtLayout(LayoutSpec);

/// A config plus loaded parameters.
pub struct FtModel(FunnelModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &FunnelError) -> FtStatus {
    match e.category() {
        "parse" => FtStatus::Parse,
        "validation" => FtStatus::Validation,
        "config" => FtStatus::Config,
        "io" => FtStatus::Io,
        "checkpoint" => FtStatus::Checkpoint,
        "shape" => FtStatus::Shape,
        "contract" => FtStatus::Contract,
        "dimension" => FtStatus::Dimension,
        "numeric" => FtStatus::Numeric,
        "diverged" => FtStatus::Diverged,
        _ => FtStatus::Validation,
    }
}

/// Failure inside the wrapper itself.
struct Fail(FtStatus, String);

impl From<FunnelError> for Fail {
    fn from(e: FunnelError) -> Self {
        Fail(status_of(&e), format!("{}: {e}", e.category()))
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FtStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside funnel".into());
            FtStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: callers pass either null or a pointer to a live `T`.
    unsafe { p.as_ref() }.ok_or_else(|| Fail(FtStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: callers pass either null or a writable, aligned `T`.
    unsafe { p.as_mut() }.ok_or_else(|| Fail(FtStatus::NullPointer, format!("{what} is null")))
}

fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(FtStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: non-null and NUL-terminated by contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail(FtStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn parse_mode(m: u32) -> Result<Mode, Fail> {
    match m {
        FT_MODE_FINETUNE => Ok(Mode::Finetune),
        FT_MODE_PRETRAIN => Ok(Mode::Pretrain),
        _ => Err(Fail(FtStatus::InvalidArgument, format!("unknown mode {m}"))),
    }
}

fn variant(v: u32) -> Result<AttnVariant, Fail> {
    match v {
        FT_ATTN_NAIVE => Ok(AttnVariant::Naive),
        FT_ATTN_GATHER => Ok(AttnVariant::GatherShift),
        FT_ATTN_FACTORIZED => Ok(AttnVariant::Factorized),
        _ => Err(Fail(FtStatus::InvalidArgument, format!("unknown attention route {v}"))),
    }
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ft_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Parse `text` into a new layout handle written to `*out`.
///
/// # Safety
/// `text` must be null or NUL-terminated; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ft_layout_parse(text: *const c_char, out: *mut *mut FtLayout) -> FtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let spec = parse_layout(string(text, "text")?)?;
        *out = Box::into_raw(Box::new(FtLayout(spec)));
        Ok(())
    })
}

/// Release a layout. Null is ignored.
///
/// # Safety
/// `layout` must come from [`ft_layout_parse`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ft_layout_free(layout: *mut FtLayout) {
    if !layout.is_null() {
        drop(Box::from_raw(layout));
    }
}

/// Canonical text of `layout`, NUL-terminated, into `buf` of `cap` bytes.
/// `*needed` receives the required size including the NUL, so a first call
/// with `cap = 0` sizes the buffer.
///
/// # Safety
/// `buf` must be null or hold `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ft_layout_format(
    layout: *const FtLayout,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> FtStatus {
    guard(|| {
        let text = format_layout(&non_null(layout, "layout")?.0);
        let n = text.len() + 1;
        *out_ptr(needed, "needed")? = n;
        if cap < n || buf.is_null() {
            return Err(Fail(FtStatus::BufferTooSmall, format!("need {n} bytes, have {cap}")));
        }
        std::ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// Number of blocks and hidden size.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn ft_layout_shape(
    layout: *const FtLayout,
    blocks: *mut usize,
    hidden: *mut usize,
) -> FtStatus {
    guard(|| {
        let l = &non_null(layout, "layout")?.0;
        *out_ptr(blocks, "blocks")? = l.num_blocks();
        *out_ptr(hidden, "hidden")? = l.hidden;
        Ok(())
    })
}

/// Depth in full-length layer equivalents under the linear cost model.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn ft_effective_layers(layout: *const FtLayout, mode: u32, out: *mut f64) -> FtStatus {
    guard(|| {
        let l = &non_null(layout, "layout")?.0;
        *out_ptr(out, "out")? = effective_layers(l, parse_mode(mode)?);
        Ok(())
    })
}

/// Linear-model FLOPs of `layout` over `baseline` (costed without decoder).
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn ft_flops_ratio(
    layout: *const FtLayout,
    baseline: *const FtLayout,
    mode: u32,
    out: *mut f64,
) -> FtStatus {
    guard(|| {
        let a = &non_null(layout, "layout")?.0;
        let b = &non_null(baseline, "baseline")?.0;
        *out_ptr(out, "out")? = flops_ratio(a, b, parse_mode(mode)?)?;
        Ok(())
    })
}

/// Total parameters with a `vocab`-entry embedding.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn ft_param_count(layout: *const FtLayout, vocab: usize, mode: u32, out: *mut u64) -> FtStatus {
    guard(|| {
        let l = &non_null(layout, "layout")?.0;
        *out_ptr(out, "out")? = param_count(l, vocab, parse_mode(mode)?).0;
        Ok(())
    })
}

/// Exact multiply-add FLOPs for one sequence of length `seq_len`.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn ft_flops_exact(
    layout: *const FtLayout,
    seq_len: usize,
    mode: u32,
    attn: u32,
    out: *mut u64,
) -> FtStatus {
    guard(|| {
        let l = &non_null(layout, "layout")?.0;
        *out_ptr(out, "out")? = flops_exact(l, seq_len, parse_mode(mode)?, variant(attn)?)?;
        Ok(())
    })
}

/// Load a JSON config and an FTNT checkpoint into a new model handle.
///
/// # Safety
/// Strings must be null or NUL-terminated; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ft_model_load(
    config_path: *const c_char,
    checkpoint_path: *const c_char,
    out: *mut *mut FtModel,
) -> FtStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = ModelConfig::load(Path::new(string(config_path, "config_path")?))?;
        let model = load_model(cfg, Path::new(string(checkpoint_path, "checkpoint_path")?))?;
        *out = Box::into_raw(Box::new(FtModel(model)));
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`ft_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ft_model_free(model: *mut FtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Hidden size and the sequence length the model was trained at.
///
/// # Safety
/// Pointers must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn ft_model_dims(model: *const FtModel, hidden: *mut usize, seq_len: *mut usize) -> FtStatus {
    guard(|| {
        let m = &non_null(model, "model")?.0;
        *out_ptr(hidden, "hidden")? = m.config.layout.hidden;
        *out_ptr(seq_len, "seq_len")? = m.config.train.seq_len;
        Ok(())
    })
}

fn encode(
    model: *const FtModel,
    ids: *const u32,
    len: usize,
    tokens: bool,
    out: *mut f64,
    cap: usize,
) -> Result<(), Fail> {
    let m = &non_null(model, "model")?.0;
    if ids.is_null() || out.is_null() {
        return Err(Fail(FtStatus::NullPointer, "ids or out is null".into()));
    }
    // SAFETY: `ids` holds `len` values by contract.
    let ids: Vec<usize> = unsafe { std::slice::from_raw_parts(ids, len) }
        .iter()
        .map(|&i| i as usize)
        .collect();
    let valid: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
    let enc = m.encode(&ids, &valid, tokens)?;
    let values: &[f64] = match &enc.tokens {
        Some(t) if tokens => t.data(),
        _ => enc.cls(),
    };
    if cap < values.len() {
        return Err(Fail(
            FtStatus::BufferTooSmall,
            format!("need {} values, have {cap}", values.len()),
        ));
    }
    // SAFETY: `out` holds `cap >= values.len()` doubles.
    unsafe { std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len()) };
    Ok(())
}

/// CLS vector (row 0 of the last block) for token ids `ids[0..len]`; id 0
/// is padding. Writes `hidden` doubles to `out`.
///
/// # Safety
/// `ids` must hold `len` values and `out` `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn ft_model_encode_cls(
    model: *const FtModel,
    ids: *const u32,
    len: usize,
    out: *mut f64,
    cap: usize,
) -> FtStatus {
    guard(|| encode(model, ids, len, false, out, cap))
}

/// Full-length decoder states, `len × hidden` doubles in row-major order.
///
/// # Safety
/// `ids` must hold `len` values and `out` `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn ft_model_encode_tokens(
    model: *const FtModel,
    ids: *const u32,
    len: usize,
    out: *mut f64,
    cap: usize,
) -> FtStatus {
    guard(|| encode(model, ids, len, true, out, cap))
}

/// Largest deviation of the gather and factorized position scores from the
/// naive route over `trials` seeded random cases.
///
/// # Safety
/// `max_dev` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn ft_verify_attention(
    trials: usize,
    max_t: usize,
    max_d: usize,
    seed: u64,
    max_dev: *mut f64,
) -> FtStatus {
    guard(|| {
        *out_ptr(max_dev, "max_dev")? = verify_attention(trials, max_t, max_d, seed)?.max_dev();
        Ok(())
    })
}
