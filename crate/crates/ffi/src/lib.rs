//! C ABI over `scalelink`.
//!
//! Every fallible function returns an [`SlkStatus`]; on failure the message
//! is kept per thread and can be copied out with [`slk_last_error_message`].
//! Objects are opaque handles that must be released with their `_free`
//! function. Panics are caught at the boundary and reported as
//! `SLK_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use scalelink::bank::{load_form, read_items};
use scalelink::linking::{estimate_transform, LinkingOptions, LinkingResult, QuadratureGrid};
use scalelink::model::{
    prob_dichotomous, prob_polytomous, DichotomousItem, Format, Item, ModelFamily, PolytomousItem, TestForm,
    ThetaVector,
};
use scalelink::simulation::{build_anchor_set, AnchorScenario};
use scalelink::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Singular = 5,
    Numerical = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlkScenario {
    McOnly = 0,
    McCr = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlkFamily {
    Uirt = 0,
    SimpleStructure = 1,
    Bifactor = 2,
}

impl From<SlkFamily> for ModelFamily {
    fn from(f: SlkFamily) -> Self {
        match f {
            SlkFamily::Uirt => ModelFamily::Uirt,
            SlkFamily::SimpleStructure => ModelFamily::SimpleStructure,
            SlkFamily::Bifactor => ModelFamily::Bifactor,
        }
    }
}

/// Item bank loaded from CSV.
pub struct SlkForm {
    form: TestForm,
}

/// Estimated transformation and search diagnostics.
pub struct SlkLinkResult {
    result: LinkingResult,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SlkStatus {
    match e {
        Error::Io { .. } => SlkStatus::Io,
        Error::Parse { .. } | Error::Config { .. } | Error::Json(_) => SlkStatus::Parse,
        Error::SingularTransform => SlkStatus::Singular,
        Error::NonFiniteLoss | Error::ChainDivergence { .. } => SlkStatus::Numerical,
        _ => SlkStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SlkStatus, String)>) -> SlkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SlkStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            SlkStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (SlkStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SlkStatus, String) {
    (SlkStatus::NullPointer, format!("{what} is null"))
}

fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SlkStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller passes a NUL-terminated string that outlives the call.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| (SlkStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], (SlkStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees `len` readable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), (SlkStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    // SAFETY: `out` is non-null and points to writable storage for a pointer.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn slk_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads an item-bank CSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slk_form_from_csv(path: *const c_char, out: *mut *mut SlkForm) -> SlkStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        let form = load_form(Path::new(path)).map_err(lib_err)?;
        write_out(out, SlkForm { form })
    })
}

/// Parses an item bank from in-memory CSV text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slk_form_from_csv_text(text: *const c_char, out: *mut *mut SlkForm) -> SlkStatus {
    guard(|| {
        let text = c_str(text, "text")?;
        let items = read_items(text.as_bytes(), "<text>").map_err(lib_err)?;
        let form = TestForm::new("form", items).map_err(lib_err)?;
        write_out(out, SlkForm { form })
    })
}

/// # Safety
/// `form` must be null or a handle from `slk_form_from_csv*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slk_form_free(form: *mut SlkForm) {
    if !form.is_null() {
        drop(Box::from_raw(form));
    }
}

/// Number of items; 0 for a null handle.
///
/// # Safety
/// `form` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn slk_form_len(form: *const SlkForm) -> usize {
    form.as_ref().map_or(0, |f| f.form.len())
}

/// Latent dimension of the form's model family; 0 for a null handle.
///
/// # Safety
/// `form` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn slk_form_dim(form: *const SlkForm) -> usize {
    form.as_ref().map_or(0, |f| f.form.dim())
}

/// Estimates the transformation placing `new_form` on `base`'s scale from
/// the scenario's anchors present in both banks.
///
/// # Safety
/// `base` and `new_form` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slk_link_estimate(
    base: *const SlkForm,
    new_form: *const SlkForm,
    scenario: SlkScenario,
    out: *mut *mut SlkLinkResult,
) -> SlkStatus {
    guard(|| {
        let base = &base.as_ref().ok_or_else(|| null("base"))?.form;
        let new = &new_form.as_ref().ok_or_else(|| null("new_form"))?.form;
        let scenario = match scenario {
            SlkScenario::McOnly => AnchorScenario::McOnly,
            SlkScenario::McCr => AnchorScenario::McCr,
        };
        let ids = build_anchor_set(base, scenario).map_err(lib_err)?;
        let ids: Vec<&String> = ids.iter().filter(|id| new.get(id).is_some()).collect();
        if ids.is_empty() {
            return Err((SlkStatus::InvalidArgument, "no common anchors".into()));
        }
        let pick = |f: &TestForm| -> Vec<Item> { ids.iter().filter_map(|id| f.get(id).cloned()).collect() };
        let grid = QuadratureGrid::default_for(base.dim());
        let result =
            estimate_transform(&pick(base), &pick(new), &grid, &LinkingOptions::default()).map_err(lib_err)?;
        write_out(out, SlkLinkResult { result })
    })
}

/// # Safety
/// `result` must be null or a handle from `slk_link_estimate` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn slk_link_result_free(result: *mut SlkLinkResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn slk_link_result_dim(result: *const SlkLinkResult) -> usize {
    result.as_ref().map_or(0, |r| r.result.transform.dim())
}

/// Copies `A` row-major into `out`, which must hold `dim * dim` doubles.
///
/// # Safety
/// `result` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn slk_link_result_matrix(result: *const SlkLinkResult, out: *mut f64, len: usize) -> SlkStatus {
    guard(|| {
        let t = &result.as_ref().ok_or_else(|| null("result"))?.result.transform;
        let d = t.dim();
        let out = out_slice(out, len, d * d)?;
        for r in 0..d {
            for c in 0..d {
                out[r * d + c] = t.matrix()[(r, c)];
            }
        }
        Ok(())
    })
}

/// Copies `B` into `out`, which must hold `dim` doubles.
///
/// # Safety
/// `result` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn slk_link_result_location(
    result: *const SlkLinkResult,
    out: *mut f64,
    len: usize,
) -> SlkStatus {
    guard(|| {
        let t = &result.as_ref().ok_or_else(|| null("result"))?.result.transform;
        out_slice(out, len, t.dim())?.copy_from_slice(t.location().as_slice());
        Ok(())
    })
}

/// Final loss; NaN for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn slk_link_result_loss(result: *const SlkLinkResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.result.loss)
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn slk_link_result_converged(result: *const SlkLinkResult) -> bool {
    result.as_ref().is_some_and(|r| r.result.converged)
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn slk_link_result_condition_warning(result: *const SlkLinkResult) -> bool {
    result.as_ref().is_some_and(|r| r.result.condition_warning)
}

unsafe fn out_slice<'a>(out: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], (SlkStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < needed {
        return Err((
            SlkStatus::InvalidArgument,
            format!("output buffer holds {len} values, {needed} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(out, needed))
}

/// Probability of a correct response to an MC item under the given family's
/// loading pattern; `a` and `theta` have `dim` entries.
///
/// # Safety
/// `a` and `theta` must point to `dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn slk_prob_3pl(
    family: SlkFamily,
    a: *const f64,
    theta: *const f64,
    dim: usize,
    d: f64,
    c: f64,
    out: *mut f64,
) -> SlkStatus {
    guard(|| {
        let item = DichotomousItem::new("item", Format::Mc, family.into(), false, slice(a, dim, "a")?.to_vec(), d, c)
            .map_err(lib_err)?;
        let theta = ThetaVector::new(slice(theta, dim, "theta")?.to_vec()).map_err(lib_err)?;
        let p = prob_dichotomous(&item, &theta).map_err(lib_err)?;
        *out_slice(out, 1, 1)?.first_mut().expect("one slot") = p;
        Ok(())
    })
}

/// Category probabilities `0..=n_deltas` of a CR item; `out` must hold
/// `n_deltas + 1` doubles.
///
/// # Safety
/// `a` and `theta` must point to `dim` doubles, `deltas` to `n_deltas`
/// doubles, and `out` to `out_len` writable doubles.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn slk_prob_gpc(
    family: SlkFamily,
    a: *const f64,
    theta: *const f64,
    dim: usize,
    deltas: *const f64,
    n_deltas: usize,
    out: *mut f64,
    out_len: usize,
) -> SlkStatus {
    guard(|| {
        let deltas = slice(deltas, n_deltas, "deltas")?.to_vec();
        let item = PolytomousItem::new("item", Format::Cr, family.into(), false, slice(a, dim, "a")?.to_vec(), deltas)
            .map_err(lib_err)?;
        let theta = ThetaVector::new(slice(theta, dim, "theta")?.to_vec()).map_err(lib_err)?;
        let probs = prob_polytomous(&item, &theta).map_err(lib_err)?;
        out_slice(out, out_len, probs.len())?.copy_from_slice(&probs);
        Ok(())
    })
}
