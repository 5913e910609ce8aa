//! C ABI over the partseg core: opaque handles, integer status codes, and
//! a thread-local last-error message. A `partseg.h` header is generated at
//! build time into `include/`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use partseg::dataset::io::{load_dataset, save_dataset};
use partseg::dataset::{generate_synthetic, GeneratorConfig};
use partseg::grid::Mask;
use partseg::metrics::{combined_score, dice, surface_dice, MetricConfig};
use partseg::opt::{canonicalize, PartitionGenotype};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartsegStatus {
    /// Success.
    Ok = 0,
    /// Invalid configuration or argument values.
    ConfigError = 2,
    /// Runtime failure (I/O, numerics, internal invariant).
    RuntimeError = 3,
    /// A required pointer argument was null.
    NullArgument = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let cleaned: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(cleaned).unwrap());
}

fn status_of(err: &partseg::Error) -> PartsegStatus {
    match err {
        partseg::Error::Config(_) => PartsegStatus::ConfigError,
        _ => PartsegStatus::RuntimeError,
    }
}

fn fail(err: partseg::Error) -> PartsegStatus {
    let code = status_of(&err);
    set_last_error(&err.to_string());
    code
}

/// Copies the most recent error message on this thread into `buf`
/// (NUL-terminated, truncated to `len`). Returns the full message length.
#[no_mangle]
pub extern "C" fn partseg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Opaque dataset handle.
pub struct PartsegDataset {
    inner: partseg::dataset::Dataset,
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, PartsegStatus> {
    if p.is_null() {
        set_last_error("null path argument");
        return Err(PartsegStatus::NullArgument);
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_last_error("path is not valid UTF-8");
            Err(PartsegStatus::ConfigError)
        }
    }
}

unsafe fn mask_arg(data: *const u8, h: usize, w: usize) -> Result<Mask, PartsegStatus> {
    if data.is_null() {
        set_last_error("null mask argument");
        return Err(PartsegStatus::NullArgument);
    }
    let slice = std::slice::from_raw_parts(data, h * w);
    let mask = Mask::from_vec(h, w, slice.to_vec()).map_err(fail)?;
    mask.validate_binary().map_err(fail)?;
    Ok(mask)
}

/// Generates a synthetic dataset with planted observer styles.
///
/// # Safety
/// `out` must point to a writable `PartsegDataset*` slot.
#[no_mangle]
pub unsafe extern "C" fn partseg_dataset_generate(
    n_scans: usize,
    image_size: usize,
    n_styles: u32,
    seed: u64,
    out: *mut *mut PartsegDataset,
) -> PartsegStatus {
    if out.is_null() {
        set_last_error("null out argument");
        return PartsegStatus::NullArgument;
    }
    let cfg = GeneratorConfig {
        n_scans,
        image_size: (image_size, image_size),
        n_styles,
        seed,
        ..GeneratorConfig::default()
    };
    if let Err(e) = cfg.validate() {
        return fail(e);
    }
    match generate_synthetic(&cfg) {
        Ok(d) => {
            *out = Box::into_raw(Box::new(PartsegDataset { inner: d }));
            PartsegStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Loads a dataset directory (manifest.json plus raster files).
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` a writable slot.
#[no_mangle]
pub unsafe extern "C" fn partseg_dataset_load(
    dir: *const c_char,
    out: *mut *mut PartsegDataset,
) -> PartsegStatus {
    if out.is_null() {
        set_last_error("null out argument");
        return PartsegStatus::NullArgument;
    }
    let dir = match path_arg(dir) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match load_dataset(dir) {
        Ok(d) => {
            *out = Box::into_raw(Box::new(PartsegDataset { inner: d }));
            PartsegStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Writes a dataset directory.
///
/// # Safety
/// `handle` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn partseg_dataset_save(
    handle: *const PartsegDataset,
    dir: *const c_char,
) -> PartsegStatus {
    if handle.is_null() {
        set_last_error("null dataset handle");
        return PartsegStatus::NullArgument;
    }
    let dir = match path_arg(dir) {
        Ok(p) => p,
        Err(code) => return code,
    };
    match save_dataset(&(*handle).inner, dir) {
        Ok(()) => PartsegStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Number of scans in the dataset, or 0 for a null handle.
///
/// # Safety
/// `handle` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn partseg_dataset_len(handle: *const PartsegDataset) -> usize {
    if handle.is_null() {
        return 0;
    }
    (*handle).inner.len()
}

/// Frees a dataset handle; a null handle is a no-op.
///
/// # Safety
/// `handle` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn partseg_dataset_free(handle: *mut PartsegDataset) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Dice overlap of two row-major binary masks of shape `h` x `w`.
///
/// # Safety
/// `pred` and `reference` must each point to `h * w` bytes; `out` must be
/// a writable double.
#[no_mangle]
pub unsafe extern "C" fn partseg_dice(
    pred: *const u8,
    reference: *const u8,
    h: usize,
    w: usize,
    out: *mut f64,
) -> PartsegStatus {
    if out.is_null() {
        set_last_error("null out argument");
        return PartsegStatus::NullArgument;
    }
    let (p, r) = match (mask_arg(pred, h, w), mask_arg(reference, h, w)) {
        (Ok(p), Ok(r)) => (p, r),
        (Err(c), _) | (_, Err(c)) => return c,
    };
    match dice(&p, &r) {
        Ok(v) => {
            *out = v;
            PartsegStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Symmetric surface Dice at tolerance `tau_mm`, with pixel spacing
/// (`spacing_h`, `spacing_w`) in millimetres.
///
/// # Safety
/// Same pointer contract as `partseg_dice`.
#[no_mangle]
pub unsafe extern "C" fn partseg_surface_dice(
    pred: *const u8,
    reference: *const u8,
    h: usize,
    w: usize,
    spacing_h: f64,
    spacing_w: f64,
    tau_mm: f64,
    out: *mut f64,
) -> PartsegStatus {
    if out.is_null() {
        set_last_error("null out argument");
        return PartsegStatus::NullArgument;
    }
    let (p, r) = match (mask_arg(pred, h, w), mask_arg(reference, h, w)) {
        (Ok(p), Ok(r)) => (p, r),
        (Err(c), _) | (_, Err(c)) => return c,
    };
    match surface_dice(&p, &r, (spacing_h, spacing_w), tau_mm) {
        Ok(v) => {
            *out = v;
            PartsegStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Mean of Dice and surface Dice at the 2mm combined tolerance.
///
/// # Safety
/// Same pointer contract as `partseg_dice`.
#[no_mangle]
pub unsafe extern "C" fn partseg_combined_score(
    pred: *const u8,
    reference: *const u8,
    h: usize,
    w: usize,
    spacing_h: f64,
    spacing_w: f64,
    out: *mut f64,
) -> PartsegStatus {
    if out.is_null() {
        set_last_error("null out argument");
        return PartsegStatus::NullArgument;
    }
    let (p, r) = match (mask_arg(pred, h, w), mask_arg(reference, h, w)) {
        (Ok(p), Ok(r)) => (p, r),
        (Err(c), _) | (_, Err(c)) => return c,
    };
    match combined_score(&p, &r, (spacing_h, spacing_w), &MetricConfig::default()) {
        Ok(v) => {
            *out = v;
            PartsegStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Relabels a partition genotype to first-occurrence canonical form,
/// writing `n` labels into `out_genes` (may alias `genes`).
///
/// # Safety
/// `genes` and `out_genes` must each point to `n` u32 values.
#[no_mangle]
pub unsafe extern "C" fn partseg_canonicalize(
    genes: *const u32,
    n: usize,
    alpha: u32,
    out_genes: *mut u32,
) -> PartsegStatus {
    if genes.is_null() || out_genes.is_null() {
        set_last_error("null genes argument");
        return PartsegStatus::NullArgument;
    }
    let input = std::slice::from_raw_parts(genes, n).to_vec();
    let g = match PartitionGenotype::new(input, alpha) {
        Ok(g) => g,
        Err(e) => return fail(e),
    };
    match canonicalize(&g) {
        Ok(c) => {
            ptr::copy_nonoverlapping(c.genes.as_ptr(), out_genes, n);
            PartsegStatus::Ok
        }
        Err(e) => fail(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    #[test]
    fn dataset_generate_len_save_load_free() {
        unsafe {
            let mut handle: *mut PartsegDataset = ptr::null_mut();
            let st = partseg_dataset_generate(8, 32, 2, 7, &mut handle);
            assert_eq!(st, PartsegStatus::Ok);
            assert_eq!(partseg_dataset_len(handle), 8);

            let dir = tempdir();
            let cdir = CString::new(dir.to_str().unwrap()).unwrap();
            assert_eq!(
                partseg_dataset_save(handle, cdir.as_ptr()),
                PartsegStatus::Ok
            );
            let mut reloaded: *mut PartsegDataset = ptr::null_mut();
            assert_eq!(
                partseg_dataset_load(cdir.as_ptr(), &mut reloaded),
                PartsegStatus::Ok
            );
            assert_eq!(partseg_dataset_len(reloaded), 8);
            partseg_dataset_free(handle);
            partseg_dataset_free(reloaded);
            std::fs::remove_dir_all(dir).unwrap();
        }
    }

    #[test]
    fn metrics_through_the_c_surface() {
        let a = [1u8; 16];
        let b = [1u8; 16];
        let mut out = 0.0;
        unsafe {
            assert_eq!(
                partseg_dice(a.as_ptr(), b.as_ptr(), 4, 4, &mut out),
                PartsegStatus::Ok
            );
            assert_eq!(out, 1.0);
            assert_eq!(
                partseg_surface_dice(a.as_ptr(), b.as_ptr(), 4, 4, 1.0, 1.0, 2.0, &mut out),
                PartsegStatus::Ok
            );
            assert_eq!(out, 1.0);
            assert_eq!(
                partseg_combined_score(a.as_ptr(), b.as_ptr(), 4, 4, 1.0, 1.0, &mut out),
                PartsegStatus::Ok
            );
            assert_eq!(out, 1.0);
        }
    }

    #[test]
    fn errors_set_status_and_message() {
        let bad = [7u8; 4];
        let good = [1u8; 4];
        let mut out = 0.0;
        unsafe {
            let st = partseg_dice(bad.as_ptr(), good.as_ptr(), 2, 2, &mut out);
            assert_ne!(st, PartsegStatus::Ok);
            let mut buf = [0i8; 256];
            let n = partseg_last_error_message(buf.as_mut_ptr(), buf.len());
            assert!(n > 0);
            let msg = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
            assert!(msg.contains("binary"), "{}", msg);

            assert_eq!(
                partseg_dice(ptr::null(), good.as_ptr(), 2, 2, &mut out),
                PartsegStatus::NullArgument
            );
        }
    }

    #[test]
    fn canonicalize_through_the_c_surface() {
        let genes = [2u32, 2, 1, 3];
        let mut out = [0u32; 4];
        unsafe {
            assert_eq!(
                partseg_canonicalize(genes.as_ptr(), 4, 3, out.as_mut_ptr()),
                PartsegStatus::Ok
            );
        }
        assert_eq!(out, [1, 1, 2, 3]);
    }

    fn tempdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "partseg-ffi-test-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
