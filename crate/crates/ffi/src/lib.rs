//! C ABI over clid-core: block filtering, sample sizes and intervals, AUROC,
//! and snapshot/index handles for retrieval.
//!
//! Every fallible call returns a [`ClidStatus`]; on failure the message is
//! available from [`clid_last_error`] on the same thread. Strings returned
//! through out-pointers are owned by the caller and released with
//! [`clid_string_free`].

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use clid_core::corpus::{filter_block, CorpusSnapshot};
use clid_core::embedding::{build_index, HashEmbedder, Retriever, VectorIndex};
use clid_core::estimation::proportion_ci;
use clid_core::evaluation::compute_auroc;
use libc::c_char;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClidStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Panic = 5,
}

/// Point estimate and interval for a proportion.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClidInterval {
    pub p_hat: f64,
    pub margin: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Opaque corpus snapshot.
pub struct ClidSnapshot {
    inner: Arc<CorpusSnapshot>,
}

/// Opaque search index over a snapshot, using the built-in hash embedder.
pub struct ClidIndex {
    retriever: Retriever,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

type FfiResult<T> = Result<T, (ClidStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> ClidStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ClidStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ClidStatus::Panic
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> (ClidStatus, String) {
    (ClidStatus::InvalidArgument, e.to_string())
}

fn io(e: impl std::fmt::Display) -> (ClidStatus, String) {
    (ClidStatus::Io, e.to_string())
}

unsafe fn out<'a, T>(ptr: *mut T, name: &str) -> FfiResult<&'a mut T> {
    ptr.as_mut().ok_or_else(|| (ClidStatus::NullArgument, format!("{name} is null")))
}

unsafe fn text<'a>(ptr: *const c_char, name: &str) -> FfiResult<&'a str> {
    if ptr.is_null() {
        return Err((ClidStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| (ClidStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn clid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn clid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from a clid function that hands out strings and must not be
/// freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn clid_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Sets `*keep` to whether a block of `block_text` passes the length filter
/// (character counts, inclusive bounds).
///
/// # Safety
/// `block_text` must be a NUL-terminated string and `keep` writable.
#[no_mangle]
pub unsafe extern "C" fn clid_filter_block(
    block_text: *const c_char,
    min_chars: usize,
    max_chars: usize,
    keep: *mut bool,
) -> ClidStatus {
    guard(|| {
        let t = text(block_text, "block_text")?;
        *out(keep, "keep")? = filter_block(t, min_chars, max_chars);
        Ok(())
    })
}

/// Cochran sample size for confidence multiplier `z`, expected proportion
/// `p` and margin of error `margin`.
///
/// # Safety
/// `n` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clid_cochran(z: f64, p: f64, margin: f64, n: *mut u64) -> ClidStatus {
    guard(|| {
        *out(n, "n")? = clid_core::estimation::cochran_sample_size(z, p, margin).map_err(invalid)?;
        Ok(())
    })
}

/// Normal-approximation interval for `successes` out of `n`.
///
/// # Safety
/// `interval` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clid_proportion_ci(
    successes: u64,
    n: u64,
    confidence: f64,
    interval: *mut ClidInterval,
) -> ClidStatus {
    guard(|| {
        let slot = out(interval, "interval")?;
        let e = proportion_ci(successes, n, confidence).map_err(invalid)?;
        *slot = ClidInterval { p_hat: e.p_hat, margin: e.margin, lower: e.interval.0, upper: e.interval.1 };
        Ok(())
    })
}

/// AUROC of `scores` against 0/1 `labels`, both of length `len`.
///
/// # Safety
/// `scores` and `labels` must point to `len` readable elements; `auroc`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn clid_auroc(scores: *const f64, labels: *const u8, len: usize, auroc: *mut f64) -> ClidStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() {
            return Err((ClidStatus::NullArgument, "scores or labels is null".into()));
        }
        let scores = std::slice::from_raw_parts(scores, len);
        let golds: Vec<bool> = std::slice::from_raw_parts(labels, len).iter().map(|&l| l != 0).collect();
        *out(auroc, "auroc")? = compute_auroc(scores, &golds).map_err(invalid)?;
        Ok(())
    })
}

/// Loads a snapshot written by `clid ingest`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `snapshot` writable. Release
/// the handle with [`clid_snapshot_free`].
#[no_mangle]
pub unsafe extern "C" fn clid_snapshot_load(path: *const c_char, snapshot: *mut *mut ClidSnapshot) -> ClidStatus {
    guard(|| {
        let slot = out(snapshot, "snapshot")?;
        let snap = CorpusSnapshot::load(Path::new(text(path, "path")?)).map_err(io)?;
        *slot = Box::into_raw(Box::new(ClidSnapshot { inner: Arc::new(snap) }));
        Ok(())
    })
}

/// Number of blocks, or 0 for NULL.
///
/// # Safety
/// `snapshot` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clid_snapshot_len(snapshot: *const ClidSnapshot) -> usize {
    snapshot.as_ref().map_or(0, |s| s.inner.len())
}

/// # Safety
/// `snapshot` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clid_snapshot_free(snapshot: *mut ClidSnapshot) {
    if !snapshot.is_null() {
        drop(Box::from_raw(snapshot));
    }
}

/// Builds an index over `snapshot` with a `dim`-wide hash embedder. The
/// snapshot handle may be freed afterwards.
///
/// # Safety
/// `snapshot` must be a live handle and `index` writable. Release the
/// result with [`clid_index_free`].
#[no_mangle]
pub unsafe extern "C" fn clid_index_build(
    snapshot: *const ClidSnapshot,
    dim: usize,
    index: *mut *mut ClidIndex,
) -> ClidStatus {
    guard(|| {
        let slot = out(index, "index")?;
        let snap = snapshot.as_ref().ok_or((ClidStatus::NullArgument, "snapshot is null".to_string()))?;
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let embedder = Arc::new(HashEmbedder::new(dim));
        let built = build_index(snap.inner.blocks(), embedder.as_ref()).map_err(invalid)?;
        *slot = Box::into_raw(Box::new(ClidIndex { retriever: Retriever::new(built, embedder) }));
        Ok(())
    })
}

/// Loads an index written by `clid index` (hash embedder only).
///
/// # Safety
/// `path` must be a NUL-terminated string and `index` writable.
#[no_mangle]
pub unsafe extern "C" fn clid_index_load(path: *const c_char, index: *mut *mut ClidIndex) -> ClidStatus {
    guard(|| {
        let slot = out(index, "index")?;
        let loaded = VectorIndex::load(Path::new(text(path, "path")?)).map_err(io)?;
        let embedder = Arc::new(HashEmbedder::new(loaded.dim()));
        *slot = Box::into_raw(Box::new(ClidIndex { retriever: Retriever::new(loaded, embedder) }));
        Ok(())
    })
}

/// Top-`k` blocks for `query` as a JSON array of
/// `{block_id, similarity, rank}`. Blocks of the document titled
/// `exclude_title` are skipped; pass NULL to search everything.
///
/// # Safety
/// `index` must be a live handle, `query` NUL-terminated, `exclude_title`
/// NULL or NUL-terminated, and `json` writable. Free the string with
/// [`clid_string_free`].
#[no_mangle]
pub unsafe extern "C" fn clid_index_search(
    index: *const ClidIndex,
    query: *const c_char,
    k: usize,
    exclude_title: *const c_char,
    json: *mut *mut c_char,
) -> ClidStatus {
    guard(|| {
        let slot = out(json, "json")?;
        let idx = index.as_ref().ok_or((ClidStatus::NullArgument, "index is null".to_string()))?;
        let q = text(query, "query")?;
        let exclude = if exclude_title.is_null() { None } else { Some(text(exclude_title, "exclude_title")?) };
        let hits = idx.retriever.search(q, k, exclude).map_err(invalid)?;
        let body = serde_json::to_string(&hits).map_err(invalid)?;
        *slot = CString::new(body).map_err(invalid)?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `index` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clid_index_free(index: *mut ClidIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}
