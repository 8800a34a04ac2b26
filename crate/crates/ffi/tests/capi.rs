use std::ffi::{c_char, CStr, CString};
use std::ptr;

use chrono::NaiveDate;
use clid_core::corpus::{Block, BlockKind, CorpusSnapshot};
use clid_ffi::*;

fn date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()
}

fn block(id: &str, title: &str, text: &str) -> Block {
    Block {
        block_id: id.into(),
        doc_title: title.into(),
        section_path: vec![],
        kind: BlockKind::Passage,
        text: text.into(),
        category: None,
        char_count: text.chars().count(),
    }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(clid_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn filter_boundaries() {
    for (len, expected) in [(99, false), (100, true), (320, true), (321, false)] {
        let s = CString::new("a".repeat(len)).unwrap();
        let mut keep = !expected;
        assert_eq!(unsafe { clid_filter_block(s.as_ptr(), 100, 320, &mut keep) }, ClidStatus::Ok);
        assert_eq!(keep, expected, "{len}");
    }
    let bad = [0xffu8, 0];
    let mut keep = false;
    assert_eq!(unsafe { clid_filter_block(bad.as_ptr().cast(), 1, 10, &mut keep) }, ClidStatus::InvalidUtf8);
    assert_eq!(unsafe { clid_filter_block(ptr::null(), 1, 10, &mut keep) }, ClidStatus::NullArgument);
}

#[test]
fn statistics() {
    let mut n = 0;
    assert_eq!(unsafe { clid_cochran(2.576, 0.5, 0.05, &mut n) }, ClidStatus::Ok);
    assert_eq!(n, 664);

    let mut ci = ClidInterval::default();
    assert_eq!(unsafe { clid_proportion_ci(23, 700, 0.99, &mut ci) }, ClidStatus::Ok);
    assert!((ci.p_hat - 23.0 / 700.0).abs() < 1e-12);
    assert!((ci.margin * 100.0 - 1.74).abs() < 0.05);
    assert!(ci.lower < ci.p_hat && ci.p_hat < ci.upper);
    assert_eq!(unsafe { clid_proportion_ci(1, 0, 0.99, &mut ci) }, ClidStatus::InvalidArgument);

    let scores = [0.9, 0.8, 0.3, 0.1];
    let labels = [1u8, 0, 1, 0];
    let mut auc = 0.0;
    assert_eq!(unsafe { clid_auroc(scores.as_ptr(), labels.as_ptr(), 4, &mut auc) }, ClidStatus::Ok);
    assert!((auc - 0.75).abs() < 1e-12);
    let one_class = [1u8; 4];
    assert_eq!(unsafe { clid_auroc(scores.as_ptr(), one_class.as_ptr(), 4, &mut auc) }, ClidStatus::InvalidArgument);
    assert!(!last_error().is_empty());
}

#[test]
fn snapshot_index_search() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("snap.jsonl");
    let snap = CorpusSnapshot::from_blocks(
        date(),
        vec![
            block("a1", "Ashford", "Ashford is a market town on the river Wey."),
            block("b1", "Bexley", "Bexley records say Ashford is a market town on the river Mole."),
            block("c1", "Quito", "Quito is the capital of Ecuador."),
        ],
    )
    .unwrap();
    snap.save(&path).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();

    let mut handle: *mut ClidSnapshot = ptr::null_mut();
    assert_eq!(unsafe { clid_snapshot_load(cpath.as_ptr(), &mut handle) }, ClidStatus::Ok);
    assert_eq!(unsafe { clid_snapshot_len(handle) }, 3);

    let mut index: *mut ClidIndex = ptr::null_mut();
    assert_eq!(unsafe { clid_index_build(handle, 256, &mut index) }, ClidStatus::Ok);
    unsafe { clid_snapshot_free(handle) };

    let query = CString::new("Ashford market town river").unwrap();
    let exclude = CString::new("Ashford").unwrap();
    let mut json: *mut c_char = ptr::null_mut();
    assert_eq!(unsafe { clid_index_search(index, query.as_ptr(), 2, exclude.as_ptr(), &mut json) }, ClidStatus::Ok);
    let hits: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(json) }.to_str().unwrap()).unwrap();
    unsafe { clid_string_free(json) };
    let ids: Vec<&str> = hits.as_array().unwrap().iter().map(|h| h["block_id"].as_str().unwrap()).collect();
    assert_eq!(ids[0], "b1");
    assert!(!ids.contains(&"a1"));

    let mut json: *mut c_char = ptr::null_mut();
    assert_eq!(
        unsafe { clid_index_search(index, query.as_ptr(), 0, ptr::null(), &mut json) },
        ClidStatus::InvalidArgument
    );
    assert!(json.is_null());
    unsafe { clid_index_free(index) };
}

#[test]
fn missing_files_are_io_errors() {
    let path = CString::new("/nonexistent/snap.jsonl").unwrap();
    let mut handle: *mut ClidSnapshot = ptr::null_mut();
    assert_eq!(unsafe { clid_snapshot_load(path.as_ptr(), &mut handle) }, ClidStatus::Io);
    assert!(handle.is_null());
    let mut index: *mut ClidIndex = ptr::null_mut();
    assert_eq!(unsafe { clid_index_load(path.as_ptr(), &mut index) }, ClidStatus::Io);
    assert_eq!(unsafe { clid_index_build(ptr::null(), 16, &mut index) }, ClidStatus::NullArgument);
    unsafe {
        clid_snapshot_free(ptr::null_mut());
        clid_index_free(ptr::null_mut());
        clid_string_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/clid.h");
    for name in [
        "clid_last_error",
        "clid_version",
        "clid_string_free",
        "clid_filter_block",
        "clid_cochran",
        "clid_proportion_ci",
        "clid_auroc",
        "clid_snapshot_load",
        "clid_snapshot_len",
        "clid_snapshot_free",
        "clid_index_build",
        "clid_index_load",
        "clid_index_search",
        "clid_index_free",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name}");
    }
    assert!(header.contains("typedef struct ClidIndex ClidIndex;"));
}

const C_SMOKE: &str = r#"
#include <stdio.h>
#include "clid.h"

int main(void) {
    uint64_t n = 0;
    if (clid_cochran(2.576, 0.5, 0.05, &n) != CLID_STATUS_OK || n != 664) return 1;
    bool keep = true;
    if (clid_filter_block("short", 100, 320, &keep) != CLID_STATUS_OK || keep) return 2;
    if (clid_cochran(2.576, 0.5, 0.0, &n) != CLID_STATUS_INVALID_ARGUMENT) return 3;
    if (clid_last_error() == NULL) return 4;
    printf("%s\n", clid_version());
    return 0;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libclid_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if std::process::Command::new(&cc).arg("--version").output().is_err() || !lib.exists() {
        eprintln!("no C toolchain or static library; header compile check skipped");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let exe = dir.path().join("smoke");
    std::fs::write(&src, C_SMOKE).unwrap();
    let status = std::process::Command::new(&cc)
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = std::process::Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
