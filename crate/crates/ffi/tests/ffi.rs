use std::ffi::{CStr, CString};
use std::ptr;

use mgic_ffi::*;

const BLOCK: &str = r#"{"kind":"block","channels":16,"hw":[2,2],
  "block":{"type":"mgic","s_g":4,"s_c":4,"template":{"kind":"simple-conv","d":3}}}"#;

fn create(json: &str, seed: u64) -> *mut MgicModel {
    let s = CString::new(json).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { mgic_model_from_json(s.as_ptr(), seed, &mut m) }, MgicStatus::Ok);
    m
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mgic_last_error()) }.to_string_lossy().into_owned()
}

fn forward(m: *const MgicModel, x: &[f32], batch: usize) -> Vec<f32> {
    let mut out = vec![0f32; x.len() * 4];
    let mut written = 0;
    let st = unsafe { mgic_model_forward(m, x.as_ptr(), batch, out.as_mut_ptr(), out.len(), &mut written) };
    assert_eq!(st, MgicStatus::Ok, "{}", last_error());
    out.truncate(written);
    out
}

#[test]
fn create_count_and_free() {
    let m = create(BLOCK, 1);
    let mut n = 0;
    assert_eq!(unsafe { mgic_model_param_count(m, &mut n) }, MgicStatus::Ok);
    assert!(n > 0);
    let mut shape = [0usize; 3];
    assert_eq!(unsafe { mgic_model_input_shape(m, shape.as_mut_ptr()) }, MgicStatus::Ok);
    assert_eq!(shape, [16, 2, 2]);
    unsafe { mgic_model_free(m) };
    unsafe { mgic_model_free(ptr::null_mut()) };
}

#[test]
fn malformed_json_is_a_config_error() {
    let s = CString::new(
        r#"{"kind":"block","channels":"x","block":{"type":"dense","template":{"kind":"simple-conv","d":3}}}"#,
    )
    .unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { mgic_model_from_json(s.as_ptr(), 0, &mut m) }, MgicStatus::Config);
    assert!(m.is_null());
    assert!(last_error().contains("invalid type"), "{}", last_error());
}

#[test]
fn null_arguments_are_reported() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { mgic_model_from_json(ptr::null(), 0, &mut m) }, MgicStatus::NullPointer);
    let mut n = 0;
    assert_eq!(unsafe { mgic_model_param_count(ptr::null(), &mut n) }, MgicStatus::NullPointer);
}

#[test]
fn short_output_buffer_reports_the_size() {
    let m = create(BLOCK, 2);
    let x = vec![0.5f32; 64];
    let mut out = [0f32; 4];
    let mut written = 0;
    let st = unsafe { mgic_model_forward(m, x.as_ptr(), 1, out.as_mut_ptr(), out.len(), &mut written) };
    assert_eq!(st, MgicStatus::BufferTooSmall);
    assert_eq!(written, 64);
    unsafe { mgic_model_free(m) };
}

#[test]
fn checkpoint_round_trip_through_the_abi() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let m = create(BLOCK, 3);
    assert_eq!(unsafe { mgic_model_save(m, path.as_ptr()) }, MgicStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { mgic_model_load(path.as_ptr(), &mut loaded) }, MgicStatus::Ok);
    let x: Vec<f32> = (0..128).map(|i| (i as f32 * 0.37).sin()).collect();
    assert_eq!(forward(m, &x, 2), forward(loaded, &x, 2));
    unsafe {
        mgic_model_free(m);
        mgic_model_free(loaded);
    }

    let mut bytes = std::fs::read(dir.path().join("m.ckpt")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(dir.path().join("m.ckpt"), bytes).unwrap();
    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { mgic_model_load(path.as_ptr(), &mut bad) }, MgicStatus::Corrupt);
    assert!(bad.is_null());
    let missing = CString::new(dir.path().join("none.ckpt").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { mgic_model_load(missing.as_ptr(), &mut bad) }, MgicStatus::Io);
}

#[test]
fn cost_json_two_phase() {
    let m = create(BLOCK, 4);
    let mut needed = 0;
    assert_eq!(unsafe { mgic_model_cost_json(m, ptr::null_mut(), 0, &mut needed) }, MgicStatus::BufferTooSmall);
    let mut buf = vec![0 as std::ffi::c_char; needed];
    assert_eq!(unsafe { mgic_model_cost_json(m, buf.as_mut_ptr(), buf.len(), &mut needed) }, MgicStatus::Ok);
    let json = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(v["flops"].as_u64().unwrap(), 2 * v["macs"].as_u64().unwrap());
    unsafe { mgic_model_free(m) };
}

#[test]
fn closed_form_matches_worked_value() {
    let mut out = 0;
    assert_eq!(unsafe { mgic_closed_form_params(64, 8, 8, 3, &mut out) }, MgicStatus::Ok);
    assert_eq!(out, 9536);
    assert_eq!(unsafe { mgic_closed_form_params(64, 8, 0, 3, &mut out) }, MgicStatus::Config);
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(mgic_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_against_the_header() {
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = profile_dir.join("libmgic_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("smoke");
    let status = std::process::Command::new("cc")
        .arg(manifest.join("tests/c_smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("closed=9536"), "{text}");
    assert!(text.contains("short=10"), "{text}");
}
