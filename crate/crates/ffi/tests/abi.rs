use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use ndarray::Array5;
use sckd::models::{build_network, NetworkSpec};
use sckd_ffi::*;

fn student(window: usize) -> *mut SckdNetwork {
    let mut net = ptr::null_mut();
    let s = unsafe { sckd_network_new(SCKD_ENCODER_C3D, true, window, 0.25, 3, &mut net) };
    assert_eq!(s, SckdStatus::Ok);
    assert!(!net.is_null());
    net
}

fn last_error() -> String {
    let p = sckd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn predictions_match_the_library() {
    let net = student(8);
    let x = Array5::from_shape_fn((2, 2, 8, 16, 8), |(b, f, t, h, w)| ((b + f * 3 + t * 5 + h + w) % 7) as f32 / 7.0);
    let mut y = vec![0f32; 2 * 2 * 8];
    let s = unsafe { sckd_network_predict(net, x.as_ptr(), 2, y.as_mut_ptr(), y.len()) };
    assert_eq!(s, SckdStatus::Ok);
    let reference = build_network(&NetworkSpec::student(8).with_width(0.25), 3)
        .unwrap()
        .forward(&x)
        .unwrap();
    assert_eq!(y, reference.iter().copied().collect::<Vec<_>>());

    let mut count = 0usize;
    assert_eq!(unsafe { sckd_network_parameter_count(net, &mut count) }, SckdStatus::Ok);
    assert!(count > 0);
    unsafe { sckd_network_free(net) };
}

#[test]
fn errors_are_reported_not_panicked() {
    let net = student(8);
    let x = vec![0f32; 2 * 8 * 16 * 8];
    let mut y = vec![0f32; 3];
    let s = unsafe { sckd_network_predict(net, x.as_ptr(), 1, y.as_mut_ptr(), y.len()) };
    assert_eq!(s, SckdStatus::Shape);
    assert!(last_error().contains("16"), "{}", last_error());

    let s = unsafe { sckd_network_predict(ptr::null(), x.as_ptr(), 1, y.as_mut_ptr(), 16) };
    assert_eq!(s, SckdStatus::NullPointer);

    let mut other = ptr::null_mut();
    assert_eq!(
        unsafe { sckd_network_new(9, false, 8, 1.0, 0, &mut other) },
        SckdStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { sckd_network_new(SCKD_ENCODER_C3D, false, 8, 1.0, 0, ptr::null_mut()) },
        SckdStatus::NullPointer
    );

    let missing = CString::new("/nonexistent/ckpt.bin").unwrap();
    assert_eq!(
        unsafe { sckd_network_load(missing.as_ptr(), &mut other) },
        SckdStatus::MissingArtifact
    );
    let mut window = 0;
    assert_eq!(unsafe { sckd_network_window(net, &mut window) }, SckdStatus::Ok);
    assert_eq!(window, 8);
    assert!(sckd_last_error().is_null());
    unsafe { sckd_network_free(net) };
    unsafe { sckd_network_free(ptr::null_mut()) };
}

#[test]
fn kernel_and_metrics() {
    let f = [3.0, 0.0, 0.0, 2.0];
    let mut g = [0.0; 4];
    assert_eq!(unsafe { sckd_correlation_map(f.as_ptr(), 2, 2, 0.4, 0, g.as_mut_ptr()) }, SckdStatus::Ok);
    assert_eq!(g[0], 1.0);
    assert!((g[1] - (-0.8f64).exp()).abs() < 1e-12);
    assert_eq!(unsafe { sckd_correlation_map(f.as_ptr(), 2, 2, -1.0, 0, g.as_mut_ptr()) }, SckdStatus::InvalidArgument);

    let truth = [0.1, 0.4, 0.2, 0.8];
    let pred: Vec<f64> = truth.iter().map(|v| v + 0.05).collect();
    let mut m = [0.0; 3];
    assert_eq!(unsafe { sckd_point_metrics(pred.as_ptr(), truth.as_ptr(), 4, m.as_mut_ptr()) }, SckdStatus::Ok);
    assert!((m[0] - 5.0).abs() < 1e-12 && (m[1] - 5.0).abs() < 1e-12 && (m[2] - 100.0).abs() < 1e-9);

    let mut ms = -1.0;
    let net = student(8);
    assert_eq!(unsafe { sckd_network_latency(net, 0, &mut ms) }, SckdStatus::Ok);
    assert_eq!(ms, 0.0);
    unsafe { sckd_network_free(net) };
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn header_declares_the_abi() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sckd.h")).unwrap();
    for name in [
        "SCKD_STATUS_OK",
        "typedef struct SckdNetwork SckdNetwork",
        "sckd_network_new",
        "sckd_network_load",
        "sckd_network_predict",
        "sckd_network_free",
        "sckd_correlation_map",
        "sckd_point_metrics",
        "sckd_last_error",
        "SCKD_ENCODER_R2PLUS1D",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    // `cargo build` leaves the archive in the profile directory, `cargo test` only under deps/
    let dir = target_dir();
    let Some(lib) = [dir.join("libsckd_ffi.a"), dir.join("deps/libsckd_ffi.a")]
        .into_iter()
        .find(|p| p.exists())
    else {
        eprintln!("skipping: no static library under {}", dir.display());
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let status = Command::new("cc")
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).arg(dir.path().join("net.bin")).output().unwrap();
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
