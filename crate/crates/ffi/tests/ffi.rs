use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use margreg_ffi::*;

fn init(sizes: &[usize], act: MargregActivation) -> *mut MargregModel {
    let mut m = ptr::null_mut();
    let s = unsafe { margreg_model_init(sizes.as_ptr(), sizes.len(), act, 7, &mut m) };
    assert_eq!(s, MargregStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = margreg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn forward_matches_core_and_checks_buffer_size() {
    let m = init(&[3, 4, 2], MargregActivation::Softplus);
    unsafe {
        assert_eq!(margreg_model_input_dim(m), 3);
        assert_eq!(margreg_model_class_count(m), 2);
        let x = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let mut out = [0.0; 4];
        assert_eq!(margreg_model_forward(m, x.as_ptr(), 2, 3, out.as_mut_ptr(), 4), MargregStatus::Ok);
        let core = margreg::model::Model::init(&[3, 4, 2], margreg::model::Activation::Softplus, 7).unwrap();
        let expect = core
            .forward(&margreg::Tensor::matrix(2, 3, x.to_vec()).unwrap())
            .unwrap();
        assert_eq!(&out[..], expect.values());
        assert_eq!(
            margreg_model_forward(m, x.as_ptr(), 2, 3, out.as_mut_ptr(), 3),
            MargregStatus::Shape
        );
        assert!(last_error().contains("holds 3"));
        assert_eq!(
            margreg_model_forward(m, x.as_ptr(), 3, 2, out.as_mut_ptr(), 6),
            MargregStatus::Shape
        );
        margreg_model_free(m);
    }
}

#[test]
fn stable_and_efficient_agree_through_the_abi() {
    let m = init(&[4, 5, 3], MargregActivation::Softplus);
    let x = [0.3, -0.2, 0.8, 0.1, 0.0, 0.5, 0.9, -0.4];
    let classes = [0usize, 2];
    let mut a = [0.0; 8];
    let mut b = [0.0; 8];
    let mut c = [0.0; 8];
    let mut finite = false;
    unsafe {
        for (variant, out) in [
            (MargregVariant::MarginalStable, &mut a),
            (MargregVariant::MarginalEfficient, &mut b),
        ] {
            let s = margreg_input_gradient(
                m, variant, x.as_ptr(), 2, 4, classes.as_ptr(), out.as_mut_ptr(), 8, &mut finite,
            );
            assert_eq!(s, MargregStatus::Ok);
            assert!(finite);
        }
        let s = margreg_input_gradient(
            m,
            MargregVariant::MarginalNaive,
            x.as_ptr(),
            2,
            4,
            ptr::null(),
            c.as_mut_ptr(),
            8,
            ptr::null_mut(),
        );
        assert_eq!(s, MargregStatus::Ok);
        let s = margreg_input_gradient(
            m,
            MargregVariant::MarginalStable,
            x.as_ptr(),
            2,
            4,
            ptr::null(),
            c.as_mut_ptr(),
            8,
            ptr::null_mut(),
        );
        assert_eq!(s, MargregStatus::NullPointer);
        margreg_model_free(m);
    }
    for i in 0..8 {
        assert!((a[i] - b[i]).abs() <= 1e-9);
        assert!((a[i] - c[i]).abs() <= 1e-9);
    }
}

#[test]
fn save_load_round_trip_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let m = init(&[2, 2], MargregActivation::Relu);
    unsafe {
        assert_eq!(margreg_model_save(m, path.as_ptr()), MargregStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(margreg_model_load(path.as_ptr(), &mut back), MargregStatus::Ok);
        let x = [0.25, 0.75];
        let (mut o1, mut o2) = ([0.0; 2], [0.0; 2]);
        margreg_model_forward(m, x.as_ptr(), 1, 2, o1.as_mut_ptr(), 2);
        margreg_model_forward(back, x.as_ptr(), 1, 2, o2.as_mut_ptr(), 2);
        assert_eq!(o1, o2);
        margreg_model_free(back);
        margreg_model_free(m);

        let missing = CString::new("/nonexistent/m.ckpt").unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(margreg_model_load(missing.as_ptr(), &mut h), MargregStatus::Io);
        assert!(last_error().contains("/nonexistent/m.ckpt"));
        assert!(h.is_null());
        margreg_model_free(ptr::null_mut());
    }
}

#[test]
fn auroc_and_error_codes() {
    let mut r = 0.0;
    unsafe {
        let a = [3.0, 1.0];
        let b = [2.0, 0.0];
        assert_eq!(margreg_auroc(a.as_ptr(), 2, b.as_ptr(), 2, &mut r), MargregStatus::Ok);
        assert_eq!(r, 0.75);
        assert!(margreg_last_error().is_null());
        assert_eq!(
            margreg_auroc(a.as_ptr(), 0, b.as_ptr(), 2, &mut r),
            MargregStatus::InvalidArgument
        );
        assert_eq!(
            margreg_auroc(ptr::null(), 2, b.as_ptr(), 2, &mut r),
            MargregStatus::NullPointer
        );
        let bad = [1usize];
        let mut m = ptr::null_mut();
        assert_eq!(
            margreg_model_init(bad.as_ptr(), 1, MargregActivation::Relu, 0, &mut m),
            MargregStatus::InvalidArgument
        );
    }
    let v = unsafe { CStr::from_ptr(margreg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compiles and runs a small C program against the generated header and
/// the static library.
#[test]
fn c_program_links_against_header() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler available; skipping");
        return;
    }
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let target_dir = crate_dir.join("../../target");
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    let lib = target_dir.join(profile).join("libmargreg_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "margreg.h"
int main(void) {
    size_t sizes[3] = {2, 3, 2};
    MargregModel *m = NULL;
    if (margreg_model_init(sizes, 3, MARGREG_ACTIVATION_SOFTPLUS, 1, &m) != MARGREG_STATUS_OK) return 1;
    double x[2] = {0.5, -0.5}, g[2];
    size_t cls[1] = {1};
    bool finite = false;
    if (margreg_input_gradient(m, MARGREG_VARIANT_MARGINAL_EFFICIENT, x, 1, 2, cls, g, 2, &finite) != MARGREG_STATUS_OK) return 2;
    double a[2] = {3, 1}, b[2] = {2, 0}, r = 0;
    if (margreg_auroc(a, 2, b, 2, &r) != MARGREG_STATUS_OK || r != 0.75) return 3;
    if (margreg_model_forward(m, x, 1, 2, g, 1) != MARGREG_STATUS_SHAPE) return 4;
    if (margreg_last_error() == NULL) return 5;
    margreg_model_free(m);
    printf("ok %d\n", finite);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "ok 1\n");
}
