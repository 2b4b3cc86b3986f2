use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use forcelr::archive::ModelArchive;
use forcelr::nn::Net;
use forcelr_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(flr_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn force_gradient_and_errors() {
    let w = [2.0, 0.0, 0.0, 1.0];
    let mut m = ptr::null_mut();
    unsafe {
        assert_eq!(flr_filter_matrix_new(w.as_ptr(), 2, 2, &mut m), FlrStatus::Ok);
        let mut delta = [0.0; 4];
        assert_eq!(flr_force_gradient(m, 0, 0, delta.as_mut_ptr(), 4), FlrStatus::Ok);
        assert_eq!(delta, [0.0, 2.0, 1.0, 0.0]);
        assert_eq!(last_error(), "");

        assert_eq!(flr_force_gradient(m, 0, 9, delta.as_mut_ptr(), 4), FlrStatus::InvalidArgument);
        assert!(last_error().contains("scaler"));
        assert_eq!(flr_force_gradient(ptr::null(), 0, 0, delta.as_mut_ptr(), 4), FlrStatus::NullPointer);
        assert_eq!(flr_force_gradient(m, 0, 0, ptr::null_mut(), 4), FlrStatus::NullPointer);

        let mut r = 0.0;
        assert_eq!(flr_reference_regularizer(m, 0, &mut r), FlrStatus::Ok);
        assert!((r - 1.0).abs() < 1e-15);

        let mut curve = [0.0; 2];
        assert_eq!(flr_error_curve(m, 1, 0, curve.as_mut_ptr(), 2), FlrStatus::Ok);
        assert!((curve[0] - 0.2).abs() < 1e-12 && curve[1] == 0.0);
        let mut rank = 0;
        assert_eq!(flr_select_rank(m, 0.25, &mut rank), FlrStatus::Ok);
        assert_eq!(rank, 1);
        assert_eq!(flr_select_rank(m, 1.5, &mut rank), FlrStatus::InvalidArgument);

        let mut f = ptr::null_mut();
        assert_eq!(flr_factorize(m, 0, 3, 0, &mut f), FlrStatus::InvalidArgument);
        assert!(f.is_null());
        flr_filter_matrix_free(m);
        flr_filter_matrix_free(ptr::null_mut());
    }
}

#[test]
fn model_round_trip_and_decompose() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("model");
    let net = Net::tiny_convnet([1, 8, 8], 2, 4).unwrap();
    ModelArchive::new(net.clone()).save(&src).unwrap();
    let c_src = CString::new(src.to_str().unwrap()).unwrap();
    let x: Vec<f32> = (0..2 * 64).map(|k| (k as f32 * 0.37).sin()).collect();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(flr_model_load(c_src.as_ptr(), &mut model), FlrStatus::Ok);
        let (mut shape, mut classes) = ([0usize; 3], 0usize);
        assert_eq!(flr_model_shape(model, shape.as_mut_ptr(), &mut classes), FlrStatus::Ok);
        assert_eq!((shape, classes), ([1, 8, 8], 2));

        let mut logits = [0f32; 4];
        assert_eq!(flr_model_forward(model, x.as_ptr(), 2, logits.as_mut_ptr(), 4), FlrStatus::Ok);
        let direct = net
            .forward(&forcelr::nn::Tensor::new([2, 1, 8, 8], x.clone()).unwrap())
            .unwrap();
        assert_eq!(logits.to_vec(), direct.data);
        assert_eq!(flr_model_forward(model, x.as_ptr(), 2, logits.as_mut_ptr(), 3), FlrStatus::Shape);

        // lossless at tau = 0
        let mut split = ptr::null_mut();
        assert_eq!(flr_model_decompose(model, 0, 0.0, ptr::null(), 0, 0, &mut split), FlrStatus::Ok);
        let mut split_logits = [0f32; 4];
        assert_eq!(flr_model_forward(split, x.as_ptr(), 2, split_logits.as_mut_ptr(), 4), FlrStatus::Ok);
        for (a, b) in logits.iter().zip(&split_logits) {
            assert!((a - b).abs() < 1e-5);
        }
        let dst = CString::new(tmp.path().join("split").to_str().unwrap()).unwrap();
        assert_eq!(flr_model_save(split, dst.as_ptr()), FlrStatus::Ok);
        let loaded = ModelArchive::load(&tmp.path().join("split")).unwrap();
        assert_eq!(loaded.decomposition.unwrap().tau, Some(0.0));

        let ranks = [2usize];
        let mut bad = ptr::null_mut();
        assert_eq!(flr_model_decompose(model, 0, 0.0, ranks.as_ptr(), 1, 0, &mut bad), FlrStatus::InvalidArgument);
        flr_model_free(split);
        flr_model_free(model);

        let missing = CString::new(tmp.path().join("nope").to_str().unwrap()).unwrap();
        assert_eq!(flr_model_load(missing.as_ptr(), &mut model), FlrStatus::Io);
    }
}

/// Compiles tests/smoke.c against the generated header and the static
/// library and runs it.
#[test]
fn c_program_links_against_header() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = crate_dir.join("include/forcelr.h");
    assert!(header.exists(), "build script should have written {}", header.display());
    // target/<profile>/deps/<test binary>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libforcelr_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());
    let exe = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("forcelr_smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .arg("-o")
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success(), "compiling smoke.c failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("c smoke ok"));
}
