use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use superexpressive_ffi::*;

fn last_error() -> String {
    unsafe {
        let n = se_last_error_message(ptr::null_mut(), 0);
        let mut buf = vec![0u8; n + 1];
        se_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len());
        buf.truncate(n);
        String::from_utf8(buf).unwrap()
    }
}

#[test]
fn activation_values_and_derivatives() {
    let mut y = 0.0;
    assert_eq!(unsafe { se_activation_eval(SeActivation::Euaf, 1.0, 1.5, &mut y) }, SeStatus::Ok);
    assert_eq!(y, 0.5);
    assert_eq!(unsafe { se_activation_eval(SeActivation::Peuaf, 0.5, 3.0, &mut y) }, SeStatus::Ok);
    assert_eq!(y, 0.5);
    let (mut dx, mut dw) = (0.0, 0.0);
    assert_eq!(unsafe { se_activation_derivs(SeActivation::Peuaf, 0.5, 3.0, &mut dx, &mut dw) }, SeStatus::Ok);
    assert_eq!((dx, dw), (-0.5, -3.0));
}

#[test]
fn errors_are_reported_per_call() {
    let mut y = 0.0;
    let s = unsafe { se_activation_eval(SeActivation::Euaf, 1.0, f64::NAN, &mut y) };
    assert_eq!(s, SeStatus::Domain);
    assert!(last_error().contains("non-finite"), "{}", last_error());
    let s = unsafe { se_activation_eval(SeActivation::Peuaf, -1.0, 1.0, &mut y) };
    assert_eq!(s, SeStatus::InvalidArgument);
    assert_eq!(unsafe { se_activation_eval(SeActivation::Euaf, 1.0, 1.0, ptr::null_mut()) }, SeStatus::NullPointer);
    assert_eq!(unsafe { se_activation_eval(SeActivation::Euaf, 1.0, 0.25, &mut y) }, SeStatus::Ok);
    assert_eq!(last_error(), "");
}

#[test]
fn approximate_save_load_and_evaluate() {
    let target = CString::new("linear").unwrap();
    let mut net = ptr::null_mut();
    let s = unsafe { se_network_approximate(SeActivation::Euaf, target.as_ptr(), 1, 0.25, 0, &mut net) };
    assert_eq!(s, SeStatus::Ok, "{}", last_error());
    let (mut w, mut d, mut n) = (0, 0, 0);
    assert_eq!(unsafe { se_network_architecture(net, &mut w, &mut d, &mut n) }, SeStatus::Ok);
    assert!(w > 0 && d > 0 && n > 0);
    assert_eq!(unsafe { se_network_input_dim(net) }, 1);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("net.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { se_network_save(net, path.as_ptr(), true) }, SeStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { se_network_load(path.as_ptr(), &mut back) }, SeStatus::Ok);
    for k in 0..=20 {
        let x = [k as f64 / 20.0];
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(unsafe { se_network_eval(net, x.as_ptr(), 1, &mut a) }, SeStatus::Ok);
        assert_eq!(unsafe { se_network_eval(back, x.as_ptr(), 1, &mut b) }, SeStatus::Ok);
        assert_eq!(a.to_bits(), b.to_bits());
        assert!((a - x[0]).abs() < 0.25);
    }
    let x = [0.1, 0.2];
    let mut y = 0.0;
    assert_eq!(unsafe { se_network_eval(net, x.as_ptr(), 2, &mut y) }, SeStatus::DimensionMismatch);
    unsafe {
        se_network_free(net);
        se_network_free(back);
        se_network_free(ptr::null_mut());
    }
}

#[test]
fn unknown_target_and_missing_file() {
    let target = CString::new("no-such-target").unwrap();
    let mut net = ptr::null_mut();
    let s = unsafe { se_network_approximate(SeActivation::Euaf, target.as_ptr(), 1, 0.25, 0, &mut net) };
    assert_eq!(s, SeStatus::InvalidArgument);
    assert!(net.is_null());
    let path = CString::new("/nonexistent/net.json").unwrap();
    assert_eq!(unsafe { se_network_load(path.as_ptr(), &mut net) }, SeStatus::Io);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { se_model_load(path.as_ptr(), &mut model) }, SeStatus::Io);
}

#[test]
fn model_prediction_and_occlusion() {
    use superexpressive::nntrain::{Act, Model, ModelConfig};
    let model = Model::new(ModelConfig::baseline_b(200, 3, Act::Peuaf), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("model.json");
    std::fs::write(&file, model.to_json()).unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { se_model_load(path.as_ptr(), &mut h) }, SeStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { se_model_input_len(h) }, 200);
    assert_eq!(unsafe { se_model_classes(h) }, 3);

    let signal: Vec<f64> = (0..200).map(|t| (t as f64 * 0.3).sin()).collect();
    let mut p = [0.0; 3];
    assert_eq!(unsafe { se_model_predict(h, signal.as_ptr(), 200, p.as_mut_ptr(), 3) }, SeStatus::Ok);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let mut written = 0;
    let mut small = [0.0; 1];
    let s = unsafe { se_model_occlusion(h, signal.as_ptr(), 200, 0, 100, 50, small.as_mut_ptr(), 1, &mut written) };
    assert_eq!((s, written), (SeStatus::BufferTooSmall, 3));
    let mut drops = [0.0; 3];
    let s = unsafe { se_model_occlusion(h, signal.as_ptr(), 200, 0, 100, 50, drops.as_mut_ptr(), 3, &mut written) };
    assert_eq!(s, SeStatus::Ok);
    let s = unsafe { se_model_occlusion(h, signal.as_ptr(), 200, 0, 300, 50, drops.as_mut_ptr(), 3, &mut written) };
    assert_eq!(s, SeStatus::InvalidArgument);
    unsafe { se_model_free(h) };
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/superexpressive.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "se_version",
        "se_last_error_message",
        "se_activation_eval",
        "se_activation_derivs",
        "se_network_approximate",
        "se_network_load",
        "se_network_save",
        "se_network_eval",
        "se_network_architecture",
        "se_network_input_dim",
        "se_network_free",
        "se_model_load",
        "se_model_input_len",
        "se_model_classes",
        "se_model_predict",
        "se_model_occlusion",
        "se_model_free",
        "SE_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(text.contains(name), "{name} missing from the header");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler).args(["-fsyntax-only", "-x", lang]).arg(&header).output() else {
            eprintln!("{compiler} not available; skipping compile check");
            continue;
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let v = unsafe { std::ffi::CStr::from_ptr(se_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
