//! Exercises the C ABI end to end from Rust: handle lifecycle, status
//! codes, buffer contracts, and the train/detect/generate flow.

use cpsde_ffi::*;
use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cpsde-ffi-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const SMALL_CONFIG: &str = r#"
[data.synthetic]
n_paths = 8
n_steps = 12
change_points = [6]
segments = [
  { mu = 0.04, theta = 0.1, sigma = 0.4 },
  { mu = -0.02, theta = 0.1, sigma = 0.4 },
]

[model]
v_dim = 2
x_dim = 2
w_dim = 2
gen_hidden = 4
h_dim = 3
disc_hidden = 4

[train]
window = 3
min_segment = 3
batch_size = 4
rounds = 2
steps_per_round = 2
d_steps_per_g = 1
"#;

fn synthesize(seed: u64) -> *mut CpsdeDataset {
    let cfg = c(SMALL_CONFIG);
    let mut ds: *mut CpsdeDataset = ptr::null_mut();
    let status = unsafe { cpsde_dataset_synthesize(cfg.as_ptr(), seed, &mut ds) };
    assert_eq!(status, CpsdeStatus::Ok);
    assert!(!ds.is_null());
    ds
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(cpsde_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn synthesize_save_load_round_trip() {
    let ds = synthesize(3);
    assert_eq!(unsafe { cpsde_dataset_num_paths(ds) }, 8);
    assert_eq!(unsafe { cpsde_dataset_num_steps(ds) }, 12);
    assert_eq!(unsafe { cpsde_dataset_num_channels(ds) }, 1);

    let dir = tmp_dir("roundtrip");
    let csv = c(dir.join("data.csv").to_str().unwrap());
    assert_eq!(
        unsafe { cpsde_dataset_save_csv(ds, csv.as_ptr()) },
        CpsdeStatus::Ok
    );
    let mut loaded: *mut CpsdeDataset = ptr::null_mut();
    assert_eq!(
        unsafe { cpsde_dataset_from_csv(csv.as_ptr(), &mut loaded) },
        CpsdeStatus::Ok
    );
    assert_eq!(unsafe { cpsde_dataset_num_paths(loaded) }, 8);
    assert_eq!(unsafe { cpsde_dataset_num_steps(loaded) }, 12);

    // identical datasets have non-positive unbiased MMD
    let mut mmd = f64::NAN;
    assert_eq!(unsafe { cpsde_mmd(ds, loaded, &mut mmd) }, CpsdeStatus::Ok);
    assert!(mmd <= 1e-12, "mmd of identical data {mmd}");

    unsafe {
        cpsde_dataset_free(ds);
        cpsde_dataset_free(loaded);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn train_detect_generate_flow() {
    let ds = synthesize(5);
    let cfg = c(SMALL_CONFIG);
    let mut model: *mut CpsdeModel = ptr::null_mut();
    assert_eq!(
        unsafe { cpsde_train(ds, cfg.as_ptr(), 7, &mut model) },
        CpsdeStatus::Ok
    );

    // change points: one requested, one reported
    let mut cps = [0usize; 4];
    let mut n_cps = 0usize;
    assert_eq!(
        unsafe { cpsde_model_change_points(model, cps.as_mut_ptr(), cps.len(), &mut n_cps) },
        CpsdeStatus::Ok
    );
    assert_eq!(n_cps, 1);
    assert!(cps[0] > 0 && cps[0] < 12);

    // scores: exactly T - w + 1 of them
    let mut scores = [0.0f64; 16];
    let mut n_scores = 0usize;
    assert_eq!(
        unsafe { cpsde_detect_scores(model, ds, scores.as_mut_ptr(), scores.len(), &mut n_scores) },
        CpsdeStatus::Ok
    );
    assert_eq!(n_scores, 12 - 3 + 1);
    assert!(scores[..n_scores].iter().all(|s| s.is_finite()));

    // a too-small buffer reports the required size without writing
    let mut tiny = [0.0f64; 2];
    let mut needed = 0usize;
    assert_eq!(
        unsafe { cpsde_detect_scores(model, ds, tiny.as_mut_ptr(), tiny.len(), &mut needed) },
        CpsdeStatus::BufferTooSmall
    );
    assert_eq!(needed, n_scores);

    // detection through the C surface
    let mut found = [0usize; 2];
    let mut n_found = 0usize;
    assert_eq!(
        unsafe {
            cpsde_detect_change_points(model, ds, 1, found.as_mut_ptr(), found.len(), &mut n_found)
        },
        CpsdeStatus::Ok
    );
    assert_eq!(n_found, 1);

    // generation on the same grid
    let mut gen: *mut CpsdeDataset = ptr::null_mut();
    assert_eq!(
        unsafe { cpsde_model_generate(model, ds, 6, 11, &mut gen) },
        CpsdeStatus::Ok
    );
    assert_eq!(unsafe { cpsde_dataset_num_paths(gen) }, 6);
    assert_eq!(unsafe { cpsde_dataset_num_steps(gen) }, 12);

    // save / load round trip preserves scores bit for bit
    let dir = tmp_dir("model");
    let dirc = c(dir.to_str().unwrap());
    assert_eq!(
        unsafe { cpsde_model_save(model, dirc.as_ptr()) },
        CpsdeStatus::Ok
    );
    let mut reloaded: *mut CpsdeModel = ptr::null_mut();
    assert_eq!(
        unsafe { cpsde_model_load(dirc.as_ptr(), &mut reloaded) },
        CpsdeStatus::Ok
    );
    let mut scores2 = [0.0f64; 16];
    let mut n2 = 0usize;
    assert_eq!(
        unsafe { cpsde_detect_scores(reloaded, ds, scores2.as_mut_ptr(), scores2.len(), &mut n2) },
        CpsdeStatus::Ok
    );
    assert_eq!(n2, n_scores);
    for i in 0..n_scores {
        assert_eq!(scores[i].to_bits(), scores2[i].to_bits(), "score {i}");
    }

    unsafe {
        cpsde_dataset_free(gen);
        cpsde_model_free(reloaded);
        cpsde_model_free(model);
        cpsde_dataset_free(ds);
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn null_arguments_are_rejected_with_message() {
    let mut out: *mut CpsdeDataset = ptr::null_mut();
    let status = unsafe { cpsde_dataset_from_csv(ptr::null(), &mut out) };
    assert_eq!(status, CpsdeStatus::NullArgument);
    let msg = unsafe { CStr::from_ptr(cpsde_last_error()) };
    assert!(!msg.to_bytes().is_empty());
}

#[test]
fn missing_file_maps_to_io_error() {
    let path = c("/nonexistent/nope.csv");
    let mut out: *mut CpsdeDataset = ptr::null_mut();
    let status = unsafe { cpsde_dataset_from_csv(path.as_ptr(), &mut out) };
    assert_eq!(status, CpsdeStatus::IoError);
    let msg = unsafe { CStr::from_ptr(cpsde_last_error()) };
    assert!(msg.to_str().unwrap().contains("error"));
}

#[test]
fn bad_config_maps_to_config_error() {
    let cfg = c("not toml [x");
    let mut ds: *mut CpsdeDataset = ptr::null_mut();
    assert_eq!(
        unsafe { cpsde_dataset_synthesize(cfg.as_ptr(), 0, &mut ds) },
        CpsdeStatus::ConfigError
    );
}

#[test]
fn freeing_null_is_a_no_op() {
    unsafe {
        cpsde_dataset_free(ptr::null_mut());
        cpsde_model_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_exists_and_exports_the_api() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("cpsde.h");
    let text = std::fs::read_to_string(&header).expect("cbindgen header generated at build time");
    for symbol in [
        "cpsde_version",
        "cpsde_last_error",
        "cpsde_dataset_from_csv",
        "cpsde_dataset_synthesize",
        "cpsde_train",
        "cpsde_detect_scores",
        "cpsde_detect_change_points",
        "cpsde_model_generate",
        "cpsde_mmd",
        "CpsdeStatus",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }
}
