//! C ABI for the cpsde library.
//!
//! Handles are opaque pointers owned by this library: create them with
//! `cpsde_*_new`-style constructors, release them with the matching
//! `*_free`. Every fallible call returns a [`CpsdeStatus`]; on failure a
//! thread-local message is readable through [`cpsde_last_error`]. The
//! header `include/cpsde.h` is generated from this file by cbindgen at
//! build time.

use cpsde::changepoint::detect_multi;
use cpsde::config::{DataConfig, ExperimentConfig};
use cpsde::discriminator::window_scores;
use cpsde::metrics::mmd_metric;
use cpsde::pipeline::{self, LoadedModel, ModelMeta};
use cpsde::sim::{load_csv, normalize_with, save_csv, simulate_ou, PathBatch};
use cpsde::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Status codes mirroring the CLI exit codes, plus FFI-specific ones.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpsdeStatus {
    Ok = 0,
    ConfigError = 1,
    IoError = 2,
    NumericError = 3,
    NullArgument = 4,
    BufferTooSmall = 5,
    InternalError = 6,
}

/// An immutable batch of sample paths on a shared time grid.
pub struct CpsdeDataset {
    batch: PathBatch,
}

/// A trained model: segmented generator, discriminator, parameters, and
/// the normalization statistics needed to map samples to data units.
pub struct CpsdeModel {
    loaded: LoadedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> CpsdeStatus {
    match err.exit_code() {
        1 => CpsdeStatus::ConfigError,
        2 => CpsdeStatus::IoError,
        _ => CpsdeStatus::NumericError,
    }
}

fn fail(err: Error) -> CpsdeStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn guard(f: impl FnOnce() -> CpsdeStatus) -> CpsdeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            CpsdeStatus::InternalError
        }
    }
}

/// # Safety
/// `ptr` must be a valid NUL-terminated string or NULL.
unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().ok()
}

fn null_arg() -> CpsdeStatus {
    set_error("null or invalid argument");
    CpsdeStatus::NullArgument
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cpsde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread; valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cpsde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a dataset from a CSV file in the interchange schema
/// (`sample_id,step,t,x_0..`).
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpsde_dataset_from_csv(
    path: *const c_char,
    out: *mut *mut CpsdeDataset,
) -> CpsdeStatus {
    guard(|| {
        let (Some(path), false) = (unsafe { cstr_arg(path) }, out.is_null()) else {
            return null_arg();
        };
        match load_csv(Path::new(path)) {
            Ok(batch) => {
                unsafe { *out = Box::into_raw(Box::new(CpsdeDataset { batch })) };
                CpsdeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Synthesize a dataset from the `[data.synthetic]` section of an
/// experiment configuration in TOML (pass an empty string for the
/// built-in benchmark defaults).
///
/// # Safety
/// `config_toml` must be a valid NUL-terminated string; `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn cpsde_dataset_synthesize(
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut CpsdeDataset,
) -> CpsdeStatus {
    guard(|| {
        let (Some(text), false) = (unsafe { cstr_arg(config_toml) }, out.is_null()) else {
            return null_arg();
        };
        let cfg: ExperimentConfig = match toml::from_str(text) {
            Ok(cfg) => cfg,
            Err(e) => {
                set_error(&format!("config error: {e}"));
                return CpsdeStatus::ConfigError;
            }
        };
        let DataConfig::Synthetic(s) = &cfg.data else {
            set_error("config error: data source is not synthetic");
            return CpsdeStatus::ConfigError;
        };
        let grid = match s.grid() {
            Ok(g) => g,
            Err(e) => return fail(e),
        };
        match simulate_ou(&s.ou_spec(), grid, s.n_paths, s.x0, seed) {
            Ok(batch) => {
                unsafe { *out = Box::into_raw(Box::new(CpsdeDataset { batch })) };
                CpsdeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `ds` must be a valid dataset handle; `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn cpsde_dataset_save_csv(
    ds: *const CpsdeDataset,
    path: *const c_char,
) -> CpsdeStatus {
    guard(|| {
        let (Some(path), false) = (unsafe { cstr_arg(path) }, ds.is_null()) else {
            return null_arg();
        };
        let ds = unsafe { &*ds };
        match save_csv(&ds.batch, Path::new(path)) {
            Ok(()) => CpsdeStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Number of paths, or 0 for a NULL handle.
///
/// # Safety
/// `ds` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cpsde_dataset_num_paths(ds: *const CpsdeDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    unsafe { &*ds }.batch.n_paths()
}

/// Number of time steps, or 0 for a NULL handle.
///
/// # Safety
/// `ds` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cpsde_dataset_num_steps(ds: *const CpsdeDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    unsafe { &*ds }.batch.n_steps()
}

/// Number of value channels, or 0 for a NULL handle.
///
/// # Safety
/// `ds` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn cpsde_dataset_num_channels(ds: *const CpsdeDataset) -> usize {
    if ds.is_null() {
        return 0;
    }
    unsafe { &*ds }.batch.x_dim()
}

/// # Safety
/// `ds` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cpsde_dataset_free(ds: *mut CpsdeDataset) {
    if !ds.is_null() {
        drop(unsafe { Box::from_raw(ds) });
    }
}

/// Train a segment-wise neural SDE GAN on the dataset. `config_toml`
/// supplies the `[train]` and `[model]` sections (empty string for
/// defaults); `seed` keys all randomness.
///
/// # Safety
/// `ds` must be a valid dataset handle, `config_toml` a valid string,
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpsde_train(
    ds: *const CpsdeDataset,
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut CpsdeModel,
) -> CpsdeStatus {
    guard(|| {
        let (Some(text), false, false) = (
            unsafe { cstr_arg(config_toml) },
            ds.is_null(),
            out.is_null(),
        ) else {
            return null_arg();
        };
        let ds = unsafe { &*ds };
        let cfg: ExperimentConfig = match toml::from_str(text) {
            Ok(cfg) => cfg,
            Err(e) => {
                set_error(&format!("config error: {e}"));
                return CpsdeStatus::ConfigError;
            }
        };
        let mut train_cfg = cfg.train.clone();
        train_cfg.seed = seed;
        let gen_dims = cfg.model.gen_dims(ds.batch.x_dim());
        let disc_dims = cfg.model.disc_dims(ds.batch.x_dim());
        match pipeline::train_in_memory(&ds.batch, &train_cfg, gen_dims, disc_dims) {
            Ok((outcome, norm)) => {
                let meta = ModelMeta {
                    y_dim: ds.batch.x_dim(),
                    gen_dims,
                    disc_dims,
                    change_points: outcome.model.change_points.indices().to_vec(),
                    n_change_points: train_cfg.n_change_points,
                    window: train_cfg.window,
                    norm,
                    rounds_run: outcome.rounds_run,
                    seed,
                };
                let loaded = LoadedModel {
                    meta,
                    model: outcome.model,
                    discriminator: outcome.discriminator,
                    store: outcome.store,
                };
                unsafe { *out = Box::into_raw(Box::new(CpsdeModel { loaded })) };
                CpsdeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `model` must be a valid model handle; `dir` a valid string.
#[no_mangle]
pub unsafe extern "C" fn cpsde_model_save(
    model: *const CpsdeModel,
    dir: *const c_char,
) -> CpsdeStatus {
    guard(|| {
        let (Some(dir), false) = (unsafe { cstr_arg(dir) }, model.is_null()) else {
            return null_arg();
        };
        let m = unsafe { &*model };
        match pipeline::save_model(Path::new(dir), &m.loaded.meta, &m.loaded.store) {
            Ok(()) => CpsdeStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `dir` must be a valid string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cpsde_model_load(
    dir: *const c_char,
    out: *mut *mut CpsdeModel,
) -> CpsdeStatus {
    guard(|| {
        let (Some(dir), false) = (unsafe { cstr_arg(dir) }, out.is_null()) else {
            return null_arg();
        };
        match pipeline::load_model(Path::new(dir)) {
            Ok(loaded) => {
                unsafe { *out = Box::into_raw(Box::new(CpsdeModel { loaded })) };
                CpsdeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Copy the model's change point estimate into `out_buf`. `written`
/// receives the number of indices; when `cap` is too small nothing is
/// copied and the call returns `CPSDE_BUFFER_TOO_SMALL`.
///
/// # Safety
/// `model`, `out_buf` (with capacity `cap`), and `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cpsde_model_change_points(
    model: *const CpsdeModel,
    out_buf: *mut usize,
    cap: usize,
    written: *mut usize,
) -> CpsdeStatus {
    guard(|| {
        if model.is_null() || written.is_null() {
            return null_arg();
        }
        let m = unsafe { &*model };
        let cps = m.loaded.meta.change_points.as_slice();
        unsafe { *written = cps.len() };
        if cps.is_empty() {
            return CpsdeStatus::Ok;
        }
        if out_buf.is_null() {
            return null_arg();
        }
        if cap < cps.len() {
            set_error("buffer too small for change points");
            return CpsdeStatus::BufferTooSmall;
        }
        for (i, cp) in cps.iter().enumerate() {
            unsafe { *out_buf.add(i) = *cp };
        }
        CpsdeStatus::Ok
    })
}

/// Batch-averaged sliding-window discriminator scores of `ds` under the
/// trained model (window size from training). `written` receives
/// `n_steps - window + 1`.
///
/// # Safety
/// `model`, `ds`, `out_buf` (capacity `cap`), and `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cpsde_detect_scores(
    model: *const CpsdeModel,
    ds: *const CpsdeDataset,
    out_buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> CpsdeStatus {
    guard(|| {
        if model.is_null() || ds.is_null() || written.is_null() || out_buf.is_null() {
            return null_arg();
        }
        let m = unsafe { &*model };
        let ds = unsafe { &*ds };
        let normed = normalize_with(&ds.batch, &m.loaded.meta.norm);
        let seq = match window_scores(
            &m.loaded.discriminator,
            &m.loaded.store,
            &normed,
            m.loaded.meta.window,
        ) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        unsafe { *written = seq.len() };
        if cap < seq.len() {
            set_error("buffer too small for scores");
            return CpsdeStatus::BufferTooSmall;
        }
        for (i, s) in seq.scores().iter().enumerate() {
            unsafe { *out_buf.add(i) = *s };
        }
        CpsdeStatus::Ok
    })
}

/// Estimate up to `k` change points of `ds` from the trained
/// discriminator's score sequence. `written` receives the number found.
///
/// # Safety
/// `model`, `ds`, `out_buf` (capacity `cap`), and `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cpsde_detect_change_points(
    model: *const CpsdeModel,
    ds: *const CpsdeDataset,
    k: usize,
    out_buf: *mut usize,
    cap: usize,
    written: *mut usize,
) -> CpsdeStatus {
    guard(|| {
        if model.is_null() || ds.is_null() || written.is_null() || out_buf.is_null() {
            return null_arg();
        }
        let m = unsafe { &*model };
        let ds = unsafe { &*ds };
        let normed = normalize_with(&ds.batch, &m.loaded.meta.norm);
        let w = m.loaded.meta.window;
        let seq = match window_scores(&m.loaded.discriminator, &m.loaded.store, &normed, w) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        let est = match detect_multi(&seq, w, k) {
            Ok(e) => e,
            Err(e) => return fail(e),
        };
        unsafe { *written = est.len() };
        if cap < est.len() {
            set_error("buffer too small for change points");
            return CpsdeStatus::BufferTooSmall;
        }
        for (i, cp) in est.indices().iter().enumerate() {
            unsafe { *out_buf.add(i) = *cp };
        }
        CpsdeStatus::Ok
    })
}

/// Generate `n` sample paths from the model in data units, on the same
/// grid as `like`.
///
/// # Safety
/// `model`, `like`, and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cpsde_model_generate(
    model: *const CpsdeModel,
    like: *const CpsdeDataset,
    n: usize,
    seed: u64,
    out: *mut *mut CpsdeDataset,
) -> CpsdeStatus {
    guard(|| {
        if model.is_null() || like.is_null() || out.is_null() || n == 0 {
            return null_arg();
        }
        let m = unsafe { &*model };
        let like = unsafe { &*like };
        match pipeline::generate_samples(&m.loaded, &like.batch.grid, n, seed, 0) {
            Ok(batch) => {
                unsafe { *out = Box::into_raw(Box::new(CpsdeDataset { batch })) };
                CpsdeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Unbiased squared MMD between two datasets on the same grid.
///
/// # Safety
/// `a`, `b`, and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cpsde_mmd(
    a: *const CpsdeDataset,
    b: *const CpsdeDataset,
    out: *mut f64,
) -> CpsdeStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return null_arg();
        }
        let (a, b) = (unsafe { &*a }, unsafe { &*b });
        match mmd_metric(&a.batch, &b.batch) {
            Ok(v) => {
                unsafe { *out = v };
                CpsdeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `model` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cpsde_model_free(model: *mut CpsdeModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}
