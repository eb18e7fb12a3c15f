//! C ABI for activekd.
//!
//! Every fallible function returns an [`AkdStatus`]; on failure the message
//! is kept per thread and read with [`akd_last_error_message`]. Configs and
//! run manifests are opaque handles owned by the caller and released with
//! their `_free` function. Strings returned through out-parameters are
//! released with [`akd_string_free`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;
use std::slice;

use activekd::config::{parse_config, parse_config_str, ExperimentConfig};
use activekd::datagen::PoolState;
use activekd::runner::{export_plotdata, run, PlotKind, RunManifest};
use activekd::selection::{select, SelectionInput, Strategy};
use activekd::verify::run_all;
use activekd::{Error, ProbVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AkdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Config = 4,
    Protocol = 5,
    Budget = 6,
    Io = 7,
    Training = 8,
    /// The call completed but some run cell or verification suite failed.
    Failed = 9,
    /// A panic was caught at the boundary.
    Internal = 10,
}

/// A parsed, validated experiment config.
pub struct AkdConfig {
    inner: ExperimentConfig,
}

/// The manifest of a finished run.
pub struct AkdManifest {
    inner: RunManifest,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: AkdStatus,
    message: String,
}

impl Failure {
    fn new(status: AkdStatus, message: impl Into<String>) -> Self {
        Failure {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let root = match &e {
            Error::Run { source, .. } => source.as_ref(),
            other => other,
        };
        let status = match root {
            Error::InvalidInput(_) | Error::Lookup(_) => AkdStatus::InvalidInput,
            Error::Config(_) | Error::Validation(_) | Error::Parse(_) => AkdStatus::Config,
            Error::Protocol(_) => AkdStatus::Protocol,
            Error::Budget { .. } => AkdStatus::Budget,
            Error::Training { .. } => AkdStatus::Training,
            Error::Io { .. } | Error::Ingestion { .. } | Error::MissingCells(_) | Error::Csv(_) | Error::Json(_) => {
                AkdStatus::Io
            }
            Error::Run { .. } => AkdStatus::Internal,
        };
        Failure::new(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(text));
}

fn guard(body: impl FnOnce() -> Result<AkdStatus, Failure>) -> AkdStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => status,
        Ok(Err(f)) => {
            set_last_error(&f.message);
            f.status
        }
        Err(_) => {
            set_last_error("panic inside activekd");
            AkdStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(AkdStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(AkdStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(AkdStatus::NullArgument, format!("{name} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(AkdStatus::NullArgument, format!("{name} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn owned_string(s: &str) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::new(AkdStatus::InvalidInput, "string contains a NUL byte"))
}

fn check_out<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure::new(AkdStatus::NullArgument, "output pointer is null"))
    } else {
        Ok(())
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn akd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn akd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn akd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a TOML config file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn akd_config_from_file(path: *const c_char, out: *mut *mut AkdConfig) -> AkdStatus {
    guard(|| {
        check_out(out)?;
        let path = str_arg(path, "path")?;
        let inner = parse_config(Path::new(path))?;
        *out = Box::into_raw(Box::new(AkdConfig { inner }));
        Ok(AkdStatus::Ok)
    })
}

/// Parses config text; relative paths resolve against `base_dir`, or the
/// current directory when it is null.
///
/// # Safety
/// `text` and a non-null `base_dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn akd_config_from_str(
    text: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut AkdConfig,
) -> AkdStatus {
    guard(|| {
        check_out(out)?;
        let text = str_arg(text, "text")?;
        let base = if base_dir.is_null() {
            "."
        } else {
            str_arg(base_dir, "base_dir")?
        };
        let inner = parse_config_str(text, Path::new(base))?;
        *out = Box::into_raw(Box::new(AkdConfig { inner }));
        Ok(AkdStatus::Ok)
    })
}

/// # Safety
/// `config` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn akd_config_free(config: *mut AkdConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live handle; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn akd_config_set_output_dir(config: *mut AkdConfig, dir: *const c_char) -> AkdStatus {
    guard(|| {
        let config = config
            .as_mut()
            .ok_or_else(|| Failure::new(AkdStatus::NullArgument, "config is null"))?;
        config.inner.output_dir = PathBuf::from(str_arg(dir, "dir")?);
        Ok(AkdStatus::Ok)
    })
}

/// Replaces the seed list.
///
/// # Safety
/// `config` must be a live handle; `seeds` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn akd_config_set_seeds(config: *mut AkdConfig, seeds: *const u64, len: usize) -> AkdStatus {
    guard(|| {
        let config = config
            .as_mut()
            .ok_or_else(|| Failure::new(AkdStatus::NullArgument, "config is null"))?;
        let seeds = slice_arg(seeds, len, "seeds")?;
        if seeds.is_empty() {
            return Err(Failure::new(AkdStatus::Config, "seed list must not be empty"));
        }
        config.inner.seeds = seeds.to_vec();
        Ok(AkdStatus::Ok)
    })
}

/// Hex SHA-256 of the config; free the result with [`akd_string_free`].
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn akd_config_hash(config: *const AkdConfig, out: *mut *mut c_char) -> AkdStatus {
    guard(|| {
        check_out(out)?;
        let config = ref_arg(config, "config")?;
        *out = owned_string(&config.inner.hash())?;
        Ok(AkdStatus::Ok)
    })
}

/// Runs the config's grid on `workers` threads. Returns `AKD_STATUS_FAILED`
/// (with the manifest still written to `out`) when some cells failed.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn akd_run(config: *const AkdConfig, workers: usize, out: *mut *mut AkdManifest) -> AkdStatus {
    guard(|| {
        check_out(out)?;
        let config = ref_arg(config, "config")?;
        let inner = run(&config.inner, workers.max(1))?;
        let failed = inner.failed().len();
        *out = Box::into_raw(Box::new(AkdManifest { inner }));
        if failed > 0 {
            set_last_error(&format!("{failed} cells failed"));
            Ok(AkdStatus::Failed)
        } else {
            Ok(AkdStatus::Ok)
        }
    })
}

/// # Safety
/// `manifest` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn akd_manifest_cell_count(manifest: *const AkdManifest) -> usize {
    manifest.as_ref().map_or(0, |m| m.inner.cells.len())
}

/// # Safety
/// `manifest` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn akd_manifest_failed_count(manifest: *const AkdManifest) -> usize {
    manifest.as_ref().map_or(0, |m| m.inner.failed().len())
}

/// # Safety
/// `manifest` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn akd_manifest_free(manifest: *mut AkdManifest) {
    if !manifest.is_null() {
        drop(Box::from_raw(manifest));
    }
}

/// Writes plot data for `kind` (`accuracy`, `criteria`, `knn`, `purity`)
/// next to the manifest file and returns the written path.
///
/// # Safety
/// String arguments must be NUL-terminated; `out_path` must be writable.
#[no_mangle]
pub unsafe extern "C" fn akd_export(
    manifest_path: *const c_char,
    kind: *const c_char,
    out_path: *mut *mut c_char,
) -> AkdStatus {
    guard(|| {
        check_out(out_path)?;
        let manifest = str_arg(manifest_path, "manifest_path")?;
        let kind: PlotKind = str_arg(kind, "kind")?.parse()?;
        let written = export_plotdata(Path::new(manifest), kind)?;
        *out_path = owned_string(&written.to_string_lossy())?;
        Ok(AkdStatus::Ok)
    })
}

/// Runs one selection strategy over `n` samples with ids `0..n`.
///
/// `probs` is row-major `n × classes`; `features` is row-major `n × dim`
/// and may be null for strategies that do not read features. The labeled
/// set is `labeled_ids` with classes `labeled_classes`; every other id is
/// unlabeled. `out_ids` receives `query` chosen ids. BADGE needs per-head
/// student outputs and is not available here.
///
/// # Safety
/// Every non-null pointer must reference the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn akd_select(
    strategy: *const c_char,
    probs: *const f64,
    n: usize,
    classes: usize,
    features: *const f64,
    dim: usize,
    labeled_ids: *const usize,
    labeled_classes: *const usize,
    n_labeled: usize,
    query: usize,
    seed: u64,
    out_ids: *mut usize,
) -> AkdStatus {
    guard(|| {
        check_out(out_ids)?;
        let strategy: Strategy = str_arg(strategy, "strategy")?.parse()?;
        if strategy == Strategy::Badge {
            return Err(Failure::new(
                AkdStatus::InvalidInput,
                "badge needs per-head student outputs and cannot run through akd_select",
            ));
        }
        if classes == 0 {
            return Err(Failure::new(AkdStatus::InvalidInput, "classes must be positive"));
        }
        let flat = slice_arg(probs, n * classes, "probs")?;
        let probs = flat
            .chunks(classes)
            .map(|row| ProbVector::new(row.to_vec()))
            .collect::<activekd::Result<Vec<_>>>()?;
        let features: Option<Vec<Vec<f64>>> = if features.is_null() {
            None
        } else {
            if dim == 0 {
                return Err(Failure::new(AkdStatus::InvalidInput, "dim must be positive"));
            }
            Some(
                slice::from_raw_parts(features, n * dim)
                    .chunks(dim)
                    .map(<[f64]>::to_vec)
                    .collect(),
            )
        };
        if strategy.needs_features() && features.is_none() {
            return Err(Failure::new(
                AkdStatus::NullArgument,
                format!("{strategy} needs features"),
            ));
        }
        let ids = slice_arg(labeled_ids, n_labeled, "labeled_ids")?;
        let labels = slice_arg(labeled_classes, n_labeled, "labeled_classes")?;
        if let Some(bad) = ids.iter().find(|id| **id >= n) {
            return Err(Failure::new(
                AkdStatus::InvalidInput,
                format!("labeled id {bad} is out of range"),
            ));
        }
        let revealed: BTreeMap<usize, usize> = ids.iter().copied().zip(labels.iter().copied()).collect();
        if revealed.len() != n_labeled {
            return Err(Failure::new(AkdStatus::InvalidInput, "labeled ids contain duplicates"));
        }
        let unlabeled = (0..n).filter(|id| !revealed.contains_key(id));
        let pool = PoolState::from_parts(classes, revealed.clone(), unlabeled)?;
        let mut input = SelectionInput::new(&pool, &probs, query);
        if let Some(f) = &features {
            input = input.with_features(f);
        }
        let result = select(strategy, &input, seed)?;
        slice::from_raw_parts_mut(out_ids, query).copy_from_slice(&result.chosen_ids);
        Ok(AkdStatus::Ok)
    })
}

/// Runs the built-in verification suites; `all_passed` receives the verdict.
///
/// # Safety
/// `all_passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn akd_verify(seed: u64, all_passed: *mut bool) -> AkdStatus {
    guard(|| {
        check_out(all_passed)?;
        let reports = run_all(seed)?;
        *all_passed = reports.iter().all(|r| r.passed());
        if let Some(r) = reports.iter().find(|r| !r.passed()) {
            set_last_error(&r.to_string());
        }
        Ok(AkdStatus::Ok)
    })
}
