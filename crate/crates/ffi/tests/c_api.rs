use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use activekd_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = akd_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

const TINY: &str = r#"
strategies = ["pcoreset"]
seeds = [3]

[dataset]
classes = 3
dim = 4
per_class = 20
test_per_class = 10

[loop]
rounds = 2

[student]
epochs = 5
"#;

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(akd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn invalid_config_sets_status_and_message() {
    let text = c(&format!("{TINY}\n[distill]\nlambda = 1.5\n"));
    let mut cfg = ptr::null_mut();
    let status = unsafe { akd_config_from_str(text.as_ptr(), ptr::null(), &mut cfg) };
    assert_eq!(status, AkdStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("lambda"));
}

#[test]
fn null_arguments_are_rejected() {
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { akd_config_from_str(ptr::null(), ptr::null(), &mut cfg) },
        AkdStatus::NullArgument
    );
    let text = c(TINY);
    assert_eq!(
        unsafe { akd_config_from_str(text.as_ptr(), ptr::null(), ptr::null_mut()) },
        AkdStatus::NullArgument
    );
    let mut hash = ptr::null_mut();
    assert_eq!(
        unsafe { akd_config_hash(ptr::null(), &mut hash) },
        AkdStatus::NullArgument
    );
    unsafe {
        akd_config_free(ptr::null_mut());
        akd_manifest_free(ptr::null_mut());
        akd_string_free(ptr::null_mut());
    }
}

#[test]
fn hash_is_stable_across_handles() {
    let text = c(TINY);
    let mut hashes = Vec::new();
    for _ in 0..2 {
        let mut cfg = ptr::null_mut();
        assert_eq!(
            unsafe { akd_config_from_str(text.as_ptr(), ptr::null(), &mut cfg) },
            AkdStatus::Ok
        );
        let mut out = ptr::null_mut();
        assert_eq!(unsafe { akd_config_hash(cfg, &mut out) }, AkdStatus::Ok);
        hashes.push(unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_owned());
        unsafe {
            akd_string_free(out);
            akd_config_free(cfg);
        }
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(hashes[0].len(), 64);
}

#[test]
fn select_farthest_in_probability_space() {
    let probs = [1.0, 0.0, 0.9, 0.1, 0.0, 1.0, 0.5, 0.5];
    let labeled = [0usize];
    let labels = [0usize];
    let mut out = [usize::MAX; 2];
    let strategy = c("pcoreset");
    let status = unsafe {
        akd_select(
            strategy.as_ptr(),
            probs.as_ptr(),
            4,
            2,
            ptr::null(),
            0,
            labeled.as_ptr(),
            labels.as_ptr(),
            1,
            2,
            0,
            out.as_mut_ptr(),
        )
    };
    assert_eq!(status, AkdStatus::Ok);
    assert_eq!(out, [2, 3]);

    let mut big = [0usize; 4];
    let status = unsafe {
        akd_select(
            strategy.as_ptr(),
            probs.as_ptr(),
            4,
            2,
            ptr::null(),
            0,
            labeled.as_ptr(),
            labels.as_ptr(),
            1,
            4,
            0,
            big.as_mut_ptr(),
        )
    };
    assert_eq!(status, AkdStatus::Budget);

    let coreset = c("coreset");
    let status = unsafe {
        akd_select(
            coreset.as_ptr(),
            probs.as_ptr(),
            4,
            2,
            ptr::null(),
            0,
            labeled.as_ptr(),
            labels.as_ptr(),
            1,
            1,
            0,
            out.as_mut_ptr(),
        )
    };
    assert_eq!(status, AkdStatus::NullArgument);

    let badge = c("badge");
    let status = unsafe {
        akd_select(
            badge.as_ptr(),
            probs.as_ptr(),
            4,
            2,
            ptr::null(),
            0,
            labeled.as_ptr(),
            labels.as_ptr(),
            1,
            1,
            0,
            out.as_mut_ptr(),
        )
    };
    assert_eq!(status, AkdStatus::InvalidInput);
}

#[test]
fn run_and_export_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let text = c(TINY);
    let mut cfg = ptr::null_mut();
    assert_eq!(
        unsafe { akd_config_from_str(text.as_ptr(), ptr::null(), &mut cfg) },
        AkdStatus::Ok
    );
    let out_dir = c(dir.path().to_str().unwrap());
    assert_eq!(
        unsafe { akd_config_set_output_dir(cfg, out_dir.as_ptr()) },
        AkdStatus::Ok
    );
    let seeds = [4u64, 5];
    assert_eq!(unsafe { akd_config_set_seeds(cfg, seeds.as_ptr(), 2) }, AkdStatus::Ok);
    assert_eq!(
        unsafe { akd_config_set_seeds(cfg, seeds.as_ptr(), 0) },
        AkdStatus::Config
    );

    let mut manifest = ptr::null_mut();
    assert_eq!(unsafe { akd_run(cfg, 1, &mut manifest) }, AkdStatus::Ok);
    assert_eq!(unsafe { akd_manifest_cell_count(manifest) }, 2);
    assert_eq!(unsafe { akd_manifest_failed_count(manifest) }, 0);
    unsafe {
        akd_manifest_free(manifest);
        akd_config_free(cfg);
    }

    let manifest_path = c(dir.path().join("manifest.json").to_str().unwrap());
    let kind = c("accuracy");
    let mut written = ptr::null_mut();
    assert_eq!(
        unsafe { akd_export(manifest_path.as_ptr(), kind.as_ptr(), &mut written) },
        AkdStatus::Ok
    );
    let path = unsafe { CStr::from_ptr(written) }.to_str().unwrap().to_owned();
    unsafe { akd_string_free(written) };
    let rows = std::fs::read_to_string(path).unwrap();
    // header plus 2 rounds for each of 2 seeds
    assert_eq!(rows.lines().count(), 5);

    let bad_kind = c("loss");
    assert_eq!(
        unsafe { akd_export(manifest_path.as_ptr(), bad_kind.as_ptr(), &mut written) },
        AkdStatus::Config
    );
}

#[test]
fn verify_suites_pass() {
    let mut passed = false;
    assert_eq!(unsafe { akd_verify(1, &mut passed) }, AkdStatus::Ok);
    assert!(passed);
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/activekd.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "akd_version",
        "akd_last_error_message",
        "akd_config_from_file",
        "akd_run",
        "akd_export",
        "akd_select",
        "akd_verify",
        "AKD_STATUS_BUDGET",
        "typedef struct AkdConfig AkdConfig",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(status) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    };
    assert!(status.success());
}
