use std::ffi::{c_char, CStr, CString};
use std::ptr;

use leakguard::config::ExperimentConfig;
use leakguard::experiment::calibrate;
use leakguard_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    unsafe {
        lg_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn payload(interval: u64, decision: u32) -> LgPayload {
    LgPayload {
        interval,
        segment: (interval / 4) as u32,
        backend: 1,
        theta: 0.25,
        delta_hat: 0.001 * interval as f64,
        decision,
        flags: 0,
    }
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(lg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_pointers_are_reported() {
    let mut x = 0.0;
    let s = unsafe { lg_kl_divergence(ptr::null(), ptr::null(), 3, &mut x) };
    assert_eq!(s, LgStatus::NullPointer);
    assert!(last_error().contains("is null"));

    let p = [0.5, 0.5];
    let s = unsafe { lg_kl_divergence(p.as_ptr(), p.as_ptr(), 2, ptr::null_mut()) };
    assert_eq!(s, LgStatus::NullPointer);

    let mut h = ptr::null_mut();
    assert_eq!(
        unsafe { lg_artifacts_load(ptr::null(), ptr::null(), &mut h) },
        LgStatus::NullPointer
    );
    assert!(h.is_null());

    let ok = unsafe { lg_kl_divergence(p.as_ptr(), p.as_ptr(), 2, &mut x) };
    assert_eq!(ok, LgStatus::Ok);
    assert_eq!(last_error(), "");

    unsafe {
        lg_artifacts_free(ptr::null_mut());
        lg_monitor_free(ptr::null_mut());
        lg_audit_free(ptr::null_mut());
    }
}

#[test]
fn error_message_is_truncated_but_length_is_full() {
    let mut x = 0.0;
    unsafe { lg_kl_divergence(ptr::null(), ptr::null(), 3, &mut x) };
    let mut buf = [1 as c_char; 4];
    let len = unsafe { lg_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(len > 3);
    assert_eq!(buf[3], 0);
    assert_eq!(unsafe { lg_last_error_message(ptr::null_mut(), 0) }, len);
}

#[test]
fn kl_and_ess_values() {
    let p = [0.5, 0.25, 0.25];
    let q = [0.25, 0.5, 0.25];
    let mut kl = f64::NAN;
    assert_eq!(
        unsafe { lg_kl_divergence(p.as_ptr(), q.as_ptr(), 3, &mut kl) },
        LgStatus::Ok
    );
    let expect = 0.5 * 2f64.ln() + 0.25 * 0.5f64.ln();
    assert!((kl - expect).abs() < 1e-12);

    let bad = [0.5, 0.6, -0.1];
    assert_eq!(
        unsafe { lg_kl_divergence(bad.as_ptr(), q.as_ptr(), 3, &mut kl) },
        LgStatus::InvalidInput
    );
    let zero = [0.5, 0.5, 0.0];
    assert_eq!(
        unsafe { lg_kl_divergence(p.as_ptr(), zero.as_ptr(), 3, &mut kl) },
        LgStatus::InvalidInput
    );

    let w = [0.25; 4];
    let mut e = 0.0;
    assert_eq!(unsafe { lg_ess(w.as_ptr(), 4, &mut e) }, LgStatus::Ok);
    assert!((e - 4.0).abs() < 1e-12);
    let w = [1.0, 0.0, 0.0];
    assert_eq!(unsafe { lg_ess(w.as_ptr(), 3, &mut e) }, LgStatus::Ok);
    assert!((e - 1.0).abs() < 1e-12);
    assert_eq!(
        unsafe { lg_ess(w.as_ptr(), 0, &mut e) },
        LgStatus::InvalidInput
    );
}

#[test]
fn bounds() {
    let mut b = LgBound::default();
    assert_eq!(
        unsafe { lg_uniform_bound(100, 0.02, 0.0, 0.0, &mut b) },
        LgStatus::Ok
    );
    assert!((b.total - 20.0).abs() < 1e-9);
    assert_eq!(b.intervals, 100);
    assert_eq!(b.vacuous, 1);

    let budgets = [0.02; 100];
    let eps = [0.0; 100];
    let mut a = LgBound::default();
    let s = unsafe { lg_advantage_bound(budgets.as_ptr(), eps.as_ptr(), 100, 0.0, &mut a) };
    assert_eq!(s, LgStatus::Ok);
    assert!((a.total - b.total).abs() < 1e-9);

    assert_eq!(
        unsafe { lg_uniform_bound(10, -1.0, 0.0, 0.0, &mut b) },
        LgStatus::InvalidInput
    );
}

#[test]
fn calibrate_nearest_rank() {
    let samples: Vec<f64> = (1..=100).map(f64::from).collect();
    let (mut budget, mut kill) = (0.0, 0.0);
    let s = unsafe {
        lg_calibrate(
            samples.as_ptr(),
            100,
            0.99,
            0.999,
            0.01,
            &mut budget,
            &mut kill,
        )
    };
    assert_eq!(s, LgStatus::Ok);
    assert_eq!((budget, kill), (99.0, 100.0));

    let s = unsafe {
        lg_calibrate(
            samples.as_ptr(),
            0,
            0.99,
            0.999,
            0.01,
            &mut budget,
            &mut kill,
        )
    };
    assert_ne!(s, LgStatus::Ok);
    assert!(!last_error().is_empty());
}

#[test]
fn audit_round_trip_and_tamper() {
    let workload = CString::new("timing").unwrap();
    let digest = CString::new("00".repeat(32)).unwrap();
    let mut log = ptr::null_mut();
    let s = unsafe {
        lg_audit_new(
            8,
            1,
            42,
            workload.as_ptr(),
            0.01,
            0.05,
            digest.as_ptr(),
            &mut log,
        )
    };
    assert_eq!(s, LgStatus::Ok);

    for i in 0..5 {
        assert_eq!(
            unsafe { lg_audit_append(log, &payload(i, 0)) },
            LgStatus::Ok
        );
    }
    let bad = payload(5, 7);
    assert_eq!(
        unsafe { lg_audit_append(log, &bad) },
        LgStatus::InvalidInput
    );

    let mut att = [0u8; 32];
    assert_eq!(
        unsafe { lg_audit_finalize(log, 1, 1, &payload(5, 2), att.as_mut_ptr()) },
        LgStatus::Ok
    );
    assert_ne!(att, [0u8; 32]);
    let s = unsafe { lg_audit_append(log, &payload(6, 0)) };
    assert_eq!(s, LgStatus::Lifecycle);

    let mut need = 0usize;
    assert_eq!(
        unsafe { lg_audit_to_bytes(log, ptr::null_mut(), 0, &mut need) },
        LgStatus::BufferTooSmall
    );
    assert!(need > 0);
    let mut bytes = vec![0u8; need];
    assert_eq!(
        unsafe { lg_audit_to_bytes(log, bytes.as_mut_ptr(), need, &mut need) },
        LgStatus::Ok
    );
    unsafe { lg_audit_free(log) };

    let (mut ok, mut first_bad) = (0u32, 0u64);
    assert_eq!(
        unsafe { lg_audit_verify_bytes(bytes.as_ptr(), need, &mut ok, &mut first_bad) },
        LgStatus::Ok
    );
    assert_eq!(ok, 1);

    let mid = need / 2;
    bytes[mid] ^= 1;
    assert_eq!(
        unsafe { lg_audit_verify_bytes(bytes.as_ptr(), need, &mut ok, &mut first_bad) },
        LgStatus::Ok
    );
    assert_eq!(ok, 0);
}

#[test]
fn artifacts_and_monitor() {
    let mut cfg = ExperimentConfig::default();
    cfg.grid.tier1_sizes = vec![4];
    cfg.grid.tier2_sizes = vec![4];
    cfg.grid.intervals = 40;
    cfg.calibration.design_episodes = 2;
    cfg.calibration.baseline_seeds = 2;
    cfg.calibration.min_baseline_samples = 50;
    let calib = calibrate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    calib.save(dir.path()).unwrap();
    let path = CString::new(dir.path().join("artifacts.bin").to_str().unwrap()).unwrap();

    let mut other = lg_estimator_config_default();
    other.stride = 32;
    let mut a = ptr::null_mut();
    assert_eq!(
        unsafe { lg_artifacts_load(path.as_ptr(), &other, &mut a) },
        LgStatus::ConfigMismatch
    );
    assert!(a.is_null());

    let missing = CString::new(dir.path().join("nope.bin").to_str().unwrap()).unwrap();
    let ecfg = lg_estimator_config_default();
    assert_eq!(
        unsafe { lg_artifacts_load(missing.as_ptr(), &ecfg, &mut a) },
        LgStatus::Io
    );

    assert_eq!(
        unsafe { lg_artifacts_load(path.as_ptr(), &ecfg, &mut a) },
        LgStatus::Ok
    );
    let mut digest = [0u8; 32];
    assert_eq!(
        unsafe { lg_artifacts_digest(a, digest.as_mut_ptr()) },
        LgStatus::Ok
    );
    assert_eq!(digest, calib.artifacts.digest);

    let th = calib.thresholds[&4];
    let mut m = ptr::null_mut();
    let s = unsafe { lg_monitor_new(a, 4, 9, th.delta_budget, th.delta_kill, 3, &mut m) };
    assert_eq!(s, LgStatus::InvalidInput);
    let s = unsafe { lg_monitor_new(a, 5, 1, th.delta_budget, th.delta_kill, 3, &mut m) };
    assert_ne!(s, LgStatus::Ok);
    let s = unsafe { lg_monitor_new(a, 4, 1, th.delta_budget, th.delta_kill, 3, &mut m) };
    assert_eq!(s, LgStatus::Ok);
    unsafe { lg_artifacts_free(a) };

    let f = LgFeatures {
        dt: 1.0,
        b: 0.5,
        queue: 1,
        zeta: 0.0,
    };
    let mut est = LgEstimate::default();
    for i in 1..ecfg.window {
        assert_eq!(
            unsafe { lg_monitor_push(m, &f, ptr::null(), &mut est) },
            LgStatus::Ok,
            "push {i}"
        );
        assert_eq!(est.emitted, 0);
    }
    assert_eq!(
        unsafe { lg_monitor_push(m, &f, ptr::null(), &mut est) },
        LgStatus::Ok
    );
    assert_eq!(est.emitted, 1);
    assert!(est.value.is_finite() && est.value >= 0.0);
    assert!(est.decision <= 2);

    let bad = LgFeatures { queue: 7, ..f };
    assert_eq!(
        unsafe { lg_monitor_push(m, &bad, ptr::null(), &mut est) },
        LgStatus::InvalidInput
    );
    unsafe { lg_monitor_free(m) };
}

#[test]
fn header_declares_the_api() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/leakguard.h"))
        .unwrap();
    assert!(h.contains("#ifndef LEAKGUARD_H"));
    for f in [
        "lg_last_error_message",
        "lg_version",
        "lg_artifacts_load",
        "lg_monitor_new",
        "lg_monitor_push",
        "lg_kl_divergence",
        "lg_ess",
        "lg_uniform_bound",
        "lg_calibrate",
        "lg_audit_new",
        "lg_audit_finalize",
        "lg_audit_verify_bytes",
        "LG_STATUS_BUFFER_TOO_SMALL",
    ] {
        assert!(h.contains(f), "{f} missing from header");
    }
}
