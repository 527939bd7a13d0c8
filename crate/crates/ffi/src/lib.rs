//! C ABI over the leakguard core.
//!
//! Every function returns an [`LgStatus`]. On failure the message is kept
//! per thread and can be read with [`lg_last_error_message`]. Handles are
//! opaque and must be released with their `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::slice;

use leakguard::artifact::Artifacts;
use leakguard::audit::{verify_bytes, AbortReason, AuditHeader, AuditLog, Outcome, Payload};
use leakguard::bound::{advantage_bound, uniform_bound, Bound, BoundInputs};
use leakguard::error::Error;
use leakguard::estimator::{estimate, kl_divergence, EstimatorConfig, WindowState};
use leakguard::features::{IntervalFeatures, QueueState};
use leakguard::padding::SegmentClass;
use leakguard::pf::ess;
use leakguard::policy::{calibrate, evaluate, Decision, PolicyState, Thresholds};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Calibration = 3,
    Config = 4,
    MissingBaseline = 5,
    ArtifactDigest = 6,
    ArtifactCorrupt = 7,
    ConfigMismatch = 8,
    DegenerateParticles = 9,
    Lifecycle = 10,
    Io = 11,
    Serde = 12,
    BufferTooSmall = 13,
    Panic = 14,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> LgStatus {
    match e {
        Error::Input(_) => LgStatus::InvalidInput,
        Error::Calibration(_) => LgStatus::Calibration,
        Error::Config(_) => LgStatus::Config,
        Error::MissingBaseline(_) => LgStatus::MissingBaseline,
        Error::ArtifactDigest(_) => LgStatus::ArtifactDigest,
        Error::ArtifactCorrupt(_) => LgStatus::ArtifactCorrupt,
        Error::ConfigMismatch(_) => LgStatus::ConfigMismatch,
        Error::DegenerateParticles => LgStatus::DegenerateParticles,
        Error::Lifecycle(_) => LgStatus::Lifecycle,
        Error::Io(_) => LgStatus::Io,
        Error::Serde(_) => LgStatus::Serde,
    }
}

struct Fail(LgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(LgStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: &str) -> Fail {
    Fail(LgStatus::InvalidInput, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            LgStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            LgStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copy the calling thread's last error message, NUL-terminated, into
/// `buf`. Returns the full message length excluding the terminator.
#[no_mangle]
pub unsafe extern "C" fn lg_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct LgEstimatorConfig {
    pub window: usize,
    pub stride: usize,
    pub half_life: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub beta_est: f64,
}

impl From<LgEstimatorConfig> for EstimatorConfig {
    fn from(c: LgEstimatorConfig) -> Self {
        EstimatorConfig {
            window: c.window,
            stride: c.stride,
            half_life: c.half_life,
            alpha: c.alpha,
            lambda: c.lambda,
            beta_est: c.beta_est,
        }
    }
}

#[no_mangle]
pub extern "C" fn lg_estimator_config_default() -> LgEstimatorConfig {
    let d = EstimatorConfig::default();
    LgEstimatorConfig {
        window: d.window,
        stride: d.stride,
        half_life: d.half_life,
        alpha: d.alpha,
        lambda: d.lambda,
        beta_est: d.beta_est,
    }
}

/// Verified codebook and reference model.
pub struct LgArtifacts {
    inner: Artifacts,
    cfg: EstimatorConfig,
}

/// Load and verify an artifact file against the runtime estimator config.
#[no_mangle]
pub unsafe extern "C" fn lg_artifacts_load(
    path: *const c_char,
    cfg: *const LgEstimatorConfig,
    out_handle: *mut *mut LgArtifacts,
) -> LgStatus {
    guard(|| {
        let out_handle = out(out_handle, "out_handle")?;
        *out_handle = std::ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let cfg: EstimatorConfig = (*cfg.as_ref().ok_or_else(|| null("cfg"))?).into();
        cfg.validate()?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let inner = Artifacts::load(Path::new(path), &cfg)?;
        *out_handle = Box::into_raw(Box::new(LgArtifacts { inner, cfg }));
        Ok(())
    })
}

/// Write the 32-byte file digest into `out_digest`.
#[no_mangle]
pub unsafe extern "C" fn lg_artifacts_digest(
    a: *const LgArtifacts,
    out_digest: *mut u8,
) -> LgStatus {
    guard(|| {
        let a = a.as_ref().ok_or_else(|| null("artifacts"))?;
        if out_digest.is_null() {
            return Err(null("out_digest"));
        }
        std::ptr::copy_nonoverlapping(a.inner.digest.as_ptr(), out_digest, 32);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lg_artifacts_free(a: *mut LgArtifacts) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// One interval's operational features. `queue` is 0..=3 (idle, light,
/// moderate, heavy).
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct LgFeatures {
    pub dt: f64,
    pub b: f64,
    pub queue: u32,
    pub zeta: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct LgEstimate {
    /// 1 when this push completed a window and the fields below are set.
    pub emitted: u32,
    pub value: f64,
    pub raw: f64,
    pub kl: f64,
    pub penalty: f64,
    pub clamped: u32,
    /// 0 continue, 1 warn, 2 abort.
    pub decision: u32,
}

/// Online monitor for one job: window state, thresholds and strikes.
pub struct LgMonitor {
    artifacts: Artifacts,
    cfg: EstimatorConfig,
    n: u32,
    class: SegmentClass,
    window: WindowState,
    thresholds: Thresholds,
    policy: PolicyState,
    strike_limit: u32,
}

/// Create a monitor for an `n`-qubit job in segment class `class`
/// (0 short, 1 medium, 2 long).
#[no_mangle]
pub unsafe extern "C" fn lg_monitor_new(
    artifacts: *const LgArtifacts,
    n: u32,
    class: u32,
    delta_budget: f64,
    delta_kill: f64,
    strike_limit: u32,
    out_handle: *mut *mut LgMonitor,
) -> LgStatus {
    guard(|| {
        let out_handle = out(out_handle, "out_handle")?;
        *out_handle = std::ptr::null_mut();
        let a = artifacts.as_ref().ok_or_else(|| null("artifacts"))?;
        let class = SegmentClass::from_index(class as usize)
            .ok_or_else(|| invalid("unknown segment class"))?;
        let thresholds = Thresholds::new(delta_budget, delta_kill)?;
        if strike_limit == 0 {
            return Err(invalid("strike_limit must be >= 1"));
        }
        a.inner.codebook.table(n)?;
        let prior = a.inner.reference.class(n, class)?;
        let window = WindowState::with_prior(&a.cfg, prior)?;
        *out_handle = Box::into_raw(Box::new(LgMonitor {
            artifacts: a.inner.clone(),
            cfg: a.cfg.clone(),
            n,
            class,
            window,
            thresholds,
            policy: PolicyState::default(),
            strike_limit,
        }));
        Ok(())
    })
}

/// Push one interval. `crosstalk` points to a row-major 3x3 matrix or is
/// null for none. After an abort every further push fails with
/// `Lifecycle`.
#[no_mangle]
pub unsafe extern "C" fn lg_monitor_push(
    m: *mut LgMonitor,
    features: *const LgFeatures,
    crosstalk: *const f64,
    out_estimate: *mut LgEstimate,
) -> LgStatus {
    guard(|| {
        let m = m.as_mut().ok_or_else(|| null("monitor"))?;
        let f = features.as_ref().ok_or_else(|| null("features"))?;
        let res = out(out_estimate, "out_estimate")?;
        *res = LgEstimate::default();
        if m.policy.aborted {
            return Err(Fail(LgStatus::Lifecycle, "monitor already aborted".into()));
        }
        let q = QueueState::from_index(f.queue as usize)
            .ok_or_else(|| invalid("queue state must be 0..=3"))?;
        let feat = IntervalFeatures::new(f.dt, f.b, q, f.zeta)?;
        let code = m.artifacts.codebook.encode(&feat, m.n)?;
        let lambda: &[f64] = if crosstalk.is_null() {
            &[]
        } else {
            slice::from_raw_parts(crosstalk, 9)
        };
        if m.window.push(code)?.is_none() {
            return Ok(());
        }
        let e = estimate(
            &m.window,
            &m.artifacts.reference,
            m.n,
            m.class,
            lambda,
            &m.cfg,
            m.thresholds.delta_kill,
        )?;
        let d = evaluate(e.value, &m.thresholds, &mut m.policy, m.strike_limit)?;
        *res = LgEstimate {
            emitted: 1,
            value: e.value,
            raw: e.raw,
            kl: e.kl,
            penalty: e.penalty,
            clamped: e.clamped as u32,
            decision: match d {
                Decision::Continue => 0,
                Decision::Warn => 1,
                Decision::Abort => 2,
            },
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lg_monitor_free(m: *mut LgMonitor) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// KL divergence in nats. `q` must be strictly positive.
#[no_mangle]
pub unsafe extern "C" fn lg_kl_divergence(
    p: *const f64,
    q: *const f64,
    len: usize,
    out_kl: *mut f64,
) -> LgStatus {
    guard(|| {
        let (p, q) = (slice_in(p, len, "p")?, slice_in(q, len, "q")?);
        if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(invalid("p must be finite and non-negative"));
        }
        if q.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return Err(invalid("q must be finite and strictly positive"));
        }
        *out(out_kl, "out_kl")? = kl_divergence(p, q)?;
        Ok(())
    })
}

/// Effective sample size `1 / sum w^2` of normalised weights.
#[no_mangle]
pub unsafe extern "C" fn lg_ess(weights: *const f64, len: usize, out_ess: *mut f64) -> LgStatus {
    guard(|| {
        let w = slice_in(weights, len, "weights")?;
        if w.is_empty() || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(invalid(
                "weights must be finite, non-negative and non-empty",
            ));
        }
        *out(out_ess, "out_ess")? = ess(w);
        Ok(())
    })
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct LgBound {
    pub total: f64,
    pub budget_term: f64,
    pub estimation_term: f64,
    pub intervals: usize,
    pub vacuous: u32,
}

impl From<Bound> for LgBound {
    fn from(b: Bound) -> Self {
        LgBound {
            total: b.total,
            budget_term: b.budget_term,
            estimation_term: b.estimation_term,
            intervals: b.intervals,
            vacuous: b.vacuous as u32,
        }
    }
}

/// Advantage bound over `len` admitted intervals.
#[no_mangle]
pub unsafe extern "C" fn lg_advantage_bound(
    budgets: *const f64,
    eps_est: *const f64,
    len: usize,
    eps_sync: f64,
    out_bound: *mut LgBound,
) -> LgStatus {
    guard(|| {
        let bi = BoundInputs {
            budgets: slice_in(budgets, len, "budgets")?.to_vec(),
            eps_est: slice_in(eps_est, len, "eps_est")?.to_vec(),
            eps_sync,
        };
        *out(out_bound, "out_bound")? = advantage_bound(&bi)?.into();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lg_uniform_bound(
    intervals: usize,
    delta_budget: f64,
    eps_bar: f64,
    eps_sync: f64,
    out_bound: *mut LgBound,
) -> LgStatus {
    guard(|| {
        *out(out_bound, "out_bound")? =
            uniform_bound(intervals, delta_budget, eps_bar, eps_sync)?.into();
        Ok(())
    })
}

/// Nearest-rank thresholds from baseline estimates.
#[no_mangle]
pub unsafe extern "C" fn lg_calibrate(
    samples: *const f64,
    len: usize,
    q_budget: f64,
    q_kill: f64,
    g_min: f64,
    out_budget: *mut f64,
    out_kill: *mut f64,
) -> LgStatus {
    guard(|| {
        let th = calibrate(slice_in(samples, len, "samples")?, q_budget, q_kill, g_min)?;
        let (b, k) = (out(out_budget, "out_budget")?, out(out_kill, "out_kill")?);
        *b = th.delta_budget;
        *k = th.delta_kill;
        Ok(())
    })
}

/// Per-interval payload of an audit record. `decision` is 0..=2, or 255
/// in monitor-only runs.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct LgPayload {
    pub interval: u64,
    pub segment: u32,
    pub backend: u32,
    pub theta: f64,
    pub delta_hat: f64,
    pub decision: u32,
    pub flags: u32,
}

fn payload_of(p: &LgPayload) -> Result<Payload, Fail> {
    let decision = match p.decision {
        255 => None,
        0 => Some(Decision::Continue),
        1 => Some(Decision::Warn),
        2 => Some(Decision::Abort),
        _ => return Err(invalid("decision must be 0, 1, 2 or 255")),
    };
    Ok(Payload {
        interval: p.interval,
        segment: p.segment,
        backend: p.backend,
        theta: p.theta,
        delta_hat: p.delta_hat,
        decision,
        flags: p.flags,
    })
}

/// Append-only hash-chained audit log.
pub struct LgAuditLog {
    inner: AuditLog,
}

/// Start a log. `workload` and `artifact_digest_hex` are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lg_audit_new(
    n: u32,
    tier: u8,
    seed: u64,
    workload: *const c_char,
    delta_budget: f64,
    delta_kill: f64,
    artifact_digest_hex: *const c_char,
    out_handle: *mut *mut LgAuditLog,
) -> LgStatus {
    guard(|| {
        let out_handle = out(out_handle, "out_handle")?;
        *out_handle = std::ptr::null_mut();
        if workload.is_null() || artifact_digest_hex.is_null() {
            return Err(null("string argument"));
        }
        let s = |p: *const c_char| {
            CStr::from_ptr(p)
                .to_str()
                .map(str::to_owned)
                .map_err(|_| invalid("string is not UTF-8"))
        };
        let header = AuditHeader {
            n,
            workload: s(workload)?,
            tier,
            seed,
            thresholds: Thresholds::new(delta_budget, delta_kill)?,
            artifact_digest: s(artifact_digest_hex)?,
            config: serde_json::Value::Null,
        };
        *out_handle = Box::into_raw(Box::new(LgAuditLog {
            inner: AuditLog::new(&header)?,
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lg_audit_append(
    log: *mut LgAuditLog,
    payload: *const LgPayload,
) -> LgStatus {
    guard(|| {
        let log = log.as_mut().ok_or_else(|| null("log"))?;
        let p = payload_of(payload.as_ref().ok_or_else(|| null("payload"))?)?;
        log.inner.append(&p)?;
        Ok(())
    })
}

/// Seal the log. `outcome` 0 completed, 1 aborted; `reason` 0 none, 1 kill
/// threshold, 2 strike limit, 3 environment failure. Writes the 32-byte
/// attestation digest.
#[no_mangle]
pub unsafe extern "C" fn lg_audit_finalize(
    log: *mut LgAuditLog,
    outcome: u32,
    reason: u32,
    last: *const LgPayload,
    out_digest: *mut u8,
) -> LgStatus {
    guard(|| {
        let log = log.as_mut().ok_or_else(|| null("log"))?;
        let outcome = match outcome {
            0 => Outcome::Completed,
            1 => Outcome::Aborted,
            _ => return Err(invalid("outcome must be 0 or 1")),
        };
        let reason =
            AbortReason::from_code(reason).ok_or_else(|| invalid("unknown abort reason"))?;
        let last = payload_of(last.as_ref().ok_or_else(|| null("last"))?)?;
        if out_digest.is_null() {
            return Err(null("out_digest"));
        }
        let d = log.inner.finalize(outcome, reason, &last)?;
        std::ptr::copy_nonoverlapping(d.as_ptr(), out_digest, 32);
        Ok(())
    })
}

/// Serialise the log into `buf`. `out_len` always receives the required
/// size; a short buffer yields `BufferTooSmall` without writing.
#[no_mangle]
pub unsafe extern "C" fn lg_audit_to_bytes(
    log: *const LgAuditLog,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> LgStatus {
    guard(|| {
        let log = log.as_ref().ok_or_else(|| null("log"))?;
        let bytes = log.inner.to_bytes();
        *out(out_len, "out_len")? = bytes.len();
        if cap < bytes.len() {
            return Err(Fail(
                LgStatus::BufferTooSmall,
                format!("need {} bytes", bytes.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
        Ok(())
    })
}

/// Verify a serialised log. `out_ok` is 1 for an intact chain; otherwise
/// `out_first_bad` holds the first failing record index.
#[no_mangle]
pub unsafe extern "C" fn lg_audit_verify_bytes(
    bytes: *const u8,
    len: usize,
    out_ok: *mut u32,
    out_first_bad: *mut u64,
) -> LgStatus {
    guard(|| {
        let v = verify_bytes(slice_in(bytes, len, "bytes")?);
        *out(out_ok, "out_ok")? = v.ok as u32;
        *out(out_first_bad, "out_first_bad")? = v.first_bad.unwrap_or(0);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lg_audit_free(log: *mut LgAuditLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}
