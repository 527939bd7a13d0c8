//! Sliding-window leakage estimator.
//!
//! Codewords are pushed one per dispatch interval. Once `window` codewords
//! have been seen, and every `stride` pushes after that, the last `window`
//! codewords are turned into an add-alpha smoothed histogram and folded into
//! an exponential moving average with decay `2^(-1/half_life)` per window.
//! The per-interval estimate is the KL divergence (nats) of that average from
//! the locked design reference for the current `(job size, segment class)`,
//! plus a weighted crosstalk penalty, clamped at the kill threshold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{sha256, Digest, Reader, Writer};
use crate::error::{Error, Result};
use crate::padding::SegmentClass;

/// Reference lookup key: `(job size, segment class)`.
pub type ClassKey = (u32, SegmentClass);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Window length, intervals.
    pub window: usize,
    /// Stride between window emissions, intervals.
    pub stride: usize,
    /// EMA half-life, windows.
    pub half_life: f64,
    /// Add-alpha (Jeffreys) smoothing constant.
    pub alpha: f64,
    /// Uniform mass mixed into the design reference.
    pub lambda: f64,
    /// Crosstalk penalty weight.
    pub beta_est: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            window: 128,
            stride: 64,
            half_life: 10.0,
            alpha: 0.5,
            lambda: 1e-3,
            beta_est: 0.1,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.window > 0
            && self.stride > 0
            && self.stride <= self.window
            && self.half_life > 0.0
            && self.half_life.is_finite()
            && self.alpha > 0.0
            && self.alpha.is_finite()
            && self.lambda > 0.0
            && self.lambda < 1.0
            && self.beta_est >= 0.0
            && self.beta_est.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid estimator config {self:?}")))
        }
    }

    /// Per-window EMA decay.
    pub fn decay(&self) -> f64 {
        (-1.0 / self.half_life).exp2()
    }

    pub fn locked(&self) -> LockedTuple {
        LockedTuple {
            window: self.window as u32,
            stride: self.stride as u32,
            half_life: self.half_life,
            alpha: self.alpha,
            lambda: self.lambda,
        }
    }

    /// Number of codeword pushes needed to emit `intervals` windows.
    pub fn pushes_for_intervals(&self, intervals: usize) -> usize {
        if intervals == 0 {
            0
        } else {
            self.window + (intervals - 1) * self.stride
        }
    }
}

/// The hyperparameters persisted alongside a reference; loading under any
/// other tuple is refused.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LockedTuple {
    pub window: u32,
    pub stride: u32,
    pub half_life: f64,
    pub alpha: f64,
    pub lambda: f64,
}

impl LockedTuple {
    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u32(self.window)
            .u32(self.stride)
            .f64(self.half_life)
            .f64(self.alpha)
            .f64(self.lambda);
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        Ok(Self {
            window: r.u32()?,
            stride: r.u32()?,
            half_life: r.f64()?,
            alpha: r.f64()?,
            lambda: r.f64()?,
        })
    }

    /// Bitwise comparison, so that `-0.0`/`NaN` games cannot slip through.
    pub fn same_as(&self, other: &LockedTuple) -> bool {
        self.window == other.window
            && self.stride == other.stride
            && self.half_life.to_bits() == other.half_life.to_bits()
            && self.alpha.to_bits() == other.alpha.to_bits()
            && self.lambda.to_bits() == other.lambda.to_bits()
    }
}

/// Rolling codeword buffer plus the EMA-smoothed histogram.
#[derive(Clone, Debug)]
pub struct WindowState {
    window: usize,
    stride: usize,
    alpha: f64,
    decay: f64,
    ring: Vec<u32>,
    head: usize,
    counts: Vec<u32>,
    pushes: u64,
    windows_emitted: u64,
    hist: Vec<f64>,
    ema: Vec<f64>,
    ema_ready: bool,
}

impl WindowState {
    /// Fresh state; the first emitted window seeds the average.
    pub fn new(cfg: &EstimatorConfig, codewords: usize) -> Result<Self> {
        cfg.validate()?;
        if codewords == 0 {
            return Err(Error::Input("empty codeword alphabet".into()));
        }
        Ok(Self {
            window: cfg.window,
            stride: cfg.stride,
            alpha: cfg.alpha,
            decay: cfg.decay(),
            ring: Vec::with_capacity(cfg.window),
            head: 0,
            counts: vec![0; codewords],
            pushes: 0,
            windows_emitted: 0,
            hist: vec![0.0; codewords],
            ema: vec![0.0; codewords],
            ema_ready: false,
        })
    }

    /// State whose average starts at `prior` (normally the locked reference),
    /// so early windows are shrunk toward it instead of dominating.
    pub fn with_prior(cfg: &EstimatorConfig, prior: &[f64]) -> Result<Self> {
        let mut st = Self::new(cfg, prior.len())?;
        let total: f64 = prior.iter().sum();
        if prior.iter().any(|p| !p.is_finite() || *p < 0.0) || !(total > 0.0) {
            return Err(Error::Input(
                "prior must be a finite non-negative vector".into(),
            ));
        }
        st.ema
            .iter_mut()
            .zip(prior)
            .for_each(|(e, p)| *e = p / total);
        st.ema_ready = true;
        Ok(st)
    }

    pub fn codewords(&self) -> usize {
        self.counts.len()
    }

    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    pub fn windows_emitted(&self) -> u64 {
        self.windows_emitted
    }

    /// Current smoothed distribution, once at least one window was emitted.
    pub fn ema(&self) -> Option<&[f64]> {
        (self.windows_emitted > 0).then_some(self.ema.as_slice())
    }

    /// Push one codeword. Returns the freshly emitted window histogram when
    /// this push completes a window.
    pub fn push(&mut self, c: u32) -> Result<Option<&[f64]>> {
        let c = c as usize;
        if c >= self.counts.len() {
            return Err(Error::Input(format!(
                "codeword {c} outside alphabet of {}",
                self.counts.len()
            )));
        }
        if self.ring.len() < self.window {
            self.ring.push(c as u32);
        } else {
            let old = std::mem::replace(&mut self.ring[self.head], c as u32);
            self.counts[old as usize] -= 1;
            self.head = (self.head + 1) % self.window;
        }
        self.counts[c] += 1;
        self.pushes += 1;

        let w = self.window as u64;
        if self.pushes < w || !(self.pushes - w).is_multiple_of(self.stride as u64) {
            return Ok(None);
        }
        self.emit();
        Ok(Some(&self.hist))
    }

    fn emit(&mut self) {
        let denom = self.window as f64 + self.alpha * self.counts.len() as f64;
        for (h, &k) in self.hist.iter_mut().zip(&self.counts) {
            *h = (k as f64 + self.alpha) / denom;
        }
        if self.ema_ready {
            let g = self.decay;
            let mut total = 0.0;
            for (e, &h) in self.ema.iter_mut().zip(&self.hist) {
                *e = g * *e + (1.0 - g) * h;
                total += *e;
            }
            self.ema.iter_mut().for_each(|e| *e /= total);
        } else {
            self.ema.copy_from_slice(&self.hist);
            self.ema_ready = true;
        }
        self.windows_emitted += 1;
    }
}

/// `sum_i p_i * ln(p_i / q_i)` in nats, with `0 * ln(0/x) = 0`.
pub fn kl_divergence(p_hat: &[f64], p_des: &[f64]) -> Result<f64> {
    if p_hat.len() != p_des.len() {
        return Err(Error::Input(format!(
            "length mismatch: {} vs {}",
            p_hat.len(),
            p_des.len()
        )));
    }
    if let Some(bad) = p_des.iter().find(|q| !(**q > 0.0) || !q.is_finite()) {
        return Err(Error::ArtifactCorrupt(format!(
            "reference entry {bad} is not strictly positive"
        )));
    }
    let mut acc = 0.0;
    for (&p, &q) in p_hat.iter().zip(p_des) {
        if p > 0.0 {
            acc += p * (p / q).ln();
        }
    }
    Ok(acc.max(0.0))
}

fn kl_with_log_reference(p_hat: &[f64], ln_des: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&p, &lq) in p_hat.iter().zip(ln_des) {
        if p > 0.0 {
            acc += p * (p.ln() - lq);
        }
    }
    acc.max(0.0)
}

/// Frobenius norm of a dense matrix given in any flat layout.
pub fn frobenius(m: &[f64]) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageEstimate {
    /// `min(raw, delta_kill)`, nats.
    pub value: f64,
    /// KL plus crosstalk penalty before clamping.
    pub raw: f64,
    pub kl: f64,
    pub penalty: f64,
    pub clamped: bool,
}

impl LeakageEstimate {
    pub fn from_parts(kl: f64, penalty: f64, delta_kill: f64) -> Self {
        let raw = kl + penalty;
        let clamped = raw > delta_kill;
        Self {
            value: if clamped { delta_kill } else { raw },
            raw,
            kl,
            penalty,
            clamped,
        }
    }
}

/// Locked design-only codeword distributions per `(n, segment class)`.
#[derive(Clone, Debug)]
pub struct ReferenceModel {
    tuple: LockedTuple,
    codewords: usize,
    classes: BTreeMap<ClassKey, Vec<f64>>,
    ln_classes: BTreeMap<ClassKey, Vec<f64>>,
    checksum: Digest,
}

impl PartialEq for ReferenceModel {
    fn eq(&self, other: &Self) -> bool {
        self.tuple.same_as(&other.tuple)
            && self.codewords == other.codewords
            && self.classes == other.classes
            && self.checksum == other.checksum
    }
}

impl ReferenceModel {
    /// Wrap explicit class vectors, validating normalisation and the
    /// `lambda / B` floor.
    pub fn from_classes(
        tuple: LockedTuple,
        codewords: usize,
        classes: BTreeMap<ClassKey, Vec<f64>>,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Calibration("reference has no classes".into()));
        }
        let floor = tuple.lambda / codewords as f64;
        for (key, p) in &classes {
            if p.len() != codewords {
                return Err(Error::Calibration(format!(
                    "class {key:?}: {} entries, expected {codewords}",
                    p.len()
                )));
            }
            let total: f64 = p.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Calibration(format!("class {key:?} sums to {total}")));
            }
            if p.iter().any(|&x| !(x >= floor) || !x.is_finite()) {
                return Err(Error::Calibration(format!(
                    "class {key:?} has an entry below the floor {floor}"
                )));
            }
        }
        let ln_classes = classes
            .iter()
            .map(|(k, p)| (*k, p.iter().map(|x| x.ln()).collect()))
            .collect();
        let mut model = Self {
            tuple,
            codewords,
            classes,
            ln_classes,
            checksum: [0; 32],
        };
        model.checksum = sha256(&model.encode_body());
        Ok(model)
    }

    pub fn tuple(&self) -> &LockedTuple {
        &self.tuple
    }

    pub fn codewords(&self) -> usize {
        self.codewords
    }

    pub fn checksum(&self) -> &Digest {
        &self.checksum
    }

    pub fn classes(&self) -> impl Iterator<Item = (&ClassKey, &Vec<f64>)> {
        self.classes.iter()
    }

    pub fn class(&self, n: u32, k: SegmentClass) -> Result<&[f64]> {
        self.classes
            .get(&(n, k))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("no reference for n={n}, class {k:?}")))
    }

    pub(crate) fn encode_body(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.tuple.encode(&mut w);
        w.u32(self.codewords as u32).u32(self.classes.len() as u32);
        for ((n, k), p) in &self.classes {
            w.u32(*n).u8(*k as u8).f64s(p);
        }
        w.into_inner()
    }

    pub(crate) fn decode_body(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let tuple = LockedTuple::decode(&mut r)?;
        let codewords = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut classes = BTreeMap::new();
        for _ in 0..count {
            let n = r.u32()?;
            let k = SegmentClass::from_index(r.u8()? as usize)
                .ok_or_else(|| Error::ArtifactCorrupt("unknown segment class".into()))?;
            classes.insert((n, k), r.f64s(codewords)?);
        }
        if r.remaining() != 0 {
            return Err(Error::ArtifactCorrupt(
                "trailing bytes in reference section".into(),
            ));
        }
        Self::from_classes(tuple, codewords, classes)
            .map_err(|e| Error::ArtifactCorrupt(e.to_string()))
    }
}

/// Compute the clamped leakage estimate for the current window state.
pub fn estimate(
    st: &WindowState,
    reference: &ReferenceModel,
    n: u32,
    k: SegmentClass,
    lambda_c: &[f64],
    cfg: &EstimatorConfig,
    delta_kill: f64,
) -> Result<LeakageEstimate> {
    let ln_des = reference
        .ln_classes
        .get(&(n, k))
        .ok_or_else(|| Error::Config(format!("no reference for n={n}, class {k:?}")))?;
    let p_hat = st
        .ema()
        .ok_or_else(|| Error::Lifecycle("no window emitted yet".into()))?;
    if p_hat.len() != ln_des.len() {
        return Err(Error::Input(
            "window alphabet differs from reference".into(),
        ));
    }
    let kl = kl_with_log_reference(p_hat, ln_des);
    let penalty = cfg.beta_est * frobenius(lambda_c);
    Ok(LeakageEstimate::from_parts(kl, penalty, delta_kill))
}

/// Build the locked reference from design-only codeword streams.
///
/// Each class stream goes through the same windowing and smoothing as the
/// online path; the emitted window histograms are averaged and then mixed
/// with `lambda` uniform mass.
pub fn build_reference(
    streams: &BTreeMap<ClassKey, Vec<u32>>,
    cfg: &EstimatorConfig,
    codewords: usize,
) -> Result<ReferenceModel> {
    cfg.validate()?;
    let mut classes = BTreeMap::new();
    for (key, stream) in streams {
        if stream.is_empty() {
            return Err(Error::Calibration(format!(
                "class {key:?} has no design intervals"
            )));
        }
        if stream.len() < cfg.window {
            return Err(Error::Calibration(format!(
                "class {key:?}: {} design intervals, need at least {}",
                stream.len(),
                cfg.window
            )));
        }
        let mut st = WindowState::new(cfg, codewords)?;
        let mut acc = vec![0.0; codewords];
        let mut windows = 0usize;
        for &c in stream {
            if let Some(h) = st.push(c)? {
                acc.iter_mut().zip(h).for_each(|(a, x)| *a += x);
                windows += 1;
            }
        }
        let uniform = cfg.lambda / codewords as f64;
        let mut total = 0.0;
        for a in &mut acc {
            *a = (1.0 - cfg.lambda) * (*a / windows as f64) + uniform;
            total += *a;
        }
        // Re-normalise away accumulated rounding; keep the floor intact.
        for a in &mut acc {
            *a = (*a / total).max(uniform);
        }
        classes.insert(*key, acc);
    }
    ReferenceModel::from_classes(cfg.locked(), codewords, classes)
}
