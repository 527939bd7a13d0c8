//! Queue-aware dispatch jitter via a small particle filter.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{QueueState, Q_LEVELS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PfConfig {
    pub particles: usize,
    /// Clamp bound on |theta|, microseconds.
    pub sigma_t: f64,
    /// Latency ceiling, microseconds.
    pub ell_max: f64,
    /// Process noise std-dev per queue state (idle, light, moderate, heavy).
    pub sigma_proc: [f64; Q_LEVELS],
}

impl Default for PfConfig {
    fn default() -> Self {
        let base = 0.5;
        Self {
            particles: 32,
            sigma_t: 1.5,
            ell_max: 9.0,
            sigma_proc: [0.25 * base, 0.5 * base, 1.0 * base, 2.0 * base],
        }
    }
}

impl PfConfig {
    pub fn validate(&self) -> Result<()> {
        let noise_ok = self.sigma_proc.iter().all(|s| s.is_finite() && *s > 0.0)
            && self.sigma_proc.windows(2).all(|w| w[0] <= w[1]);
        if self.particles < 2
            || !(self.sigma_t > 0.0 && self.sigma_t.is_finite())
            || !(self.ell_max > 0.0 && self.ell_max.is_finite())
            || !noise_ok
        {
            return Err(Error::Config(format!(
                "invalid particle filter config {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    thetas: Vec<f64>,
    weights: Vec<f64>,
}

/// What one propose step did.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProposeOutcome {
    /// ESS after reweighting, before any resampling.
    pub ess: f64,
    pub resampled: bool,
}

impl ParticleSet {
    /// `n` particles at zero offset with uniform weights.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("need at least two particles".into()));
        }
        Ok(Self {
            thetas: vec![0.0; n],
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn from_parts(thetas: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if thetas.len() != weights.len() || thetas.len() < 2 {
            return Err(Error::Input(
                "particle and weight counts must match and be >= 2".into(),
            ));
        }
        if thetas.iter().chain(&weights).any(|x| !x.is_finite()) || weights.iter().any(|&w| w < 0.0)
        {
            return Err(Error::Input(
                "particles must be finite with non-negative weights".into(),
            ));
        }
        let mut ps = Self { thetas, weights };
        ps.normalise()?;
        Ok(ps)
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Back to zero offsets and uniform weights.
    pub fn reset(&mut self) {
        let u = 1.0 / self.len() as f64;
        self.thetas.iter_mut().for_each(|t| *t = 0.0);
        self.weights.iter_mut().for_each(|w| *w = u);
    }

    fn normalise(&mut self) -> Result<()> {
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateParticles);
        }
        self.weights.iter_mut().for_each(|w| *w /= total);
        Ok(())
    }
}

/// `1 / sum(w_i^2)`.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Systematic resampling with offset `u` in `[0, 1)`; weights become `1/N`.
pub fn systematic_resample(ps: &mut ParticleSet, u: f64) {
    let n = ps.len();
    let step = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = ps.weights[0];
    let mut j = 0;
    for i in 0..n {
        let pos = (i as f64 + u) * step;
        while pos > cum && j + 1 < n {
            j += 1;
            cum += ps.weights[j];
        }
        out.push(ps.thetas[j]);
    }
    ps.thetas = out;
    ps.weights.iter_mut().for_each(|w| *w = step);
}

/// Propose step with caller-supplied standard-normal draws (one per
/// particle) and resampling offset.
pub fn propose_with_noise<F>(
    ps: &mut ParticleSet,
    q: QueueState,
    cfg: &PfConfig,
    latency: F,
    noise: &[f64],
    u: f64,
) -> Result<ProposeOutcome>
where
    F: Fn(f64, QueueState) -> f64,
{
    if noise.len() != ps.len() {
        return Err(Error::Input("one noise draw per particle".into()));
    }
    let sigma = cfg.sigma_proc[q.index()];
    for ((theta, w), z) in ps.thetas.iter_mut().zip(&mut ps.weights).zip(noise) {
        *theta = (*theta + sigma * z).clamp(-cfg.sigma_t, cfg.sigma_t);
        if latency(*theta, q) > cfg.ell_max {
            *w = 0.0;
        }
    }
    ps.normalise()?;
    let e = ess(&ps.weights);
    let resampled = e < ps.len() as f64 / 2.0;
    if resampled {
        systematic_resample(ps, u);
    }
    Ok(ProposeOutcome { ess: e, resampled })
}

/// One propagate/reweight/resample step.
pub fn propose<F, R>(
    ps: &mut ParticleSet,
    q: QueueState,
    cfg: &PfConfig,
    latency: F,
    rng: &mut R,
) -> Result<ProposeOutcome>
where
    F: Fn(f64, QueueState) -> f64,
    R: Rng + ?Sized,
{
    let noise: Vec<f64> = (0..ps.len()).map(|_| rng.sample(StandardNormal)).collect();
    let u = rng.random::<f64>();
    propose_with_noise(ps, q, cfg, latency, &noise, u)
}

/// Draw one particle's offset with probability proportional to its weight.
pub fn sample_dispatch<R: Rng + ?Sized>(ps: &ParticleSet, rng: &mut R) -> Result<f64> {
    let total: f64 = ps.weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateParticles);
    }
    let target = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut last = 0;
    for (i, (&w, &t)) in ps.weights.iter().zip(&ps.thetas).enumerate() {
        if w <= 0.0 {
            continue;
        }
        cum += w;
        last = i;
        if target < cum {
            return Ok(t);
        }
    }
    Ok(ps.thetas[last])
}
