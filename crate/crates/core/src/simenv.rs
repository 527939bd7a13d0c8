//! Discrete-interval environment: backend farm, FIFO queues, dispatch
//! jitter, telemetry, crosstalk and the two scripted adversaries.
//!
//! One [`Env::step`] is one dispatch. Background tenants arrive on every
//! backend queue as Poisson traffic and each queue serves at most one job
//! per step. Adversaries draw from their own RNG stream, so a null
//! adversary leaves every observable bit-identical to the plain workload.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{IntervalFeatures, QueueState, Q_LEVELS};
use crate::padding::Layer;
use crate::router::{Backend, BackendKind};
use crate::stats::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkloadKind {
    None,
    Rl,
    Timing,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 3] = [WorkloadKind::None, WorkloadKind::Rl, WorkloadKind::Timing];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::None => "none",
            WorkloadKind::Rl => "rl",
            WorkloadKind::Timing => "timing",
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|w| w.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown workload '{s}'")))
    }
}

/// One backend of the farm together with its queue parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmEntry {
    pub id: u32,
    pub kind: BackendKind,
    pub err_1q: f64,
    pub err_2q: f64,
    pub service_scale: f64,
    /// Mean background arrivals per step.
    pub arrival_rate: f64,
    /// Chance the head-of-line job completes in a step.
    pub service_prob: f64,
}

impl FarmEntry {
    pub fn backend(&self) -> Backend {
        Backend {
            id: self.id,
            kind: self.kind,
            err_1q: self.err_1q,
            err_2q: self.err_2q,
            service_scale: self.service_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backend().validate()?;
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite())
            || !(self.service_prob > 0.0 && self.service_prob <= 1.0)
        {
            return Err(Error::Config(format!(
                "invalid queue parameters for backend {}",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlParams {
    /// Batch multipliers for the two hidden states.
    pub levels: [f64; 2],
    /// Scales the distance of each level from 1; 0 disables the adversary.
    pub depth: f64,
    /// Per-step chance of flipping the hidden state.
    pub switch_prob: f64,
    /// Mean co-tenant jobs queued per step at multiplier 1, scaled by
    /// `depth` and the current level.
    pub jobs_per_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingParams {
    /// Burst period, steps.
    pub period: u64,
    /// Burst width, steps.
    pub width: u64,
    /// Burst amplitude in control intervals added to the gap.
    pub amplitude: f64,
    /// Co-tenant jobs injected per unit amplitude on each burst step.
    pub jobs_per_amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub control_interval_us: f64,
    /// Std-dev of Gaussian dispatch jitter, microseconds.
    pub jitter_sd_us: f64,
    pub min_gap_us: f64,
    /// Ops per qubit of a nominal batch.
    pub nominal_ops_per_qubit: f64,
    /// Service time per op at scale 1, microseconds.
    pub op_service_us: f64,
    /// Queue wait per job ahead, microseconds.
    pub wait_per_job_us: f64,
    pub zeta_per_op: f64,
    pub zeta_per_job: f64,
    pub zeta_noise_sd: f64,
    pub power_base_mw: f64,
    pub power_per_op_mw: f64,
    pub power_per_jitter_mw: f64,
    pub power_per_job_mw: f64,
    /// Upper queue lengths of idle, light and moderate.
    pub queue_thresholds: [u32; 3],
    /// Expected wait per queue state used by the jitter filter, microseconds.
    pub pf_wait_us: [f64; Q_LEVELS],
    /// Row-major 3x3 crosstalk coefficients at zero activity.
    pub crosstalk_base: [f64; 9],
    /// Activity level that doubles the crosstalk matrix.
    pub activity_ref: f64,
    /// Per-step weight of the activity moving average.
    pub activity_weight: f64,
    /// Queue-only steps run before the first dispatch.
    pub burn_in: u32,
    pub rl: RlParams,
    pub timing: TimingParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            control_interval_us: 6.3,
            jitter_sd_us: 0.2,
            min_gap_us: 0.5,
            nominal_ops_per_qubit: 0.5,
            op_service_us: 0.05,
            wait_per_job_us: 1.0,
            zeta_per_op: 0.1,
            zeta_per_job: 0.3,
            zeta_noise_sd: 0.3,
            power_base_mw: 50.0,
            power_per_op_mw: 0.8,
            power_per_jitter_mw: 0.5,
            power_per_job_mw: 1.0,
            queue_thresholds: [0, 2, 5],
            pf_wait_us: [0.0, 1.5, 4.0, 8.0],
            crosstalk_base: [0.04, 0.01, 0.0, 0.01, 0.04, 0.01, 0.0, 0.01, 0.04],
            activity_ref: 4.0,
            activity_weight: 0.05,
            burn_in: 500,
            rl: RlParams {
                levels: [0.7, 1.4],
                depth: 1.0,
                switch_prob: 0.02,
                jobs_per_step: 0.1,
            },
            timing: TimingParams {
                period: 50,
                width: 5,
                amplitude: 3.0,
                jobs_per_amplitude: 0.5,
            },
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.control_interval_us,
            self.jitter_sd_us,
            self.min_gap_us,
            self.nominal_ops_per_qubit,
            self.op_service_us,
            self.wait_per_job_us,
            self.zeta_per_op,
            self.zeta_per_job,
            self.zeta_noise_sd,
            self.power_base_mw,
            self.power_per_op_mw,
            self.power_per_jitter_mw,
            self.power_per_job_mw,
            self.activity_ref,
            self.activity_weight,
            self.rl.depth,
            self.rl.switch_prob,
            self.rl.jobs_per_step,
            self.timing.amplitude,
            self.timing.jobs_per_amplitude,
        ];
        let all_ok = finite.iter().all(|x| x.is_finite() && *x >= 0.0)
            && self.control_interval_us > 0.0
            && self.min_gap_us > 0.0
            && self.nominal_ops_per_qubit > 0.0
            && self.activity_ref > 0.0
            && self.activity_weight <= 1.0
            && self.rl.switch_prob <= 1.0
            && self.rl.levels.iter().all(|l| l.is_finite() && *l > 0.0)
            && self.queue_thresholds.windows(2).all(|w| w[0] < w[1])
            && self.pf_wait_us.iter().all(|x| x.is_finite() && *x >= 0.0)
            && self.crosstalk_base.iter().all(|x| x.is_finite())
            && self.timing.period > 0
            && self.timing.width <= self.timing.period;
        if all_ok {
            Ok(())
        } else {
            Err(Error::Config("invalid environment config".into()))
        }
    }

    /// Queue category for `len` waiting jobs.
    pub fn queue_state(&self, len: u32) -> QueueState {
        let [idle, light, moderate] = self.queue_thresholds;
        if len <= idle {
            QueueState::Idle
        } else if len <= light {
            QueueState::Light
        } else if len <= moderate {
            QueueState::Moderate
        } else {
            QueueState::Heavy
        }
    }

    /// Latency model handed to the jitter filter.
    pub fn pf_latency(&self, theta: f64, q: QueueState) -> f64 {
        self.pf_wait_us[q.index()] + theta.abs()
    }
}

/// Observables produced by one dispatch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub features: IntervalFeatures,
    pub latency_us: f64,
    pub power_mw: f64,
    /// Ops dispatched after any batch modulation.
    pub ops: f64,
}

#[derive(Clone, Debug)]
pub struct Env {
    cfg: EnvConfig,
    farm: Vec<FarmEntry>,
    arrivals: Vec<Option<Poisson<f64>>>,
    workload: WorkloadKind,
    queues: Vec<u32>,
    activity: f64,
    rng: ChaCha8Rng,
    adv_rng: ChaCha8Rng,
    steps: u64,
    last_theta: f64,
    rl_state: usize,
}

impl Env {
    pub fn new(
        cfg: &EnvConfig,
        farm: &[FarmEntry],
        workload: WorkloadKind,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if farm.is_empty() {
            return Err(Error::Config("backend farm is empty".into()));
        }
        for f in farm {
            f.validate()?;
        }
        let arrivals = farm
            .iter()
            .map(|f| {
                if f.arrival_rate > 0.0 {
                    Poisson::new(f.arrival_rate)
                        .map(Some)
                        .map_err(|e| Error::Config(format!("arrival rate: {e}")))
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        let mut env = Self {
            cfg: cfg.clone(),
            farm: farm.to_vec(),
            arrivals,
            workload,
            queues: vec![0; farm.len()],
            activity: 0.0,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 1])),
            adv_rng: ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 2])),
            steps: 0,
            last_theta: 0.0,
            rl_state: 0,
        };
        for _ in 0..cfg.burn_in {
            env.advance_queues();
        }
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn farm(&self) -> &[FarmEntry] {
        &self.farm
    }

    pub fn workload(&self) -> WorkloadKind {
        self.workload
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn queue_len(&self, backend: usize) -> u32 {
        self.queues[backend]
    }

    pub fn queue_state(&self, backend: usize) -> QueueState {
        self.cfg.queue_state(self.queues[backend])
    }

    /// Current crosstalk matrix, row-major 3x3.
    pub fn crosstalk(&self) -> [f64; 9] {
        let scale = 1.0 + self.activity / self.cfg.activity_ref;
        self.cfg.crosstalk_base.map(|x| x * scale)
    }

    fn advance_queues(&mut self) {
        for (i, q) in self.queues.iter_mut().enumerate() {
            if *q > 0 && self.rng.random::<f64>() < self.farm[i].service_prob {
                *q -= 1;
            }
            if let Some(p) = &self.arrivals[i] {
                *q += p.sample(&mut self.rng) as u32;
            }
        }
    }

    /// `(batch multiplier, co-tenant jobs queued)` for this step.
    fn rl_step(&mut self) -> (f64, u32) {
        if self.workload != WorkloadKind::Rl {
            return (1.0, 0);
        }
        let p = &self.cfg.rl;
        if self.adv_rng.random::<f64>() < p.switch_prob {
            self.rl_state ^= 1;
        }
        let level = p.levels[self.rl_state];
        let rate = p.jobs_per_step * p.depth * level;
        let jobs = match Poisson::new(rate) {
            Ok(d) => d.sample(&mut self.adv_rng) as u32,
            Err(_) => 0,
        };
        (1.0 + p.depth * (level - 1.0), jobs)
    }

    /// `(extra gap in microseconds, jobs injected)` for this step.
    fn timing_burst(&self) -> (f64, u32) {
        if self.workload != WorkloadKind::Timing {
            return (0.0, 0);
        }
        let t = &self.cfg.timing;
        if self.steps % t.period >= t.width {
            return (0.0, 0);
        }
        let extra = t.amplitude * self.cfg.control_interval_us;
        let jobs = (t.amplitude * t.jobs_per_amplitude).round() as u32;
        (extra, jobs)
    }

    /// Dispatch one layer of an `n`-qubit job to `backend` with offset
    /// `theta`, then advance every queue by one step.
    pub fn step(
        &mut self,
        layer: &Layer,
        n: u32,
        backend: usize,
        theta: f64,
    ) -> Result<StepOutput> {
        let entry = self
            .farm
            .get(backend)
            .ok_or_else(|| Error::Config(format!("backend index {backend} out of range")))?;
        if !theta.is_finite() {
            return Err(Error::Input("non-finite dispatch offset".into()));
        }
        let cfg = &self.cfg;
        let scale = entry.service_scale;
        let len = self.queues[backend];
        let q = cfg.queue_state(len);

        let jitter: f64 = self.rng.sample::<f64, _>(StandardNormal) * cfg.jitter_sd_us;
        let zeta_noise: f64 = self.rng.sample::<f64, _>(StandardNormal) * cfg.zeta_noise_sd;
        let (mult, rl_jobs) = self.rl_step();
        let (burst, injected) = self.timing_burst();

        let cfg = &self.cfg;
        let ops = layer.ops.len() as f64 * mult;
        let gap = cfg.control_interval_us
            + layer.duration() * scale
            + (theta - self.last_theta)
            + jitter
            + burst;
        let dt = gap.max(cfg.min_gap_us);
        let b = ops / (cfg.nominal_ops_per_qubit * n as f64);
        let zeta = cfg.zeta_per_op * ops + cfg.zeta_per_job * len as f64 + zeta_noise;
        let latency =
            cfg.op_service_us * scale * ops + cfg.wait_per_job_us * len as f64 + theta.abs();
        let power = cfg.power_base_mw
            + cfg.power_per_op_mw * ops
            + cfg.power_per_jitter_mw * theta.abs()
            + cfg.power_per_job_mw * len as f64;
        let features = IntervalFeatures::new(dt, b, q, zeta)?;

        let w = cfg.activity_weight;
        self.activity = (1.0 - w) * self.activity + w * len as f64;
        self.last_theta = theta;
        self.queues[backend] += injected + rl_jobs;
        self.advance_queues();
        self.steps += 1;
        Ok(StepOutput {
            features,
            latency_us: latency,
            power_mw: power,
            ops,
        })
    }
}
