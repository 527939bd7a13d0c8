//! Per-job pipeline: pad, segment, jitter, route, execute, estimate, log and
//! enforce.
//!
//! Each estimator window emission is one interval. Every interval gets one
//! audit record, written before the kill check, so the aborting estimate is
//! always in the log.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::Artifacts;
use crate::audit::{
    AbortReason, AuditHeader, AuditLog, Outcome, Payload, FLAG_CLAMPED, FLAG_MONITOR_ONLY,
    FLAG_PF_DEGENERATE, FLAG_SWITCHED,
};
use crate::codec::Digest;
use crate::error::{Error, Result};
use crate::estimator::{estimate, EstimatorConfig, LeakageEstimate, WindowState};
use crate::features::IntervalFeatures;
use crate::padding::{
    insert_tdesign, segment, Circuit, GateSet, PaddingSpec, Segment, SegmentClass,
};
use crate::pf::{propose, sample_dispatch, ParticleSet, PfConfig};
use crate::policy::{evaluate, Decision, PolicyConfig, PolicyState, Thresholds};
use crate::router::{BackendState, OpProfile, Router, RoutingPolicy};
use crate::simenv::{Env, EnvConfig, FarmEntry, StepOutput, WorkloadKind};
use crate::stats::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KillSwitch {
    Armed,
    /// Estimates and logs every interval but never aborts.
    Disarmed,
}

/// Knobs shared by every job of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub estimator: EstimatorConfig,
    pub pf: PfConfig,
    pub routing: RoutingPolicy,
    pub policy: PolicyConfig,
    pub gates: GateSet,
    pub c_pad: u32,
    pub segments: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            estimator: EstimatorConfig::default(),
            pf: PfConfig::default(),
            routing: RoutingPolicy::default(),
            policy: PolicyConfig::default(),
            gates: GateSet::default(),
            c_pad: 2,
            segments: 12,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        self.pf.validate()?;
        self.routing.validate()?;
        self.policy.validate()?;
        if self.c_pad == 0 || self.segments == 0 {
            return Err(Error::Config("c_pad and segments must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct JobSpec {
    pub circuit: Circuit,
    pub seed: u64,
    pub tier: u8,
    pub workload: WorkloadKind,
    pub thresholds: Thresholds,
    pub kill_switch: KillSwitch,
    /// File digest the locked artifacts must carry.
    pub artifact_digest: Digest,
}

/// Backend farm and environment model.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub cfg: EnvConfig,
    pub farm: Vec<FarmEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalRecord {
    pub interval: u64,
    pub segment: u32,
    pub class: SegmentClass,
    pub backend: u32,
    /// Offset of the interval's last dispatch, microseconds.
    pub theta: f64,
    /// Features of the interval's last dispatch.
    pub features: IntervalFeatures,
    pub delta_hat: f64,
    pub raw: f64,
    pub decision: Option<Decision>,
    /// Mean over the dispatches since the previous interval.
    pub latency_us: f64,
    pub power_mw: f64,
    pub flags: u32,
}

/// Per-segment shot summary; fusion is plain concatenation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub index: u32,
    pub class: SegmentClass,
    pub backend: u32,
    pub layers: u64,
    pub real_ops: u64,
    pub duration_us: f64,
    /// Layers actually dispatched before completion or abort.
    pub executed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub n: u32,
    pub tier: u8,
    pub workload: WorkloadKind,
    pub seed: u64,
    pub kill_switch: KillSwitch,
    pub thresholds: Thresholds,
    pub outcome: Outcome,
    pub reason: AbortReason,
    pub dispatches: u64,
    pub trace: Vec<IntervalRecord>,
    pub segments: Vec<SegmentSummary>,
    /// Hex of the terminal audit hash.
    pub attestation: String,
}

impl EpisodeResult {
    pub fn aborted(&self) -> bool {
        self.outcome == Outcome::Aborted
    }
}

pub struct Episode {
    pub result: EpisodeResult,
    pub log: AuditLog,
}

/// Verify the artifacts against the job before anything runs.
pub fn check_artifacts(spec: &JobSpec, cfg: &PipelineConfig, artifacts: &Artifacts) -> Result<()> {
    if artifacts.digest != spec.artifact_digest {
        return Err(Error::ArtifactDigest(format!(
            "expected {}, artifacts carry {}",
            hex::encode(spec.artifact_digest),
            hex::encode(artifacts.digest)
        )));
    }
    let expected = cfg.estimator.locked();
    if !artifacts.reference.tuple().same_as(&expected) {
        return Err(Error::ConfigMismatch(format!(
            "artifact tuple {:?} differs from runtime {expected:?}",
            artifacts.reference.tuple()
        )));
    }
    let n = spec.circuit.n;
    artifacts.codebook.table(n)?;
    for k in SegmentClass::ALL {
        artifacts.reference.class(n, k)?;
    }
    spec.thresholds.validate()
}

/// The dispatch loop shared by design collection and monitored jobs.
pub(crate) struct Dispatcher<'a> {
    pf_cfg: &'a PfConfig,
    particles: ParticleSet,
    pf_rng: ChaCha8Rng,
    pub env: Env,
}

pub(crate) struct Dispatched {
    pub out: StepOutput,
    pub theta: f64,
    pub degenerate: bool,
}

impl<'a> Dispatcher<'a> {
    pub fn new(
        pf_cfg: &'a PfConfig,
        env: &EnvSpec,
        workload: WorkloadKind,
        seed: u64,
    ) -> Result<Self> {
        pf_cfg.validate()?;
        Ok(Self {
            pf_cfg,
            particles: ParticleSet::new(pf_cfg.particles)?,
            pf_rng: ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 3])),
            env: Env::new(&env.cfg, &env.farm, workload, mix_seed(&[seed, 4]))?,
        })
    }

    pub fn dispatch(
        &mut self,
        layer: &crate::padding::Layer,
        n: u32,
        backend: usize,
    ) -> Result<Dispatched> {
        let q = self.env.queue_state(backend);
        let env_cfg = self.env.config();
        let latency = |t, q| env_cfg.pf_latency(t, q);
        let (theta, degenerate) = match propose(
            &mut self.particles,
            q,
            self.pf_cfg,
            latency,
            &mut self.pf_rng,
        ) {
            Ok(_) => (sample_dispatch(&self.particles, &mut self.pf_rng)?, false),
            Err(Error::DegenerateParticles) => {
                self.particles.reset();
                (0.0, true)
            }
            Err(e) => return Err(e),
        };
        let out = self.env.step(layer, n, backend, theta)?;
        Ok(Dispatched {
            out,
            theta,
            degenerate,
        })
    }
}

/// Pad a circuit and split it, with the padding seed derived from `seed`.
pub fn prepare(
    circuit: &Circuit,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<(Circuit, Vec<Segment>)> {
    let spec = PaddingSpec::for_qubits(circuit.n, cfg.c_pad)?;
    let padded = insert_tdesign(circuit, &spec, &cfg.gates, mix_seed(&[seed, 5]))?;
    let segs = segment(&padded, cfg.segments)?;
    Ok((padded, segs))
}

pub fn run_job(
    spec: &JobSpec,
    cfg: &PipelineConfig,
    artifacts: &Artifacts,
    env: &EnvSpec,
) -> Result<Episode> {
    run_job_with_probe(spec, cfg, artifacts, env, |_, e| e)
}

/// [`run_job`] with a hook that may replace each interval's estimate before
/// it is logged and enforced.
pub fn run_job_with_probe<F>(
    spec: &JobSpec,
    cfg: &PipelineConfig,
    artifacts: &Artifacts,
    env: &EnvSpec,
    mut probe: F,
) -> Result<Episode>
where
    F: FnMut(u64, LeakageEstimate) -> LeakageEstimate,
{
    cfg.validate()?;
    check_artifacts(spec, cfg, artifacts)?;
    let n = spec.circuit.n;
    let header = AuditHeader {
        n,
        workload: spec.workload.name().into(),
        tier: spec.tier,
        seed: spec.seed,
        thresholds: spec.thresholds,
        artifact_digest: hex::encode(artifacts.digest),
        config: serde_json::to_value(cfg)?,
    };
    let mut log = AuditLog::new(&header)?;
    let (padded, segs) = prepare(&spec.circuit, cfg, spec.seed)?;

    let armed = spec.kill_switch == KillSwitch::Armed;
    let kill_clamp = if armed {
        spec.thresholds.delta_kill
    } else {
        f64::INFINITY
    };
    let backends: Vec<_> = env.farm.iter().map(FarmEntry::backend).collect();
    let mut states = vec![BackendState::default(); backends.len()];
    let mut router = Router::new(cfg.routing.clone())?;
    let mut policy = PolicyState::default();
    let mut dispatcher = Dispatcher::new(&cfg.pf, env, spec.workload, spec.seed)?;
    let prior = artifacts
        .reference
        .class(n, segs.first().map_or(SegmentClass::Short, |s| s.class))?;
    let mut window = WindowState::with_prior(&cfg.estimator, prior)?;

    let mut trace = Vec::new();
    let mut summaries = Vec::with_capacity(segs.len());
    let mut pending_flags = 0u32;
    let mut lat_sum = 0.0;
    let mut pow_sum = 0.0;
    let mut since = 0u32;
    let mut dispatches = 0u64;
    let mut last = Payload {
        interval: 0,
        segment: 0,
        backend: 0,
        theta: 0.0,
        delta_hat: 0.0,
        decision: None,
        flags: 0,
    };
    let mut abort: Option<AbortReason> = None;

    'segments: for seg in &segs {
        for (i, st) in states.iter_mut().enumerate() {
            st.queue_depth = dispatcher.env.queue_len(i) as f64;
        }
        let profile = OpProfile::of_layers(seg.layers_of(&padded));
        let route = router.route(
            &profile,
            &backends,
            &states,
            spec.thresholds.delta_budget,
            spec.thresholds.delta_kill,
            policy.may_switch(),
        )?;
        if route.switched {
            policy.start_cooldown(cfg.routing.cooldown);
            pending_flags |= FLAG_SWITCHED;
        }
        let backend = route.backend;
        let mut summary = SegmentSummary {
            index: seg.index as u32,
            class: seg.class,
            backend: backends[backend].id,
            layers: seg.layers.len() as u64,
            real_ops: seg
                .layers_of(&padded)
                .iter()
                .flat_map(|l| &l.ops)
                .filter(|o| !o.dummy)
                .count() as u64,
            duration_us: seg.duration,
            executed: 0,
        };

        for layer in seg.layers_of(&padded) {
            let d = match dispatcher.dispatch(layer, n, backend) {
                Ok(d) => d,
                Err(_) => {
                    summary.executed += 1;
                    abort = Some(AbortReason::EnvFailure);
                    summaries.push(summary);
                    break 'segments;
                }
            };
            dispatches += 1;
            summary.executed += 1;
            if d.degenerate {
                pending_flags |= FLAG_PF_DEGENERATE;
            }
            lat_sum += d.out.latency_us;
            pow_sum += d.out.power_mw;
            since += 1;
            let c = artifacts.codebook.encode(&d.out.features, n)?;
            if window.push(c)?.is_none() {
                continue;
            }

            let k = window.windows_emitted() - 1;
            let lambda_c = dispatcher.env.crosstalk();
            let est = estimate(
                &window,
                &artifacts.reference,
                n,
                seg.class,
                &lambda_c,
                &cfg.estimator,
                kill_clamp,
            )?;
            let est = probe(k, est);
            let decision = if armed {
                Some(evaluate(
                    est.value,
                    &spec.thresholds,
                    &mut policy,
                    cfg.policy.strike_limit,
                )?)
            } else {
                None
            };
            let mut flags = std::mem::take(&mut pending_flags);
            if est.clamped {
                flags |= FLAG_CLAMPED;
            }
            if !armed {
                flags |= FLAG_MONITOR_ONLY;
            }
            let payload = Payload {
                interval: k,
                segment: seg.index as u32,
                backend: backends[backend].id,
                theta: d.theta,
                delta_hat: est.value,
                decision,
                flags,
            };
            log.append(&payload)?;
            last = payload;
            trace.push(IntervalRecord {
                interval: k,
                segment: seg.index as u32,
                class: seg.class,
                backend: backends[backend].id,
                theta: d.theta,
                features: d.out.features,
                delta_hat: est.value,
                raw: est.raw,
                decision,
                latency_us: lat_sum / since as f64,
                power_mw: pow_sum / since as f64,
                flags,
            });
            lat_sum = 0.0;
            pow_sum = 0.0;
            since = 0;
            states[backend].leak = est.value;
            router.observe(est.value);
            policy.tick_cooldown();

            if decision == Some(Decision::Abort) {
                abort = Some(if est.value >= spec.thresholds.delta_kill {
                    AbortReason::KillThreshold
                } else {
                    AbortReason::StrikeLimit
                });
                summaries.push(summary);
                break 'segments;
            }
        }
        summaries.push(summary);
    }

    let (outcome, reason) = match abort {
        Some(r) => (Outcome::Aborted, r),
        None => (Outcome::Completed, AbortReason::None),
    };
    let att = log.finalize(outcome, reason, &last)?;
    Ok(Episode {
        result: EpisodeResult {
            n,
            tier: spec.tier,
            workload: spec.workload,
            seed: spec.seed,
            kill_switch: spec.kill_switch,
            thresholds: spec.thresholds,
            outcome,
            reason,
            dispatches,
            trace,
            segments: summaries,
            attestation: hex::encode(att),
        },
        log,
    })
}
