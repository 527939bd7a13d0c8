//! Calibration and the two evaluation grids.
//!
//! Seeds: episode `i` of size `n` uses `mix_seed([master, n, i])` for every
//! workload and both tiers, so Tier II replays Tier I's seeds. Calibration
//! runs use separate tagged streams and never overlap the grid.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::Artifacts;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::estimator::{build_reference, ClassKey};
use crate::features::{build_codebook, IntervalFeatures, CODEWORDS};
use crate::orchestrator::{
    prepare, run_job, Dispatcher, Episode, EpisodeResult, JobSpec, KillSwitch,
};
use crate::padding::{Circuit, PaddingSpec, SegmentClass};
use crate::policy::{calibrate as calibrate_thresholds, transfer, Thresholds, Transferred};
use crate::simenv::WorkloadKind;
use crate::stats::mix_seed;

const DESIGN_TAG: u64 = 0xD351_6E00;
const BASELINE_TAG: u64 = 0xBA5E_0000;
const CIRCUIT_TAG: u64 = 6;

/// Thresholds placeholder for monitor-only runs before calibration.
pub fn uncalibrated() -> Thresholds {
    Thresholds {
        delta_budget: f64::MAX / 4.0,
        delta_kill: f64::MAX / 2.0,
    }
}

pub fn episode_seed(master: u64, n: u32, i: u32) -> u64 {
    mix_seed(&[master, n as u64, i as u64])
}

fn baseline_seed(master: u64, n: u32, i: u32) -> u64 {
    mix_seed(&[master, n as u64, i as u64, BASELINE_TAG])
}

fn design_seed(master: u64, n: u32, i: u32) -> u64 {
    mix_seed(&[master, n as u64, i as u64, DESIGN_TAG])
}

/// Real layers so that the padded job emits exactly `intervals` windows.
pub fn job_circuit(cfg: &ExperimentConfig, n: u32, seed: u64) -> Result<Circuit> {
    let total = cfg
        .pipeline
        .estimator
        .pushes_for_intervals(cfg.grid.intervals);
    let budget = PaddingSpec::for_qubits(n, cfg.pipeline.c_pad)?.depth_budget(n);
    let depth = total.checked_sub(budget).ok_or_else(|| {
        Error::Config(format!(
            "padding budget {budget} exceeds the job length {total}"
        ))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, CIRCUIT_TAG]));
    cfg.pipeline.gates.local_random_circuit(n, depth, &mut rng)
}

/// Features of design-only (pure padding) jobs, labelled by segment class.
pub fn collect_design(
    cfg: &ExperimentConfig,
    n: u32,
    episode: u32,
) -> Result<Vec<(IntervalFeatures, SegmentClass)>> {
    let seed = design_seed(cfg.master_seed, n, episode);
    let len = cfg
        .pipeline
        .estimator
        .pushes_for_intervals(cfg.grid.intervals);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, CIRCUIT_TAG]));
    let design = cfg.pipeline.gates.design_circuit(n, len, &mut rng)?;
    let segs = crate::padding::segment(&design, cfg.pipeline.segments)?;
    let env = cfg.env_spec(1);
    let mut d = Dispatcher::new(&cfg.pipeline.pf, &env, WorkloadKind::None, seed)?;
    let mut out = Vec::with_capacity(len);
    for s in &segs {
        for layer in s.layers_of(&design) {
            out.push((d.dispatch(layer, n, 0)?.out.features, s.class));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Calibration {
    pub artifacts: Artifacts,
    pub thresholds: BTreeMap<u32, Thresholds>,
    /// Monitor-only Tier I baseline estimates per size.
    pub baselines: BTreeMap<u32, Vec<f64>>,
}

/// What `calibrate` persists besides the artifact file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub artifact_digest: String,
    pub thresholds: BTreeMap<u32, Thresholds>,
    pub baselines: BTreeMap<u32, Vec<f64>>,
}

pub const ARTIFACT_FILE: &str = "artifacts.bin";
pub const CALIBRATION_FILE: &str = "calibration.json";

impl Calibration {
    pub fn record(&self) -> CalibrationRecord {
        CalibrationRecord {
            artifact_digest: hex::encode(self.artifacts.digest),
            thresholds: self.thresholds.clone(),
            baselines: self.baselines.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.artifacts.save(&dir.join(ARTIFACT_FILE))?;
        fs::write(
            dir.join(CALIBRATION_FILE),
            serde_json::to_vec_pretty(&self.record())?,
        )?;
        Ok(())
    }

    /// Load and verify; the artifact digest must match the calibration record.
    pub fn load(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        let artifacts = Artifacts::load(&dir.join(ARTIFACT_FILE), &cfg.pipeline.estimator)?;
        let record: CalibrationRecord =
            serde_json::from_slice(&fs::read(dir.join(CALIBRATION_FILE))?)?;
        if record.artifact_digest != hex::encode(artifacts.digest) {
            return Err(Error::ArtifactDigest(
                "artifact file does not match the calibration record".into(),
            ));
        }
        for th in record.thresholds.values() {
            th.validate()?;
        }
        Ok(Self {
            artifacts,
            thresholds: record.thresholds,
            baselines: record.baselines,
        })
    }
}

/// Build the locked artifacts from design-only runs.
pub fn build_artifacts(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let mut design: BTreeMap<u32, Vec<(IntervalFeatures, SegmentClass)>> = BTreeMap::new();
    for &n in &cfg.grid.tier1_sizes {
        let runs: Vec<_> = (0..cfg.calibration.design_episodes)
            .into_par_iter()
            .map(|i| collect_design(cfg, n, i))
            .collect::<Result<_>>()?;
        design.insert(n, runs.into_iter().flatten().collect());
    }
    let features: BTreeMap<u32, Vec<IntervalFeatures>> = design
        .iter()
        .map(|(&n, v)| (n, v.iter().map(|(f, _)| *f).collect()))
        .collect();
    let codebook = build_codebook(&features)?;
    let mut streams: BTreeMap<ClassKey, Vec<u32>> = BTreeMap::new();
    for (&n, v) in &design {
        for k in SegmentClass::ALL {
            streams.insert((n, k), Vec::new());
        }
        for (f, k) in v {
            streams
                .get_mut(&(n, *k))
                .unwrap()
                .push(codebook.encode(f, n)?);
        }
    }
    let reference = build_reference(&streams, &cfg.pipeline.estimator, CODEWORDS)?;
    Artifacts::new(codebook, reference)
}

fn spec_for(
    cfg: &ExperimentConfig,
    artifacts: &Artifacts,
    n: u32,
    seed: u64,
    tier: u8,
    workload: WorkloadKind,
    thresholds: Thresholds,
    kill_switch: KillSwitch,
) -> Result<JobSpec> {
    Ok(JobSpec {
        circuit: job_circuit(cfg, n, seed)?,
        seed,
        tier,
        workload,
        thresholds,
        kill_switch,
        artifact_digest: artifacts.digest,
    })
}

/// Monitor-only baseline runs on the given tier; returns every interval's
/// unclamped estimate.
pub fn baseline_samples(
    cfg: &ExperimentConfig,
    artifacts: &Artifacts,
    n: u32,
    tier: u8,
    thresholds: Thresholds,
) -> Result<Vec<f64>> {
    let env = cfg.env_spec(tier);
    let runs: Vec<Vec<f64>> = (0..cfg.calibration.baseline_seeds)
        .into_par_iter()
        .map(|i| {
            let seed = baseline_seed(cfg.master_seed, n, i);
            let spec = spec_for(
                cfg,
                artifacts,
                n,
                seed,
                tier,
                WorkloadKind::None,
                thresholds,
                KillSwitch::Disarmed,
            )?;
            let ep = run_job(&spec, &cfg.pipeline, artifacts, &env)?;
            Ok(ep.result.trace.iter().map(|r| r.raw).collect())
        })
        .collect::<Result<_>>()?;
    Ok(runs.concat())
}

/// Full calibration: artifacts, then Tier I thresholds per size.
pub fn calibrate(cfg: &ExperimentConfig) -> Result<Calibration> {
    cfg.validate()?;
    let artifacts = build_artifacts(cfg)?;
    let mut thresholds = BTreeMap::new();
    let mut baselines = BTreeMap::new();
    let p = &cfg.pipeline.policy;
    for &n in &cfg.grid.tier1_sizes {
        let samples = baseline_samples(cfg, &artifacts, n, 1, uncalibrated())?;
        if samples.len() < cfg.calibration.min_baseline_samples {
            return Err(Error::Calibration(format!(
                "n={n}: {} baseline samples, need {}",
                samples.len(),
                cfg.calibration.min_baseline_samples
            )));
        }
        thresholds.insert(
            n,
            calibrate_thresholds(&samples, p.q_budget, p.q_kill, p.g_min)?,
        );
        baselines.insert(n, samples);
    }
    Ok(Calibration {
        artifacts,
        thresholds,
        baselines,
    })
}

/// Compact monitor-only trace used for separation metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrace {
    pub tier: u8,
    pub n: u32,
    pub workload: WorkloadKind,
    pub seed_index: u32,
    /// Unclamped estimate per interval.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub n: u32,
    pub tier1: Thresholds,
    pub transferred: Transferred,
    pub tier2_baseline_samples: usize,
}

pub struct TierRun {
    pub tier: u8,
    pub thresholds: BTreeMap<u32, Thresholds>,
    pub episodes: Vec<(u32, EpisodeResult)>,
    pub logs: Vec<crate::audit::AuditLog>,
    pub scores: Vec<ScoreTrace>,
    pub transfers: Vec<TransferRecord>,
}

struct Cell {
    n: u32,
    workload: WorkloadKind,
    index: u32,
}

fn cells(cfg: &ExperimentConfig, sizes: &[u32]) -> Vec<Cell> {
    let mut out = Vec::new();
    for &n in sizes {
        for w in WorkloadKind::ALL {
            for index in 0..cfg.grid.seeds {
                out.push(Cell {
                    n,
                    workload: w,
                    index,
                });
            }
        }
    }
    out
}

fn run_cells(
    cfg: &ExperimentConfig,
    calib: &Calibration,
    tier: u8,
    cells: &[Cell],
    thresholds: &BTreeMap<u32, Thresholds>,
    kill_switch: KillSwitch,
) -> Result<Vec<(u32, Episode)>> {
    let env = cfg.env_spec(tier);
    cells
        .par_iter()
        .map(|c| {
            let th = *thresholds
                .get(&c.n)
                .ok_or_else(|| Error::Config(format!("no thresholds for n={}", c.n)))?;
            let seed = episode_seed(cfg.master_seed, c.n, c.index);
            let spec = spec_for(
                cfg,
                &calib.artifacts,
                c.n,
                seed,
                tier,
                c.workload,
                th,
                kill_switch,
            )?;
            Ok((
                c.index,
                run_job(&spec, &cfg.pipeline, &calib.artifacts, &env)?,
            ))
        })
        .collect()
}

fn split(runs: Vec<(u32, Episode)>) -> (Vec<(u32, EpisodeResult)>, Vec<crate::audit::AuditLog>) {
    runs.into_iter()
        .map(|(i, e)| ((i, e.result), e.log))
        .unzip()
}

/// Tier I: enforced grid plus monitor-only traces of the same episodes.
pub fn run_tier1(cfg: &ExperimentConfig, calib: &Calibration) -> Result<TierRun> {
    cfg.validate()?;
    let grid = cells(cfg, &cfg.grid.tier1_sizes);
    let (episodes, logs) = split(run_cells(
        cfg,
        calib,
        1,
        &grid,
        &calib.thresholds,
        KillSwitch::Armed,
    )?);
    let open = run_cells(
        cfg,
        calib,
        1,
        &grid,
        &calib.thresholds,
        KillSwitch::Disarmed,
    )?;
    let scores = open
        .into_iter()
        .map(|(i, e)| ScoreTrace {
            tier: 1,
            n: e.result.n,
            workload: e.result.workload,
            seed_index: i,
            values: e.result.trace.iter().map(|r| r.raw).collect(),
        })
        .collect();
    Ok(TierRun {
        tier: 1,
        thresholds: calib.thresholds.clone(),
        episodes,
        logs,
        scores,
        transfers: Vec::new(),
    })
}

/// Tier II: thresholds transferred from Tier I by quantile alignment on
/// Tier II baseline runs, then the enforced grid on the heterogeneous farm.
pub fn run_tier2(cfg: &ExperimentConfig, calib: &Calibration) -> Result<TierRun> {
    cfg.validate()?;
    let mut thresholds = BTreeMap::new();
    let mut transfers = Vec::new();
    for &n in &cfg.grid.tier2_sizes {
        let th1 = *calib
            .thresholds
            .get(&n)
            .ok_or_else(|| Error::Config(format!("no tier 1 thresholds for n={n}")))?;
        let base1 = calib
            .baselines
            .get(&n)
            .ok_or_else(|| Error::Config(format!("no tier 1 baseline for n={n}")))?;
        let base2 = baseline_samples(cfg, &calib.artifacts, n, 2, th1)?;
        let t = transfer(&th1, base1, &base2)?;
        thresholds.insert(n, t.thresholds);
        transfers.push(TransferRecord {
            n,
            tier1: th1,
            transferred: t,
            tier2_baseline_samples: base2.len(),
        });
    }
    let grid = cells(cfg, &cfg.grid.tier2_sizes);
    let (episodes, logs) = split(run_cells(
        cfg,
        calib,
        2,
        &grid,
        &thresholds,
        KillSwitch::Armed,
    )?);
    Ok(TierRun {
        tier: 2,
        thresholds,
        episodes,
        logs,
        scores: Vec::new(),
        transfers,
    })
}

pub fn episode_stem(n: u32, workload: WorkloadKind, index: u32) -> String {
    format!("n{n:02}_{workload}_s{index:02}")
}

pub const EPISODE_DIR: &str = "episodes";
pub const OPEN_LOOP_DIR: &str = "open_loop";
pub const THRESHOLDS_FILE: &str = "thresholds.json";

impl TierRun {
    /// Write episode records, audit logs, monitor-only traces and the
    /// thresholds actually used.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let ep_dir = dir.join(EPISODE_DIR);
        fs::create_dir_all(&ep_dir)?;
        for ((i, e), log) in self.episodes.iter().zip(&self.logs) {
            let stem = episode_stem(e.n, e.workload, *i);
            fs::write(ep_dir.join(format!("{stem}.json")), serde_json::to_vec(e)?)?;
            log.write_to(&ep_dir.join(format!("{stem}.audit")))?;
        }
        if !self.scores.is_empty() {
            let ol = dir.join(OPEN_LOOP_DIR);
            fs::create_dir_all(&ol)?;
            for s in &self.scores {
                let stem = episode_stem(s.n, s.workload, s.seed_index);
                fs::write(ol.join(format!("{stem}.json")), serde_json::to_vec(s)?)?;
            }
        }
        let meta = serde_json::json!({
            "tier": self.tier,
            "thresholds": self.thresholds,
            "transfers": self.transfers,
        });
        fs::write(dir.join(THRESHOLDS_FILE), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }
}

/// Sorted `.json` files of a directory; empty if it does not exist.
pub fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}

/// Re-read a padded job for inspection, using the same derivations as the
/// grid.
pub fn padded_job(cfg: &ExperimentConfig, n: u32, index: u32) -> Result<Circuit> {
    let seed = episode_seed(cfg.master_seed, n, index);
    Ok(prepare(&job_circuit(cfg, n, seed)?, &cfg.pipeline, seed)?.0)
}
