//! Experiment configuration file (TOML).
//!
//! Every field is required when parsing; [`ExperimentConfig::default`] is
//! the reference configuration printed by `--show-config`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::orchestrator::{EnvSpec, PipelineConfig};
use crate::router::BackendKind;
use crate::simenv::{EnvConfig, FarmEntry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub tier1_sizes: Vec<u32>,
    pub tier2_sizes: Vec<u32>,
    pub seeds: u32,
    /// Intervals (window emissions) per episode.
    pub intervals: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Design-only jobs per size used for the codebook and reference.
    pub design_episodes: u32,
    /// Monitor-only baseline jobs per size used for thresholds.
    pub baseline_seeds: u32,
    pub min_baseline_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub bootstrap_resamples: usize,
    pub histogram_bins: usize,
    /// Budget multipliers for the threshold sweep.
    pub sweep_factors: Vec<f64>,
    /// Estimator calibration error fed to the advantage bound, nats.
    pub eps_est: f64,
    /// Skew/jitter allowance fed to the advantage bound, nats.
    pub eps_sync: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub grid: GridConfig,
    pub calibration: CalibrationConfig,
    pub pipeline: PipelineConfig,
    pub env: EnvConfig,
    pub report: ReportConfig,
    pub tier1_farm: Vec<FarmEntry>,
    pub tier2_farm: Vec<FarmEntry>,
}

fn farm_entry(
    id: u32,
    kind: BackendKind,
    err: (f64, f64),
    scale: f64,
    arrival: f64,
    service: f64,
) -> FarmEntry {
    FarmEntry {
        id,
        kind,
        err_1q: err.0,
        err_2q: err.1,
        service_scale: scale,
        arrival_rate: arrival,
        service_prob: service,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 20_240_611,
            grid: GridConfig {
                tier1_sizes: vec![4, 8, 16],
                tier2_sizes: vec![4, 8],
                seeds: 40,
                intervals: 800,
            },
            calibration: CalibrationConfig {
                design_episodes: 12,
                baseline_seeds: 20,
                min_baseline_samples: 1000,
            },
            pipeline: PipelineConfig::default(),
            env: EnvConfig::default(),
            report: ReportConfig {
                bootstrap_resamples: 10_000,
                histogram_bins: 40,
                sweep_factors: vec![1.0, 1.25, 1.5, 2.0, 3.0, 4.0],
                eps_est: 0.0,
                eps_sync: 0.0,
            },
            tier1_farm: vec![farm_entry(
                0,
                BackendKind::Qpu,
                (1e-4, 1e-3),
                1.0,
                0.25,
                0.5,
            )],
            tier2_farm: vec![
                farm_entry(0, BackendKind::Qpu, (1e-4, 1e-3), 1.0, 0.25, 0.5),
                farm_entry(1, BackendKind::Tn, (0.0, 0.0), 1.6, 0.2, 0.45),
                farm_entry(2, BackendKind::Gpu, (0.0, 0.0), 1.2, 0.3, 0.55),
                farm_entry(3, BackendKind::Cpu, (0.0, 0.0), 2.5, 0.1, 0.4),
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.env.validate()?;
        let g = &self.grid;
        if g.tier1_sizes.is_empty() || g.seeds == 0 || g.intervals == 0 {
            return Err(Error::Config(
                "grid needs sizes, seeds and intervals".into(),
            ));
        }
        if g.tier1_sizes.iter().chain(&g.tier2_sizes).any(|&n| n == 0) {
            return Err(Error::Config("job sizes must be >= 1".into()));
        }
        if let Some(n) = g.tier2_sizes.iter().find(|n| !g.tier1_sizes.contains(n)) {
            return Err(Error::Config(format!(
                "tier 2 size {n} has no tier 1 calibration"
            )));
        }
        if self.calibration.design_episodes == 0 || self.calibration.baseline_seeds == 0 {
            return Err(Error::Config(
                "calibration needs design and baseline runs".into(),
            ));
        }
        let r = &self.report;
        if r.histogram_bins == 0 || r.sweep_factors.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Config("invalid report settings".into()));
        }
        if !(r.eps_est >= 0.0 && r.eps_sync >= 0.0) {
            return Err(Error::Config("bound allowances must be >= 0".into()));
        }
        for farm in [&self.tier1_farm, &self.tier2_farm] {
            if farm.is_empty() {
                return Err(Error::Config("backend farm is empty".into()));
            }
            for f in farm {
                f.validate()?;
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn env_spec(&self, tier: u8) -> EnvSpec {
        EnvSpec {
            cfg: self.env.clone(),
            farm: if tier == 2 {
                self.tier2_farm.clone()
            } else {
                self.tier1_farm.clone()
            },
        }
    }
}
