//! Per-interval cadence features and the fixed codeword alphabet.
//!
//! Each dispatch interval is summarised by four observables: the
//! inter-dispatch gap, the batch-size ratio, a categorical queue state and a
//! scalar telemetry proxy. Gap and batch ratio are normalised by design-only
//! baselines for the job size, then every feature is binned and the bins are
//! packed into one codeword index:
//!
//! ```text
//! index = ((i_dt * 5 + i_b) * 4 + i_q) * 8 + i_zeta      in [0, 2560)
//! ```
//!
//! Bins are half-open `(lo, hi]`; values at or below the first edge land in
//! bin 0 and values above the last edge land in the top bin, so quantisation
//! is total on finite input.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::{sha256, Digest, Reader, Writer};
use crate::error::{Error, Result};
use crate::stats::{nearest_rank, sorted_finite};

pub const DT_BINS: usize = 16;
pub const B_BINS: usize = 5;
pub const Q_LEVELS: usize = 4;
pub const ZETA_BINS: usize = 8;
/// Size of the codeword alphabet.
pub const CODEWORDS: usize = DT_BINS * B_BINS * Q_LEVELS * ZETA_BINS;

/// Fixed batch-ratio edges: `<=0.5, (0.5,0.9], (0.9,1.1], (1.1,1.5], >1.5`.
pub const B_EDGES: [f64; B_BINS - 1] = [0.5, 0.9, 1.1, 1.5];

/// Fewest design samples accepted per job size.
pub const MIN_DESIGN_SAMPLES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueueState {
    Idle,
    Light,
    Moderate,
    Heavy,
}

impl QueueState {
    pub const ALL: [QueueState; Q_LEVELS] = [
        QueueState::Idle,
        QueueState::Light,
        QueueState::Moderate,
        QueueState::Heavy,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalFeatures {
    /// Inter-dispatch gap, microseconds.
    pub dt: f64,
    /// Batch-size ratio against the nominal batch.
    pub b: f64,
    pub q: QueueState,
    /// Telemetry proxy (unscaled).
    pub zeta: f64,
}

impl IntervalFeatures {
    pub fn new(dt: f64, b: f64, q: QueueState, zeta: f64) -> Result<Self> {
        let f = Self { dt, b, q, zeta };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.b.is_finite() && self.zeta.is_finite()) {
            return Err(Error::Input(format!("non-finite feature {self:?}")));
        }
        if self.dt <= 0.0 {
            return Err(Error::Input(format!(
                "gap must be positive, got {}",
                self.dt
            )));
        }
        if self.b < 0.0 {
            return Err(Error::Input(format!(
                "batch ratio must be >= 0, got {}",
                self.b
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizedFeatures {
    pub n: u32,
    pub dt: f64,
    pub b: f64,
    pub q: QueueState,
    pub zeta: f64,
}

/// Calibrated bins and baselines for one job size.
#[derive(Clone, Debug, PartialEq)]
pub struct JobTable {
    pub mu_dt: f64,
    pub mu_b: f64,
    /// 15 interior edges on the normalised gap.
    pub dt_edges: Vec<f64>,
    /// 7 interior edges on the telemetry proxy.
    pub zeta_edges: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    tables: BTreeMap<u32, JobTable>,
    checksum: Digest,
}

fn bin_of(edges: &[f64], x: f64) -> usize {
    edges.partition_point(|&e| e < x)
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

fn quantile_edges(sorted: &[f64], bins: usize) -> Vec<f64> {
    (1..bins)
        .map(|i| nearest_rank(sorted, i as f64 / bins as f64))
        .collect()
}

impl JobTable {
    fn validate(&self, n: u32) -> Result<()> {
        if !(self.mu_dt.is_finite() && self.mu_dt > 0.0 && self.mu_b.is_finite() && self.mu_b > 0.0)
        {
            return Err(Error::Calibration(format!(
                "non-positive baseline for n={n}: mu_dt={}, mu_b={}",
                self.mu_dt, self.mu_b
            )));
        }
        if self.dt_edges.len() != DT_BINS - 1 || self.zeta_edges.len() != ZETA_BINS - 1 {
            return Err(Error::Calibration(format!("wrong edge count for n={n}")));
        }
        if !strictly_increasing(&self.dt_edges) || !strictly_increasing(&self.zeta_edges) {
            return Err(Error::Calibration(format!(
                "degenerate edges for n={n}: quantiles not strictly increasing"
            )));
        }
        if self
            .dt_edges
            .iter()
            .chain(&self.zeta_edges)
            .any(|e| !e.is_finite())
        {
            return Err(Error::Calibration(format!("non-finite edge for n={n}")));
        }
        Ok(())
    }
}

/// Build a codebook from design-only samples, one stream per job size.
///
/// Edges are nearest-rank quantiles of the normalised gap (1/16..15/16) and
/// the telemetry proxy (1/8..7/8); baselines are sample means.
pub fn build_codebook(design: &BTreeMap<u32, Vec<IntervalFeatures>>) -> Result<Codebook> {
    if design.is_empty() {
        return Err(Error::Calibration("no design streams".into()));
    }
    let mut tables = BTreeMap::new();
    for (&n, samples) in design {
        if samples.len() < MIN_DESIGN_SAMPLES {
            return Err(Error::Calibration(format!(
                "n={n}: {} design samples, need at least {MIN_DESIGN_SAMPLES}",
                samples.len()
            )));
        }
        for s in samples {
            s.validate()?;
        }
        let count = samples.len() as f64;
        let mu_dt = samples.iter().map(|s| s.dt).sum::<f64>() / count;
        let mu_b = samples.iter().map(|s| s.b).sum::<f64>() / count;
        let dts: Vec<f64> = samples.iter().map(|s| s.dt / mu_dt).collect();
        let zetas: Vec<f64> = samples.iter().map(|s| s.zeta).collect();
        let table = JobTable {
            mu_dt,
            mu_b,
            dt_edges: quantile_edges(&sorted_finite(&dts)?, DT_BINS),
            zeta_edges: quantile_edges(&sorted_finite(&zetas)?, ZETA_BINS),
        };
        table.validate(n)?;
        tables.insert(n, table);
    }
    Codebook::from_tables(tables)
}

impl Codebook {
    pub fn from_tables(tables: BTreeMap<u32, JobTable>) -> Result<Self> {
        for (&n, t) in &tables {
            t.validate(n)?;
        }
        let mut cb = Self {
            tables,
            checksum: [0; 32],
        };
        cb.checksum = sha256(&cb.encode_body());
        Ok(cb)
    }

    pub fn checksum(&self) -> &Digest {
        &self.checksum
    }

    pub fn job_sizes(&self) -> impl Iterator<Item = u32> + '_ {
        self.tables.keys().copied()
    }

    pub fn table(&self, n: u32) -> Result<&JobTable> {
        self.tables.get(&n).ok_or(Error::MissingBaseline(n))
    }

    pub fn normalize(&self, f: &IntervalFeatures, n: u32) -> Result<NormalizedFeatures> {
        let t = self.table(n)?;
        Ok(NormalizedFeatures {
            n,
            dt: f.dt / t.mu_dt,
            b: f.b / t.mu_b,
            q: f.q,
            zeta: f.zeta,
        })
    }

    pub fn quantize(&self, nf: &NormalizedFeatures) -> Result<u32> {
        if !(nf.dt.is_finite() && nf.b.is_finite() && nf.zeta.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite normalised feature {nf:?}"
            )));
        }
        let t = self.table(nf.n)?;
        Ok(codeword_index(
            bin_of(&t.dt_edges, nf.dt),
            bin_of(&B_EDGES, nf.b),
            nf.q.index(),
            bin_of(&t.zeta_edges, nf.zeta),
        ))
    }

    /// Normalise then quantise in one call.
    pub fn encode(&self, f: &IntervalFeatures, n: u32) -> Result<u32> {
        self.quantize(&self.normalize(f, n)?)
    }

    /// Canonical encoding without the checksum.
    pub(crate) fn encode_body(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.f64s(&B_EDGES).u32(self.tables.len() as u32);
        for (&n, t) in &self.tables {
            w.u32(n)
                .f64(t.mu_dt)
                .f64(t.mu_b)
                .f64s(&t.dt_edges)
                .f64s(&t.zeta_edges);
        }
        w.into_inner()
    }

    pub(crate) fn decode_body(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let b_edges = r.f64s(B_BINS - 1)?;
        if b_edges != B_EDGES {
            return Err(Error::ArtifactCorrupt(
                "batch edges differ from the fixed set".into(),
            ));
        }
        let count = r.u32()? as usize;
        let mut tables = BTreeMap::new();
        for _ in 0..count {
            let n = r.u32()?;
            let table = JobTable {
                mu_dt: r.f64()?,
                mu_b: r.f64()?,
                dt_edges: r.f64s(DT_BINS - 1)?,
                zeta_edges: r.f64s(ZETA_BINS - 1)?,
            };
            tables.insert(n, table);
        }
        if r.remaining() != 0 {
            return Err(Error::ArtifactCorrupt(
                "trailing bytes in codebook section".into(),
            ));
        }
        Self::from_tables(tables).map_err(|e| Error::ArtifactCorrupt(e.to_string()))
    }
}

pub fn codeword_index(i_dt: usize, i_b: usize, i_q: usize, i_zeta: usize) -> u32 {
    debug_assert!(i_dt < DT_BINS && i_b < B_BINS && i_q < Q_LEVELS && i_zeta < ZETA_BINS);
    (((i_dt * B_BINS + i_b) * Q_LEVELS + i_q) * ZETA_BINS + i_zeta) as u32
}

/// Inverse of [`codeword_index`]: `(i_dt, i_b, i_q, i_zeta)`.
pub fn codeword_parts(c: u32) -> (usize, usize, usize, usize) {
    let c = c as usize;
    let i_zeta = c % ZETA_BINS;
    let i_q = (c / ZETA_BINS) % Q_LEVELS;
    let i_b = (c / (ZETA_BINS * Q_LEVELS)) % B_BINS;
    let i_dt = c / (ZETA_BINS * Q_LEVELS * B_BINS);
    (i_dt, i_b, i_q, i_zeta)
}

pub fn batch_bin(b_norm: f64) -> usize {
    bin_of(&B_EDGES, b_norm)
}
