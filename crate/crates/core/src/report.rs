//! Metrics over a tier's result directory.
//!
//! Everything here is a pure function of the files written by
//! [`TierRun::write`](crate::experiment::TierRun::write).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{advantage_bound, Bound, BoundInputs};
use crate::config::ReportConfig;
use crate::error::{Error, Result};
use crate::experiment::{json_files, ScoreTrace, EPISODE_DIR, OPEN_LOOP_DIR};
use crate::orchestrator::EpisodeResult;
use crate::policy::{replay, Decision, Thresholds};
use crate::simenv::WorkloadKind;
use crate::stats::{mix_seed, nearest_rank};

const BOOTSTRAP_SEED: u64 = 0x5EED_B007;

/// Area under the ROC curve of `pos` against `neg`, ties counted half.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Input("AUC needs both classes".into()));
    }
    if pos.iter().chain(neg).any(|x| x.is_nan()) {
        return Err(Error::Input("AUC scores must not be NaN".into()));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&x| (x, true))
        .chain(neg.iter().map(|&x| (x, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (p, q) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

/// Point estimate with a 95% percentile interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ci {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Ci {
    pub fn half_width(&self) -> f64 {
        (self.hi - self.lo) / 2.0
    }
}

/// Ratio `sum(num) / sum(den)` with a cluster bootstrap over the given
/// `(num, den)` clusters. `None` when the denominator is zero.
pub fn bootstrap_ratio(clusters: &[(f64, f64)], resamples: usize, seed: u64) -> Option<Ci> {
    let ratio = |it: &mut dyn Iterator<Item = (f64, f64)>| {
        let (a, b) = it.fold((0.0, 0.0), |acc, c| (acc.0 + c.0, acc.1 + c.1));
        (b > 0.0).then(|| a / b)
    };
    let estimate = ratio(&mut clusters.iter().copied())?;
    if resamples == 0 {
        return Some(Ci {
            estimate,
            lo: estimate,
            hi: estimate,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = clusters.len();
    let mut stats: Vec<f64> = (0..resamples)
        .filter_map(|_| ratio(&mut (0..k).map(|_| clusters[rng.random_range(0..k)])))
        .collect();
    stats.sort_by(f64::total_cmp);
    if stats.is_empty() {
        return None;
    }
    let lo = nearest_rank(&stats, 0.025);
    let hi = nearest_rank(&stats, 0.975);
    Some(Ci {
        estimate,
        lo: lo.min(estimate),
        hi: hi.max(estimate),
    })
}

/// Bootstrap of a plain mean, one cluster per value.
pub fn bootstrap_mean(values: &[f64], resamples: usize, seed: u64) -> Option<Ci> {
    let c: Vec<(f64, f64)> = values.iter().map(|&v| (v, 1.0)).collect();
    bootstrap_ratio(&c, resamples, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub n: u32,
    pub workload: WorkloadKind,
    pub episodes: usize,
    pub aborted_episodes: usize,
    /// ABORT decisions over evaluated intervals, clustered by episode.
    pub interval_abort_rate: Ci,
    pub evaluated_intervals: usize,
    pub admitted_intervals: usize,
    /// Per admitted interval.
    pub latency_us: Option<Ci>,
    pub power_mw: Option<Ci>,
    pub median_delta: f64,
    pub p95_delta: f64,
    /// Against `none` at the same size.
    pub auc_vs_none: Option<f64>,
    /// Monitor-only intervals above the budget.
    pub open_loop_exceedance: Option<f64>,
}

impl GroupSummary {
    pub fn episode_abort_fraction(&self) -> f64 {
        self.aborted_episodes as f64 / self.episodes as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub n: u32,
    pub workload: WorkloadKind,
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub delta_budget: f64,
    pub delta_kill: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub factor: f64,
    pub thresholds: Thresholds,
    /// Replayed interval-abort rate on the `none` traces.
    pub abort_rate: f64,
    /// Fraction of attack traces (rl and timing) that abort.
    pub detection: f64,
    pub detection_rl: f64,
    pub detection_timing: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub n: u32,
    pub gap: f64,
    pub points: Vec<SweepPoint>,
    /// Adjacent pairs where abort rate or detection went up.
    pub violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub tier: u8,
    pub thresholds: BTreeMap<u32, Thresholds>,
    /// Monitor-only traces rather than enforced ones fed AUC and quantiles.
    pub scores_from_open_loop: bool,
    pub groups: Vec<GroupSummary>,
    /// `none` against `none` with the seed range split in half.
    pub null_auc: BTreeMap<u32, f64>,
    pub sweeps: Vec<Sweep>,
    pub histograms: Vec<Histogram>,
}

impl RunSummary {
    pub fn group(&self, n: u32, w: WorkloadKind) -> Option<&GroupSummary> {
        self.groups.iter().find(|g| g.n == n && g.workload == w)
    }
}

/// Episode and monitor-only records of one tier directory.
pub struct RunData {
    pub episodes: Vec<EpisodeResult>,
    pub scores: Vec<ScoreTrace>,
}

pub fn load_run(dir: &Path) -> Result<RunData> {
    let read = |p: &std::path::PathBuf| -> Result<Vec<u8>> { Ok(fs::read(p)?) };
    let episodes: Vec<EpisodeResult> = json_files(&dir.join(EPISODE_DIR))?
        .par_iter()
        .map(|p| Ok(serde_json::from_slice(&read(p)?)?))
        .collect::<Result<_>>()?;
    if episodes.is_empty() {
        return Err(Error::Input(format!(
            "no episode files under {}",
            dir.display()
        )));
    }
    let scores: Vec<ScoreTrace> = json_files(&dir.join(OPEN_LOOP_DIR))?
        .par_iter()
        .map(|p| Ok(serde_json::from_slice(&read(p)?)?))
        .collect::<Result<_>>()?;
    Ok(RunData { episodes, scores })
}

fn group_seed(n: u32, w: WorkloadKind, metric: u64) -> u64 {
    mix_seed(&[BOOTSTRAP_SEED, n as u64, w as u64, metric])
}

fn is_abort(d: Option<Decision>) -> bool {
    d == Some(Decision::Abort)
}

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> (Vec<f64>, Vec<u64>) {
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let i = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
    }
    (edges, counts)
}

fn sweep(
    n: u32,
    th: &Thresholds,
    factors: &[f64],
    traces: &[&ScoreTrace],
    strike: u32,
) -> Result<Sweep> {
    let gap = th.delta_kill - th.delta_budget;
    let mut points = Vec::with_capacity(factors.len());
    for &f in factors {
        let budget = th.delta_budget * f;
        let t = Thresholds::new(budget, budget + gap)?;
        let (mut aborts, mut evaluated) = (0usize, 0usize);
        let mut hits: BTreeMap<WorkloadKind, (usize, usize)> = BTreeMap::new();
        for s in traces {
            let d = replay(&s.values, &t, strike)?;
            let aborted = d.last() == Some(&Decision::Abort);
            if s.workload == WorkloadKind::None {
                aborts += aborted as usize;
                evaluated += d.len();
            } else {
                let e = hits.entry(s.workload).or_default();
                e.0 += aborted as usize;
                e.1 += 1;
            }
        }
        let frac = |h: (usize, usize)| {
            if h.1 == 0 {
                0.0
            } else {
                h.0 as f64 / h.1 as f64
            }
        };
        let rl = hits.get(&WorkloadKind::Rl).copied().unwrap_or_default();
        let tm = hits.get(&WorkloadKind::Timing).copied().unwrap_or_default();
        points.push(SweepPoint {
            factor: f,
            thresholds: t,
            abort_rate: if evaluated == 0 {
                0.0
            } else {
                aborts as f64 / evaluated as f64
            },
            detection: frac((rl.0 + tm.0, rl.1 + tm.1)),
            detection_rl: frac(rl),
            detection_timing: frac(tm),
        });
    }
    let mut sorted = points.clone();
    sorted.sort_by(|a, b| a.factor.total_cmp(&b.factor));
    let violations = sorted
        .windows(2)
        .filter(|w| w[1].abort_rate > w[0].abort_rate || w[1].detection > w[0].detection)
        .count();
    Ok(Sweep {
        n,
        gap,
        points,
        violations,
    })
}

pub fn summarize(data: &RunData, cfg: &ReportConfig, strike_limit: u32) -> Result<RunSummary> {
    let tier = data.episodes[0].tier;
    let mut thresholds: BTreeMap<u32, Thresholds> = BTreeMap::new();
    for e in &data.episodes {
        if e.tier != tier {
            return Err(Error::Input("episodes from more than one tier".into()));
        }
        if *thresholds.entry(e.n).or_insert(e.thresholds) != e.thresholds {
            return Err(Error::Input(format!(
                "episodes at n={} used different thresholds",
                e.n
            )));
        }
    }
    let open_loop = !data.scores.is_empty();
    let mut scores: BTreeMap<(u32, WorkloadKind), Vec<&ScoreTrace>> = BTreeMap::new();
    for s in &data.scores {
        scores.entry((s.n, s.workload)).or_default().push(s);
    }
    let enforced: Vec<ScoreTrace>;
    if !open_loop {
        enforced = data
            .episodes
            .iter()
            .map(|e| ScoreTrace {
                tier,
                n: e.n,
                workload: e.workload,
                seed_index: 0,
                values: e.trace.iter().map(|r| r.raw).collect(),
            })
            .collect();
        for s in &enforced {
            scores.entry((s.n, s.workload)).or_default().push(s);
        }
    }
    let flat = |n: u32, w: WorkloadKind| -> Vec<f64> {
        scores
            .get(&(n, w))
            .map(|v| v.iter().flat_map(|s| s.values.iter().copied()).collect())
            .unwrap_or_default()
    };

    let mut groups = Vec::new();
    let mut histograms = Vec::new();
    for (&n, th) in &thresholds {
        let base = flat(n, WorkloadKind::None);
        let all: Vec<f64> = WorkloadKind::ALL.iter().flat_map(|&w| flat(n, w)).collect();
        let top = all
            .iter()
            .copied()
            .filter(|x| x.is_finite())
            .fold(th.delta_kill * 1.1, f64::max);
        for w in WorkloadKind::ALL {
            let eps: Vec<&EpisodeResult> = data
                .episodes
                .iter()
                .filter(|e| e.n == n && e.workload == w)
                .collect();
            if eps.is_empty() {
                continue;
            }
            let mut abort_c = Vec::new();
            let (mut lat_c, mut pow_c) = (Vec::new(), Vec::new());
            let (mut evaluated, mut admitted) = (0, 0);
            for e in &eps {
                let aborts = e.trace.iter().filter(|r| is_abort(r.decision)).count();
                let adm: Vec<_> = e.trace.iter().filter(|r| !is_abort(r.decision)).collect();
                evaluated += e.trace.len();
                admitted += adm.len();
                abort_c.push((aborts as f64, e.trace.len() as f64));
                let cnt = adm.len() as f64;
                lat_c.push((adm.iter().map(|r| r.latency_us).sum::<f64>(), cnt));
                pow_c.push((adm.iter().map(|r| r.power_mw).sum::<f64>(), cnt));
            }
            let r = cfg.bootstrap_resamples;
            let interval_abort_rate =
                bootstrap_ratio(&abort_c, r, group_seed(n, w, 0)).unwrap_or(Ci {
                    estimate: 0.0,
                    lo: 0.0,
                    hi: 0.0,
                });
            let vals = flat(n, w);
            let mut sorted: Vec<f64> = vals.iter().copied().filter(|x| x.is_finite()).collect();
            sorted.sort_by(f64::total_cmp);
            let q = |p: f64| {
                if sorted.is_empty() {
                    f64::NAN
                } else {
                    nearest_rank(&sorted, p)
                }
            };
            let auc_vs_none = if w != WorkloadKind::None && !base.is_empty() && !vals.is_empty() {
                Some(auc(&vals, &base)?)
            } else {
                None
            };
            let open_loop_exceedance = (open_loop && !vals.is_empty()).then(|| {
                vals.iter().filter(|&&v| v > th.delta_budget).count() as f64 / vals.len() as f64
            });
            groups.push(GroupSummary {
                n,
                workload: w,
                episodes: eps.len(),
                aborted_episodes: eps.iter().filter(|e| e.aborted()).count(),
                interval_abort_rate,
                evaluated_intervals: evaluated,
                admitted_intervals: admitted,
                latency_us: bootstrap_ratio(&lat_c, r, group_seed(n, w, 1)),
                power_mw: bootstrap_ratio(&pow_c, r, group_seed(n, w, 2)),
                median_delta: q(0.5),
                p95_delta: q(0.95),
                auc_vs_none,
                open_loop_exceedance,
            });
            let finite: Vec<f64> = vals.into_iter().filter(|x| x.is_finite()).collect();
            let (edges, counts) = histogram(&finite, 0.0, top, cfg.histogram_bins);
            histograms.push(Histogram {
                n,
                workload: w,
                edges,
                counts,
                delta_budget: th.delta_budget,
                delta_kill: th.delta_kill,
            });
        }
    }

    let mut null_auc = BTreeMap::new();
    let mut sweeps = Vec::new();
    if open_loop {
        for (&n, th) in &thresholds {
            let Some(none) = scores.get(&(n, WorkloadKind::None)) else {
                continue;
            };
            let cut = none.iter().map(|s| s.seed_index).max().unwrap_or(0) / 2;
            let (a, b): (Vec<&&ScoreTrace>, Vec<&&ScoreTrace>) =
                none.iter().partition(|s| s.seed_index <= cut);
            let a: Vec<f64> = a.iter().flat_map(|s| s.values.iter().copied()).collect();
            let b: Vec<f64> = b.iter().flat_map(|s| s.values.iter().copied()).collect();
            if !a.is_empty() && !b.is_empty() {
                null_auc.insert(n, auc(&a, &b)?);
            }
            let traces: Vec<&ScoreTrace> = WorkloadKind::ALL
                .iter()
                .flat_map(|&w| scores.get(&(n, w)).into_iter().flatten().copied())
                .collect();
            sweeps.push(sweep(n, th, &cfg.sweep_factors, &traces, strike_limit)?);
        }
    }
    Ok(RunSummary {
        tier,
        thresholds,
        scores_from_open_loop: open_loop,
        groups,
        null_auc,
        sweeps,
        histograms,
    })
}

pub const SUMMARY_TSV: &str = "summary.tsv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const HISTOGRAMS_JSON: &str = "histograms.json";
pub const SWEEP_TSV: &str = "sweep.tsv";

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

fn ci_cols(c: Option<Ci>) -> String {
    match c {
        Some(c) => format!("{:.6}\t{:.6}\t{:.6}", c.estimate, c.lo, c.hi),
        None => "NA\tNA\tNA".to_string(),
    }
}

pub fn summary_tsv(s: &RunSummary) -> String {
    let mut out = String::from(
        "tier\tn\tworkload\tepisodes\taborted\tinterval_abort_rate\tabort_lo\tabort_hi\tevaluated\tadmitted\t\
         latency_us\tlatency_lo\tlatency_hi\tpower_mw\tpower_lo\tpower_hi\tmedian_delta\tp95_delta\tauc_vs_none\t\
         open_loop_exceedance\tdelta_budget\tdelta_kill\n",
    );
    for g in &s.groups {
        let th = s.thresholds[&g.n];
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}\t{:.9}\t{:.9}",
            s.tier,
            g.n,
            g.workload,
            g.episodes,
            g.aborted_episodes,
            ci_cols(Some(g.interval_abort_rate)),
            g.evaluated_intervals,
            g.admitted_intervals,
            ci_cols(g.latency_us),
            ci_cols(g.power_mw),
            g.median_delta,
            g.p95_delta,
            opt(g.auc_vs_none),
            opt(g.open_loop_exceedance),
            th.delta_budget,
            th.delta_kill,
        );
    }
    out
}

pub fn sweep_tsv(s: &RunSummary) -> String {
    let mut out = String::from("n\tfactor\tdelta_budget\tdelta_kill\tabort_rate\tdetection\tdetection_rl\tdetection_timing\n");
    for sw in &s.sweeps {
        for p in &sw.points {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.9}\t{:.9}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                sw.n,
                p.factor,
                p.thresholds.delta_budget,
                p.thresholds.delta_kill,
                p.abort_rate,
                p.detection,
                p.detection_rl,
                p.detection_timing
            );
        }
    }
    out
}

/// Summarize a tier directory and write the tables next to it.
pub fn report_dir(dir: &Path, cfg: &ReportConfig, strike_limit: u32) -> Result<RunSummary> {
    let s = summarize(&load_run(dir)?, cfg, strike_limit)?;
    fs::write(dir.join(SUMMARY_TSV), summary_tsv(&s))?;
    fs::write(dir.join(SWEEP_TSV), sweep_tsv(&s))?;
    fs::write(
        dir.join(HISTOGRAMS_JSON),
        serde_json::to_vec_pretty(&s.histograms)?,
    )?;
    fs::write(dir.join(SUMMARY_JSON), serde_json::to_vec_pretty(&s)?)?;
    Ok(s)
}

/// Advantage bound over an episode's admitted intervals.
pub fn episode_bound(e: &EpisodeResult, eps_est: f64, eps_sync: f64) -> Result<Bound> {
    let t = e.trace.iter().filter(|r| !is_abort(r.decision)).count();
    advantage_bound(&BoundInputs::uniform(
        t,
        e.thresholds.delta_budget,
        eps_est,
        eps_sync,
    ))
}
