//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use leakguard::artifact::Artifacts;
use leakguard::audit::{
    verify_bytes, verify_segment, AbortReason, AuditHeader, AuditLog, Outcome, Payload, FRAME_LEN,
};
use leakguard::bound::{advantage_bound, uniform_bound, BoundInputs};
use leakguard::codec::{sha256, ZERO_DIGEST};
use leakguard::config::ExperimentConfig;
use leakguard::error::Error;
use leakguard::estimator::{estimate, kl_divergence, EstimatorConfig, ReferenceModel, WindowState};
use leakguard::experiment::{
    calibrate, episode_seed, job_circuit, run_tier1, run_tier2, Calibration, EPISODE_DIR,
};
use leakguard::features::QueueState;
use leakguard::orchestrator::{run_job, run_job_with_probe, JobSpec, KillSwitch};
use leakguard::padding::SegmentClass;
use leakguard::pf::{ess, propose_with_noise, ParticleSet, PfConfig};
use leakguard::policy::{calibrate as calibrate_thresholds, transfer, Decision, Thresholds};
use leakguard::report::{report_dir, RunSummary};
use leakguard::simenv::{EnvConfig, WorkloadKind};

const SLO_ABORT_RATE: f64 = 0.01;
const GRID_RUNTIME: Duration = Duration::from_secs(600);
const AUC_TIMING_MIN: f64 = 0.85;
const AUC_RL_MIN: f64 = 0.70;
const NULL_AUC_TOL: f64 = 0.05;
const MIN_SWEEP_POINTS: usize = 5;
const KL_REL_TOL: f64 = 1e-9;
const BOUND_TOL: f64 = 1e-12;
const MIN_LOCK_CASES: usize = 10;

struct Board {
    rows: Vec<(String, bool, String)>,
}

impl Board {
    fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.rows.push((name.into(), pass, detail));
    }
}

struct Grid {
    cfg: ExperimentConfig,
    calib: Calibration,
    tier1: RunSummary,
    tier2: RunSummary,
    tier1_files: usize,
    tier2_files: usize,
    elapsed: Duration,
    attestations: BTreeMap<String, String>,
}

fn count_json(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .map(|d| {
            d.filter(|e| {
                e.as_ref()
                    .is_ok_and(|e| e.path().extension().is_some_and(|x| x == "json"))
            })
            .count()
        })
        .unwrap_or(0)
}

fn run_grid(out: &Path) -> Grid {
    let cfg = ExperimentConfig::default();
    let t = Instant::now();
    let calib = calibrate(&cfg).expect("calibration");
    let r1 = run_tier1(&cfg, &calib).expect("tier 1");
    let elapsed = t.elapsed();
    let d1 = out.join("tier1");
    r1.write(&d1).expect("write tier 1");
    let r2 = run_tier2(&cfg, &calib).expect("tier 2");
    let d2 = out.join("tier2");
    r2.write(&d2).expect("write tier 2");
    let strike = cfg.pipeline.policy.strike_limit;
    let tier1 = report_dir(&d1, &cfg.report, strike).expect("report 1");
    let tier2 = report_dir(&d2, &cfg.report, strike).expect("report 2");
    let attestations = r1
        .episodes
        .iter()
        .map(|(i, e)| (format!("{}-{}-{i}", e.n, e.workload), e.attestation.clone()))
        .collect();
    Grid {
        tier1_files: count_json(&d1.join(EPISODE_DIR)),
        tier2_files: count_json(&d2.join(EPISODE_DIR)),
        cfg,
        calib,
        tier1,
        tier2,
        elapsed,
        attestations,
    }
}

fn baseline_slo(b: &mut Board, g: &Grid) {
    let mut pass = g.elapsed < GRID_RUNTIME && g.tier1_files == 360;
    let mut parts = vec![format!(
        "calibration + grid {:.1?}, {} episode files",
        g.elapsed, g.tier1_files
    )];
    for &n in &g.cfg.grid.tier1_sizes {
        let s = g.tier1.group(n, WorkloadKind::None).expect("none group");
        pass &= s.interval_abort_rate.estimate <= SLO_ABORT_RATE;
        parts.push(format!(
            "n={n} interval-abort {:.5} (episodes aborted {}/{}, open-loop budget exceedance {:.4})",
            s.interval_abort_rate.estimate,
            s.aborted_episodes,
            s.episodes,
            s.open_loop_exceedance.unwrap_or(f64::NAN)
        ));
    }
    b.record("1 baseline SLO", pass, parts.join("; "));
}

fn separation(b: &mut Board, g: &Grid) {
    let s = &g.tier1;
    let at16 = |w| s.group(16, w).and_then(|x| x.auc_vs_none).unwrap_or(0.0);
    let (t16, r16) = (at16(WorkloadKind::Timing), at16(WorkloadKind::Rl));
    let mut pass = t16 >= AUC_TIMING_MIN && r16 >= AUC_RL_MIN;
    let mut parts = vec![format!("n=16 AUC timing {t16:.3} rl {r16:.3}")];
    for &n in &g.cfg.grid.tier1_sizes {
        let null = s.null_auc.get(&n).copied().unwrap_or(f64::NAN);
        let med = |w| s.group(n, w).map(|x| x.median_delta).unwrap_or(f64::NAN);
        let p95 = |w| s.group(n, w).map(|x| x.p95_delta).unwrap_or(f64::NAN);
        let (mt, mr, mn) = (
            med(WorkloadKind::Timing),
            med(WorkloadKind::Rl),
            med(WorkloadKind::None),
        );
        pass &= (null - 0.5).abs() <= NULL_AUC_TOL && mt > mr && mr > mn;
        pass &= p95(WorkloadKind::Timing) > p95(WorkloadKind::Rl);
        parts.push(format!(
            "n={n} null {null:.3} median timing {mt:.4} > rl {mr:.4} > none {mn:.4}, p95 timing {:.4} rl {:.4}",
            p95(WorkloadKind::Timing),
            p95(WorkloadKind::Rl)
        ));
    }
    b.record("2 attack separation", pass, parts.join("; "));
}

fn sensitivity(b: &mut Board, g: &Grid) {
    let mut pass = !g.tier1.sweeps.is_empty();
    let mut parts = Vec::new();
    for sw in &g.tier1.sweeps {
        let mut pts = sw.points.clone();
        pts.sort_by(|a, c| a.factor.total_cmp(&c.factor));
        let violations = pts
            .windows(2)
            .filter(|w| w[1].abort_rate > w[0].abort_rate || w[1].detection > w[0].detection)
            .count();
        let gap_fixed = pts.iter().all(|p| {
            ((p.thresholds.delta_kill - p.thresholds.delta_budget) - sw.gap).abs() <= 1e-12
        });
        pass &= pts.len() >= MIN_SWEEP_POINTS && violations == 0 && gap_fixed;
        parts.push(format!(
            "n={} {} points, {violations} violations, abort {:.5}->{:.5}, detection {:.3}->{:.3}",
            sw.n,
            pts.len(),
            pts[0].abort_rate,
            pts[pts.len() - 1].abort_rate,
            pts[0].detection,
            pts[pts.len() - 1].detection
        ));
    }
    b.record("3 threshold sensitivity", pass, parts.join("; "));
}

fn tier2_ordering(b: &mut Board, g: &Grid) {
    let s = &g.tier2;
    let mut pass = g.tier2_files == 240;
    let mut parts = vec![format!("{} episode files", g.tier2_files)];
    let ci = |c: Option<leakguard::report::Ci>| {
        c.map_or("NA".to_string(), |c| {
            format!("{:.3} [{:.3},{:.3}]", c.estimate, c.lo, c.hi)
        })
    };
    for &n in &g.cfg.grid.tier2_sizes {
        let grp = |w| s.group(n, w).expect("tier 2 group");
        let (none, rl, tm) = (
            grp(WorkloadKind::None),
            grp(WorkloadKind::Rl),
            grp(WorkloadKind::Timing),
        );
        let rate = |x: &leakguard::report::GroupSummary| x.interval_abort_rate.estimate;
        let lat =
            |x: &leakguard::report::GroupSummary| x.latency_us.map_or(f64::NAN, |c| c.estimate);
        let pow = |x: &leakguard::report::GroupSummary| x.power_mw.map_or(f64::NAN, |c| c.estimate);
        let cis_ok = [none, rl, tm].iter().all(|x| {
            [Some(x.interval_abort_rate), x.latency_us, x.power_mw]
                .iter()
                .all(|c| {
                    c.is_some_and(|c| {
                        c.lo <= c.estimate && c.estimate <= c.hi && c.half_width() >= 0.0
                    })
                })
        });
        pass &= rate(tm) >= rate(rl) && rate(rl) >= rate(none);
        pass &= tm.episode_abort_fraction() >= rl.episode_abort_fraction()
            && rl.episode_abort_fraction() >= none.episode_abort_fraction();
        pass &= lat(none) <= lat(rl)
            && lat(rl) <= lat(tm)
            && pow(none) <= pow(rl)
            && pow(rl) <= pow(tm);
        pass &= cis_ok;
        parts.push(format!(
            "n={n} abort none {:.5} rl {:.5} timing {:.5}; latency {} / {} / {}; power {} / {} / {}",
            rate(none),
            rate(rl),
            rate(tm),
            ci(none.latency_us),
            ci(rl.latency_us),
            ci(tm.latency_us),
            ci(none.power_mw),
            ci(rl.power_mw),
            ci(tm.power_mw)
        ));
    }
    b.record("4 tier II ordering", pass, parts.join("; "));
}

fn random_hist(rng: &mut ChaCha8Rng, k: usize, zeros: bool) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k)
        .map(|_| {
            if zeros && rng.random::<f64>() < 0.2 {
                0.0
            } else {
                rng.random::<f64>() + 1e-6
            }
        })
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

fn neumaier_kl(p: &[f64], q: &[f64]) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for (&a, &b) in p.iter().zip(q) {
        if a == 0.0 {
            continue;
        }
        let term = a * (a / b).ln();
        let t = sum + term;
        c += if sum.abs() >= term.abs() {
            (sum - t) + term
        } else {
            (term - t) + sum
        };
        sum = t;
    }
    sum + c
}

fn estimator_oracle(b: &mut Board) {
    let mut rng = ChaCha8Rng::seed_from_u64(501);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for &k in &[2usize, 8, 2560] {
        for _ in 0..1000 {
            let p = random_hist(&mut rng, k, true);
            let q = random_hist(&mut rng, k, false);
            let got = kl_divergence(&p, &q).expect("kl");
            let want = neumaier_kl(&p, &q);
            let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
            worst = worst.max(if want == 0.0 { got.abs() } else { rel });
            cases += 1;
        }
    }

    let cfg = EstimatorConfig {
        window: 16,
        stride: 8,
        ..EstimatorConfig::default()
    };
    let codewords = 8;
    let design: Vec<f64> = random_hist(&mut rng, codewords, false)
        .iter()
        .map(|p| 0.9 * p + 0.1 / codewords as f64)
        .collect();
    let classes = BTreeMap::from([((4, SegmentClass::Short), design)]);
    let reference =
        ReferenceModel::from_classes(cfg.locked(), codewords, classes).expect("reference");
    let mut st = WindowState::new(&cfg, codewords).expect("window");
    let (mut checked, mut violations, mut clamped) = (0usize, 0usize, 0usize);
    while checked < 100_000 {
        let c = if rng.random::<f64>() < 0.5 {
            0
        } else {
            rng.random_range(0..codewords as u32)
        };
        st.push(c).expect("push");
        if st.ema().is_none() {
            continue;
        }
        let kill = 10f64.powf(rng.random_range(-3.0..1.0));
        let lambda: Vec<f64> = (0..9).map(|_| rng.random::<f64>() * 0.2).collect();
        let e = estimate(&st, &reference, 4, SegmentClass::Short, &lambda, &cfg, kill)
            .expect("estimate");
        if e.value > kill || e.value != e.raw.min(kill) {
            violations += 1;
        }
        clamped += e.clamped as usize;
        checked += 1;
    }
    b.record(
        "5 estimator oracle",
        worst <= KL_REL_TOL && violations == 0 && checked == 100_000,
        format!("{cases} KL pairs, worst relative error {worst:.2e}; {checked} estimates, {clamped} clamped, {violations} clamp violations"),
    );
}

fn particle_filter(b: &mut Board) {
    let env = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let (mut steps, mut clamp_bad, mut limit_bad, mut resample_bad, mut ess_bad, mut degenerate) =
        (0, 0, 0, 0, 0, 0);
    let mut resampled = 0;
    while steps < 100_000 {
        let cfg = PfConfig {
            particles: rng.random_range(2..64),
            sigma_t: rng.random_range(0.1..5.0),
            ell_max: rng.random_range(1.0..12.0),
            sigma_proc: {
                let mut s: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.01..2.0));
                s.sort_by(f64::total_cmp);
                s
            },
        };
        let mut ps = ParticleSet::new(cfg.particles).expect("particles");
        for _ in 0..20 {
            let q = QueueState::ALL[rng.random_range(0..4)];
            let noise: Vec<f64> = (0..ps.len()).map(|_| rng.sample(StandardNormal)).collect();
            let u: f64 = rng.random();
            let latency = |t: f64, q: QueueState| env.pf_latency(t, q);

            let sigma = cfg.sigma_proc[q.index()];
            let mut w_oracle = Vec::with_capacity(ps.len());
            for ((&t, &w), z) in ps.thetas().iter().zip(ps.weights()).zip(&noise) {
                let moved = (t + sigma * z).clamp(-cfg.sigma_t, cfg.sigma_t);
                w_oracle.push(if latency(moved, q) > cfg.ell_max {
                    0.0
                } else {
                    w
                });
            }
            let total: f64 = w_oracle.iter().sum();

            steps += 1;
            match propose_with_noise(&mut ps, q, &cfg, latency, &noise, u) {
                Err(Error::DegenerateParticles) => {
                    degenerate += 1;
                    ess_bad += (total > 0.0) as usize;
                    ps.reset();
                    continue;
                }
                Err(e) => panic!("{e}"),
                Ok(out) => {
                    let normed: Vec<f64> = w_oracle.iter().map(|w| w / total).collect();
                    let brute = 1.0 / normed.iter().map(|w| w * w).sum::<f64>();
                    ess_bad += (brute != out.ess || ess(&normed) != brute) as usize;
                    resample_bad +=
                        (out.resampled != (brute < cfg.particles as f64 / 2.0)) as usize;
                    resampled += out.resampled as usize;
                }
            }
            clamp_bad += ps.thetas().iter().filter(|t| t.abs() > cfg.sigma_t).count();
            limit_bad += ps
                .thetas()
                .iter()
                .zip(ps.weights())
                .filter(|(&t, &w)| w > 0.0 && latency(t, q) > cfg.ell_max)
                .count();
        }
    }
    b.record(
        "6 particle filter",
        clamp_bad + limit_bad + resample_bad + ess_bad == 0,
        format!(
            "{steps} steps ({resampled} resampled, {degenerate} degenerate): clamp {clamp_bad}, ell_max {limit_bad}, resample rule {resample_bad}, ESS {ess_bad} violations"
        ),
    );
}

fn bound_arithmetic(b: &mut Board) {
    let mut rng = ChaCha8Rng::seed_from_u64(701);
    let mut uniform_bad = 0;
    for _ in 0..1000 {
        let t = rng.random_range(0..2000);
        let (d, e, s) = (
            rng.random::<f64>() * 0.1,
            rng.random::<f64>() * 0.01,
            rng.random::<f64>() * 0.01,
        );
        let closed = if t == 0 {
            0.0
        } else {
            t as f64 * (2.0 * d).sqrt() + t as f64 * (SQRT_2 * (e + s))
        };
        let a = advantage_bound(&BoundInputs::uniform(t, d, e, s))
            .expect("bound")
            .total;
        let u = uniform_bound(t, d, e, s).expect("bound").total;
        uniform_bad += (a != closed || u != closed) as usize;
    }
    let twenty = advantage_bound(&BoundInputs::uniform(100, 0.02, 0.0, 0.0)).expect("bound");
    let mut prefix_bad = 0;
    for _ in 0..1000 {
        let len = rng.random_range(1..200);
        let bi = BoundInputs {
            budgets: (0..len).map(|_| rng.random::<f64>() * 0.05).collect(),
            eps_est: (0..len).map(|_| rng.random::<f64>() * 0.01).collect(),
            eps_sync: rng.random::<f64>() * 0.01,
        };
        let mut prev = 0.0;
        for k in 0..=len {
            let v = advantage_bound(&bi.prefix(k)).expect("bound").total;
            prefix_bad += (v < prev) as usize;
            prev = v;
        }
    }
    b.record(
        "7 bound arithmetic",
        uniform_bad == 0 && (twenty.total - 20.0).abs() <= BOUND_TOL && twenty.vacuous && prefix_bad == 0,
        format!(
            "1000 uniform traces, {uniform_bad} closed-form mismatches; T=100 budget 0.02 -> {:.15} (vacuous {}); 1000 traces, {prefix_bad} prefix violations",
            twenty.total, twenty.vacuous
        ),
    );
}

fn audit_integrity(b: &mut Board, g: &Grid) {
    let header = AuditHeader {
        n: 8,
        workload: "timing".into(),
        tier: 1,
        seed: 42,
        thresholds: Thresholds::new(0.02, 0.03).expect("thresholds"),
        artifact_digest: hex::encode(g.calib.artifacts.digest),
        config: serde_json::json!({"strike_limit": 3}),
    };
    let mut log = AuditLog::new(&header).expect("log");
    let mut rng = ChaCha8Rng::seed_from_u64(801);
    let mut last = None;
    for i in 0..999u64 {
        let p = Payload {
            interval: i,
            segment: (i / 84) as u32,
            backend: rng.random_range(0..4),
            theta: rng.random::<f64>() - 0.5,
            delta_hat: rng.random::<f64>() * 0.03,
            decision: Some([Decision::Continue, Decision::Warn][rng.random_range(0..2)]),
            flags: rng.random_range(0..16),
        };
        log.append(&p).expect("append");
        last = Some(p);
    }
    log.finalize(
        Outcome::Completed,
        AbortReason::None,
        &last.expect("payload"),
    )
    .expect("finalize");
    let bytes = log.to_bytes();
    let records = log.records().len();
    let start = bytes.len() - records * FRAME_LEN;
    let clean = verify_bytes(&bytes).ok;
    let prev_of = |i: usize| {
        if i == 0 {
            ZERO_DIGEST
        } else {
            log.records()[i - 1].hash
        }
    };

    let mut mutated = bytes.clone();
    let (mut total, mut missed) = (0usize, 0usize);
    for byte in 0..bytes.len() {
        for bit in 0..8 {
            mutated[byte] ^= 1 << bit;
            let ok = if byte < start {
                verify_segment(&mutated, 0, 1, ZERO_DIGEST).ok
            } else {
                let i = (byte - start) / FRAME_LEN;
                verify_segment(&mutated, i, (records - i).min(2), prev_of(i)).ok
            };
            missed += ok as usize;
            total += 1;
            mutated[byte] ^= 1 << bit;
        }
    }
    let mut full_mismatch = 0;
    for _ in 0..300 {
        let byte = rng.random_range(0..bytes.len());
        mutated[byte] ^= 1 << rng.random_range(0..8);
        full_mismatch += verify_bytes(&mutated).ok as usize;
        mutated[byte] = bytes[byte];
    }

    let cfg = &g.cfg;
    let env = cfg.env_spec(1);
    let (n, idx, w) = (8u32, 7u32, WorkloadKind::Timing);
    let seed = episode_seed(cfg.master_seed, n, idx);
    let spec = JobSpec {
        circuit: job_circuit(cfg, n, seed).expect("circuit"),
        seed,
        tier: 1,
        workload: w,
        thresholds: g.calib.thresholds[&n],
        kill_switch: KillSwitch::Armed,
        artifact_digest: g.calib.artifacts.digest,
    };
    let a = run_job(&spec, &cfg.pipeline, &g.calib.artifacts, &env).expect("replay");
    let c = run_job(&spec, &cfg.pipeline, &g.calib.artifacts, &env).expect("replay");
    let grid = g
        .attestations
        .get(&format!("{n}-{w}-{idx}"))
        .cloned()
        .unwrap_or_default();
    let att = hex::encode(a.log.attestation().expect("finalized"));
    let replay_ok =
        a.result.attestation == c.result.attestation && att == a.result.attestation && att == grid;
    let chain_ok = a.log.verify().ok && verify_bytes(&a.log.to_bytes()).ok;

    b.record(
        "8 audit integrity",
        clean && missed == 0 && full_mismatch == 0 && replay_ok && chain_ok,
        format!(
            "{records}-record log, {total} single-bit mutations, {missed} undetected ({full_mismatch} of 300 full re-verifications passed); replay digest {} matches grid: {replay_ok}",
            &att[..16]
        ),
    );
}

fn resign(mut bytes: Vec<u8>) -> Vec<u8> {
    let body = bytes.len() - 32;
    let d = sha256(&bytes[..body]);
    bytes[body..].copy_from_slice(&d);
    bytes
}

fn artifact_locking(b: &mut Board, g: &Grid) {
    let cfg = &g.cfg;
    let runtime = cfg.pipeline.estimator.clone();
    let good = g.calib.artifacts.to_bytes();
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("a.bin");
    let positive = {
        std::fs::write(&path, &good).expect("write");
        Artifacts::load(&path, &runtime).is_ok_and(|a| a.digest == g.calib.artifacts.digest)
    };

    let len = good.len();
    let flip = |at: usize| {
        let mut v = good.clone();
        v[at] ^= 0x10;
        v
    };
    let tuple_at = 12;
    let mut files: Vec<(&str, Vec<u8>, EstimatorConfig)> = vec![
        ("magic byte", flip(0), runtime.clone()),
        ("tuple byte", flip(tuple_at), runtime.clone()),
        ("codebook byte", flip(200), runtime.clone()),
        ("reference byte", flip(len - 1000), runtime.clone()),
        ("file digest byte", flip(len - 1), runtime.clone()),
        ("truncated", good[..len - 7].to_vec(), runtime.clone()),
        (
            "appended byte",
            [good.as_slice(), &[0]].concat(),
            runtime.clone(),
        ),
        (
            "re-signed tuple edit",
            resign(flip(tuple_at)),
            runtime.clone(),
        ),
        (
            "re-signed codebook edit",
            resign(flip(200)),
            runtime.clone(),
        ),
    ];
    for (name, edit) in [
        (
            "runtime window",
            EstimatorConfig {
                window: runtime.window * 2,
                ..runtime.clone()
            },
        ),
        (
            "runtime stride",
            EstimatorConfig {
                stride: runtime.stride / 2,
                ..runtime.clone()
            },
        ),
        (
            "runtime half-life",
            EstimatorConfig {
                half_life: runtime.half_life + 1.0,
                ..runtime.clone()
            },
        ),
        (
            "runtime alpha",
            EstimatorConfig {
                alpha: runtime.alpha * 2.0,
                ..runtime.clone()
            },
        ),
        (
            "runtime lambda",
            EstimatorConfig {
                lambda: runtime.lambda * 2.0,
                ..runtime.clone()
            },
        ),
    ] {
        files.push((name, good.clone(), edit));
    }
    let mut failures = Vec::new();
    for (name, bytes, rt) in &files {
        std::fs::write(&path, bytes).expect("write");
        if Artifacts::load(&path, rt).is_ok() {
            failures.push(name.to_string());
        }
    }

    let env = cfg.env_spec(1);
    let seed = episode_seed(cfg.master_seed, 4, 0);
    let spec = JobSpec {
        circuit: job_circuit(cfg, 4, seed).expect("circuit"),
        seed,
        tier: 1,
        workload: WorkloadKind::None,
        thresholds: g.calib.thresholds[&4],
        kill_switch: KillSwitch::Armed,
        artifact_digest: g.calib.artifacts.digest,
    };
    let mut job_cases = 0;
    let mut wrong_digest = spec.clone();
    wrong_digest.artifact_digest[0] ^= 1;
    let mut other_pipeline = cfg.pipeline.clone();
    other_pipeline.estimator.window *= 2;
    for (name, s, p) in [
        ("job digest", &wrong_digest, &cfg.pipeline),
        ("job pipeline window", &spec, &other_pipeline),
    ] {
        let mut intervals = 0;
        let r = run_job_with_probe(s, p, &g.calib.artifacts, &env, |_, e| {
            intervals += 1;
            e
        });
        job_cases += 1;
        if r.is_ok() || intervals != 0 {
            failures.push(name.to_string());
        }
    }
    let cases = files.len() + job_cases;
    b.record(
        "9 artifact locking",
        positive && failures.is_empty() && cases >= MIN_LOCK_CASES,
        format!(
            "{cases} mismatch cases, accepted: {failures:?}; unmodified artifact loads: {positive}"
        ),
    );
}

fn calibration_transfer(b: &mut Board) {
    let base: Vec<f64> = (1..=100).map(f64::from).collect();
    let th = calibrate_thresholds(&base, 0.99, 0.999, 0.01).expect("calibrate");
    let exact = th.delta_budget == 99.0 && th.delta_kill == 100.0;
    let default_gap = calibrate_thresholds(&base, 0.99, 0.999, 0.1).expect("calibrate");

    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let (mut identity_bad, mut scale_bad) = (0, 0);
    for _ in 0..100 {
        let len = rng.random_range(50..500);
        let spread = rng.random_range(0.1..10.0);
        let b1: Vec<f64> = (0..len)
            .map(|_| rng.random::<f64>().powi(2) * spread + 0.01)
            .collect();
        let th1 = calibrate_thresholds(&b1, 0.9, 0.99, 0.05).expect("calibrate");
        let same = transfer(&th1, &b1, &b1).expect("transfer").thresholds;
        identity_bad += (!close(same.delta_budget, th1.delta_budget)
            || !close(same.delta_kill, th1.delta_kill)) as usize;
        let c = rng.random_range(0.01..100.0);
        let b2: Vec<f64> = b1.iter().map(|x| x * c).collect();
        let scaled = transfer(&th1, &b1, &b2).expect("transfer").thresholds;
        scale_bad += (!close(scaled.delta_budget, c * th1.delta_budget)
            || !close(scaled.delta_kill, c * th1.delta_kill)) as usize;
    }
    b.record(
        "10 calibration/transfer",
        exact && identity_bad == 0 && scale_bad == 0,
        format!(
            "{{1..100}} -> ({}, {}) with gap floor 0.01 (default floor 0.1 gives kill {}); 100 pairs: {identity_bad} identity, {scale_bad} scale violations",
            th.delta_budget, th.delta_kill, default_gap.delta_kill
        ),
    );
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn main() -> ExitCode {
    let out = tempfile::tempdir().expect("tempdir");
    let grid = run_grid(out.path());
    let mut b = Board { rows: Vec::new() };
    baseline_slo(&mut b, &grid);
    separation(&mut b, &grid);
    sensitivity(&mut b, &grid);
    tier2_ordering(&mut b, &grid);
    estimator_oracle(&mut b);
    particle_filter(&mut b);
    bound_arithmetic(&mut b);
    audit_integrity(&mut b, &grid);
    artifact_locking(&mut b, &grid);
    calibration_transfer(&mut b);
    let failed: Vec<&str> = b
        .rows
        .iter()
        .filter(|r| !r.1)
        .map(|r| r.0.as_str())
        .collect();
    println!(
        "{} of {} criteria passed",
        b.rows.len() - failed.len(),
        b.rows.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
