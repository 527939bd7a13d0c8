use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use leakguard::audit::{verify_bytes, AuditLog};
use leakguard::config::ExperimentConfig;
use leakguard::error::{Error, Result};
use leakguard::experiment::{calibrate, run_tier1, run_tier2, Calibration};
use leakguard::orchestrator::EpisodeResult;
use leakguard::report::{episode_bound, report_dir, RunSummary};

#[derive(Parser)]
#[command(
    name = "leakguard",
    version,
    about = "Leakage-monitored job scheduling simulator"
)]
struct Cli {
    /// Experiment configuration (TOML). Defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    show_config: bool,
    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build locked artifacts and Tier I thresholds.
    Calibrate {
        #[arg(long, default_value = "results/calibration")]
        out: PathBuf,
    },
    /// Run an evaluation grid and summarize it.
    Run {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        tier: u8,
        #[arg(long, default_value = "results/calibration")]
        calibration: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Recompute summary tables for a tier directory.
    Report { dir: PathBuf },
    /// Check an audit log's hash chain.
    VerifyAudit {
        path: PathBuf,
        /// Expected attestation digest (hex).
        #[arg(long)]
        expect: Option<String>,
    },
    /// Advantage bound over an episode's admitted intervals.
    Bound {
        episode: PathBuf,
        #[arg(long)]
        eps_est: Option<f64>,
        #[arg(long)]
        eps_sync: Option<f64>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    Ok(cfg)
}

fn print_summary(s: &RunSummary) {
    println!("tier {}", s.tier);
    for g in &s.groups {
        let fmt = |c: Option<leakguard::report::Ci>| {
            c.map_or("NA".into(), |c| {
                format!("{:.3} [{:.3}, {:.3}]", c.estimate, c.lo, c.hi)
            })
        };
        println!(
            "  n={:<2} {:<6} abort/interval {:.5} episodes aborted {}/{} latency {} power {} median {:.4} auc {}",
            g.n,
            g.workload.name(),
            g.interval_abort_rate.estimate,
            g.aborted_episodes,
            g.episodes,
            fmt(g.latency_us),
            fmt(g.power_mw),
            g.median_delta,
            g.auc_vs_none.map_or("NA".into(), |a| format!("{a:.3}")),
        );
    }
    for (n, a) in &s.null_auc {
        println!("  n={n:<2} null auc {a:.3}");
    }
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> Result<()> {
    match cli.cmd.as_ref().expect("checked by caller") {
        Cmd::Calibrate { out } => {
            let t = Instant::now();
            let c = calibrate(cfg)?;
            c.save(out)?;
            println!("artifact digest {}", hex::encode(c.artifacts.digest));
            for (n, th) in &c.thresholds {
                println!(
                    "n={n:<2} budget {:.6} kill {:.6}",
                    th.delta_budget, th.delta_kill
                );
            }
            eprintln!("calibrated in {:.1?}", t.elapsed());
        }
        Cmd::Run {
            tier,
            calibration,
            out,
        } => {
            let t = Instant::now();
            let c = Calibration::load(calibration, cfg)?;
            let r = if *tier == 1 {
                run_tier1(cfg, &c)?
            } else {
                run_tier2(cfg, &c)?
            };
            let dir = out.join(format!("tier{tier}"));
            r.write(&dir)?;
            fs::write(dir.join("config.toml"), cfg.to_toml())?;
            let s = report_dir(&dir, &cfg.report, cfg.pipeline.policy.strike_limit)?;
            print_summary(&s);
            eprintln!("{} episodes in {:.1?}", r.episodes.len(), t.elapsed());
        }
        Cmd::Report { dir } => print_summary(&report_dir(
            dir,
            &cfg.report,
            cfg.pipeline.policy.strike_limit,
        )?),
        Cmd::VerifyAudit { path, expect } => verify_audit(path, expect.as_deref())?,
        Cmd::Bound {
            episode,
            eps_est,
            eps_sync,
        } => {
            let e: EpisodeResult = serde_json::from_slice(&fs::read(episode)?)?;
            let b = episode_bound(
                &e,
                eps_est.unwrap_or(cfg.report.eps_est),
                eps_sync.unwrap_or(cfg.report.eps_sync),
            )?;
            println!("{}", serde_json::to_string_pretty(&b)?);
        }
    }
    Ok(())
}

fn verify_audit(path: &Path, expect: Option<&str>) -> Result<()> {
    let bytes = fs::read(path)?;
    let v = verify_bytes(&bytes);
    if !v.ok {
        return Err(Error::Input(format!(
            "audit chain broken at record {}",
            v.first_bad.unwrap_or(0)
        )));
    }
    let log = AuditLog::from_bytes(&bytes)?;
    let att = log.attestation().map(hex::encode);
    println!(
        "ok: {} records, attestation {}",
        log.records().len(),
        att.as_deref().unwrap_or("none (not finalized)")
    );
    if let Some(e) = expect {
        if att.as_deref() != Some(e) {
            return Err(Error::Input(
                "attestation does not match the expected digest".into(),
            ));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cli.show_config {
        print!("{}", cfg.to_toml());
        return ExitCode::SUCCESS;
    }
    if cli.cmd.is_none() {
        eprintln!("error: a subcommand is required (see --help)");
        return ExitCode::from(2);
    }
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config(_) | Error::Input(_)))
            if matches!(cli.cmd, Some(Cmd::Report { .. })) =>
        {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
