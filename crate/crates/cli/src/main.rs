use std::path::PathBuf;
use std::process::ExitCode;

use avgsplit::harness::{
    run_avg_profile, run_complete_cdsz, run_cutoff_bin, run_gap_sweep, run_nash, run_verify, CutoffMode,
    ExperimentConfig,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "avgsplit", version, about = "Averaging process and Binomial Splitting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral gap of Bin(k) across graphs and k.
    Gap(Common),
    /// Total-variation profiles of Bin(k), exact or bracketed.
    Cutoff(Common),
    /// Monte Carlo transport profiles of the Averaging process.
    AvgProfile(Common),
    /// L1 profile on a large complete graph.
    Cdsz(Common),
    /// Nash-dimension diagnostic.
    Nash(Common),
    /// Deterministic residual battery; nonzero exit on any failure.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSV, SVG and JSON-lines files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn resolve(&self) -> avgsplit::error::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        Ok(cfg)
    }
}

fn run(cmd: &Command) -> avgsplit::error::Result<bool> {
    let common = match cmd {
        Command::Gap(c)
        | Command::Cutoff(c)
        | Command::AvgProfile(c)
        | Command::Cdsz(c)
        | Command::Nash(c)
        | Command::Verify(c) => c,
    };
    let cfg = common.resolve()?;
    let out = cfg.out.clone();
    if let Some(dir) = &out {
        std::fs::create_dir_all(dir)?;
    }
    let out = out.as_deref();
    match cmd {
        Command::Gap(_) => {
            let sweep = run_gap_sweep(&cfg, out)?;
            println!("graph,n,k,states,gap,gap_ratio,flagged");
            for r in &sweep.rows {
                println!("{},{},{},{},{:.12},{:.12},{}", r.graph, r.n, r.k, r.states, r.gap, r.gap_ratio, r.flagged);
            }
            for s in &sweep.skipped {
                eprintln!("skipped: {s}");
            }
            let clean = sweep.flagged().next().is_none();
            Ok(clean)
        }
        Command::Cutoff(_) => {
            for p in run_cutoff_bin(&cfg, out)? {
                let mode = match p.mode {
                    CutoffMode::Exact => "exact",
                    CutoffMode::Bounds => "bounds",
                };
                let half = p.t_half().map_or("n/a".to_string(), |t| format!("{t:.4}"));
                println!("k={} mode={mode} states={} t_rel={:.4} t_half={half}", p.k, p.states, p.t_rel);
            }
            Ok(true)
        }
        Command::AvgProfile(_) => {
            for p in run_avg_profile(&cfg, out)? {
                let (lo, hi) = p.band(p.t_rel, 6.0 * p.t_rel);
                println!(
                    "k={} p={} start={} t_rel={:.4} band e^(t/t_rel)*value in [{lo:.3}, {hi:.3}]",
                    p.k, p.p, p.start, p.t_rel
                );
            }
            Ok(true)
        }
        Command::Cdsz(_) => {
            let r = run_complete_cdsz(&cfg, out)?;
            let ratio = r.ratio().map_or("n/a".to_string(), |v| format!("{v:.4}"));
            println!("n={} t_cdsz={:.6} crossing/t_cdsz={ratio}", r.n, r.t_cdsz);
            Ok(true)
        }
        Command::Nash(_) => {
            for r in run_nash(&cfg, out)? {
                match r.d_hat {
                    Some(d) if r.finite_dimensional => println!("{} n={} d_hat={d:.3} r2={:.4}", r.graph, r.n, r.r2.unwrap_or(0.0)),
                    _ => println!("{} n={} not finite-dimensional: {}", r.graph, r.n, r.reason),
                }
            }
            Ok(true)
        }
        Command::Verify(_) => {
            let report = run_verify(&cfg, out)?;
            report.write_jsonl(std::io::stdout().lock())?;
            for f in report.failures() {
                eprintln!("FAILED {} residual={:e} tolerance={:e}", f.check, f.residual, f.tolerance);
            }
            Ok(report.passed())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
