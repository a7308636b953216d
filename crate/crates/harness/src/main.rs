use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use manifold_relu_harness::config::ExperimentKind;
use manifold_relu_harness::{invariants, parse_config, run, ExperimentReport};

#[derive(Parser)]
#[command(name = "mrelu", version, about = "Manifold ReLU approximation and estimation experiments")]
struct Cli {
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sup error of the explicit network over a list of grid sizes M.
    Approx {
        #[arg(long)]
        config: PathBuf,
    },
    /// L2 error of the least-squares estimator over a list of sample sizes.
    Rate {
        #[arg(long)]
        config: PathBuf,
    },
    /// The same regression problem embedded in several ambient dimensions.
    Dims {
        #[arg(long)]
        config: PathBuf,
    },
    /// Quick property checks.
    Invariants,
}

fn print_report(r: &ExperimentReport) {
    println!("param,median,min,max");
    for s in &r.summary {
        println!("{},{:e},{:e},{:e}", s.param, s.median, s.min, s.max);
    }
    for s in &r.structure {
        println!("param {}: depth {} width {}", s.param, s.depth, s.width);
    }
    let failed = r.rows.iter().filter(|row| !row.ok()).count();
    if failed > 0 {
        println!("{failed} flagged sub-runs");
    }
    if let Some(f) = &r.slope {
        println!("slope {:.4} intercept {:.4} residual {:.3e}", f.slope, f.intercept, f.residual);
    }
    if let Some(q) = r.ratio {
        println!("median ratio {q:.4}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (path, want) = match &cli.cmd {
        Cmd::Invariants => {
            let checks = invariants::run_all();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            };
        }
        Cmd::Approx { config } => (config, ExperimentKind::ApproxSweep),
        Cmd::Rate { config } => (config, ExperimentKind::RateSweep),
        Cmd::Dims { config } => (config, ExperimentKind::DimStudy),
    };
    let result = (|| -> manifold_relu::Result<()> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = parse_config(&text)?;
        if cfg.kind != want {
            return Err(manifold_relu::Error::InvalidArgument(format!(
                "config is a {} experiment, expected {}",
                cfg.kind.name(),
                want.name()
            )));
        }
        if let Some(s) = cli.seed {
            cfg.seed = s;
        }
        let out = cli
            .out
            .clone()
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from("out").join(cfg.kind.name()));
        let report = run(&cfg, cli.jobs)?;
        report.write(&out, cfg.svg)?;
        print_report(&report);
        println!("wrote {}", out.display());
        Ok(())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
