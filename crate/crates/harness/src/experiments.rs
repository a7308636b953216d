//! Sweep runners. Every sub-run seeds its own RNG from the repetition seed
//! and the value index, so results do not depend on scheduling.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use manifold_relu::constructor::build_fhat_net;
use manifold_relu::estimator::{arch_for, empirical_l2, fit_least_squares, generate_regression_data, FittedEstimator};
use manifold_relu::manifold::Manifold;
use manifold_relu::taylor::SmoothTarget;
use manifold_relu::{Error, Result};

use crate::config::{derive_seed, ExperimentConfig, ExperimentKind};
use crate::report::{summarize, summary_slope, ExperimentReport, Row, Structure};

/// Short row flag for a failed sub-run.
pub fn flag_for(e: &Error) -> String {
    match e {
        Error::Precondition(_) | Error::PreconditionM { .. } => "precondition",
        Error::Diverged(_) => "diverged",
        Error::EnumerationMiss => "enumeration_miss",
        Error::NonFinite(_) => "non_finite",
        _ => "error",
    }
    .into()
}

pub fn environment(kind: ExperimentKind) -> String {
    format!(
        "mrelu {} kind={} os={} arch={} threads={}",
        env!("CARGO_PKG_VERSION"),
        kind.name(),
        std::env::consts::OS,
        std::env::consts::ARCH,
        rayon::current_num_threads()
    )
}

fn failed(param: usize, rep: usize, seed: u64, e: &Error) -> Row {
    Row {
        param,
        rep,
        seed,
        error: f64::NAN,
        flag: flag_for(e),
    }
}

fn finish(kind: ExperimentKind, rows: Vec<Row>, structure: Vec<Structure>) -> ExperimentReport {
    let summary = summarize(&rows);
    ExperimentReport {
        kind: kind.name().into(),
        slope: summary_slope(&summary),
        summary,
        rows,
        structure,
        ratio: None,
        environment: environment(kind),
        artifacts: Vec::new(),
    }
}

/// Sup of `|net(x) - f(x)|` over `n` chart-sampled points.
pub fn sup_error(
    net: &manifold_relu::Network,
    man: &Manifold,
    t: &SmoothTarget,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts = man.sample(n, &mut rng);
    let errs: Vec<f64> = pts
        .par_iter()
        .map(|x| net.eval1(x).map(|v| (v - t.value(x)).abs()))
        .collect::<Result<_>>()?;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    if errs.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("network output"));
    }
    Ok(worst)
}

pub fn run_approx_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let base = cfg.manifold.build_base()?;
    let man = cfg.manifold.build()?;
    let t = cfg.target.build_for(&man, base.ambient_dim, cfg.manifold.embed_seed)?;
    let mut rows = Vec::new();
    let mut structure = Vec::new();
    for (pi, &m) in cfg.values.iter().enumerate() {
        let built = build_fhat_net(&t, &man, m as u32, cfg.policy);
        if let Ok(r) = &built {
            structure.push(Structure {
                param: m,
                depth: r.depth,
                width: r.width,
            });
        }
        for rep in 0..cfg.reps {
            let seed = derive_seed(cfg.rep_seed(rep), pi as u64);
            let err = built
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|r| sup_error(&r.net, &man, &t, cfg.n_eval, seed));
            rows.push(match err {
                Ok(e) => Row {
                    param: m,
                    rep,
                    seed,
                    error: e,
                    flag: "ok".into(),
                },
                Err(e) => failed(m, rep, seed, &e),
            });
        }
    }
    Ok(finish(ExperimentKind::ApproxSweep, rows, structure))
}

fn curve_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        let _ = writeln!(s, "{},{l:e}", i + 1);
    }
    s
}

struct FitOutcome {
    row: Row,
    artifacts: Vec<(String, String)>,
}

/// Fits on `n` fresh samples drawn with `seeds.0` and scores on test
/// points drawn with `seeds.1`.
fn fit_one(
    cfg: &ExperimentConfig,
    (man, t): (&Manifold, &SmoothTarget),
    n: usize,
    (param, rep): (usize, usize),
    (data_seed, test_seed): (u64, u64),
    tag: &str,
) -> FitOutcome {
    let run = || -> Result<(f64, FittedEstimator)> {
        let data = generate_regression_data(man, t, cfg.sigma, n, data_seed)?;
        let mut est = cfg.estimator.clone();
        est.train.seed = data_seed;
        let fitted = fit_least_squares(&data, &est)?;
        let err = empirical_l2(|x| fitted.predict(x), man, t, cfg.n_test, test_seed);
        if !err.is_finite() {
            return Err(Error::Diverged(format!("non-finite test error at n = {n}")));
        }
        Ok((err, fitted))
    };
    match run() {
        Ok((err, fitted)) => FitOutcome {
            row: Row {
                param,
                rep,
                seed: data_seed,
                error: err,
                flag: "ok".into(),
            },
            artifacts: vec![
                (format!("nets/{tag}_rep{rep}.txt"), fitted.network().to_text()),
                (format!("curves/{tag}_rep{rep}.csv"), curve_csv(&fitted.train.curve)),
            ],
        },
        Err(e) => FitOutcome {
            row: failed(param, rep, data_seed, &e),
            artifacts: Vec::new(),
        },
    }
}

fn collect(outcomes: Vec<FitOutcome>) -> (Vec<Row>, Vec<(String, String)>) {
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut arts = Vec::new();
    for o in outcomes {
        rows.push(o.row);
        arts.extend(o.artifacts);
    }
    (rows, arts)
}

pub fn run_rate_sweep(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let base = cfg.manifold.build_base()?;
    let man = cfg.manifold.build()?;
    let t = cfg.target.build_for(&man, base.ambient_dim, cfg.manifold.embed_seed)?;
    let tasks: Vec<(usize, usize)> = (0..cfg.values.len())
        .flat_map(|pi| (0..cfg.reps).map(move |rep| (pi, rep)))
        .collect();
    let outcomes: Vec<FitOutcome> = tasks
        .par_iter()
        .map(|&(pi, rep)| {
            let n = cfg.values[pi];
            let s = cfg.rep_seed(rep);
            let (ds, ts) = (derive_seed(s, 2 * pi as u64), derive_seed(s, 2 * pi as u64 + 1));
            fit_one(cfg, (&man, &t), n, (n, rep), (ds, ts), &format!("n{n}"))
        })
        .collect();
    let (rows, artifacts) = collect(outcomes);
    let est = &cfg.estimator;
    let structure = cfg
        .values
        .iter()
        .map(|&n| {
            let (depth, width) = arch_for(n, est.p, est.d_star, est.c3, est.c4);
            Structure { param: n, depth, width }
        })
        .collect();
    let mut report = finish(ExperimentKind::RateSweep, rows, structure);
    report.artifacts = artifacts;
    Ok(report)
}

/// Same intrinsic problem in each ambient dimension of `values`, with the
/// sample size `n`. Repetition `rep` uses the same seed in every dimension,
/// so the intrinsic sample points are paired.
pub fn run_dim_study(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let base_dim = cfg.manifold.build_base()?.ambient_dim;
    let problems: Vec<(Manifold, SmoothTarget)> = cfg
        .values
        .iter()
        .map(|&d| {
            let man = cfg.manifold.build_in(d)?;
            let t = cfg.target.build_for(&man, base_dim, cfg.manifold.embed_seed)?;
            Ok((man, t))
        })
        .collect::<Result<_>>()?;
    let tasks: Vec<(usize, usize)> = (0..cfg.values.len())
        .flat_map(|pi| (0..cfg.reps).map(move |rep| (pi, rep)))
        .collect();
    let outcomes: Vec<FitOutcome> = tasks
        .par_iter()
        .map(|&(pi, rep)| {
            let d = cfg.values[pi];
            let s = cfg.rep_seed(rep);
            let (man, t) = &problems[pi];
            let seeds = (derive_seed(s, 0), derive_seed(s, 1));
            fit_one(cfg, (man, t), cfg.n, (d, rep), seeds, &format!("d{d}"))
        })
        .collect();
    let (rows, artifacts) = collect(outcomes);
    let est = &cfg.estimator;
    let (depth, width) = arch_for(cfg.n, est.p, est.d_star, est.c3, est.c4);
    let structure = cfg.values.iter().map(|&d| Structure { param: d, depth, width }).collect();
    let mut report = finish(ExperimentKind::DimStudy, rows, structure);
    report.slope = None;
    let (first, last) = (&report.summary[0], report.summary.last().unwrap());
    report.ratio = Some(last.median / first.median);
    report.artifacts = artifacts;
    Ok(report)
}

/// Runs the experiment named by `cfg.kind` on `jobs` worker threads
/// (default: all cores).
pub fn run(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentReport> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j.max(1));
    }
    let pool = b.build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| match cfg.kind {
        ExperimentKind::ApproxSweep => run_approx_sweep(cfg),
        ExperimentKind::RateSweep => run_rate_sweep(cfg),
        ExperimentKind::DimStudy => run_dim_study(cfg),
        ExperimentKind::Invariants => Err(Error::InvalidArgument(
            "invariants take no config; use the `invariants` command".into(),
        )),
    })
}
