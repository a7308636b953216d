//! Command-line and report tests. The file name sorts ahead of the
//! acceptance target so these run even when an acceptance criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;

use manifold_relu_harness::{parse_config, run};

fn mrelu() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mrelu"))
}

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn invariants_command_passes() {
    let out = mrelu().arg("invariants").output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 8);
}

#[test]
fn constant_rate_sweep_writes_reproducible_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("rate_constant.conf");
    let runs: Vec<_> = ["a", "b"]
        .iter()
        .map(|sub| {
            let out = dir.path().join(sub);
            let st = mrelu()
                .args(["--jobs", "1", "--out"])
                .arg(&out)
                .arg("rate")
                .arg("--config")
                .arg(&cfg)
                .output()
                .unwrap();
            assert!(st.status.success());
            out
        })
        .collect();
    for f in ["rows.csv", "summary.csv", "slope.csv", "structure.csv", "report.svg"] {
        let a = fs::read(runs[0].join(f)).unwrap();
        assert_eq!(a, fs::read(runs[1].join(f)).unwrap(), "{f} differs");
    }
    let rows = fs::read_to_string(runs[0].join("rows.csv")).unwrap();
    assert_eq!(rows.lines().next(), Some("param,rep,seed,error,flag"));
    assert_eq!(rows.lines().count(), 1 + 3 * 3);
    let summary = fs::read_to_string(runs[0].join("summary.csv")).unwrap();
    assert_eq!(summary.lines().next(), Some("param,median,min,max"));
    for line in summary.lines().skip(1) {
        let median: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(median <= 1e-3, "{line}");
    }
    let slope = fs::read_to_string(runs[0].join("slope.csv")).unwrap();
    assert_eq!(slope.lines().next(), Some("slope,intercept,residual"));
    assert!(runs[0].join("nets/n200_rep0.txt").exists());
    let curve = fs::read_to_string(runs[0].join("curves/n800_rep2.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("epoch,loss"));
    assert_eq!(curve.lines().count(), 201);
}

#[test]
fn seed_flag_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs().join("rate_constant.conf")).unwrap();
    let cfg = dir.path().join("c.conf");
    fs::write(&cfg, text.replace("values = 200, 400, 800", "values = 100").replace("reps = 3", "reps = 1")).unwrap();
    let rows = |seed: &str| {
        let out = dir.path().join(seed);
        let st = mrelu()
            .args(["--seed", seed, "--out"])
            .arg(&out)
            .args(["rate", "--config"])
            .arg(&cfg)
            .output()
            .unwrap();
        assert!(st.status.success());
        fs::read_to_string(out.join("rows.csv")).unwrap()
    };
    assert_ne!(rows("1"), rows("2"));
}

#[test]
fn wrong_kind_and_bad_config_fail() {
    let dir = tempfile::tempdir().unwrap();
    let st = mrelu()
        .arg("--out")
        .arg(dir.path())
        .args(["approx", "--config"])
        .arg(configs().join("rate_constant.conf"))
        .output()
        .unwrap();
    assert!(!st.status.success());
    assert!(String::from_utf8_lossy(&st.stderr).contains("expected approx_sweep"));
    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "kind = rate_sweep\nnonsense\n").unwrap();
    let st = mrelu().args(["rate", "--config"]).arg(&bad).output().unwrap();
    assert!(!st.status.success());
    assert!(String::from_utf8_lossy(&st.stderr).contains("line 2"));
}

#[test]
fn approx_sweep_rows_and_flags() {
    let text = "\
kind = approx_sweep
manifold = affine
offset = 0.3, 0.6
target = ridge_sine
omega = 0.9, -0.6, 0.5
phase = 0.3
values = 2, 4
n_eval = 500
";
    let cfg = parse_config(text).unwrap();
    let r = run(&cfg, Some(1)).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(r.rows.iter().all(|row| row.ok()));
    assert!(r.slope.is_none());
    assert!(r.rows[1].error < r.rows[0].error);
    // Enforced preconditions fail at these M; the rows stay, flagged.
    let strict = parse_config(&format!("{text}policy = enforce\n")).unwrap();
    let r = run(&strict, Some(1)).unwrap();
    assert_eq!(r.rows.len(), 2);
    assert!(r.rows.iter().all(|row| row.flag == "precondition" && row.error.is_nan()));
    assert!(r.structure.is_empty());
}

#[test]
fn identical_dimensions_give_ratio_one() {
    let text = fs::read_to_string(configs().join("dims_circle.conf")).unwrap();
    let text = text
        .replace("values = 3, 10", "values = 3, 3")
        .replace("n = 4000", "n = 200")
        .replace("epochs = 400", "epochs = 20")
        .replace("n_test = 10000", "n_test = 500");
    let cfg = parse_config(&text).unwrap();
    let r = run(&cfg, Some(1)).unwrap();
    assert_eq!(r.ratio, Some(1.0));
    assert_eq!(r.structure[0].depth, r.structure[1].depth);
    assert_eq!(r.structure[0].width, r.structure[1].width);
}
