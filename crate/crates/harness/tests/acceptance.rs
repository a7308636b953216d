//! The acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line. Lines go straight to stderr so they show even when the
//! test harness captures output.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use manifold_relu::constructor::{build_fhat_check, build_fhat_p2_true, weight, PreconditionPolicy};
use manifold_relu::estimator::Mlp;
use manifold_relu::manifold::{CubeCover, GridSpec, Manifold};
use manifold_relu::primitives::{build_indicator, build_mult, build_test};
use manifold_relu::taylor::{phi_recursion_with, piecewise_taylor, SlotTables, SmoothTarget};
use manifold_relu_harness::{parse_config, run, ExperimentReport};

fn verdict(n: u32, name: &str, passed: bool, detail: &str) -> bool {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "acceptance {n:>2} {}: {name}: {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    passed
}

fn config(name: &str) -> String {
    let path = format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

fn sine3() -> SmoothTarget {
    SmoothTarget::ridge_sine(&[0.9, -0.6, 0.5], 0.3, 2.0).unwrap()
}

fn helix() -> Manifold {
    Manifold::helix(&[0.0; 3], 0.4, PI, 0.5).unwrap()
}

/// Multi-indices of total degree at most `q` in `d` variables.
fn multi_indices(d: usize, q: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p: Vec<u32>| {
                let used: u32 = p.iter().sum();
                (0..=q - used).map(move |e| {
                    let mut v = p.clone();
                    v.push(e);
                    v
                })
            })
            .collect();
    }
    out
}

/// Degree-`q` Taylor polynomial of `t` at the lower-left corner of the
/// unshifted fine cube containing `x`, computed from scratch.
fn taylor_oracle(t: &SmoothTarget, m: u32, x: &[f64]) -> f64 {
    let h = 1.0 / (m as f64).powi(2);
    let c: Vec<f64> = x.iter().map(|xi| (xi / h).floor() * h).collect();
    let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
    multi_indices(x.len(), t.smooth.q as u32)
        .iter()
        .map(|j| {
            let mono: f64 = j.iter().zip(x.iter().zip(&c)).map(|(&e, (xi, ci))| (xi - ci).powi(e as i32)).product();
            let jf: f64 = j.iter().map(|&e| fact(e)).product();
            t.partial(j, &c) / jf * mono
        })
        .sum()
}

#[test]
fn criterion_01_recursion_exactness() {
    let cases = vec![
        ("affine", Manifold::affine_slice(1, &[0.3, 0.6]).unwrap(), sine3()),
        ("circle", Manifold::circle(&[0.0; 3], 0.45, 3).unwrap(), sine3()),
        (
            "torus",
            Manifold::torus(&[0.0; 4], 0.3, 0.15, 3).unwrap(),
            SmoothTarget::ridge_sine(&[0.9, -0.6, 0.5, 0.3], 0.3, 2.0).unwrap(),
        ),
    ];
    let mut worst: f64 = 0.0;
    let mut misses = 0;
    for (_, man, t) in &cases {
        let grid = GridSpec::unshifted(4, man.ambient_dim);
        let tables = SlotTables::new(t, man, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for x in man.sample(1000, &mut rng) {
            match phi_recursion_with(&tables, &x) {
                Ok(phi) => worst = worst.max((phi.phi13 - taylor_oracle(t, 4, &x)).abs()),
                Err(_) => misses += 1,
            }
        }
    }
    let ok = worst <= 1e-9 && misses == 0;
    assert!(verdict(
        1,
        "recursion equals piecewise Taylor",
        ok,
        &format!("max difference {worst:.2e} over 3 manifolds x 1000 points, {misses} misses")
    ));
}

#[test]
fn criterion_02_primitive_contracts() {
    let mut notes = Vec::new();
    let mut ok = true;
    for r in [4usize, 6, 8, 10] {
        for b in [1.0f64, 2.0] {
            let net = build_mult(r, b).unwrap().net;
            let mut worst: f64 = 0.0;
            for i in 0..=200 {
                for j in 0..=200 {
                    let x = -b + 2.0 * b * i as f64 / 200.0;
                    let y = -b + 2.0 * b * j as f64 / 200.0;
                    worst = worst.max((net.eval1(&[x, y]).unwrap() - x * y).abs());
                }
            }
            let bound = 2.0 * b * b * 4f64.powi(-(r as i32));
            ok &= worst <= bound;
            if r == 10 {
                notes.push(format!("R=10 b={b}: {worst:.2e} <= {bound:.2e}"));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rr = 40.0;
    let (a, b) = ([0.1, -0.3], [0.6, 0.2]);
    let ind = build_indicator(&a, &b, rr).unwrap().net;
    let mut ind_ok = true;
    for _ in 0..2000 {
        let x = [rng.gen_range(-0.5..1.0), rng.gen_range(-0.8..0.7)];
        let v = ind.eval1(&x).unwrap();
        let inside = (0..2).all(|i| x[i] >= a[i] + 1.0 / rr && x[i] < b[i] - 1.0 / rr);
        let outside = (0..2).any(|i| x[i] <= a[i] - 1e-3 || x[i] >= b[i] + 1e-3);
        if inside {
            ind_ok &= v == 1.0;
        }
        if outside {
            ind_ok &= v == 0.0;
        }
        ind_ok &= (0.0..=1.0).contains(&v);
    }
    ok &= ind_ok;
    let d = 3;
    let test = build_test(d, rr).net;
    let mut test_worst: f64 = 0.0;
    for _ in 0..1000 {
        let lo: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..0.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.1..1.0)).collect();
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| rng.gen_range(l + 1.0 / rr..h - 1.0 / rr)).collect();
        let s = rng.gen_range(-rr..rr);
        let input: Vec<f64> = x.iter().chain(&lo).chain(&hi).copied().chain([s]).collect();
        test_worst = test_worst.max((test.eval1(&input).unwrap() - s).abs());
    }
    ok &= test_worst <= 1e-9;
    notes.push(format!("indicator exact: {ind_ok}, test net max error {test_worst:.1e}"));
    assert!(verdict(2, "primitive contracts", ok, &notes.join("; ")));
}

#[test]
fn criterion_03_piecewise_taylor_decay() {
    let (t, man) = (sine3(), helix());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pts = man.sample(10000, &mut rng);
    let sup = |m: u32| {
        let g = GridSpec::unshifted(m, 3);
        pts.iter()
            .map(|x| (piecewise_taylor(&t, &g, x) - t.value(x)).abs())
            .fold(0.0, f64::max)
    };
    let (e2, e4) = (sup(2), sup(4));
    let p = t.smooth.p;
    let limit = e2 * 4f64.powf(-2.0 * p) * 1.5;
    let ok = e4 <= limit;
    assert!(verdict(
        3,
        "piecewise Taylor error decay M=2 -> 4",
        ok,
        &format!(
            "err(2) {e2:.3e}, err(4) {e4:.3e}, ratio {:.4} vs required <= 1.5*4^-2p = {:.5} (side ratio 2^-2p = {:.4})",
            e4 / e2,
            1.5 * 4f64.powf(-2.0 * p),
            2f64.powf(-2.0 * p)
        )
    ));
}

fn approx_report() -> &'static ExperimentReport {
    static R: OnceLock<ExperimentReport> = OnceLock::new();
    R.get_or_init(|| run(&parse_config(&config("approx_helix.conf")).unwrap(), None).unwrap())
}

#[test]
fn criterion_04_construction_scaling() {
    let r = approx_report();
    let errs: Vec<String> = r.summary.iter().map(|s| format!("M={} {:.3e}", s.param, s.median)).collect();
    let slope = r.slope.map(|s| s.slope).unwrap_or(f64::NAN);
    let ok = r.rows.iter().all(|row| row.ok()) && slope <= -3.5;
    assert!(verdict(
        4,
        "sup error slope over M in {2,4,8}",
        ok,
        &format!("slope {slope:.3} (need <= -3.5); {}", errs.join(", "))
    ));
}

#[test]
fn criterion_05_width_scaling() {
    let r = approx_report();
    let w: Vec<usize> = r.structure.iter().map(|s| s.width).collect();
    let ratios: Vec<f64> = w.windows(2).map(|p| p[1] as f64 / p[0] as f64).collect();
    let ok = w.len() == 3 && ratios.iter().all(|q| (1.5..=3.0).contains(q));
    assert!(verdict(
        5,
        "width growth per doubling of M",
        ok,
        &format!("widths {w:?}, ratios {ratios:.3?}")
    ));
}

#[test]
fn criterion_06_cube_counting() {
    let ms = vec![
        Manifold::affine_slice(1, &[0.3, 0.6]).unwrap(),
        Manifold::circle(&[0.0; 3], 0.45, 3).unwrap(),
        Manifold::torus(&[0.0; 4], 0.3, 0.15, 3).unwrap(),
        helix(),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for man in &ms {
        let ds = man.intrinsic_dim as i32;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let probe = man.sample(5000, &mut rng);
        for m in [2u32, 4, 8] {
            let grid = GridSpec::unshifted(m, man.ambient_dim);
            let cover = CubeCover::build(man, &grid).unwrap();
            let coarse_bound = man.coarse_count_factor() * (m as f64).powi(ds);
            let fine_bound = man.fine_count_factor() * (m as f64).powi(ds);
            let max_fine = cover.coarse.iter().map(|c| c.fine.len()).max().unwrap();
            ok &= cover.coarse.len() as f64 <= coarse_bound && max_fine as f64 <= fine_bound;
            // Every sampled point lies in an enumerated cube.
            let h = 1.0 / m as f64;
            let found: BTreeSet<Vec<i64>> = cover.coarse.iter().map(|c| c.index.clone()).collect();
            ok &= probe
                .iter()
                .all(|x| found.contains(&x.iter().map(|v| (v / h).floor() as i64).collect::<Vec<_>>()));
            if m == 8 {
                notes.push(format!(
                    "{} M=8: {} <= {:.0}, N_i {} <= {:.0}",
                    man.name,
                    cover.coarse.len(),
                    coarse_bound,
                    max_fine,
                    fine_bound
                ));
            }
        }
    }
    // Brute force: the segment {(t, 0)} at h = 1/4.
    let seg = Manifold::affine_slice(1, &[0.0]).unwrap();
    let brute: BTreeSet<(i64, i64)> = (0..=100_000)
        .map(|i| ((i as f64 / 100_000.0 / 0.25).floor() as i64, 0))
        .collect();
    let cover = CubeCover::build(&seg, &GridSpec::unshifted(4, 2)).unwrap();
    ok &= brute.len() == 5 && cover.coarse.len() == brute.len();
    notes.push(format!("segment: {} cubes, brute force {}", cover.coarse.len(), brute.len()));
    assert!(verdict(6, "cube counts within bounds", ok, &notes.join("; ")));
}

#[test]
fn criterion_07_partition_of_unity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for d in 1..=3 {
        let grids = GridSpec::all_shifts(4, d);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s: f64 = grids.iter().map(|g| weight(g, &x)).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    assert!(verdict(
        7,
        "shifted weights sum to one",
        worst <= 1e-12,
        &format!("max deviation {worst:.2e}")
    ));
}

#[test]
fn criterion_08_gating() {
    let t = SmoothTarget::ridge_sine(&[0.9, -0.6], 0.3, 2.0).unwrap();
    // A horizontal line through fine-cube centres at M = 4.
    let v = 5.5 / 16.0;
    let man = Manifold::affine_slice(1, &[v]).unwrap();
    let grid = GridSpec::unshifted(4, 2);
    let check = build_fhat_check(&t, &man, &grid, PreconditionPolicy::Relaxed).unwrap().net;
    let gated = build_fhat_p2_true(&t, &man, &grid, PreconditionPolicy::Relaxed).unwrap().net;
    let band = 1.0 / 4f64.powi(6);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut gated_worst, mut check_ones, mut centre_zeros): (f64, usize, usize) = (0.0, 0, 0);
    for _ in 0..1000 {
        let k = rng.gen_range(0..16) as f64;
        let u = rng.gen_range(0.0..0.999) * band;
        let x1 = if rng.gen_bool(0.5) { k / 16.0 + u } else { (k + 1.0) / 16.0 - u - 1e-15 };
        let x = [x1, v];
        gated_worst = gated_worst.max(gated.eval1(&x).unwrap().abs());
        check_ones += usize::from(check.eval1(&x).unwrap() == 1.0);
        let c = [k / 16.0 + 1.0 / 32.0, v];
        centre_zeros += usize::from(check.eval1(&c).unwrap() == 0.0);
    }
    let ok = gated_worst <= 1e-9 && check_ones == 1000 && centre_zeros == 1000;
    assert!(verdict(
        8,
        "gating on the boundary band",
        ok,
        &format!("gated max {gated_worst:.1e}, check = 1 at {check_ones}/1000 band points, 0 at {centre_zeros}/1000 centres")
    ));
}

#[test]
fn criterion_09_estimation_rate() {
    let r = run(&parse_config(&config("rate_helix.conf")).unwrap(), None).unwrap();
    let slope = r.slope.map(|s| s.slope).unwrap_or(f64::NAN);
    let (manifold_rate, ambient_rate) = (-0.8, -4.0 / 7.0);
    let ok = r.rows.iter().all(|row| row.ok())
        && slope < 0.0
        && (slope - manifold_rate).abs() < (slope - ambient_rate).abs();
    let meds: Vec<String> = r.summary.iter().map(|s| format!("n={} {:.3e}", s.param, s.median)).collect();
    let monotone = r.summary.windows(2).all(|w| w[1].median <= w[0].median);
    let passed = verdict(
        9,
        "estimation rate nearer the manifold rate",
        ok,
        &format!("slope {slope:.3} (|+0.8| {:.3} vs |+4/7| {:.3}); medians {}; non-increasing {monotone}",
            (slope - manifold_rate).abs(),
            (slope - ambient_rate).abs(),
            meds.join(", "))
    );
    assert!(passed);
    assert!(monotone);
}

#[test]
fn criterion_10_dimension_independence() {
    let cfg = parse_config(&config("dims_circle.conf")).unwrap();
    let r = run(&cfg, None).unwrap();
    let ratio = r.ratio.unwrap();
    let archs: Vec<(usize, usize, usize)> = r.structure.iter().map(|s| (s.param, s.depth, s.width)).collect();
    let same_arch = archs.windows(2).all(|w| (w[0].1, w[0].2) == (w[1].1, w[1].2));
    let ok = r.rows.iter().all(|row| row.ok()) && (1.0 / 3.0..=3.0).contains(&ratio) && same_arch;
    let meds: Vec<String> = r.summary.iter().map(|s| format!("d={} {:.3e}", s.param, s.median)).collect();
    assert!(verdict(
        10,
        "same error in R^3 and R^10",
        ok,
        &format!("median ratio {ratio:.3}; {}; (d, L, r) {archs:?}", meds.join(", "))
    ));
}

#[test]
fn criterion_11_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mlp = Mlp::new(&[2, 3, 2, 1], &mut rng);
    assert_eq!(mlp.n_params(), 20);
    let mut p = mlp.params();
    p.iter_mut().for_each(|v| *v += rng.gen_range(-0.3..0.3));
    mlp.set_params(&p);
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let mut points = 0;
    while points < 50 {
        let x = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        // Stay clear of kinks by more than any parameter step can move a
        // pre-activation.
        if mlp.min_abs_preactivation(&x) < 1e-2 {
            continue;
        }
        points += 1;
        let y = rng.gen_range(-1.0..1.0);
        let (_, g) = mlp.loss_and_grad(&[&x], &[y]);
        let mut probe = mlp.clone();
        let fd: Vec<f64> = (0..p.len())
            .map(|k| {
                let mut q = p.clone();
                q[k] += step;
                probe.set_params(&q);
                let up = probe.mse(std::slice::from_ref(&x), &[y]);
                q[k] -= 2.0 * step;
                probe.set_params(&q);
                let down = probe.mse(std::slice::from_ref(&x), &[y]);
                (up - down) / (2.0 * step)
            })
            .collect();
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt().max(fd.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst = worst.max(diff / scale.max(1e-12));
    }
    assert!(verdict(
        11,
        "backprop against central differences",
        worst <= 1e-4,
        &format!("max relative error {worst:.2e} over 50 points, 20 parameters")
    ));
}
