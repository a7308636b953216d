//! Fast property checks run by the `invariants` command.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use manifold_relu::constructor::weight;
use manifold_relu::estimator::Mlp;
use manifold_relu::manifold::{cubes_meeting, GridSpec, Manifold};
use manifold_relu::primitives::{build_indicator, build_mult};
use manifold_relu::taylor::{phi_recursion, piecewise_taylor, SmoothTarget};
use manifold_relu::{Network, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, r: Result<(bool, String)>) -> Check {
    match r {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn identity_exact() -> Result<(bool, String)> {
    let net = Network::identity(3, 5);
    let x = [3.7, -1.25, 0.0];
    let y = net.eval(&x)?;
    Ok((y == x, format!("{y:?}")))
}

fn product_contract() -> Result<(bool, String)> {
    let p = build_mult(6, 1.0)?;
    let mut worst: f64 = 0.0;
    for i in 0..=100 {
        for j in 0..=100 {
            let (x, y) = (-1.0 + i as f64 / 50.0, -1.0 + j as f64 / 50.0);
            worst = worst.max((p.net.eval1(&[x, y])? - x * y).abs());
        }
    }
    let bound = p.contract.class_bound;
    Ok((worst <= bound, format!("max error {worst:e} <= {bound:e}")))
}

fn indicator_exact() -> Result<(bool, String)> {
    let r = 20.0;
    let p = build_indicator(&[0.0, 0.0], &[0.5, 0.5], r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ok = true;
    for _ in 0..1000 {
        let x = [rng.gen_range(-0.5..1.0), rng.gen_range(-0.5..1.0)];
        let v = p.net.eval1(&x)?;
        let inside = x.iter().all(|&c| (1.0 / r..=0.5 - 1.0 / r).contains(&c));
        let outside = x.iter().any(|&c| !(0.0..=0.5).contains(&c));
        if (inside && (v - 1.0).abs() > 1e-12) || (outside && v.abs() > 1e-12) {
            ok = false;
        }
    }
    Ok((ok, "1000 points".into()))
}

fn partition_of_unity() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for d in 1..=3 {
        let grids = GridSpec::all_shifts(3, d);
        for _ in 0..300 {
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s: f64 = grids.iter().map(|g| weight(g, &x)).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    Ok((worst <= 1e-12, format!("max deviation {worst:e}")))
}

fn recursion_exact() -> Result<(bool, String)> {
    let man = Manifold::circle(&[0.0; 3], 0.45, 3)?;
    let t = SmoothTarget::ridge_sine(&[0.9, -0.6, 0.5], 0.3, 2.0)?;
    let grid = GridSpec::unshifted(4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for x in man.sample(200, &mut rng) {
        let phi = phi_recursion(&t, &man, &grid, &x)?;
        worst = worst.max((phi.phi13 - piecewise_taylor(&t, &grid, &x)).abs());
    }
    Ok((worst <= 1e-9, format!("max difference {worst:e}")))
}

fn segment_count() -> Result<(bool, String)> {
    let seg = Manifold::affine_slice(1, &[0.0])?;
    let n = cubes_meeting(&seg, 0.25, &[0.0, 0.0]).len();
    Ok((n == 5, format!("{n} cubes")))
}

fn gradient_check() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut mlp = Mlp::new(&[2, 3, 2, 1], &mut rng);
    let mut p = mlp.params();
    p.iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
    mlp.set_params(&p);
    let mut worst: f64 = 0.0;
    let mut used = 0;
    while used < 20 {
        let x = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        if mlp.min_abs_preactivation(&x) < 1e-3 {
            continue;
        }
        used += 1;
        let y = rng.gen_range(-1.0..1.0);
        let (_, g) = mlp.loss_and_grad(&[&x], &[y]);
        let mut q = mlp.clone();
        for k in 0..p.len() {
            let mut pk = p.clone();
            pk[k] += 1e-5;
            q.set_params(&pk);
            let up = q.mse(std::slice::from_ref(&x), &[y]);
            pk[k] -= 2e-5;
            q.set_params(&pk);
            let down = q.mse(std::slice::from_ref(&x), &[y]);
            let fd = (up - down) / 2e-5;
            worst = worst.max((fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-8));
        }
    }
    Ok((worst <= 1e-4, format!("max relative error {worst:e}")))
}

fn text_round_trip() -> Result<(bool, String)> {
    let net = build_mult(3, 2.0)?.net;
    let back = Network::from_text(&net.to_text())?;
    let x = [0.3, -1.1];
    Ok((
        back.eval(&x)? == net.eval(&x)?,
        format!("{} layers", back.layers().len()),
    ))
}

pub fn run_all() -> Vec<Check> {
    vec![
        check("identity network is exact", identity_exact()),
        check("product network within its error bound", product_contract()),
        check("indicator exact away from its ramps", indicator_exact()),
        check("shifted weights sum to one", partition_of_unity()),
        check("recursion equals piecewise Taylor", recursion_exact()),
        check("segment meets five cubes", segment_count()),
        check("backprop matches central differences", gradient_check()),
        check("network text round trip", text_round_trip()),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_invariants_hold() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
