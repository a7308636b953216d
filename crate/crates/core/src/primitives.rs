//! Building-block networks: identities, box indicators, gated tests and
//! approximate products and polynomials. Each builder returns the network
//! together with its depth, width and an error bound.

use crate::error::{Error, Result};
use crate::relu_net::{Affine, Network};

/// Depth, width and error bound of a primitive network.
///
/// `sup_error_bound` is the bound this particular construction attains on
/// `domain`; `class_bound` is the closed-form bound for the network class
/// it belongs to, which is never smaller.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorContract {
    pub depth: usize,
    pub width: usize,
    pub sup_error_bound: f64,
    pub class_bound: f64,
    /// Per-coordinate input interval on which the bound holds.
    pub domain: Vec<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct Primitive {
    pub net: Network,
    pub contract: ErrorContract,
}

impl Primitive {
    fn new(net: Network, sup_error_bound: f64, class_bound: f64, domain: Vec<(f64, f64)>) -> Self {
        let contract = ErrorContract {
            depth: net.depth(),
            width: net.width(),
            sup_error_bound,
            class_bound,
            domain,
        };
        Primitive { net, contract }
    }
}

pub fn binom(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r as usize
}

pub fn ceil_log2(n: usize) -> usize {
    assert!(n >= 1);
    (usize::BITS - (n - 1).leading_zeros()) as usize
}

/// All multi-indices in `d` variables of total degree at most `n`, ordered
/// by degree and then lexicographically with the first exponent largest
/// first: for `d = 2, n = 1` this is `[0,0], [1,0], [0,1]`.
pub fn monomials(d: usize, n: usize) -> Vec<Vec<u32>> {
    fn rec(d: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == d - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for e in (0..=left).rev() {
            cur.push(e);
            rec(d, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::with_capacity(binom(d + n, d));
    if d == 0 {
        out.push(Vec::new());
        return out;
    }
    for k in 0..=n as u32 {
        rec(d, k, &mut Vec::with_capacity(d), &mut out);
    }
    out
}

/// `f_id^depth` on `dim` coordinates.
pub fn build_identity(dim: usize, depth: usize) -> Primitive {
    let net = Network::identity(dim, depth);
    Primitive::new(net, 0.0, 0.0, vec![(f64::NEG_INFINITY, f64::INFINITY); dim])
}

/// Indicator of `[a, b)` on inputs `x`:
/// `relu(1 - r * Σ_i (relu(a_i + 1/r - x_i) + relu(x_i - b_i + 1/r)))`.
/// No side-length check; see [`build_indicator`].
pub fn indicator_net(a: &[f64], b: &[f64], r: f64) -> Network {
    let d = a.len();
    let mut l1 = Affine::with_input(d);
    for i in 0..d {
        l1.push_row(&[(i, -1.0)], a[i] + 1.0 / r);
        l1.push_row(&[(i, 1.0)], -b[i] + 1.0 / r);
    }
    let mut l2 = Affine::with_input(2 * d);
    let row: Vec<(usize, f64)> = (0..2 * d).map(|k| (k, -r)).collect();
    l2.push_row(&row, 1.0);
    let mut out = Affine::with_input(1);
    out.push_row(&[(0, 1.0)], 0.0);
    Network::new(vec![l1, l2, out]).unwrap()
}

/// Box indicator network, exactly `1` on `[a + 1/r, b - 1/r)` and exactly
/// `0` outside `[a, b)`. Requires `b_i - a_i >= 2/r`.
pub fn build_indicator(a: &[f64], b: &[f64], r: f64) -> Result<Primitive> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("sharpness must be positive, got {r}")));
    }
    for (i, (lo, hi)) in a.iter().zip(b).enumerate() {
        if hi - lo < 2.0 / r {
            return Err(Error::Precondition(format!(
                "side {i} has length {} < 2/R = {}",
                hi - lo,
                2.0 / r
            )));
        }
    }
    let net = indicator_net(a, b, r);
    Ok(Primitive::new(
        net,
        1.0,
        1.0,
        vec![(f64::NEG_INFINITY, f64::INFINITY); a.len()],
    ))
}

/// Gated test network on inputs `(x, a, b, s)` (length `3d + 1`): returns
/// `s` when `x` lies in `[a + 1/r, b - 1/r)` and `0` when `x` is outside
/// `[a, b)`, provided `|s| <= r`.
pub fn build_test(d: usize, r: f64) -> Primitive {
    let n_in = 3 * d + 1;
    let (xo, ao, bo, so) = (0, d, 2 * d, 3 * d);
    let mut l1 = Affine::with_input(n_in);
    for i in 0..d {
        l1.push_row(&[(ao + i, 1.0), (xo + i, -1.0)], 1.0 / r);
        l1.push_row(&[(xo + i, 1.0), (bo + i, -1.0)], 1.0 / r);
    }
    l1.push_row(&[(so, 1.0)], 0.0);
    l1.push_row(&[(so, -1.0)], 0.0);
    let band: Vec<(usize, f64)> = (0..2 * d).map(|k| (k, -r * r)).collect();
    let mut l2 = Affine::with_input(2 * d + 2);
    let mut pos = band.clone();
    pos.push((2 * d, 1.0));
    pos.push((2 * d + 1, -1.0));
    l2.push_row(&pos, 0.0);
    let mut neg = band;
    neg.push((2 * d, -1.0));
    neg.push((2 * d + 1, 1.0));
    l2.push_row(&neg, 0.0);
    let mut out = Affine::with_input(2);
    out.push_row(&[(0, 1.0), (1, -1.0)], 0.0);
    let net = Network::new(vec![l1, l2, out]).unwrap();
    let mut domain = vec![(f64::NEG_INFINITY, f64::INFINITY); 3 * d];
    domain.push((-r, r));
    Primitive::new(net, r, r, domain)
}

/// Approximate product of two inputs in `[-b, b]` with `r` hidden layers.
///
/// Uses `xy = b² (u² - v²)` with `u = (x + y) / 2b`, `v = (x - y) / 2b`,
/// and approximates `t²` on `[0, 1]` by subtracting `r` sawtooth terms
/// from `t`. Error is at most `b² 4^{-r} / 2`.
pub fn build_mult(r: usize, b: f64) -> Result<Primitive> {
    if r == 0 {
        return Err(Error::InvalidArgument("product network needs at least one layer".into()));
    }
    if !(b > 0.0) || !b.is_finite() {
        return Err(Error::InvalidArgument(format!("bound must be positive, got {b}")));
    }
    let net = mult_net(r, b);
    let err = b * b * 4f64.powi(-(r as i32)) / 2.0;
    Ok(Primitive::new(
        net,
        err,
        2.0 * b * b * 4f64.powi(-(r as i32)),
        vec![(-b, b); 2],
    ))
}

fn mult_net(r: usize, b: f64) -> Network {
    // Per variable w ∈ {u, v}, layer 1 holds relu(w), relu(-w),
    // relu(w - 1/2), relu(-w - 1/2); later layers hold relu(g),
    // relu(g - 1/2), relu(g - 1) of the previous tooth g and relu(acc) of
    // the running approximation acc of w².
    let s = 1.0 / (2.0 * b);
    let mut l1 = Affine::with_input(2);
    for sign in [1.0, -1.0] {
        // w = s x + sign * s y
        l1.push_row(&[(0, s), (1, sign * s)], 0.0);
        l1.push_row(&[(0, -s), (1, -sign * s)], 0.0);
        l1.push_row(&[(0, s), (1, sign * s)], -0.5);
        l1.push_row(&[(0, -s), (1, -sign * s)], -0.5);
    }
    // From layer 1, for block offset o: |w| = n0 + n1 and
    // g1 = 2|w| - 4 (n2 + n3); acc1 = |w| - g1/4.
    let g1 = |o: usize| vec![(o, 2.0), (o + 1, 2.0), (o + 2, -4.0), (o + 3, -4.0)];
    let acc1 = |o: usize| vec![(o, 0.5), (o + 1, 0.5), (o + 2, 1.0), (o + 3, 1.0)];
    // From a later layer, block offset o holds (relu g, relu(g-1/2),
    // relu(g-1), relu acc): g_next = 2 n0 - 4 n1 + 2 n2 and
    // acc_next = n3 - g_next / 4^s.
    let g_next = |o: usize| vec![(o, 2.0), (o + 1, -4.0), (o + 2, 2.0)];
    let acc_next = |o: usize, step: i32| {
        let q = 4f64.powi(-step);
        vec![(o, -2.0 * q), (o + 1, 4.0 * q), (o + 2, -2.0 * q), (o + 3, 1.0)]
    };
    let mut layers = vec![l1];
    for step in 2..=r {
        let mut a = Affine::with_input(8);
        for o in [0, 4] {
            let (g, acc) = if step == 2 {
                (g1(o), acc1(o))
            } else {
                (g_next(o), acc_next(o, step as i32 - 1))
            };
            a.push_row(&g, 0.0);
            a.push_row(&g, -0.5);
            a.push_row(&g, -1.0);
            a.push_row(&acc, 0.0);
        }
        layers.push(a);
    }
    let b2 = b * b;
    let mut out = Affine::with_input(8);
    let (u, v) = if r == 1 {
        (acc1(0), acc1(4))
    } else {
        (acc_next(0, r as i32), acc_next(4, r as i32))
    };
    let mut row: Vec<(usize, f64)> = u.into_iter().map(|(c, w)| (c, b2 * w)).collect();
    row.extend(v.into_iter().map(|(c, w)| (c, -b2 * w)));
    out.push_row(&row, 0.0);
    layers.push(out);
    Network::new(layers).unwrap()
}

/// Product of `d` inputs in `[-b, b]` via a balanced tree of two-input
/// products. Depth `r * ceil(log2 d)`.
pub fn build_mult_d(d: usize, r: usize, b: f64) -> Result<Primitive> {
    if d == 0 {
        return Err(Error::InvalidArgument("product of zero factors".into()));
    }
    if r == 0 || !(b > 0.0) {
        return Err(Error::InvalidArgument(format!("need r >= 1 and b > 0, got r = {r}, b = {b}")));
    }
    let (net, err) = product_tree(&vec![b; d], r);
    let class = 4f64.powi(4 * d as i32 + 1) * b.powi(4 * d as i32) * d as f64 * 4f64.powi(-(r as i32));
    let class = if d == 1 { 0.0 } else { class };
    Ok(Primitive::new(net, err, class, vec![(-b, b); d]))
}

/// Product tree over inputs with the given magnitude bounds. Returns the
/// network and its worst-case error.
fn product_tree(bounds: &[f64], r: usize) -> (Network, f64) {
    let d = bounds.len();
    // (bound on the exact value, bound on the error) per live slot.
    let mut slots: Vec<(f64, f64)> = bounds.iter().map(|&p| (p, 0.0)).collect();
    let mut net = Network::identity(d, 0);
    while slots.len() > 1 {
        let n = slots.len();
        let mut parts = Vec::with_capacity(n.div_ceil(2));
        let mut next = Vec::with_capacity(n.div_ceil(2));
        for k in 0..n / 2 {
            let ((p1, e1), (p2, e2)) = (slots[2 * k], slots[2 * k + 1]);
            let bb = (p1 + e1).max(p2 + e2);
            let mut sel = Affine::with_input(n);
            sel.push_row(&[(2 * k, 1.0)], 0.0);
            sel.push_row(&[(2 * k + 1, 1.0)], 0.0);
            parts.push(mult_net(r, bb).precompose_affine(&sel).unwrap());
            let e = bb * bb * 4f64.powi(-(r as i32)) / 2.0 + e1 * (p2 + e2) + p1 * e2;
            next.push((p1 * p2, e));
        }
        if n % 2 == 1 {
            let mut sel = Affine::with_input(n);
            sel.push_row(&[(n - 1, 1.0)], 0.0);
            parts.push(Network::identity(1, r).precompose_affine(&sel).unwrap());
            next.push(slots[n - 1]);
        }
        let refs: Vec<&Network> = parts.iter().collect();
        let level = Network::parallel(&refs).unwrap();
        net = Network::compose(&level, &net).unwrap();
        slots = next;
    }
    (net, slots[0].1)
}

/// Smallest `r` accepted by [`build_poly`] for degree `n` and input bound `a`:
/// `r >= log4(2 * 4^{2(n+1)} * a^{2(n+1)})`.
pub fn poly_min_layers(n: usize, a: f64) -> f64 {
    let k = 2.0 * (n + 1) as f64;
    (2f64.ln() + k * 4f64.ln() + k * a.ln()) / 4f64.ln()
}

/// Network for `(z, y) -> Σ_i coeffs[i] * y_i * z^{l_i}` over the
/// [`monomials`] `l_i` of degree `<= n` in `d` variables, with inputs in
/// `[-a, a]`. Rejects `r` below [`poly_min_layers`].
pub fn build_poly(n: usize, d: usize, coeffs: &[f64], r: usize, a: f64) -> Result<Primitive> {
    let need = poly_min_layers(n, a.max(1.0));
    if (r as f64) < need - 1e-9 {
        return Err(Error::Precondition(format!(
            "polynomial network needs r >= {need:.3}, got {r}"
        )));
    }
    build_poly_unchecked(n, d, coeffs, r, a)
}

/// [`build_poly`] without the lower bound on `r`; the returned error bound
/// is still valid.
pub fn build_poly_unchecked(n: usize, d: usize, coeffs: &[f64], r: usize, a: f64) -> Result<Primitive> {
    let mons = monomials(d, n);
    if coeffs.len() != mons.len() {
        return Err(Error::DimensionMismatch {
            expected: mons.len(),
            got: coeffs.len(),
        });
    }
    if r == 0 || !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("need r >= 1 and a > 0, got r = {r}, a = {a}")));
    }
    let a = a.max(1.0);
    // Degree 0 is promoted to degree 1 so every term is a product of at
    // least two factors.
    let factors = (n + 1).max(2);
    let n_in = d + mons.len();
    let (tree, tree_err) = product_tree(&vec![a; factors], r);
    let mut terms = Vec::new();
    let mut weights = Vec::new();
    for (i, (l, &c)) in mons.iter().zip(coeffs).enumerate() {
        if c == 0.0 && !(terms.is_empty() && i + 1 == mons.len()) {
            continue;
        }
        // Factor inputs: y_i, then z_k repeated l_k times, then constant 1.
        let mut sel = Affine::with_input(n_in);
        sel.push_row(&[(d + i, 1.0)], 0.0);
        for (k, &e) in l.iter().enumerate() {
            for _ in 0..e {
                sel.push_row(&[(k, 1.0)], 0.0);
            }
        }
        while sel.out_dim() < factors {
            sel.push_row(&[], 1.0);
        }
        terms.push(tree.precompose_affine(&sel)?);
        weights.push(c);
    }
    let refs: Vec<&Network> = terms.iter().collect();
    let net = Network::linear_combine(&refs, &weights, 0.0)?;
    let rbar = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let err: f64 = coeffs.iter().map(|c| c.abs()).sum::<f64>() * tree_err;
    let nn = (n + 1) as i32;
    let c16 = (mons.len() * (n + 1)) as f64 * 4f64.powi(4 * nn + 1);
    let class = c16 * rbar * a.powi(4 * nn) * 4f64.powi(-(r as i32));
    Ok(Primitive::new(net, err, class, vec![(-a, a); n_in]))
}
