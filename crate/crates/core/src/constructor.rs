//! Explicit approximating networks for a smooth target on a manifold.
//!
//! For each shifted grid the construction has four parts:
//! - [`build_fhat_p2`] computes the piecewise Taylor polynomial. It first
//!   recovers the fine-cube corner and derivatives, then evaluates the
//!   polynomial with product networks.
//! - [`build_fhat_check`] is 1 on a thin band around fine-cube faces and
//!   0 well inside the cubes.
//! - [`build_fhat_w`] computes the tent weight vanishing on fine-cube faces.
//! - [`build_fhat`] zeroes the Taylor part on the band, then multiplies it
//!   by the weight.
//!
//! [`build_fhat_net`] sums [`build_fhat`] over all `2^d` shifted grids,
//! whose weights form a partition of unity.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::manifold::{GridSpec, Manifold};
use crate::primitives::{
    binom, build_mult, build_mult_d, build_poly_unchecked, build_test, ceil_log2, indicator_net,
    poly_min_layers,
};
use crate::relu_net::{Affine, Network};
use crate::taylor::{multi_factorial, taylor_remainder_bound, SlotTables, SmoothTarget};

/// What to do when `M` is too small for a guarantee.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PreconditionPolicy {
    /// Refuse to build and report the smallest admissible `M`.
    Enforce,
    /// Build anyway and record the shortfall in the report.
    #[default]
    Relaxed,
}

/// One size condition on `M` (all constants set to 1).
#[derive(Clone, Debug, PartialEq)]
pub struct PreconditionCheck {
    pub name: &'static str,
    pub required: f64,
    pub actual: f64,
    pub satisfied: bool,
    /// Smallest `M` meeting the condition.
    pub min_m: u32,
}

/// A built network with its size, formulas and error bounds.
#[derive(Clone, Debug)]
pub struct ConstructionReport {
    pub kind: &'static str,
    pub net: Network,
    pub m: u32,
    /// Grid shift, or `None` for the sum over all shifts.
    pub shift: Option<Vec<f64>>,
    pub depth: usize,
    pub width: usize,
    pub formula_depth: usize,
    pub formula_width: usize,
    /// Error bound where all gates are exact (points at least `2/B_M`
    /// from every fine-cube face).
    pub safe_region_error_bound: f64,
    /// Bound on `|output|` over the manifold.
    pub global_bound: f64,
    /// Error bound over the whole manifold, for the final networks.
    pub manifold_error_bound: Option<f64>,
    pub preconditions: Vec<PreconditionCheck>,
}

impl ConstructionReport {
    /// Network text format preceded by `# key = value` header lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# kind = {}", self.kind);
        let _ = writeln!(s, "# M = {}", self.m);
        if let Some(sh) = &self.shift {
            let _ = writeln!(s, "# shift = {sh:?}");
        }
        let _ = writeln!(s, "# depth = {} (formula {})", self.depth, self.formula_depth);
        let _ = writeln!(s, "# width = {} (formula {})", self.width, self.formula_width);
        let _ = writeln!(s, "# safe_region_error_bound = {:e}", self.safe_region_error_bound);
        let _ = writeln!(s, "# global_bound = {:e}", self.global_bound);
        if let Some(e) = self.manifold_error_bound {
            let _ = writeln!(s, "# manifold_error_bound = {e:e}");
        }
        for p in &self.preconditions {
            let _ = writeln!(
                s,
                "# precondition {} : required {:e}, actual {:e}, satisfied = {}, min_M = {}",
                p.name, p.required, p.actual, p.satisfied, p.min_m
            );
        }
        self.net.write_text(&mut s);
        s
    }
}

/// Fixed quantities shared by the component builders.
struct Setup<'a> {
    t: &'a SmoothTarget,
    tables: SlotTables,
    d: usize,
    q: usize,
    p: f64,
    m: u32,
    /// Number of polynomial coefficients, `binom(d + q, d)`.
    nb: usize,
    cap: usize,
    a: f64,
    /// Sharpness of indicators and gates, `M^{2p+2}`.
    big_r: f64,
    /// Layers per product, `ceil(log4 M^{2p})`.
    layers: usize,
    policy: PreconditionPolicy,
}

impl<'a> Setup<'a> {
    fn new(t: &'a SmoothTarget, man: &Manifold, grid: &GridSpec, policy: PreconditionPolicy) -> Result<Self> {
        if grid.m < 2 {
            return Err(Error::InvalidArgument("M must be at least 2".into()));
        }
        let tables = SlotTables::new(t, man, grid)?;
        let (d, q, p, m) = (t.dim, t.smooth.q, t.smooth.p, grid.m);
        Ok(Setup {
            t,
            d,
            q,
            p,
            m,
            nb: binom(d + q, d),
            cap: tables.capacity(),
            a: man.bound_a(),
            big_r: (m as f64).powf(2.0 * p + 2.0),
            layers: product_layers(m, p),
            tables,
            policy,
        })
    }

    fn grid(&self) -> &GridSpec {
        self.tables.grid()
    }

    fn m2p(&self) -> f64 {
        (self.m as f64).powf(2.0 * self.p)
    }

    /// `max{3a, ||f||_{C^q}}`, the input bound of the polynomial network.
    fn poly_bound(&self) -> f64 {
        (3.0 * self.a).max(self.t.cq_norm)
    }

    /// `2 e^{4ad} max{||f||_{C^q}, 1}`.
    fn b_true(&self) -> f64 {
        2.0 * (4.0 * self.a * self.d as f64).exp() * self.t.cq_norm.max(1.0)
    }

    /// Condition `M^{2p} >= rhs`.
    fn m2p_at_least(&self, name: &'static str, rhs: f64) -> PreconditionCheck {
        let min_m = rhs.max(1.0).powf(1.0 / (2.0 * self.p)).ceil().max(2.0);
        // Guard against the root landing just below an integer.
        let min_m = if (min_m - 1.0).powf(2.0 * self.p) >= rhs { min_m - 1.0 } else { min_m } as u32;
        PreconditionCheck {
            name,
            required: rhs,
            actual: self.m2p(),
            satisfied: self.m2p() >= rhs,
            min_m,
        }
    }

    fn taylor_checks(&self) -> Vec<PreconditionCheck> {
        let ab = self.poly_bound();
        let mut v = vec![self.m2p_at_least("polynomial accuracy", ab.powi(4 * (self.q as i32 + 1)))];
        let need = poly_min_layers(self.q, ab);
        // Smallest M with ceil(log4 M^{2p}) >= need.
        let mut mm = 2u32;
        while (product_layers(mm, self.p) as f64) < need - 1e-9 {
            mm += 1;
        }
        v.push(PreconditionCheck {
            name: "polynomial depth",
            required: need,
            actual: self.layers as f64,
            satisfied: self.layers as f64 >= need - 1e-9,
            min_m: mm,
        });
        v
    }

    fn weight_checks(&self) -> Vec<PreconditionCheck> {
        let d = self.d as f64;
        vec![self.m2p_at_least("weight accuracy", 4f64.powf(4.0 * d + 1.0) * d)]
    }

    fn final_checks(&self) -> Vec<PreconditionCheck> {
        let mut v = self.taylor_checks();
        v.extend(self.weight_checks());
        let rhs = (2.0 * self.a * self.d as f64).powf(2.0 * self.p) * self.t.smooth.holder_c;
        v.push(self.m2p_at_least("taylor accuracy", rhs));
        v
    }

    /// Under `Enforce`, fails with the smallest `M` meeting every check.
    fn enforce(&self, checks: &[PreconditionCheck]) -> Result<()> {
        if self.policy == PreconditionPolicy::Enforce {
            if let Some(c) = checks.iter().filter(|c| !c.satisfied).max_by_key(|c| c.min_m) {
                return Err(Error::PreconditionM {
                    m: self.m,
                    required: c.min_m,
                    what: c.name.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Stage 1 (two hidden layers). Output: `x`, then per slot `j` the
    /// corner (d values), the side (1 value) and, with `derivs`, the
    /// derivative values (`nb` values). Unused slots read zero.
    fn slot_block(&self, derivs: bool) -> Result<(Network, SlotLayout)> {
        let d = self.d;
        let grid = self.grid();
        let side = grid.coarse_side();
        let fine = grid.fine_side();
        let cover = &self.tables.cover;
        let mut parts = vec![Network::identity(d, 2)];
        for c in &cover.coarse {
            let lo = grid.coarse_corner(&c.index);
            let hi: Vec<f64> = lo.iter().map(|v| v + side).collect();
            parts.push(indicator_net(&lo, &hi, self.big_r));
        }
        let refs: Vec<&Network> = parts.iter().collect();
        let par = Network::parallel(&refs)?;
        let layout = SlotLayout {
            d,
            nb: if derivs { self.nb } else { 0 },
        };
        let mut head = Affine::with_input(d + cover.coarse.len());
        for k in 0..d {
            head.push_row(&[(k, 1.0)], 0.0);
        }
        let mut row = Vec::new();
        for j in 0..self.cap {
            for k in 0..d {
                row.clear();
                for (i, c) in self.tables.corners.iter().enumerate() {
                    if let Some(cj) = c.get(j) {
                        row.push((d + i, cj[k]));
                    }
                }
                head.push_row(&row, 0.0);
            }
            row.clear();
            for (i, c) in self.tables.corners.iter().enumerate() {
                if j < c.len() {
                    row.push((d + i, fine));
                }
            }
            head.push_row(&row, 0.0);
            if derivs {
                for l in 0..self.nb {
                    row.clear();
                    for (i, dv) in self.tables.derivs.iter().enumerate() {
                        if let Some(v) = dv.get(j) {
                            row.push((d + i, v[l]));
                        }
                    }
                    head.push_row(&row, 0.0);
                }
            }
        }
        Ok((par.then_affine(&head)?, layout))
    }

    /// Stage 2 (two hidden layers) on top of the stage-1 output. For each
    /// channel and slot a gate passes the channel value when `x` lies in
    /// the slot's fine cube; the output is `x` followed by the per-channel
    /// sums over slots.
    fn gate_block(&self, layout: &SlotLayout, channels: &[Channel]) -> Result<Network> {
        let d = self.d;
        let n_in = layout.len(self.cap);
        let test = build_test(d, self.big_r).net;
        let mut sel_x = Affine::with_input(n_in);
        for k in 0..d {
            sel_x.push_row(&[(k, 1.0)], 0.0);
        }
        let mut parts = vec![Network::identity(d, 2).precompose_affine(&sel_x)?];
        for j in 0..self.cap {
            let corner = layout.corner(j);
            let sidx = layout.side(j);
            for ch in channels {
                let mut sel = sel_x.clone();
                for k in 0..d {
                    sel.push_row(&[(corner + k, 1.0)], 0.0);
                }
                for k in 0..d {
                    sel.push_row(&[(corner + k, 1.0), (sidx, 1.0)], 0.0);
                }
                match *ch {
                    Channel::Corner(k) => sel.push_row(&[(corner + k, 1.0)], 0.0),
                    Channel::Deriv(l) => sel.push_row(&[(layout.deriv(j) + l, 1.0)], 0.0),
                }
                parts.push(test.precompose_affine(&sel)?);
            }
        }
        let refs: Vec<&Network> = parts.iter().collect();
        let par = Network::parallel(&refs)?;
        let nc = channels.len();
        let mut head = Affine::with_input(d + self.cap * nc);
        for k in 0..d {
            head.push_row(&[(k, 1.0)], 0.0);
        }
        for c in 0..nc {
            let row: Vec<(usize, f64)> = (0..self.cap).map(|j| (d + j * nc + c, 1.0)).collect();
            head.push_row(&row, 0.0);
        }
        par.then_affine(&head)
    }
}

/// Index arithmetic for the stage-1 output vector.
struct SlotLayout {
    d: usize,
    nb: usize,
}

impl SlotLayout {
    fn stride(&self) -> usize {
        self.d + 1 + self.nb
    }
    fn len(&self, cap: usize) -> usize {
        self.d + cap * self.stride()
    }
    fn corner(&self, j: usize) -> usize {
        self.d + j * self.stride()
    }
    fn side(&self, j: usize) -> usize {
        self.corner(j) + self.d
    }
    fn deriv(&self, j: usize) -> usize {
        self.side(j) + 1
    }
}

#[derive(Clone, Copy)]
enum Channel {
    Corner(usize),
    Deriv(usize),
}

/// `ceil(log4 M^{2p})`, the number of layers per product network.
pub fn product_layers(m: u32, p: f64) -> usize {
    let v = 2.0 * p * (m as f64).ln() / 4f64.ln();
    ((v - 1e-9).ceil() as usize).max(1)
}

struct P2Parts {
    net: Network,
    /// Error bound of the polynomial network alone.
    poly_err: f64,
}

fn fhat_p2(s: &Setup) -> Result<P2Parts> {
    let (d, nb) = (s.d, s.nb);
    let (block1, layout) = s.slot_block(true)?;
    let mut channels: Vec<Channel> = (0..d).map(Channel::Corner).collect();
    channels.extend((0..nb).map(Channel::Deriv));
    let block2 = s.gate_block(&layout, &channels)?;
    let coeffs: Vec<f64> = s.tables.monomials.iter().map(|l| 1.0 / multi_factorial(l)).collect();
    let poly = build_poly_unchecked(s.q, d, &coeffs, s.layers, s.poly_bound())?;
    // Stage-2 output is (x, corner, derivatives); the polynomial network
    // takes (x - corner, derivatives).
    let mut sel = Affine::with_input(2 * d + nb);
    for k in 0..d {
        sel.push_row(&[(k, 1.0), (d + k, -1.0)], 0.0);
    }
    for l in 0..nb {
        sel.push_row(&[(2 * d + l, 1.0)], 0.0);
    }
    let poly_net = poly.net.precompose_affine(&sel)?;
    let net = Network::compose(&poly_net, &Network::compose(&block2, &block1)?)?;
    Ok(P2Parts {
        net,
        poly_err: poly.contract.sup_error_bound,
    })
}

fn p2_formulas(s: &Setup) -> (usize, usize) {
    let depth = 4 + s.layers * ceil_log2((s.q + 1).max(2));
    let width = ((s.nb + s.d) * s.cap * 2 * (2 + 2 * s.d) + 2 * s.d).max(18 * (s.q + 1) * s.nb);
    (depth, width)
}

/// Network computing the piecewise Taylor polynomial of `t` on the fine
/// grid, exact up to product-network error away from cube faces.
pub fn build_fhat_p2(
    t: &SmoothTarget,
    man: &Manifold,
    grid: &GridSpec,
    policy: PreconditionPolicy,
) -> Result<ConstructionReport> {
    let s = Setup::new(t, man, grid, policy)?;
    let checks = s.taylor_checks();
    s.enforce(&checks)?;
    let parts = fhat_p2(&s)?;
    let (fd, fw) = p2_formulas(&s);
    let safe = taylor_remainder_bound(t, s.m) + parts.poly_err;
    Ok(report("taylor", parts.net, &s, (fd, fw), safe, s.b_true(), None, checks))
}

fn fhat_check(s: &Setup) -> Result<Network> {
    let d = s.d;
    let grid = s.grid();
    let delta = 1.0 / s.big_r;
    let side = grid.coarse_side();
    // Part 1: 1 on the band around coarse-cube faces.
    let mut inds = Vec::new();
    for c in &s.tables.cover.coarse {
        let lo: Vec<f64> = grid.coarse_corner(&c.index).iter().map(|v| v + delta).collect();
        let hi: Vec<f64> = lo.iter().map(|v| v + side - 2.0 * delta).collect();
        inds.push(indicator_net(&lo, &hi, s.big_r));
    }
    let refs: Vec<&Network> = inds.iter().collect();
    let ones = vec![-1.0; inds.len()];
    let f1 = Network::linear_combine(&refs, &ones, 1.0)?.pad_depth(4)?;
    // Part 2: 1 on the band around fine-cube faces, given exact corners.
    let (block1, layout) = s.slot_block(false)?;
    let test = build_test(d, s.big_r).net;
    let n_in = layout.len(s.cap);
    let mut gates = Vec::with_capacity(s.cap);
    for j in 0..s.cap {
        let (corner, sidx) = (layout.corner(j), layout.side(j));
        let mut sel = Affine::with_input(n_in);
        for k in 0..d {
            sel.push_row(&[(k, 1.0)], 0.0);
        }
        for k in 0..d {
            sel.push_row(&[(corner + k, 1.0)], delta);
        }
        for k in 0..d {
            sel.push_row(&[(corner + k, 1.0), (sidx, 1.0)], -delta);
        }
        sel.push_row(&[], 1.0);
        gates.push(test.precompose_affine(&sel)?);
    }
    let refs: Vec<&Network> = gates.iter().collect();
    let ones = vec![-1.0; gates.len()];
    let f2 = Network::compose(&Network::linear_combine(&refs, &ones, 1.0)?, &block1)?;
    // check = 1 - relu(1 - f2 - f1)
    let both = Network::parallel(&[&f1, &f2])?;
    let mut last = Affine::with_input(2);
    last.push_row(&[(0, -1.0), (1, -1.0)], 1.0);
    let mut out = Affine::with_input(1);
    out.push_row(&[(0, -1.0)], 1.0);
    let gate = Network::new(vec![last, out])?;
    Network::compose(&gate, &both)
}

/// Network equal to 1 within `1/M^{2p+2}` of a fine-cube face and 0 at
/// least `2/M^{2p+2}` inside, for points of the manifold.
pub fn build_fhat_check(
    t: &SmoothTarget,
    man: &Manifold,
    grid: &GridSpec,
    policy: PreconditionPolicy,
) -> Result<ConstructionReport> {
    let s = Setup::new(t, man, grid, policy)?;
    let net = fhat_check(&s)?;
    let width = 2 * s.d + (4 * s.d * s.d + 4 * s.d) * s.cap;
    Ok(report("check", net, &s, (5, width), 0.0, 1.0, None, Vec::new()))
}

struct WParts {
    net: Network,
    err: f64,
}

fn fhat_w(s: &Setup) -> Result<WParts> {
    let d = s.d;
    let (block1, layout) = s.slot_block(false)?;
    let channels: Vec<Channel> = (0..d).map(Channel::Corner).collect();
    let block2 = s.gate_block(&layout, &channels)?;
    // Tent in each coordinate: relu(u) - 2 relu(u - 1) + relu(u - 2) with
    // u = 2M² (x - corner).
    let c = 2.0 * (s.m as f64).powi(2);
    let mut l = Affine::with_input(2 * d);
    for k in 0..d {
        for shift in [0.0, -1.0, -2.0] {
            l.push_row(&[(k, c), (d + k, -c)], shift);
        }
    }
    let mut out = Affine::with_input(3 * d);
    for k in 0..d {
        out.push_row(&[(3 * k, 1.0), (3 * k + 1, -2.0), (3 * k + 2, 1.0)], 0.0);
    }
    let tents = Network::new(vec![l, out])?;
    let prod = build_mult_d(d, s.layers, 1.0)?;
    let net = Network::compose(
        &prod.net,
        &Network::compose(&tents, &Network::compose(&block2, &block1)?)?,
    )?;
    Ok(WParts {
        net,
        err: prod.contract.sup_error_bound,
    })
}

/// Network for the tent weight `Π_j (1 - 2M² |x_j - c_j - 1/(2M²)|)_+`
/// with `c` the corner of the fine cube containing `x`.
pub fn build_fhat_w(
    t: &SmoothTarget,
    man: &Manifold,
    grid: &GridSpec,
    policy: PreconditionPolicy,
) -> Result<ConstructionReport> {
    let s = Setup::new(t, man, grid, policy)?;
    let checks = s.weight_checks();
    s.enforce(&checks)?;
    let parts = fhat_w(&s)?;
    let d = s.d;
    let depth = 5 + s.layers * ceil_log2(d);
    let width = (18 * d).max(2 * d + d * s.cap * 2 * (2 + 2 * d)).max(3 * d);
    Ok(report("weight", parts.net, &s, (depth, width), parts.err, 1.0 + parts.err, None, checks))
}

fn gated_p2(s: &Setup, p2: &Network, check: &Network) -> Result<Network> {
    let depth = p2.depth().max(check.depth());
    let both = Network::parallel(&[&p2.pad_depth(depth)?, &check.pad_depth(depth)?])?;
    let bt = s.b_true();
    let mut l = Affine::with_input(2);
    l.push_row(&[(0, 1.0), (1, -bt)], 0.0);
    l.push_row(&[(0, -1.0), (1, -bt)], 0.0);
    let mut out = Affine::with_input(2);
    out.push_row(&[(0, 1.0), (1, -1.0)], 0.0);
    Network::compose(&Network::new(vec![l, out])?, &both)
}

/// Taylor network with its output forced to 0 where the check network
/// is 1.
pub fn build_fhat_p2_true(
    t: &SmoothTarget,
    man: &Manifold,
    grid: &GridSpec,
    policy: PreconditionPolicy,
) -> Result<ConstructionReport> {
    let s = Setup::new(t, man, grid, policy)?;
    let checks = s.taylor_checks();
    s.enforce(&checks)?;
    let p2 = fhat_p2(&s)?;
    let check = fhat_check(&s)?;
    let net = gated_p2(&s, &p2.net, &check)?;
    let depth = 5 + (s.layers * ceil_log2((s.q + 1).max(2))).max(1);
    let width = p2_formulas(&s).1 + 2 * s.d + (4 * s.d * s.d + 4 * s.d) * s.cap;
    let safe = taylor_remainder_bound(t, s.m) + p2.poly_err;
    Ok(report("gated taylor", net, &s, (depth, width), safe, s.b_true(), None, checks))
}

fn fhat_formulas(s: &Setup) -> (usize, usize) {
    let (d, q) = (s.d, s.q);
    let depth = 5 + s.layers * (ceil_log2(q.max(d) + 1) + 1);
    let width = 64 * s.nb * d * d * (q + 1) * s.cap;
    (depth, width)
}

struct FhatBounds {
    safe: f64,
    manifold: f64,
    magnitude: f64,
}

/// Error bounds for one shifted grid, following the three regions: safe
/// interior, the ring between `1/B_M` and `2/B_M` from a face, and the
/// band within `1/B_M` of a face.
fn fhat_bounds(s: &Setup, poly_err: f64, w_err: f64) -> FhatBounds {
    let f = s.t.sup_norm;
    let e_p2 = taylor_remainder_bound(s.t, s.m) + poly_err;
    let bm = 2.0 * s.t.cq_norm.max(1.0);
    let e_m = bm * bm * 4f64.powi(-(s.layers as i32)) / 2.0;
    let inv = 1.0 / s.m2p();
    if 1.0 + w_err > bm || f + e_p2 > bm {
        return FhatBounds {
            safe: f64::INFINITY,
            manifold: f64::INFINITY,
            magnitude: f64::INFINITY,
        };
    }
    let safe = e_m + (1.0 + w_err) * e_p2 + w_err * f;
    let ring = e_m + w_err * (f + e_p2) + 4.0 * inv * (2.0 * f + e_p2);
    let band = e_m + 2.0 * f * inv;
    FhatBounds {
        safe,
        manifold: safe.max(ring).max(band),
        magnitude: (1.0 + w_err) * (f + e_p2) + e_m,
    }
}

struct FhatParts {
    net: Network,
    bounds: FhatBounds,
}

fn fhat(s: &Setup) -> Result<FhatParts> {
    let p2 = fhat_p2(s)?;
    let check = fhat_check(s)?;
    let gated = gated_p2(s, &p2.net, &check)?;
    let w = fhat_w(s)?;
    let sync = 5 + s.layers * ceil_log2(s.q.max(s.d) + 1);
    let both = Network::parallel(&[&w.net.pad_depth(sync)?, &gated.pad_depth(sync)?])?;
    let mult = build_mult(s.layers, 2.0 * s.t.cq_norm.max(1.0))?;
    let net = Network::compose(&mult.net, &both)?;
    Ok(FhatParts {
        net,
        bounds: fhat_bounds(s, p2.poly_err, w.err),
    })
}

/// Network approximating `w(x) f(x)` on the manifold for one shifted grid.
pub fn build_fhat(
    t: &SmoothTarget,
    man: &Manifold,
    grid: &GridSpec,
    policy: PreconditionPolicy,
) -> Result<ConstructionReport> {
    let s = Setup::new(t, man, grid, policy)?;
    let checks = s.final_checks();
    s.enforce(&checks)?;
    let parts = fhat(&s)?;
    let b = &parts.bounds;
    Ok(report(
        "weighted taylor",
        parts.net,
        &s,
        fhat_formulas(&s),
        b.safe,
        b.magnitude,
        Some(b.manifold),
        checks,
    ))
}

/// Sum of [`build_fhat`] over the `2^d` shifted grids; approximates `f`
/// on the manifold.
pub fn build_fhat_net(
    t: &SmoothTarget,
    man: &Manifold,
    m: u32,
    policy: PreconditionPolicy,
) -> Result<ConstructionReport> {
    let d = t.dim;
    let mut nets = Vec::with_capacity(1 << d);
    let mut err = 0.0;
    let mut magnitude = 0.0;
    let mut first: Option<Setup> = None;
    let mut checks = Vec::new();
    for grid in GridSpec::all_shifts(m, d) {
        let s = Setup::new(t, man, &grid, policy)?;
        if first.is_none() {
            checks = s.final_checks();
            s.enforce(&checks)?;
        }
        let parts = fhat(&s)?;
        err += parts.bounds.manifold;
        magnitude += parts.bounds.magnitude;
        nets.push(parts.net);
        first.get_or_insert(s);
    }
    let refs: Vec<&Network> = nets.iter().collect();
    let net = Network::linear_combine(&refs, &vec![1.0; nets.len()], 0.0)?;
    let s = first.unwrap();
    let (depth, width) = fhat_formulas(&s);
    let mut r = report(
        "approximation",
        net,
        &s,
        (depth, width << d),
        err,
        magnitude,
        Some(err),
        checks,
    );
    r.shift = None;
    Ok(r)
}

#[allow(clippy::too_many_arguments)]
fn report(
    kind: &'static str,
    net: Network,
    s: &Setup,
    formulas: (usize, usize),
    safe: f64,
    global: f64,
    manifold: Option<f64>,
    preconditions: Vec<PreconditionCheck>,
) -> ConstructionReport {
    ConstructionReport {
        kind,
        depth: net.depth(),
        width: net.width(),
        net,
        m: s.m,
        shift: Some(s.grid().shift.clone()),
        formula_depth: formulas.0,
        formula_width: formulas.1,
        safe_region_error_bound: safe,
        global_bound: global,
        manifold_error_bound: manifold,
        preconditions,
    }
}

/// Tent weight of the fine cube containing `x`:
/// `Π_j (1 - 2M² |c_j + 1/(2M²) - x_j|)_+`.
pub fn weight(grid: &GridSpec, x: &[f64]) -> f64 {
    let c = grid.fine_corner(&grid.locate_fine(x));
    let m2 = (grid.m as f64).powi(2);
    x.iter()
        .zip(&c)
        .map(|(xi, ci)| (1.0 - 2.0 * m2 * (ci + 0.5 / m2 - xi).abs()).max(0.0))
        .product()
}

/// Distance from `x` to the nearest face of its fine cube, in the
/// maximum over coordinates of the per-coordinate distance.
pub fn face_distance(grid: &GridSpec, x: &[f64]) -> f64 {
    let c = grid.fine_corner(&grid.locate_fine(x));
    let h = grid.fine_side();
    x.iter()
        .zip(&c)
        .map(|(xi, ci)| (xi - ci).min(ci + h - xi))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taylor::piecewise_taylor;
    use rand::{rngs::StdRng, Rng, SeedableRng};
    use std::f64::consts::PI;

    fn sine(d: usize) -> SmoothTarget {
        let om = [0.9, -0.6, 0.5, 0.3];
        SmoothTarget::ridge_sine(&om[..d], 0.3, 2.0).unwrap()
    }

    fn line2() -> Manifold {
        Manifold::affine_slice(1, &[0.3]).unwrap()
    }

    #[test]
    fn product_layers_are_exact_for_powers_of_two() {
        assert_eq!(product_layers(2, 2.0), 2);
        assert_eq!(product_layers(4, 2.0), 4);
        assert_eq!(product_layers(8, 2.0), 6);
        assert_eq!(product_layers(3, 1.0), 2);
    }

    #[test]
    fn weights_sum_to_one() {
        let mut rng = StdRng::seed_from_u64(1);
        for d in 1..=3 {
            for _ in 0..200 {
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let s: f64 = GridSpec::all_shifts(4, d).iter().map(|g| weight(g, &x)).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn taylor_network_matches_piecewise_taylor() {
        let t = sine(2);
        let man = line2();
        let grid = GridSpec::shifted(4, 2, 1);
        let r = build_fhat_p2(&t, &man, &grid, PreconditionPolicy::Relaxed).unwrap();
        assert_eq!(r.depth, r.formula_depth);
        assert!(r.width <= r.formula_width);
        let mut rng = StdRng::seed_from_u64(2);
        let mut tested = 0;
        for x in man.sample(500, &mut rng) {
            if face_distance(&grid, &x) < 2.0 / 4f64.powi(6) {
                continue;
            }
            tested += 1;
            let got = r.net.eval1(&x).unwrap();
            let want = piecewise_taylor(&t, &grid, &x);
            assert!((got - want).abs() <= r.safe_region_error_bound - taylor_remainder_bound(&t, 4) + 1e-12);
            assert!((got - t.value(&x)).abs() <= r.safe_region_error_bound);
        }
        assert!(tested > 400);
    }

    #[test]
    fn enforce_reports_minimum_m() {
        let t = sine(2);
        let err = build_fhat_p2(&t, &line2(), &GridSpec::unshifted(2, 2), PreconditionPolicy::Enforce).unwrap_err();
        match err {
            Error::PreconditionM { m, required, .. } => {
                assert_eq!(m, 2);
                // max{3a, ||f||} = 3, q = 1: accuracy M^4 >= 3^8 needs M >= 9,
                // depth ceil(log4 M^4) >= log4(2 * 4^4 * 3^4) = 7.67 needs M >= 12.
                assert_eq!(required, 12);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn check_network_marks_bands() {
        let t = sine(2);
        // The slice passes through fine-cube centres.
        let v = 5.5 / 16.0;
        let man = Manifold::affine_slice(1, &[v]).unwrap();
        let grid = GridSpec::unshifted(4, 2);
        let r = build_fhat_check(&t, &man, &grid, PreconditionPolicy::Relaxed).unwrap();
        assert_eq!(r.depth, 5);
        assert!(r.width <= r.formula_width);
        let delta = 1.0 / 4f64.powi(6);
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..300 {
            let k = rng.gen_range(0..16) as f64;
            // Inside the band next to a face.
            let x = [k / 16.0 + rng.gen::<f64>() * delta * 0.999, v];
            assert_eq!(r.net.eval1(&x).unwrap(), 1.0, "{x:?}");
            // At the centre of a fine cube.
            let c = [k / 16.0 + 1.0 / 32.0, v];
            assert_eq!(r.net.eval1(&c).unwrap(), 0.0);
        }
    }

    #[test]
    fn weight_network_is_accurate() {
        let t = sine(2);
        let man = Manifold::affine_slice(1, &[0.41]).unwrap();
        let grid = GridSpec::shifted(4, 2, 2);
        let r = build_fhat_w(&t, &man, &grid, PreconditionPolicy::Relaxed).unwrap();
        assert_eq!(r.depth, r.formula_depth);
        let mut rng = StdRng::seed_from_u64(4);
        for x in man.sample(300, &mut rng) {
            if face_distance(&grid, &x) < 1.0 / 4f64.powi(6) {
                continue;
            }
            let got = r.net.eval1(&x).unwrap();
            assert!((got - weight(&grid, &x)).abs() <= r.safe_region_error_bound + 1e-12);
        }
    }

    #[test]
    fn gated_taylor_vanishes_on_band() {
        let t = sine(2);
        let v = 5.5 / 16.0;
        let man = Manifold::affine_slice(1, &[v]).unwrap();
        let grid = GridSpec::unshifted(4, 2);
        let r = build_fhat_p2_true(&t, &man, &grid, PreconditionPolicy::Relaxed).unwrap();
        assert_eq!(r.depth, r.formula_depth);
        let delta = 1.0 / 4f64.powi(6);
        for k in 0..16 {
            let x = [k as f64 / 16.0 + 0.5 * delta, v];
            assert!(r.net.eval1(&x).unwrap().abs() < 1e-9);
        }
    }

    #[test]
    fn final_network_sizes_and_error() {
        let t = sine(2);
        let man = Manifold::affine_slice(1, &[0.3]).unwrap();
        let r = build_fhat_net(&t, &man, 4, PreconditionPolicy::Relaxed).unwrap();
        assert_eq!(r.depth, r.formula_depth);
        assert!(r.width <= r.formula_width);
        let mut rng = StdRng::seed_from_u64(5);
        let mut worst: f64 = 0.0;
        for x in man.sample(2000, &mut rng) {
            worst = worst.max((r.net.eval1(&x).unwrap() - t.value(&x)).abs());
        }
        assert!(worst <= r.manifold_error_bound.unwrap(), "{worst}");
        eprintln!("worst {worst} bound {:?}", r.manifold_error_bound);
    }

    #[test]
    fn single_shift_error_bound_on_curve() {
        let t = sine(3);
        let man = Manifold::helix(&[0.0; 3], 0.4, PI, 0.5).unwrap();
        let grid = GridSpec::shifted(2, 3, 6);
        let r = build_fhat(&t, &man, &grid, PreconditionPolicy::Relaxed).unwrap();
        assert_eq!(r.depth, r.formula_depth);
        assert!(r.width <= r.formula_width);
        let mut rng = StdRng::seed_from_u64(6);
        for x in man.sample(500, &mut rng) {
            let e = (r.net.eval1(&x).unwrap() - weight(&grid, &x) * t.value(&x)).abs();
            assert!(e <= r.manifold_error_bound.unwrap());
        }
    }
}
