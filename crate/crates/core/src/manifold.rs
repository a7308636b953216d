//! Lipschitz manifolds given by finitely many charts on `[0, 1]^{d*}`,
//! the coarse/fine cube partitions of `R^d`, and enumeration of the cubes
//! a manifold meets.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

type ChartFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// One chart `ψ: [0, 1]^{d*} -> R^d`.
#[derive(Clone)]
pub struct Chart {
    map: ChartFn,
    /// Per-coordinate Lipschitz constants of `ψ` (w.r.t. the Euclidean
    /// norm on the parameter side). Used to certify cube membership.
    coord_lip: Vec<f64>,
    param_dim: usize,
}

impl Chart {
    pub fn new(
        param_dim: usize,
        coord_lip: Vec<f64>,
        map: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Chart {
            map: Arc::new(map),
            coord_lip,
            param_dim,
        }
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn ambient_dim(&self) -> usize {
        self.coord_lip.len()
    }

    pub fn eval_into(&self, t: &[f64], out: &mut [f64]) {
        (self.map)(t, out)
    }

    pub fn eval(&self, t: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ambient_dim()];
        self.eval_into(t, &mut out);
        out
    }
}

impl std::fmt::Debug for Chart {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Chart")
            .field("param_dim", &self.param_dim)
            .field("coord_lip", &self.coord_lip)
            .finish()
    }
}

/// A `d*`-dimensional manifold in `R^d` covered by `r` bi-Lipschitz charts
/// with constants `lip_lower <= |ψ(t) - ψ(t')| / |t - t'| <= lip_upper`.
#[derive(Clone, Debug)]
pub struct Manifold {
    pub name: String,
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    pub lip_lower: f64,
    pub lip_upper: f64,
    /// Upper bound on the Euclidean norm of points of the manifold.
    pub norm_bound: f64,
    /// Upper bound on the maximum norm of points of the manifold.
    pub box_bound: f64,
    charts: Vec<Chart>,
}

impl Manifold {
    pub fn new(
        name: impl Into<String>,
        charts: Vec<Chart>,
        lip_lower: f64,
        lip_upper: f64,
        norm_bound: f64,
        box_bound: f64,
    ) -> Result<Self> {
        let first = charts
            .first()
            .ok_or_else(|| Error::InvalidArgument("manifold needs at least one chart".into()))?;
        let (d, ds) = (first.ambient_dim(), first.param_dim());
        if charts.iter().any(|c| c.ambient_dim() != d || c.param_dim() != ds) {
            return Err(Error::InvalidArgument("charts disagree on dimensions".into()));
        }
        if ds == 0 || ds > d {
            return Err(Error::InvalidArgument(format!("need 1 <= d* <= d, got d* = {ds}, d = {d}")));
        }
        if !(lip_lower > 0.0 && lip_lower <= lip_upper) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < lower <= upper Lipschitz constant, got {lip_lower}, {lip_upper}"
            )));
        }
        Ok(Manifold {
            name: name.into(),
            ambient_dim: d,
            intrinsic_dim: ds,
            lip_lower,
            lip_upper,
            norm_bound,
            box_bound,
            charts,
        })
    }

    /// `[0, 1]^{d*} x {v}` in `R^d`; `v` has `d - d*` entries.
    pub fn affine_slice(d_star: usize, v: &[f64]) -> Result<Self> {
        let d = d_star + v.len();
        let v = v.to_vec();
        let mut lip = vec![1.0; d_star];
        lip.extend(vec![0.0; v.len()]);
        let norm = ((d_star as f64) + v.iter().map(|x| x * x).sum::<f64>()).sqrt();
        let vv = v.clone();
        let chart = Chart::new(d_star, lip, move |t, out| {
            out[..d_star].copy_from_slice(t);
            out[d_star..].copy_from_slice(&vv);
        });
        let boxb = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        Manifold::new(format!("affine{d_star}in{d}"), vec![chart], 1.0, 1.0, norm, boxb)
    }

    /// Circle of radius `radius` around `center` in the plane of the first
    /// two coordinates, covered by `n_charts >= 2` overlapping arcs.
    pub fn circle(center: &[f64], radius: f64, n_charts: usize) -> Result<Self> {
        let d = center.len();
        if d < 2 || n_charts < 2 || !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "circle needs d >= 2, >= 2 charts and positive radius (d = {d}, charts = {n_charts})"
            )));
        }
        let span = arc_span(n_charts);
        let mut charts = Vec::with_capacity(n_charts);
        for l in 0..n_charts {
            let start = 2.0 * PI * l as f64 / n_charts as f64;
            let c = center.to_vec();
            let mut lip = vec![0.0; d];
            lip[0] = radius * span;
            lip[1] = radius * span;
            charts.push(Chart::new(1, lip, move |t, out| {
                let th = start + span * t[0];
                out.copy_from_slice(&c);
                out[0] += radius * th.cos();
                out[1] += radius * th.sin();
            }));
        }
        let norm = euclid(center) + radius;
        let boxb = sup_abs(center) + radius;
        Manifold::new(
            format!("circle{d}"),
            charts,
            2.0 * radius * (span / 2.0).sin(),
            radius * span,
            norm,
            boxb,
        )
    }

    /// Flat torus `S¹(r1) x S¹(r2)` in the first four coordinates, with
    /// `n_arcs` arcs per circle (so `n_arcs²` charts).
    pub fn torus(center: &[f64], r1: f64, r2: f64, n_arcs: usize) -> Result<Self> {
        let d = center.len();
        if d < 4 || n_arcs < 2 || !(r1 > 0.0 && r2 > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "torus needs d >= 4, >= 2 arcs and positive radii (d = {d})"
            )));
        }
        let span = arc_span(n_arcs);
        let mut charts = Vec::new();
        for l1 in 0..n_arcs {
            for l2 in 0..n_arcs {
                let s1 = 2.0 * PI * l1 as f64 / n_arcs as f64;
                let s2 = 2.0 * PI * l2 as f64 / n_arcs as f64;
                let c = center.to_vec();
                let mut lip = vec![0.0; d];
                lip[0] = r1 * span;
                lip[1] = r1 * span;
                lip[2] = r2 * span;
                lip[3] = r2 * span;
                charts.push(Chart::new(2, lip, move |t, out| {
                    let (a, b) = (s1 + span * t[0], s2 + span * t[1]);
                    out.copy_from_slice(&c);
                    out[0] += r1 * a.cos();
                    out[1] += r1 * a.sin();
                    out[2] += r2 * b.cos();
                    out[3] += r2 * b.sin();
                }));
            }
        }
        let chord = 2.0 * (span / 2.0).sin();
        let norm = euclid(center) + (r1 * r1 + r2 * r2).sqrt();
        let boxb = sup_abs(center) + r1.max(r2);
        Manifold::new(
            format!("torus{d}"),
            charts,
            chord * r1.min(r2),
            span * r1.max(r2),
            norm,
            boxb,
        )
    }

    /// Helical arc `t -> center + (ρ cos(ωt), ρ sin(ωt), h (t - 1/2), 0, ..)`
    /// with a single chart; requires `0 < ω <= π` and `d >= 3`.
    pub fn helix(center: &[f64], radius: f64, turn: f64, height: f64) -> Result<Self> {
        let d = center.len();
        if d < 3 || !(turn > 0.0 && turn <= PI) || !(radius > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "helix needs d >= 3, 0 < turn <= pi, radius > 0 (d = {d}, turn = {turn})"
            )));
        }
        let c = center.to_vec();
        let mut lip = vec![0.0; d];
        lip[0] = radius * turn;
        lip[1] = radius * turn;
        lip[2] = height.abs();
        let chart = Chart::new(1, lip, move |t, out| {
            let th = turn * t[0];
            out.copy_from_slice(&c);
            out[0] += radius * th.cos();
            out[1] += radius * th.sin();
            out[2] += height * (t[0] - 0.5);
        });
        let upper = (radius * radius * turn * turn + height * height).sqrt();
        let lower = (4.0 * radius * radius * (turn / 2.0).sin().powi(2) + height * height).sqrt();
        let norm = euclid(center) + (radius * radius + height * height / 4.0).sqrt();
        let boxb = sup_abs(center) + radius.max(height.abs() / 2.0);
        Manifold::new(format!("helix{d}"), vec![chart], lower, upper, norm, boxb)
    }

    /// The same manifold in `R^{d_new}`: points are zero-padded and then
    /// rotated by a random orthogonal matrix drawn from `seed`. Lipschitz
    /// constants and norms are unchanged.
    pub fn embedded(&self, d_new: usize, seed: u64) -> Result<Self> {
        if d_new < self.ambient_dim {
            return Err(Error::InvalidArgument(format!(
                "cannot embed R^{} into R^{d_new}",
                self.ambient_dim
            )));
        }
        let q = Arc::new(random_orthogonal(d_new, seed));
        let d_old = self.ambient_dim;
        let charts = self
            .charts
            .iter()
            .map(|ch| {
                let lip: Vec<f64> = (0..d_new)
                    .map(|i| (0..d_old).map(|j| q[i][j].abs() * ch.coord_lip[j]).sum())
                    .collect();
                let (inner, q) = (ch.clone(), Arc::clone(&q));
                Chart::new(ch.param_dim, lip, move |t, out| {
                    let y = inner.eval(t);
                    for (i, o) in out.iter_mut().enumerate() {
                        *o = (0..d_old).map(|j| q[i][j] * y[j]).sum();
                    }
                })
            })
            .collect();
        Manifold::new(
            format!("{}_in{d_new}", self.name),
            charts,
            self.lip_lower,
            self.lip_upper,
            self.norm_bound,
            self.norm_bound,
        )
    }

    /// Image of `v` under the linear map used by [`Manifold::embedded`]
    /// with the same `d_new` and `seed`. A ridge direction mapped this way
    /// gives the same function on the embedded manifold.
    pub fn embed_vector(v: &[f64], d_new: usize, seed: u64) -> Result<Vec<f64>> {
        if d_new < v.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot embed R^{} into R^{d_new}",
                v.len()
            )));
        }
        let q = random_orthogonal(d_new, seed);
        Ok((0..d_new)
            .map(|i| v.iter().enumerate().map(|(j, vj)| q[i][j] * vj).sum())
            .collect())
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    pub fn n_charts(&self) -> usize {
        self.charts.len()
    }

    /// `a >= 1` with the manifold inside `[-a, a]^d`.
    pub fn bound_a(&self) -> f64 {
        self.box_bound.max(1.0)
    }

    pub fn point(&self, chart: usize, t: &[f64]) -> Vec<f64> {
        self.charts[chart].eval(t)
    }

    /// `n` points with a uniformly chosen chart and uniform parameters.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let c = rng.gen_range(0..self.charts.len());
                let t: Vec<f64> = (0..self.intrinsic_dim).map(|_| rng.gen::<f64>()).collect();
                self.charts[c].eval(&t)
            })
            .collect()
    }

    /// Constant bounding the number of side-`h` cubes the manifold meets
    /// by `coarse_count_factor() * (1/h)^{d*}`.
    pub fn coarse_count_factor(&self) -> f64 {
        let ds = self.intrinsic_dim as f64;
        self.n_charts() as f64 * (4.0 * self.lip_upper * ds.sqrt() + 4.0).powf(ds)
    }

    /// Constant bounding the fine cubes per coarse cube by `fine_count_factor() * M^{d*}`.
    pub fn fine_count_factor(&self) -> f64 {
        let ds = self.intrinsic_dim as i32;
        let r = self.n_charts() as f64;
        let a = 1.0 / self.lip_lower.powi(ds);
        let b = 3f64.powi(ds) * r * r * (2.0 * self.lip_upper * (ds as f64).sqrt() + 2.0).powi(ds);
        a.max(b)
    }

    /// Number of fine-cube slots per coarse cube, `ceil(fine_count_factor() * M^{d*})`.
    pub fn capacity(&self, m: u32) -> usize {
        (self.fine_count_factor() * (m as f64).powi(self.intrinsic_dim as i32)).ceil() as usize
    }
}

fn arc_span(n: usize) -> f64 {
    2.0 * PI * (2.0f64 / 3.0).min(4.0 / (3.0 * n as f64))
}

fn sup_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Orthogonal matrix from Gram-Schmidt on a Gaussian matrix.
fn random_orthogonal(d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let n = euclid(&v);
        if n > 1e-8 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

/// Sample `pairs` parameter pairs in a chart and return the minimum and
/// maximum of `|ψ(t) - ψ(t')| / |t - t'|`.
pub fn verify_bilipschitz<R: Rng + ?Sized>(chart: &Chart, pairs: usize, rng: &mut R) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for _ in 0..pairs {
        let t: Vec<f64> = (0..chart.param_dim).map(|_| rng.gen()).collect();
        let s: Vec<f64> = (0..chart.param_dim).map(|_| rng.gen()).collect();
        let dt = euclid(&t.iter().zip(&s).map(|(a, b)| a - b).collect::<Vec<_>>());
        if dt < 1e-9 {
            continue;
        }
        let (x, y) = (chart.eval(&t), chart.eval(&s));
        let dx = euclid(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
        lo = lo.min(dx / dt);
        hi = hi.max(dx / dt);
    }
    (lo, hi)
}

/// Integer index of the half-open cube of side `side` containing `x`,
/// on the lattice offset by `shift`.
pub fn locate_cube(x: &[f64], side: f64, shift: &[f64]) -> Vec<i64> {
    x.iter()
        .zip(shift)
        .map(|(xi, s)| ((xi - s) / side).floor() as i64)
        .collect()
}

/// Lower-left corner `k * side + shift` of a cube.
pub fn cube_corner(k: &[i64], side: f64, shift: &[f64]) -> Vec<f64> {
    k.iter().zip(shift).map(|(&ki, s)| ki as f64 * side + s).collect()
}

/// Coarse (side `1/M`) and fine (side `1/M²`) partitions of `R^d`, both
/// offset by the same shift vector with entries in `{0, 1/(2M²)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub m: u32,
    pub shift: Vec<f64>,
}

impl GridSpec {
    pub fn new(m: u32, shift: Vec<f64>) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidArgument("M must be at least 1".into()));
        }
        let half = 0.5 / (m as f64 * m as f64);
        if shift.iter().any(|&s| s != 0.0 && s != half) {
            return Err(Error::InvalidArgument(format!("shift entries must be 0 or {half}")));
        }
        Ok(GridSpec { m, shift })
    }

    pub fn unshifted(m: u32, d: usize) -> Self {
        GridSpec {
            m,
            shift: vec![0.0; d],
        }
    }

    /// Grid number `v` in `0..2^d`: coordinate `j` is shifted by half a
    /// fine side when bit `j` of `v` is set.
    pub fn shifted(m: u32, d: usize, v: usize) -> Self {
        let half = 0.5 / (m as f64 * m as f64);
        GridSpec {
            m,
            shift: (0..d).map(|j| if v >> j & 1 == 1 { half } else { 0.0 }).collect(),
        }
    }

    pub fn all_shifts(m: u32, d: usize) -> Vec<GridSpec> {
        (0..1usize << d).map(|v| GridSpec::shifted(m, d, v)).collect()
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn coarse_side(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn fine_side(&self) -> f64 {
        1.0 / (self.m as f64 * self.m as f64)
    }

    pub fn locate_coarse(&self, x: &[f64]) -> Vec<i64> {
        locate_cube(x, self.coarse_side(), &self.shift)
    }

    pub fn locate_fine(&self, x: &[f64]) -> Vec<i64> {
        locate_cube(x, self.fine_side(), &self.shift)
    }

    pub fn coarse_corner(&self, k: &[i64]) -> Vec<f64> {
        cube_corner(k, self.coarse_side(), &self.shift)
    }

    pub fn fine_corner(&self, k: &[i64]) -> Vec<f64> {
        cube_corner(k, self.fine_side(), &self.shift)
    }

    /// Coarse cube containing the fine cube `k`.
    pub fn parent(&self, k: &[i64]) -> Vec<i64> {
        k.iter().map(|ki| ki.div_euclid(self.m as i64)).collect()
    }
}

/// Indices of all cubes of side `side` (offset by `shift`) that contain a
/// point of the manifold.
///
/// Each chart's parameter box is subdivided until the image of a sub-box is
/// certified (via per-coordinate Lipschitz bounds) to lie inside a single
/// cube. Sub-boxes that reach the resolution floor without certification
/// contribute the cubes of their centre and corners. Every returned cube
/// contains a manifold point.
pub fn cubes_meeting(m: &Manifold, side: f64, shift: &[f64]) -> BTreeSet<Vec<i64>> {
    let ds = m.intrinsic_dim;
    let extra = match ds {
        1 => 20,
        2 => 5,
        _ => 2,
    };
    let h_min = side / (m.lip_upper.max(1e-12) * (ds as f64).sqrt()) / f64::powi(2.0, extra);
    let mut out = BTreeSet::new();
    let mut y = vec![0.0; m.ambient_dim];
    for chart in &m.charts {
        let mut stack: Vec<(Vec<f64>, f64)> = vec![(vec![0.0; ds], 1.0)];
        while let Some((lo, h)) = stack.pop() {
            let c: Vec<f64> = lo.iter().map(|l| l + h / 2.0).collect();
            chart.eval_into(&c, &mut y);
            let reach = h / 2.0 * (ds as f64).sqrt();
            let certified = y.iter().zip(&chart.coord_lip).zip(shift).all(|((yi, li), s)| {
                let r = li * reach;
                ((yi - r - s) / side).floor() == ((yi + r - s) / side).floor()
            });
            if certified {
                out.insert(locate_cube(&y, side, shift));
            } else if h <= h_min {
                out.insert(locate_cube(&y, side, shift));
                for mask in 0..1usize << ds {
                    let t: Vec<f64> = (0..ds)
                        .map(|j| if mask >> j & 1 == 1 { lo[j] + h } else { lo[j] })
                        .collect();
                    chart.eval_into(&t, &mut y);
                    out.insert(locate_cube(&y, side, shift));
                }
            } else {
                let h2 = h / 2.0;
                for mask in 0..1usize << ds {
                    let child: Vec<f64> = (0..ds)
                        .map(|j| if mask >> j & 1 == 1 { lo[j] + h2 } else { lo[j] })
                        .collect();
                    stack.push((child, h2));
                }
            }
        }
    }
    out
}

/// A coarse cube meeting the manifold and the fine cubes inside it that
/// meet the manifold, in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseCube {
    pub index: Vec<i64>,
    pub fine: Vec<Vec<i64>>,
}

/// Coarse cubes meeting a manifold for one grid, each with its fine cubes.
#[derive(Clone, Debug)]
pub struct CubeCover {
    pub grid: GridSpec,
    /// Slots per coarse cube, `ceil(fine_count_factor() * M^{d*})`.
    pub capacity: usize,
    pub coarse: Vec<CoarseCube>,
}

impl CubeCover {
    pub fn build(m: &Manifold, grid: &GridSpec) -> Result<Self> {
        if grid.dim() != m.ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: m.ambient_dim,
                got: grid.dim(),
            });
        }
        let fine = cubes_meeting(m, grid.fine_side(), &grid.shift);
        let mut coarse: Vec<CoarseCube> = Vec::new();
        let mut by_parent: std::collections::BTreeMap<Vec<i64>, Vec<Vec<i64>>> = Default::default();
        for k in fine {
            by_parent.entry(grid.parent(&k)).or_default().push(k);
        }
        for (index, fine) in by_parent {
            coarse.push(CoarseCube { index, fine });
        }
        let capacity = m.capacity(grid.m);
        let most = coarse.iter().map(|c| c.fine.len()).max().unwrap_or(0);
        if most > capacity {
            return Err(Error::Precondition(format!(
                "a coarse cube holds {most} fine cubes, more than the capacity {capacity}"
            )));
        }
        Ok(CubeCover {
            grid: grid.clone(),
            capacity,
            coarse,
        })
    }

    pub fn find_coarse(&self, index: &[i64]) -> Option<usize> {
        self.coarse
            .binary_search_by(|c| c.index.as_slice().cmp(index))
            .ok()
    }

    pub fn n_fine(&self) -> usize {
        self.coarse.iter().map(|c| c.fine.len()).sum()
    }
}

/// Coarse cubes (side `1/M`) meeting the manifold.
pub fn enumerate_coarse_cubes(m: &Manifold, grid: &GridSpec) -> Result<Vec<Vec<i64>>> {
    Ok(CubeCover::build(m, grid)?
        .coarse
        .into_iter()
        .map(|c| c.index)
        .collect())
}

/// Fine cubes meeting the manifold inside the coarse cube `coarse`.
pub fn enumerate_fine_cubes(m: &Manifold, grid: &GridSpec, coarse: &[i64]) -> Result<Vec<Vec<i64>>> {
    let cover = CubeCover::build(m, grid)?;
    Ok(cover
        .find_coarse(coarse)
        .map(|i| cover.coarse[i].fine.clone())
        .unwrap_or_default())
}
