//! Smooth target functions, their Taylor polynomials on the fine grid, and
//! the slot-indexed recursion that the constructed networks reproduce.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::manifold::{CubeCover, GridSpec, Manifold};
use crate::primitives::monomials;

type ValueFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type PartialFn = Arc<dyn Fn(&[u32], &[f64]) -> f64 + Send + Sync>;

/// Smoothness `p = q + s` with `q` an integer and `0 < s <= 1`, together
/// with the Hölder constant `C` of all order-`q` partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Smoothness {
    pub p: f64,
    pub q: usize,
    pub s: f64,
    pub holder_c: f64,
}

impl Smoothness {
    pub fn new(p: f64, holder_c: f64) -> Result<Self> {
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::InvalidArgument(format!("smoothness must be positive, got {p}")));
        }
        let q = (p.ceil() as usize).saturating_sub(1);
        Ok(Smoothness {
            p,
            q,
            s: p - q as f64,
            holder_c,
        })
    }
}

/// A `(p, C)`-smooth function on `R^d` with access to its partial
/// derivatives up to order `q`.
#[derive(Clone)]
pub struct SmoothTarget {
    pub name: String,
    pub dim: usize,
    pub smooth: Smoothness,
    /// Bound on `max_{|j| <= q} sup |∂^j f|`.
    pub cq_norm: f64,
    /// Bound on `sup |f|`.
    pub sup_norm: f64,
    value: ValueFn,
    partial: PartialFn,
}

impl std::fmt::Debug for SmoothTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothTarget")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("smooth", &self.smooth)
            .finish()
    }
}

impl SmoothTarget {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        smooth: Smoothness,
        cq_norm: f64,
        sup_norm: f64,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        partial: impl Fn(&[u32], &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SmoothTarget {
            name: name.into(),
            dim,
            smooth,
            cq_norm,
            sup_norm,
            value: Arc::new(value),
            partial: Arc::new(partial),
        }
    }

    /// `sin(ω·x + phase)`, smooth of every order. With `s = p - q`, the
    /// order-`q` partials are Hölder with constant
    /// `max_{|j|=q} |ω^j| * 2^{1-s} |ω|^s`.
    pub fn ridge_sine(omega: &[f64], phase: f64, p: f64) -> Result<Self> {
        let d = omega.len();
        let mut sm = Smoothness::new(p, 0.0)?;
        let norm = omega.iter().map(|w| w * w).sum::<f64>().sqrt();
        let om = omega.to_vec();
        let mono = |j: &[u32]| -> f64 { j.iter().zip(&om).map(|(&e, w)| w.powi(e as i32)).product() };
        let top = monomials(d, sm.q)
            .iter()
            .filter(|j| j.iter().sum::<u32>() as usize == sm.q)
            .map(|j| mono(j).abs())
            .fold(0.0, f64::max);
        let cq = monomials(d, sm.q).iter().map(|j| mono(j).abs()).fold(0.0, f64::max);
        sm.holder_c = top * 2f64.powf(1.0 - sm.s) * norm.powf(sm.s);
        let (o1, o2) = (omega.to_vec(), omega.to_vec());
        Ok(SmoothTarget::new(
            "ridge_sine",
            d,
            sm,
            cq,
            1.0,
            move |x| (dot(&o1, x) + phase).sin(),
            move |j, x| {
                let coef: f64 = j.iter().zip(&o2).map(|(&e, w)| w.powi(e as i32)).product();
                let arg = dot(&o2, x) + phase;
                let order: u32 = j.iter().sum();
                coef * match order % 4 {
                    0 => arg.sin(),
                    1 => arg.cos(),
                    2 => -arg.sin(),
                    _ => -arg.cos(),
                }
            },
        ))
    }

    /// Polynomial `Σ coeffs[i] x^{l_i}` over [`monomials`]`(d, degree)`;
    /// norms are bounds over `[-a, a]^d`.
    pub fn polynomial(d: usize, degree: usize, coeffs: &[f64], p: f64, a: f64) -> Result<Self> {
        let mons = monomials(d, degree);
        if coeffs.len() != mons.len() {
            return Err(Error::DimensionMismatch {
                expected: mons.len(),
                got: coeffs.len(),
            });
        }
        let mut sm = Smoothness::new(p, 0.0)?;
        let terms: Vec<(Vec<u32>, f64)> = mons.into_iter().zip(coeffs.iter().copied()).collect();
        // sup over [-a, a]^d of |∂^j f| is at most Σ |c| l!/(l-j)! a^{|l-j|}.
        let bound = |j: &[u32]| -> f64 {
            terms
                .iter()
                .filter(|(l, _)| l.iter().zip(j).all(|(a, b)| a >= b))
                .map(|(l, c)| {
                    let mut f = c.abs();
                    for (&lk, &jk) in l.iter().zip(j) {
                        f *= falling(lk, jk) * a.powi((lk - jk) as i32);
                    }
                    f
                })
                .sum()
        };
        let cq = monomials(d, sm.q).iter().map(|j| bound(j)).fold(0.0, f64::max);
        if degree > sm.q {
            // Lipschitz bound of the order-q partials, turned into a
            // Hölder bound over a set of diameter 2a√d.
            let mut lip: f64 = 0.0;
            for j in monomials(d, sm.q).iter().filter(|j| j.iter().sum::<u32>() as usize == sm.q) {
                let mut g = 0.0;
                for k in 0..d {
                    let mut jj = j.clone();
                    jj[k] += 1;
                    g += bound(&jj).powi(2);
                }
                lip = lip.max(g.sqrt());
            }
            sm.holder_c = lip * (2.0 * a * (d as f64).sqrt()).powf(1.0 - sm.s);
        }
        let sup = bound(&vec![0; d]);
        let (t1, t2) = (terms.clone(), terms);
        Ok(SmoothTarget::new(
            "polynomial",
            d,
            sm,
            cq,
            sup,
            move |x| t1.iter().map(|(l, c)| c * pow_mono(l, x)).sum(),
            move |j, x| {
                t2.iter()
                    .filter(|(l, _)| l.iter().zip(j).all(|(a, b)| a >= b))
                    .map(|(l, c)| {
                        let mut f = *c;
                        for (k, (&lk, &jk)) in l.iter().zip(j).enumerate() {
                            f *= falling(lk, jk) * x[k].powi((lk - jk) as i32);
                        }
                        f
                    })
                    .sum()
            },
        ))
    }

    /// Target with only values available; partial derivatives are taken
    /// by nested central differences with step `h`, losing accuracy at
    /// higher orders.
    pub fn from_fn(
        name: impl Into<String>,
        dim: usize,
        smooth: Smoothness,
        cq_norm: f64,
        sup_norm: f64,
        h: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let f: ValueFn = Arc::new(f);
        let g = Arc::clone(&f);
        SmoothTarget {
            name: name.into(),
            dim,
            smooth,
            cq_norm,
            sup_norm,
            value: f,
            partial: Arc::new(move |j, x| {
                let mut jj = j.to_vec();
                let mut xx = x.to_vec();
                central_diff(&*g, &mut jj, &mut xx, h)
            }),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn partial(&self, j: &[u32], x: &[f64]) -> f64 {
        (self.partial)(j, x)
    }
}

fn central_diff(f: &dyn Fn(&[f64]) -> f64, j: &mut [u32], x: &mut [f64], h: f64) -> f64 {
    let Some(k) = j.iter().position(|&e| e > 0) else {
        return f(x);
    };
    j[k] -= 1;
    let x0 = x[k];
    x[k] = x0 + h;
    let up = central_diff(f, j, x, h);
    x[k] = x0 - h;
    let down = central_diff(f, j, x, h);
    x[k] = x0;
    j[k] += 1;
    (up - down) / (2.0 * h)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `l (l-1) .. (l-j+1)`.
fn falling(l: u32, j: u32) -> f64 {
    (l - j + 1..=l).map(|v| v as f64).product()
}

fn pow_mono(l: &[u32], x: &[f64]) -> f64 {
    l.iter().zip(x).map(|(&e, xi)| xi.powi(e as i32)).product()
}

/// `j!` for a multi-index.
pub fn multi_factorial(j: &[u32]) -> f64 {
    j.iter().map(|&e| falling(e, e)).product()
}

/// Degree-`q` Taylor polynomial of `t` around `x0`, evaluated at `x`.
pub fn taylor_poly(t: &SmoothTarget, x0: &[f64], x: &[f64]) -> f64 {
    let h: Vec<f64> = x.iter().zip(x0).map(|(a, b)| a - b).collect();
    monomials(t.dim, t.smooth.q)
        .iter()
        .map(|j| t.partial(j, x0) * pow_mono(j, &h) / multi_factorial(j))
        .sum()
}

/// Taylor polynomial around the lower-left corner of the fine cube that
/// contains `x`.
pub fn piecewise_taylor(t: &SmoothTarget, grid: &GridSpec, x: &[f64]) -> f64 {
    let corner = grid.fine_corner(&grid.locate_fine(x));
    taylor_poly(t, &corner, x)
}

/// Remainder bound `C d^{q + s/2} / q! * M^{-2p}` for the piecewise Taylor
/// polynomial on the fine grid (cube side `1/M²`).
pub fn taylor_remainder_bound(t: &SmoothTarget, m: u32) -> f64 {
    let sm = &t.smooth;
    let d = t.dim as f64;
    let qf: f64 = (1..=sm.q).map(|v| v as f64).product();
    sm.holder_c * d.powf(sm.q as f64 + sm.s / 2.0) / qf * (m as f64).powf(-2.0 * sm.p)
}

/// Per-coarse-cube tables: corners of the enumerated fine cubes and the
/// target's partial derivatives there, in slot order.
#[derive(Clone, Debug)]
pub struct SlotTables {
    pub cover: CubeCover,
    /// Multi-indices of the derivative columns.
    pub monomials: Vec<Vec<u32>>,
    /// `corners[i][j]`: corner of slot `j` of coarse cube `i`.
    pub corners: Vec<Vec<Vec<f64>>>,
    /// `derivs[i][j][l]`: `∂^{l} f` at that corner.
    pub derivs: Vec<Vec<Vec<f64>>>,
}

impl SlotTables {
    pub fn new(t: &SmoothTarget, m: &Manifold, grid: &GridSpec) -> Result<Self> {
        if t.dim != m.ambient_dim {
            return Err(Error::DimensionMismatch {
                expected: m.ambient_dim,
                got: t.dim,
            });
        }
        let cover = CubeCover::build(m, grid)?;
        let mons = monomials(t.dim, t.smooth.q);
        let corners: Vec<Vec<Vec<f64>>> = cover
            .coarse
            .iter()
            .map(|c| c.fine.iter().map(|k| grid.fine_corner(k)).collect())
            .collect();
        let derivs = corners
            .iter()
            .map(|cs| {
                cs.iter()
                    .map(|c| mons.iter().map(|j| t.partial(j, c)).collect())
                    .collect()
            })
            .collect();
        Ok(SlotTables {
            cover,
            monomials: mons,
            corners,
            derivs,
        })
    }

    pub fn capacity(&self) -> usize {
        self.cover.capacity
    }

    pub fn grid(&self) -> &GridSpec {
        &self.cover.grid
    }
}

/// All intermediate quantities of the slot recursion at one point.
///
/// Per-slot arrays are flat: slot `j` (0-based) of `phi21` is
/// `phi21[j*d .. (j+1)*d]`, of `phi31` is `phi31[j*B .. (j+1)*B]` with
/// `B` the number of monomials.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiState {
    pub phi11: Vec<f64>,
    pub phi21: Vec<f64>,
    pub phi31: Vec<f64>,
    pub phi41: Vec<f64>,
    pub phi12: Vec<f64>,
    pub phi22: Vec<f64>,
    pub phi32: Vec<f64>,
    pub phi13: f64,
    /// Slots `j` with `x` in the slot's fine cube; exactly one when the
    /// enumeration is complete.
    pub active_slots: Vec<usize>,
}

/// Evaluates the slot recursion at `x`.
///
/// Stage 1 reads, for the coarse cube containing `x`, slot `j`'s fine
/// cube corner, derivatives and side (zero for unused slots). Stage 2
/// keeps the slot whose fine cube contains `x`. Stage 3 evaluates the
/// Taylor polynomial around that corner.
pub fn phi_recursion_with(tables: &SlotTables, x: &[f64]) -> Result<PhiState> {
    let grid = tables.grid();
    let d = grid.dim();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    let cap = tables.capacity();
    let nb = tables.monomials.len();
    let side = grid.fine_side();
    let mut phi21 = vec![0.0; cap * d];
    let mut phi31 = vec![0.0; cap * nb];
    let mut phi41 = vec![0.0; cap];
    // Only the coarse cube containing x has a nonzero indicator, so the
    // sums over coarse cubes reduce to its terms.
    let i = tables
        .cover
        .find_coarse(&grid.locate_coarse(x))
        .ok_or(Error::EnumerationMiss)?;
    for (j, (c, dv)) in tables.corners[i].iter().zip(&tables.derivs[i]).enumerate() {
        phi21[j * d..(j + 1) * d].copy_from_slice(c);
        phi31[j * nb..(j + 1) * nb].copy_from_slice(dv);
        phi41[j] = side;
    }
    let mut phi22 = vec![0.0; d];
    let mut phi32 = vec![0.0; nb];
    let mut active_slots = Vec::new();
    for j in 0..cap {
        let lo = &phi21[j * d..(j + 1) * d];
        let inside = (0..d).all(|k| lo[k] <= x[k] && x[k] < lo[k] + phi41[j]);
        if inside {
            active_slots.push(j);
            phi22.iter_mut().zip(lo).for_each(|(a, b)| *a += b);
            phi32
                .iter_mut()
                .zip(&phi31[j * nb..(j + 1) * nb])
                .for_each(|(a, b)| *a += b);
        }
    }
    let h: Vec<f64> = x.iter().zip(&phi22).map(|(a, b)| a - b).collect();
    let phi13 = tables
        .monomials
        .iter()
        .zip(&phi32)
        .map(|(l, c)| c / multi_factorial(l) * pow_mono(l, &h))
        .sum();
    Ok(PhiState {
        phi11: x.to_vec(),
        phi21,
        phi31,
        phi41,
        phi12: x.to_vec(),
        phi22,
        phi32,
        phi13,
        active_slots,
    })
}

/// One-shot form of [`phi_recursion_with`]; builds the tables each call.
pub fn phi_recursion(t: &SmoothTarget, m: &Manifold, grid: &GridSpec, x: &[f64]) -> Result<PhiState> {
    phi_recursion_with(&SlotTables::new(t, m, grid)?, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn sine3() -> SmoothTarget {
        SmoothTarget::ridge_sine(&[1.3, -0.9, 0.7], 0.4, 2.0).unwrap()
    }

    #[test]
    fn smoothness_split() {
        let s = Smoothness::new(2.0, 1.0).unwrap();
        assert_eq!((s.q, s.s), (1, 1.0));
        let s = Smoothness::new(1.5, 1.0).unwrap();
        assert_eq!((s.q, s.s), (1, 0.5));
        let s = Smoothness::new(0.5, 1.0).unwrap();
        assert_eq!((s.q, s.s), (0, 0.5));
        assert!(Smoothness::new(0.0, 1.0).is_err());
    }

    #[test]
    fn taylor_of_square() {
        // x² around 0.5 to first order, at 0.75: 0.25 + 1 * 0.25.
        let t = SmoothTarget::polynomial(1, 2, &[0.0, 0.0, 1.0], 2.0, 1.0).unwrap();
        assert!((taylor_poly(&t, &[0.5], &[0.75]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn taylor_is_exact_for_low_degree() {
        let mut rng = StdRng::seed_from_u64(2);
        let coeffs: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = SmoothTarget::polynomial(3, 2, &coeffs, 3.0, 1.0).unwrap();
        assert_eq!(t.smooth.holder_c, 0.0);
        for _ in 0..100 {
            let x0: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!((taylor_poly(&t, &x0, &x) - t.value(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn sine_partials_match_differences() {
        let t = sine3();
        let fd = SmoothTarget::from_fn("fd", 3, t.smooth, t.cq_norm, 1.0, 1e-4, {
            let t = t.clone();
            move |x| t.value(x)
        });
        let x = [0.2, -0.4, 0.9];
        for j in monomials(3, 2) {
            let (a, b) = (t.partial(&j, &x), fd.partial(&j, &x));
            assert!((a - b).abs() < 1e-6, "{j:?}: {a} vs {b}");
        }
    }

    #[test]
    fn remainder_bound_holds() {
        let t = sine3();
        let mut rng = StdRng::seed_from_u64(4);
        for m in [2u32, 3, 4, 8] {
            let g = GridSpec::unshifted(m, 3);
            let bound = taylor_remainder_bound(&t, m);
            for _ in 0..2000 {
                let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                assert!((piecewise_taylor(&t, &g, &x) - t.value(&x)).abs() <= bound);
            }
        }
    }

    #[test]
    fn piecewise_error_decays_like_m_to_minus_2p() {
        let t = sine3();
        let m = Manifold::circle(&[0.0, 0.0, 0.1], 0.45, 2).unwrap();
        let mut rng = StdRng::seed_from_u64(8);
        let pts = m.sample(5000, &mut rng);
        let err = |mm: u32| {
            let g = GridSpec::unshifted(mm, 3);
            pts.iter()
                .map(|x| (piecewise_taylor(&t, &g, x) - t.value(x)).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(8) / err(4);
        // Doubling M shrinks the fine side by 4, i.e. the error by 2^{-2p}.
        assert!(ratio < 1.5 / 16.0 && ratio > 0.5 / 16.0, "{ratio}");
    }

    #[test]
    fn recursion_equals_piecewise_taylor() {
        let t = sine3();
        let m = Manifold::circle(&[0.05, 0.0, 0.1], 0.45, 2).unwrap();
        let mut rng = StdRng::seed_from_u64(6);
        for v in [0usize, 3, 7] {
            let g = GridSpec::shifted(4, 3, v);
            let tables = SlotTables::new(&t, &m, &g).unwrap();
            for x in m.sample(300, &mut rng) {
                let st = phi_recursion_with(&tables, &x).unwrap();
                assert_eq!(st.active_slots.len(), 1);
                assert!((st.phi13 - piecewise_taylor(&t, &g, &x)).abs() < 1e-12);
                assert_eq!(st.phi22, g.fine_corner(&g.locate_fine(&x)));
            }
        }
    }

    #[test]
    fn recursion_rejects_points_off_the_cover() {
        let t = sine3();
        let m = Manifold::affine_slice(1, &[0.3, 0.6]).unwrap();
        let g = GridSpec::unshifted(2, 3);
        assert_eq!(
            phi_recursion(&t, &m, &g, &[0.5, 2.0, 2.0]),
            Err(Error::EnumerationMiss)
        );
    }
}
