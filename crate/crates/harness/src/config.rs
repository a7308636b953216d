//! Flat `key = value` experiment configuration.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! line    := blank | comment | entry
//! comment := '#' any*
//! entry   := key '=' value
//! value   := scalar | scalar (',' scalar)*
//! ```
//!
//! Keys are case-sensitive and may appear once. Lists are comma separated.
//! Recognised keys:
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `kind` | `approx_sweep`, `rate_sweep`, `dim_study` or `invariants` | required |
//! | `manifold` | `affine`, `circle`, `torus` or `helix` | required |
//! | `d_star`, `offset` | affine slice `{(t, offset)}` | `1`, required |
//! | `center` | circle / torus / helix centre | origin of `R^3` (`R^4` for torus) |
//! | `radius`, `charts` | circle / helix radius, circle chart count | `0.45`, `3` |
//! | `r1`, `r2`, `arcs` | torus radii and arcs per circle | `0.3`, `0.15`, `3` |
//! | `turn`, `height` | helix sweep angle and rise | `pi`, `0.5` |
//! | `embed_dim`, `embed_seed` | rotate the manifold into `R^embed_dim` | none, `7` |
//! | `target` | `ridge_sine`, `constant` or `polynomial` | required |
//! | `omega`, `phase` | ridge direction (in the base dimension) and phase | required, `0` |
//! | `value` | constant target value | `1` |
//! | `degree`, `coeffs` | polynomial target | required |
//! | `p` | smoothness order | `2` |
//! | `values` | `M` list, `n` list, or ambient dimensions | required |
//! | `n` | sample size for `dim_study` | `4000` |
//! | `reps` | repetitions per value | `1` |
//! | `seeds` | one seed per repetition, distinct | derived from `seed` |
//! | `seed` | master seed | `1` |
//! | `sigma` | noise level | `0.1` |
//! | `n_test` | fresh points for the L2 error | `10000` |
//! | `n_eval` | points for the sup error | `10000` |
//! | `policy` | `relaxed` or `enforce` | `relaxed` |
//! | `c2`, `c3`, `c4` | estimator constants | `3`, `1`, `1` |
//! | `optimizer` | `momentum` or `adam` | `momentum` |
//! | `lr`, `momentum`, `epochs`, `batch`, `final_lr_factor` | training | `0.01`, `0.9`, `2000`, `64`, `1` |
//! | `output` | output directory | `out/<kind>` |
//! | `svg` | write a log-log chart | `true` |

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;

use manifold_relu::constructor::PreconditionPolicy;
use manifold_relu::estimator::{EstimatorConfig, Optimizer, TrainConfig};
use manifold_relu::manifold::Manifold;
use manifold_relu::taylor::SmoothTarget;
use manifold_relu::{Error, Result};

/// Largest ambient dimension the harness accepts.
pub const MAX_DIM: usize = 12;
/// Largest grid parameter `M`.
pub const MAX_M: usize = 16;
/// Largest sample size.
pub const MAX_N: usize = 20000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    ApproxSweep,
    RateSweep,
    DimStudy,
    Invariants,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ApproxSweep => "approx_sweep",
            ExperimentKind::RateSweep => "rate_sweep",
            ExperimentKind::DimStudy => "dim_study",
            ExperimentKind::Invariants => "invariants",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ManifoldKind {
    Affine { d_star: usize, offset: Vec<f64> },
    Circle { center: Vec<f64>, radius: f64, charts: usize },
    Torus { center: Vec<f64>, r1: f64, r2: f64, arcs: usize },
    Helix { center: Vec<f64>, radius: f64, turn: f64, height: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub embed_dim: Option<usize>,
    pub embed_seed: u64,
}

impl ManifoldSpec {
    /// The manifold before any embedding.
    pub fn build_base(&self) -> Result<Manifold> {
        match &self.kind {
            ManifoldKind::Affine { d_star, offset } => Manifold::affine_slice(*d_star, offset),
            ManifoldKind::Circle { center, radius, charts } => Manifold::circle(center, *radius, *charts),
            ManifoldKind::Torus { center, r1, r2, arcs } => Manifold::torus(center, *r1, *r2, *arcs),
            ManifoldKind::Helix {
                center,
                radius,
                turn,
                height,
            } => Manifold::helix(center, *radius, *turn, *height),
        }
    }

    /// The manifold in `R^d`, rotated in with `embed_seed` when `d` exceeds
    /// the base dimension.
    pub fn build_in(&self, d: usize) -> Result<Manifold> {
        let base = self.build_base()?;
        if d == base.ambient_dim {
            Ok(base)
        } else {
            base.embedded(d, self.embed_seed)
        }
    }

    pub fn build(&self) -> Result<Manifold> {
        match self.embed_dim {
            Some(d) => self.build_in(d),
            None => self.build_base(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TargetKind {
    RidgeSine { omega: Vec<f64>, phase: f64 },
    Constant { value: f64 },
    Polynomial { degree: usize, coeffs: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetSpec {
    pub kind: TargetKind,
    pub p: f64,
}

impl TargetSpec {
    /// The target on `man`; `base_dim` is the dimension `omega` is given in.
    pub fn build_for(&self, man: &Manifold, base_dim: usize, embed_seed: u64) -> Result<SmoothTarget> {
        let d = man.ambient_dim;
        match &self.kind {
            TargetKind::RidgeSine { omega, phase } => {
                if omega.len() != base_dim {
                    return Err(Error::DimensionMismatch {
                        expected: base_dim,
                        got: omega.len(),
                    });
                }
                let w = if d == base_dim {
                    omega.clone()
                } else {
                    Manifold::embed_vector(omega, d, embed_seed)?
                };
                SmoothTarget::ridge_sine(&w, *phase, self.p)
            }
            TargetKind::Constant { value } => SmoothTarget::polynomial(d, 0, &[*value], self.p, man.bound_a()),
            TargetKind::Polynomial { degree, coeffs } => {
                if d != base_dim {
                    return Err(Error::InvalidArgument("polynomial targets cannot be embedded".into()));
                }
                SmoothTarget::polynomial(d, *degree, coeffs, self.p, man.bound_a())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub manifold: ManifoldSpec,
    pub target: TargetSpec,
    pub values: Vec<usize>,
    pub n: usize,
    pub reps: usize,
    pub seeds: Option<Vec<u64>>,
    pub seed: u64,
    pub sigma: f64,
    pub n_test: usize,
    pub n_eval: usize,
    pub policy: PreconditionPolicy,
    pub estimator: EstimatorConfig,
    pub output: Option<PathBuf>,
    pub svg: bool,
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn req(&mut self, key: &str) -> Result<(usize, String)> {
        self.take(key).ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing key `{key}`"),
        })
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some((line, v)) => scalar(line, key, &v),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v.split(',').map(|s| scalar(line, key, s)).collect::<Result<Vec<T>>>().map(Some),
        }
    }

    fn req_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Vec<T>> {
        self.list(key)?.ok_or_else(|| Error::Parse {
            line: 0,
            msg: format!("missing key `{key}`"),
        })
    }
}

fn scalar<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    let v = v.trim();
    let v = if v == "pi" { "3.141592653589793" } else { v };
    v.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad value `{v}` for `{key}`"),
    })
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| perr(i + 1, format!("expected `key = value`, got `{line}`")))?;
        let k = k.trim().to_string();
        if map.insert(k.clone(), (i + 1, v.trim().to_string())).is_some() {
            return Err(perr(i + 1, format!("duplicate key `{k}`")));
        }
    }
    let mut e = Entries { map };

    let (kl, kind) = e.req("kind")?;
    let kind = match kind.as_str() {
        "approx_sweep" => ExperimentKind::ApproxSweep,
        "rate_sweep" => ExperimentKind::RateSweep,
        "dim_study" => ExperimentKind::DimStudy,
        "invariants" => ExperimentKind::Invariants,
        other => return Err(perr(kl, format!("unknown kind `{other}`"))),
    };

    let (ml, mname) = e.req("manifold")?;
    let default_center = |d: usize| vec![0.0; d];
    let mkind = match mname.as_str() {
        "affine" => ManifoldKind::Affine {
            d_star: e.parse("d_star", 1)?,
            offset: e.req_list("offset")?,
        },
        "circle" => ManifoldKind::Circle {
            center: e.list("center")?.unwrap_or_else(|| default_center(3)),
            radius: e.parse("radius", 0.45)?,
            charts: e.parse("charts", 3)?,
        },
        "torus" => ManifoldKind::Torus {
            center: e.list("center")?.unwrap_or_else(|| default_center(4)),
            r1: e.parse("r1", 0.3)?,
            r2: e.parse("r2", 0.15)?,
            arcs: e.parse("arcs", 3)?,
        },
        "helix" => ManifoldKind::Helix {
            center: e.list("center")?.unwrap_or_else(|| default_center(3)),
            radius: e.parse("radius", 0.4)?,
            turn: e.parse("turn", PI)?,
            height: e.parse("height", 0.5)?,
        },
        other => return Err(perr(ml, format!("unknown manifold `{other}`"))),
    };
    let manifold = ManifoldSpec {
        kind: mkind,
        embed_dim: e.list::<usize>("embed_dim")?.map(|v| v[0]),
        embed_seed: e.parse("embed_seed", 7)?,
    };

    let p = e.parse("p", 2.0)?;
    let (tl, tname) = e.req("target")?;
    let tkind = match tname.as_str() {
        "ridge_sine" => TargetKind::RidgeSine {
            omega: e.req_list("omega")?,
            phase: e.parse("phase", 0.0)?,
        },
        "constant" => TargetKind::Constant {
            value: e.parse("value", 1.0)?,
        },
        "polynomial" => TargetKind::Polynomial {
            degree: scalar(tl, "degree", &e.req("degree")?.1)?,
            coeffs: e.req_list("coeffs")?,
        },
        other => return Err(perr(tl, format!("unknown target `{other}`"))),
    };

    let defaults = EstimatorConfig::default();
    let dt = TrainConfig::default();
    let lr = e.parse("lr", 1e-2)?;
    let (ol, oname) = e.take("optimizer").unwrap_or((0, "momentum".into()));
    let optimizer = match oname.as_str() {
        "momentum" => Optimizer::Momentum {
            lr,
            momentum: e.parse("momentum", 0.9)?,
        },
        "adam" => Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        other => return Err(perr(ol, format!("unknown optimizer `{other}`"))),
    };
    let (pl, pname) = e.take("policy").unwrap_or((0, "relaxed".into()));
    let policy = match pname.as_str() {
        "relaxed" => PreconditionPolicy::Relaxed,
        "enforce" => PreconditionPolicy::Enforce,
        other => return Err(perr(pl, format!("unknown policy `{other}`"))),
    };

    let cfg = ExperimentConfig {
        kind,
        manifold,
        target: TargetSpec { kind: tkind, p },
        values: e.req_list("values")?,
        n: e.parse("n", 4000)?,
        reps: e.parse("reps", 1)?,
        seeds: e.list("seeds")?,
        seed: e.parse("seed", 1)?,
        sigma: e.parse("sigma", 0.1)?,
        n_test: e.parse("n_test", 10000)?,
        n_eval: e.parse("n_eval", 10000)?,
        policy,
        estimator: EstimatorConfig {
            p,
            d_star: 0,
            c2: e.parse("c2", defaults.c2)?,
            c3: e.parse("c3", defaults.c3)?,
            c4: e.parse("c4", defaults.c4)?,
            train: TrainConfig {
                optimizer,
                epochs: e.parse("epochs", dt.epochs)?,
                batch: e.parse("batch", dt.batch)?,
                final_lr_factor: e.parse("final_lr_factor", dt.final_lr_factor)?,
                seed: 0,
            },
        },
        output: e.take("output").map(|(_, v)| PathBuf::from(v)),
        svg: e.parse("svg", true)?,
    };
    if let Some((k, (line, _))) = e.map.into_iter().next() {
        return Err(perr(line, format!("unknown key `{k}`")));
    }
    let mut cfg = cfg;
    cfg.estimator.d_star = cfg.manifold.build_base()?.intrinsic_dim;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.values.is_empty() {
            return bad("`values` is empty".into());
        }
        if self.reps == 0 {
            return bad("`reps` must be at least 1".into());
        }
        if let Some(s) = &self.seeds {
            if s.len() != self.reps {
                return bad(format!("{} seeds for {} repetitions", s.len(), self.reps));
            }
            let mut u = s.clone();
            u.sort_unstable();
            u.dedup();
            if u.len() != s.len() {
                return bad("seeds must be distinct".into());
            }
        }
        if !(self.sigma >= 0.0) {
            return bad(format!("sigma = {} < 0", self.sigma));
        }
        let base = self.manifold.build_base()?;
        let dims: Vec<usize> = match self.kind {
            ExperimentKind::DimStudy => self.values.clone(),
            _ => vec![self.manifold.embed_dim.unwrap_or(base.ambient_dim)],
        };
        for &d in &dims {
            if d > MAX_DIM {
                return bad(format!("ambient dimension {d} exceeds {MAX_DIM}"));
            }
            if d < base.ambient_dim {
                return bad(format!("ambient dimension {d} below {}", base.ambient_dim));
            }
        }
        match self.kind {
            ExperimentKind::ApproxSweep => {
                if let Some(&m) = self.values.iter().find(|&&m| !(1..=MAX_M).contains(&m)) {
                    return bad(format!("M = {m} outside [1, {MAX_M}]"));
                }
            }
            ExperimentKind::RateSweep => {
                if let Some(&n) = self.values.iter().find(|&&n| !(2..=MAX_N).contains(&n)) {
                    return bad(format!("n = {n} outside [2, {MAX_N}]"));
                }
            }
            ExperimentKind::DimStudy => {
                if self.n < 2 || self.n > MAX_N {
                    return bad(format!("n = {} outside [2, {MAX_N}]", self.n));
                }
            }
            ExperimentKind::Invariants => {}
        }
        Ok(())
    }

    /// Base seed of repetition `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        match &self.seeds {
            Some(s) => s[rep],
            None => derive_seed(self.seed, rep as u64),
        }
    }
}

/// SplitMix64 of `(seed, index)`: independent streams per sub-run.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RATE: &str = "\
# comment
kind = rate_sweep
manifold = helix
radius = 0.4
turn = pi
target = ridge_sine
omega = 0.9, -0.6, 0.5
phase = 0.3
values = 500,2000
reps = 2
seeds = 4,9
c3 = 0.5
";

    #[test]
    fn parses_rate_config() {
        let c = parse_config(RATE).unwrap();
        assert_eq!(c.kind, ExperimentKind::RateSweep);
        assert_eq!(c.values, vec![500, 2000]);
        assert_eq!(c.seeds, Some(vec![4, 9]));
        assert_eq!(c.estimator.c3, 0.5);
        assert_eq!(c.estimator.d_star, 1);
        assert_eq!(c.rep_seed(1), 9);
        match &c.manifold.kind {
            ManifoldKind::Helix { turn, .. } => assert_eq!(*turn, PI),
            k => panic!("{k:?}"),
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse_config(&format!("{RATE}bogus = 1\n")), Err(Error::Parse { line: 13, .. })));
        assert!(matches!(parse_config(&format!("{RATE}c3 = 1\n")), Err(Error::Parse { line: 13, .. })));
        assert!(parse_config(&RATE.replace("seeds = 4,9", "seeds = 4,4")).is_err());
        assert!(parse_config(&RATE.replace("values = 500,2000", "values = 500,30000")).is_err());
        assert!(parse_config(&RATE.replace("reps = 2", "reps = 0")).is_err());
        assert!(parse_config(&RATE.replace("radius = 0.4", "radius = x")).is_err());
        assert!(parse_config("kind = approx_sweep\n").is_err());
    }

    #[test]
    fn guards_apply() {
        let approx = RATE.replace("rate_sweep", "approx_sweep").replace("500,2000", "2,32");
        assert!(parse_config(&approx).is_err());
        let dims = RATE.replace("rate_sweep", "dim_study").replace("500,2000", "3,13");
        assert!(parse_config(&dims).is_err());
        let dims = RATE.replace("rate_sweep", "dim_study").replace("500,2000", "3,10");
        assert!(parse_config(&dims).is_ok());
    }

    #[test]
    fn derived_seeds_differ() {
        let s: Vec<u64> = (0..100).map(|i| derive_seed(1, i)).collect();
        let mut u = s.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), 100);
        assert_eq!(derive_seed(1, 5), derive_seed(1, 5));
    }
}
