//! Least-squares ReLU network regression: architecture selection from the
//! sample size, training by mini-batch gradient descent, and truncation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::manifold::Manifold;
use crate::relu_net::{relu, Affine, Network};
use crate::taylor::SmoothTarget;

/// `(L_n, r_n) = (ceil(c3 ln n), ceil(c4 n^{d*/(2(2p + d*))}))`.
pub fn arch_for(n: usize, p: f64, d_star: usize, c3: f64, c4: f64) -> (usize, usize) {
    let nf = n as f64;
    let ds = d_star as f64;
    let depth = (c3 * nf.ln()).ceil().max(1.0) as usize;
    let width = (c4 * nf.powf(ds / (2.0 * (2.0 * p + ds)))).ceil().max(1.0) as usize;
    (depth, width)
}

/// Regression sample `(X_i, Y_i)` with `Y = f(X) + sigma * N(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<f64>,
    pub seed: u64,
    pub sigma: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

pub fn generate_regression_data(
    m: &Manifold,
    t: &SmoothTarget,
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise level {sigma} < 0")));
    }
    if t.dim != m.ambient_dim {
        return Err(Error::DimensionMismatch {
            expected: m.ambient_dim,
            got: t.dim,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = m.sample(n, &mut rng);
    let ys = xs
        .iter()
        .map(|x| {
            let z: f64 = rng.sample(StandardNormal);
            t.value(x) + sigma * z
        })
        .collect();
    Ok(Dataset { xs, ys, seed, sigma })
}

/// Monte Carlo estimate of `E |pred(X) - f(X)|^2` over `n_test` fresh
/// manifold samples.
pub fn empirical_l2<P: Fn(&[f64]) -> f64>(
    pred: P,
    m: &Manifold,
    t: &SmoothTarget,
    n_test: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = m.sample(n_test.max(1), &mut rng);
    xs.iter().map(|x| (pred(x) - t.value(x)).powi(2)).sum::<f64>() / xs.len() as f64
}

/// Clips `v` to `[-beta, beta]`.
pub fn truncate(v: f64, beta: f64) -> f64 {
    v.clamp(-beta, beta)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Momentum { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    /// Batch size; the effective size is `min(batch, n)`.
    pub batch: usize,
    /// Learning rate multiplier reached linearly by the last epoch
    /// (1 keeps the rate constant).
    pub final_lr_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Momentum {
                lr: 1e-2,
                momentum: 0.9,
            },
            epochs: 2000,
            batch: 64,
            final_lr_factor: 1.0,
            seed: 0,
        }
    }
}

/// Estimator settings: architecture constants, truncation and training.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub p: f64,
    pub d_star: usize,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub train: TrainConfig,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            p: 2.0,
            d_star: 1,
            c2: 3.0,
            c3: 1.0,
            c4: 1.0,
            train: TrainConfig::default(),
        }
    }
}

/// Fully connected ReLU network with dense weights, used for training.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// Layer `l` weights, row-major `sizes[l+1] x sizes[l]`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Mlp {
    /// Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            let lim = (6.0 / (w[0] + w[1]) as f64).sqrt();
            weights.push((0..w[0] * w[1]).map(|_| rng.gen_range(-lim..lim)).collect());
            biases.push(vec![0.0; w[1]]);
        }
        Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
        }
    }

    /// `input -> depth hidden layers of width -> 1`.
    pub fn with_arch<R: Rng + ?Sized>(input: usize, depth: usize, width: usize, rng: &mut R) -> Self {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(width, depth));
        sizes.push(1);
        Mlp::new(&sizes, rng)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend_from_slice(w);
            v.extend_from_slice(b);
        }
        v
    }

    pub fn set_params(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.n_params());
        let mut off = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&v[off..off + nw]);
            off += nw;
            b.copy_from_slice(&v[off..off + nb]);
            off += nb;
        }
    }

    /// Pre-activations of every layer at `x`.
    fn forward(&self, x: &[f64], pre: &mut Vec<Vec<f64>>) {
        pre.resize(self.weights.len(), Vec::new());
        for l in 0..self.weights.len() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (head, tail) = pre.split_at_mut(l);
            let out = &mut tail[0];
            out.clear();
            let w = &self.weights[l];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let acc: f64 = if l == 0 {
                    row.iter().zip(x).map(|(a, b)| a * b).sum()
                } else {
                    row.iter().zip(&head[l - 1]).map(|(a, b)| a * relu(*b)).sum()
                };
                out.push(acc + self.biases[l][o]);
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut pre = Vec::new();
        self.forward(x, &mut pre);
        pre.last().unwrap()[0]
    }

    /// Smallest `|pre-activation|` over hidden neurons at `x`; the network
    /// is differentiable in its parameters wherever this is positive.
    pub fn min_abs_preactivation(&self, x: &[f64]) -> f64 {
        let mut pre = Vec::new();
        self.forward(x, &mut pre);
        pre[..pre.len() - 1]
            .iter()
            .flatten()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Mean squared error over the samples and its gradient in the
    /// [`Mlp::params`] layout. The ReLU derivative at 0 is taken as 0.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[f64]) -> (f64, Vec<f64>) {
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut pre = Vec::new();
        let mut delta: Vec<f64> = Vec::new();
        let mut prev: Vec<f64> = Vec::new();
        let mut loss = 0.0;
        let scale = 1.0 / xs.len() as f64;
        let nl = self.weights.len();
        for (x, &y) in xs.iter().zip(ys) {
            self.forward(x, &mut pre);
            let r = pre[nl - 1][0] - y;
            loss += r * r;
            delta.clear();
            delta.push(2.0 * r * scale);
            for l in (0..nl).rev() {
                let n_in = self.sizes[l];
                let w = &self.weights[l];
                for (o, &dl) in delta.iter().enumerate() {
                    gb[l][o] += dl;
                    let g = &mut gw[l][o * n_in..(o + 1) * n_in];
                    if l == 0 {
                        g.iter_mut().zip(x.iter()).for_each(|(gi, xi)| *gi += dl * xi);
                    } else {
                        g.iter_mut()
                            .zip(&pre[l - 1])
                            .for_each(|(gi, zi)| *gi += dl * relu(*zi));
                    }
                }
                if l > 0 {
                    prev.clear();
                    prev.resize(n_in, 0.0);
                    for (o, &dl) in delta.iter().enumerate() {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        prev.iter_mut().zip(row).for_each(|(p, wi)| *p += dl * wi);
                    }
                    for (p, z) in prev.iter_mut().zip(&pre[l - 1]) {
                        if *z <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    std::mem::swap(&mut delta, &mut prev);
                }
            }
        }
        let mut g = Vec::with_capacity(self.n_params());
        for (w, b) in gw.iter().zip(&gb) {
            g.extend_from_slice(w);
            g.extend_from_slice(b);
        }
        (loss * scale, g)
    }

    pub fn mse(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let mut pre = Vec::new();
        let s: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                self.forward(x, &mut pre);
                (pre.last().unwrap()[0] - y).powi(2)
            })
            .sum();
        s / xs.len() as f64
    }

    pub fn to_network(&self) -> Network {
        let layers = self
            .weights
            .iter()
            .zip(&self.biases)
            .enumerate()
            .map(|(l, (w, b))| {
                let n_in = self.sizes[l];
                let rows: Vec<Vec<f64>> = w.chunks(n_in).map(<[f64]>::to_vec).collect();
                Affine::from_dense(&rows, b).unwrap()
            })
            .collect();
        Network::new(layers).unwrap()
    }
}

/// Result of [`train`]: the best iterate and the per-epoch training loss.
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub mlp: Mlp,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub curve: Vec<f64>,
}

/// Mini-batch gradient descent from `init`, keeping the iterate with the
/// lowest full training loss (checked after every epoch).
pub fn train(init: Mlp, xs: &[Vec<f64>], ys: &[f64], cfg: &TrainConfig) -> Result<TrainResult> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::InvalidArgument(format!(
            "need matching non-empty samples, got {} inputs and {} responses",
            xs.len(),
            ys.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mlp = init;
    let np = mlp.n_params();
    let mut theta = mlp.params();
    let mut m1 = vec![0.0; np];
    let mut m2 = vec![0.0; np];
    let mut step: i32 = 0;
    let batch = cfg.batch.clamp(1, xs.len());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut best = (mlp.clone(), 0usize, mlp.mse(xs, ys));
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let frac = if cfg.epochs > 1 { epoch as f64 / (cfg.epochs - 1) as f64 } else { 0.0 };
        let lr_scale = 1.0 + (cfg.final_lr_factor - 1.0) * frac;
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let (_, g) = mlp.loss_and_grad(&bx, &by);
            step += 1;
            match cfg.optimizer {
                Optimizer::Momentum { lr, momentum } => {
                    for k in 0..np {
                        m1[k] = momentum * m1[k] - lr * lr_scale * g[k];
                        theta[k] += m1[k];
                    }
                }
                Optimizer::Adam { lr, beta1, beta2, eps } => {
                    let (c1, c2) = (1.0 - beta1.powi(step), 1.0 - beta2.powi(step));
                    for k in 0..np {
                        m1[k] = beta1 * m1[k] + (1.0 - beta1) * g[k];
                        m2[k] = beta2 * m2[k] + (1.0 - beta2) * g[k] * g[k];
                        theta[k] -= lr * lr_scale * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
                    }
                }
            }
            mlp.set_params(&theta);
        }
        let loss = mlp.mse(xs, ys);
        curve.push(loss);
        if !loss.is_finite() {
            break;
        }
        if loss < best.2 {
            best = (mlp.clone(), epoch + 1, loss);
        }
    }
    if !best.2.is_finite() {
        return Err(Error::Diverged("no finite training loss".into()));
    }
    Ok(TrainResult {
        mlp: best.0,
        best_epoch: best.1,
        best_loss: best.2,
        curve,
    })
}

/// A fitted network with truncation level `beta`.
#[derive(Clone, Debug)]
pub struct FittedEstimator {
    pub mlp: Mlp,
    pub beta: f64,
    pub depth: usize,
    pub width: usize,
    pub train: TrainResult,
}

impl FittedEstimator {
    pub fn predict(&self, x: &[f64]) -> f64 {
        truncate(self.mlp.predict(x), self.beta)
    }

    pub fn network(&self) -> Network {
        self.mlp.to_network()
    }
}

/// Fits the truncated least-squares network estimator with the
/// architecture from [`arch_for`] and `beta = c2 ln n`.
pub fn fit_least_squares(data: &Dataset, cfg: &EstimatorConfig) -> Result<FittedEstimator> {
    fit(&data.xs, &data.ys, cfg)
}

pub fn fit(xs: &[Vec<f64>], ys: &[f64], cfg: &EstimatorConfig) -> Result<FittedEstimator> {
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    let (depth, width) = arch_for(n, cfg.p, cfg.d_star, cfg.c3, cfg.c4);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x5eed);
    let init = Mlp::with_arch(xs[0].len(), depth, width, &mut rng);
    let tr = train(init, xs, ys, &cfg.train)?;
    Ok(FittedEstimator {
        mlp: tr.mlp.clone(),
        beta: cfg.c2 * (n as f64).ln(),
        depth,
        width,
        train: tr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_example() {
        assert_eq!(arch_for(10000, 2.0, 1, 1.0, 1.0), (10, 3));
        assert_eq!(arch_for(1, 2.0, 1, 1.0, 1.0), (1, 1));
    }

    #[test]
    fn truncation() {
        assert_eq!(truncate(5.0, 2.0), 2.0);
        assert_eq!(truncate(-5.0, 2.0), -2.0);
        assert_eq!(truncate(0.5, 2.0), 0.5);
    }

    #[test]
    fn network_conversion_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::with_arch(3, 3, 5, &mut rng);
        let mut m2 = m.clone();
        let mut p = m.params();
        p.iter_mut().for_each(|v| *v += 0.1);
        m2.set_params(&p);
        let net = m2.to_network();
        assert_eq!(net.depth(), 3);
        for x in [[0.1, -0.2, 0.3], [1.0, 0.5, -1.0]] {
            assert!((net.eval1(&x).unwrap() - m2.predict(&x)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = Mlp::new(&[2, 4, 3, 1], &mut rng);
        let mut p = m.params();
        p.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        m.set_params(&p);
        let x = [0.3, -0.7];
        assert!(m.min_abs_preactivation(&x) > 1e-4);
        let (_, g) = m.loss_and_grad(&[&x], &[0.2]);
        let h = 1e-6;
        for k in 0..p.len() {
            let mut q = p.clone();
            q[k] += h;
            m.set_params(&q);
            let up = m.mse(&[x.to_vec()], &[0.2]);
            q[k] -= 2.0 * h;
            m.set_params(&q);
            let down = m.mse(&[x.to_vec()], &[0.2]);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn training_fits_a_line() {
        let xs: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64 / 32.0 - 1.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x[0] + 0.1).collect();
        let cfg = EstimatorConfig {
            c3: 0.3,
            c4: 2.0,
            train: TrainConfig {
                epochs: 300,
                batch: 16,
                ..Default::default()
            },
            ..Default::default()
        };
        let fitted = fit(&xs, &ys, &cfg).unwrap();
        assert!(fitted.train.best_loss < 1e-3, "{}", fitted.train.best_loss);
        assert!(fitted.train.curve.len() == 300);
        let again = fit(&xs, &ys, &cfg).unwrap();
        assert_eq!(fitted.mlp, again.mlp);
    }
}
