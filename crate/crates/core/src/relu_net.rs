//! Feedforward ReLU networks with affine output and the algebra used to
//! assemble larger networks from smaller ones.
//!
//! A network of depth `L` is `L + 1` affine maps with ReLU applied after
//! every map except the last. Weights are stored row-compressed: the
//! constructed networks are very wide but each neuron only reads a handful
//! of inputs.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Affine map `x -> W x + b` with `W` in compressed sparse row form.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    in_dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    bias: Vec<f64>,
}

impl Affine {
    /// Empty map with `in_dim` inputs and no outputs; rows are appended
    /// with [`Affine::push_row`].
    pub fn with_input(in_dim: usize) -> Self {
        Affine {
            in_dim,
            row_ptr: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            bias: Vec::new(),
        }
    }

    /// Appends one output row. Zero weights are dropped.
    pub fn push_row(&mut self, entries: &[(usize, f64)], bias: f64) {
        for &(c, v) in entries {
            assert!(c < self.in_dim, "column {c} out of range {}", self.in_dim);
            if v != 0.0 {
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.row_ptr.push(self.cols.len());
        self.bias.push(bias);
    }

    pub fn from_dense(weights: &[Vec<f64>], bias: &[f64]) -> Result<Self> {
        if weights.len() != bias.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                got: bias.len(),
            });
        }
        let in_dim = weights.first().map_or(0, |r| r.len());
        let mut a = Affine::with_input(in_dim);
        for (row, &b) in weights.iter().zip(bias) {
            if row.len() != in_dim {
                return Err(Error::DimensionMismatch {
                    expected: in_dim,
                    got: row.len(),
                });
            }
            let entries: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
            a.push_row(&entries, b);
        }
        Ok(a)
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Affine::with_input(n);
        for i in 0..n {
            a.push_row(&[(i, 1.0)], 0.0);
        }
        a
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Column indices and weights of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[s..e], &self.vals[s..e])
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.out_dim())
            .map(|i| {
                let mut r = vec![0.0; self.in_dim];
                let (c, v) = self.row(i);
                for (&c, &v) in c.iter().zip(v) {
                    r[c] += v;
                }
                r
            })
            .collect()
    }

    pub fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        out.reserve(self.out_dim());
        for i in 0..self.out_dim() {
            let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut acc = self.bias[i];
            for k in s..e {
                acc += self.vals[k] * x[self.cols[k]];
            }
            out.push(acc);
        }
    }

    /// `self ∘ inner`, i.e. `x -> W_self (W_inner x + b_inner) + b_self`.
    pub fn compose(&self, inner: &Affine) -> Result<Affine> {
        if self.in_dim != inner.out_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                got: inner.out_dim(),
            });
        }
        let mut out = Affine::with_input(inner.in_dim);
        let mut acc = vec![0.0; inner.in_dim];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; inner.in_dim];
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for i in 0..self.out_dim() {
            let (cs, vs) = self.row(i);
            let mut b = self.bias[i];
            for (&k, &w) in cs.iter().zip(vs) {
                b += w * inner.bias[k];
                let (ic, iv) = inner.row(k);
                for (&c, &v) in ic.iter().zip(iv) {
                    if !mark[c] {
                        mark[c] = true;
                        touched.push(c);
                    }
                    acc[c] += w * v;
                }
            }
            touched.sort_unstable();
            entries.clear();
            for &c in &touched {
                entries.push((c, acc[c]));
                acc[c] = 0.0;
                mark[c] = false;
            }
            touched.clear();
            out.push_row(&entries, b);
        }
        Ok(out)
    }

    /// Stacks maps sharing one input vertically (outputs concatenated).
    pub fn stack(parts: &[&Affine]) -> Result<Affine> {
        let in_dim = parts.first().map_or(0, |p| p.in_dim);
        let mut out = Affine::with_input(in_dim);
        for p in parts {
            if p.in_dim != in_dim {
                return Err(Error::DimensionMismatch {
                    expected: in_dim,
                    got: p.in_dim,
                });
            }
            out.append_rows(p, 0);
        }
        Ok(out)
    }

    /// Block-diagonal map: inputs and outputs both concatenated.
    pub fn block_diag(parts: &[&Affine]) -> Affine {
        let in_dim = parts.iter().map(|p| p.in_dim).sum();
        let mut out = Affine::with_input(in_dim);
        let mut offset = 0;
        for p in parts {
            out.append_rows(p, offset);
            offset += p.in_dim;
        }
        out
    }

    fn append_rows(&mut self, p: &Affine, col_offset: usize) {
        self.cols.extend(p.cols.iter().map(|c| c + col_offset));
        self.vals.extend_from_slice(&p.vals);
        let base = *self.row_ptr.last().unwrap();
        self.row_ptr.extend(p.row_ptr[1..].iter().map(|r| r + base));
        self.bias.extend_from_slice(&p.bias);
    }
}

/// Layer widths of a network: input, hidden layers, output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl NetworkArch {
    pub fn depth(&self) -> usize {
        self.hidden.len()
    }

    pub fn width(&self) -> usize {
        self.hidden.iter().copied().max().unwrap_or(0)
    }
}

/// ReLU network: `layers.len() - 1` hidden layers and an affine output.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Affine>,
}

impl Network {
    pub fn new(layers: Vec<Affine>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one affine map".into()));
        }
        for w in layers.windows(2) {
            if w[1].in_dim() != w[0].out_dim() {
                return Err(Error::DimensionMismatch {
                    expected: w[0].out_dim(),
                    got: w[1].in_dim(),
                });
            }
        }
        Ok(Network { layers })
    }

    /// Depth-0 network computing an affine map.
    pub fn affine(a: Affine) -> Self {
        Network { layers: vec![a] }
    }

    /// `f_id^depth` on `dim` coordinates: each hidden layer holds
    /// `relu(z)` and `relu(-z)` for every coordinate.
    pub fn identity(dim: usize, depth: usize) -> Self {
        if depth == 0 {
            return Network::affine(Affine::identity(dim));
        }
        let mut first = Affine::with_input(dim);
        for i in 0..dim {
            first.push_row(&[(i, 1.0)], 0.0);
            first.push_row(&[(i, -1.0)], 0.0);
        }
        let mut mid = Affine::with_input(2 * dim);
        for i in 0..dim {
            mid.push_row(&[(2 * i, 1.0), (2 * i + 1, -1.0)], 0.0);
            mid.push_row(&[(2 * i, -1.0), (2 * i + 1, 1.0)], 0.0);
        }
        let mut last = Affine::with_input(2 * dim);
        for i in 0..dim {
            last.push_row(&[(2 * i, 1.0), (2 * i + 1, -1.0)], 0.0);
        }
        let mut layers = vec![first];
        layers.extend(std::iter::repeat_n(mid, depth - 1));
        layers.push(last);
        Network { layers }
    }

    pub fn layers(&self) -> &[Affine] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.depth()].iter().map(|a| a.out_dim()).collect()
    }

    /// Maximum hidden width (0 for depth-0 networks).
    pub fn width(&self) -> usize {
        self.hidden_widths().into_iter().max().unwrap_or(0)
    }

    pub fn arch(&self) -> NetworkArch {
        NetworkArch {
            input_dim: self.input_dim(),
            hidden: self.hidden_widths(),
            output_dim: self.output_dim(),
        }
    }

    /// Nonzero weights over all layers.
    pub fn nnz(&self) -> usize {
        self.layers.iter().map(Affine::nnz).sum()
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.depth();
        for (l, a) in self.layers.iter().enumerate() {
            a.apply(&cur, &mut next);
            if l < last {
                next.iter_mut().for_each(|v| *v = relu(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Evaluates a scalar-output network.
    pub fn eval1(&self, x: &[f64]) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: self.output_dim(),
            });
        }
        Ok(self.eval(x)?[0])
    }

    /// `outer ∘ inner`. The outer first affine map is merged into the
    /// inner output map, so depths add and width is the larger of the two.
    pub fn compose(outer: &Network, inner: &Network) -> Result<Network> {
        let merged = outer.layers[0].compose(inner.layers.last().unwrap())?;
        let mut layers: Vec<Affine> = inner.layers[..inner.depth()].to_vec();
        layers.push(merged);
        layers.extend_from_slice(&outer.layers[1..]);
        Ok(Network { layers })
    }

    /// Runs networks of equal depth side by side on the same input and
    /// concatenates their outputs.
    pub fn parallel(nets: &[&Network]) -> Result<Network> {
        let first = nets
            .first()
            .ok_or_else(|| Error::InvalidArgument("parallel of no networks".into()))?;
        for n in nets {
            if n.depth() != first.depth() {
                return Err(Error::DepthMismatch(first.depth(), n.depth()));
            }
            if n.input_dim() != first.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: first.input_dim(),
                    got: n.input_dim(),
                });
            }
        }
        let mut layers = Vec::with_capacity(first.layers.len());
        let l0: Vec<&Affine> = nets.iter().map(|n| &n.layers[0]).collect();
        layers.push(Affine::stack(&l0)?);
        for l in 1..first.layers.len() {
            let parts: Vec<&Affine> = nets.iter().map(|n| &n.layers[l]).collect();
            layers.push(Affine::block_diag(&parts));
        }
        Ok(Network { layers })
    }

    /// Same function with exactly `target` hidden layers, by composing
    /// identity layers after the output.
    pub fn pad_depth(&self, target: usize) -> Result<Network> {
        if target < self.depth() {
            return Err(Error::InvalidArgument(format!(
                "cannot pad depth {} down to {target}",
                self.depth()
            )));
        }
        if target == self.depth() {
            return Ok(self.clone());
        }
        let id = Network::identity(self.output_dim(), target - self.depth());
        Network::compose(&id, self)
    }

    /// `Σ coeffs[i] * nets[i] + bias` for scalar-output networks of equal depth.
    pub fn linear_combine(nets: &[&Network], coeffs: &[f64], bias: f64) -> Result<Network> {
        if nets.len() != coeffs.len() {
            return Err(Error::DimensionMismatch {
                expected: nets.len(),
                got: coeffs.len(),
            });
        }
        let par = Network::parallel(nets)?;
        let mut head = Affine::with_input(par.output_dim());
        let mut entries = Vec::new();
        let mut off = 0;
        for (n, &c) in nets.iter().zip(coeffs) {
            for k in 0..n.output_dim() {
                entries.push((off + k, c));
            }
            off += n.output_dim();
        }
        head.push_row(&entries, bias);
        par.then_affine(&head)
    }

    /// `x -> self(a(x))`; depth unchanged.
    pub fn precompose_affine(&self, a: &Affine) -> Result<Network> {
        let mut layers = self.layers.clone();
        layers[0] = self.layers[0].compose(a)?;
        Ok(Network { layers })
    }

    /// `x -> a(self(x))`; depth unchanged.
    pub fn then_affine(&self, a: &Affine) -> Result<Network> {
        let mut layers = self.layers.clone();
        let last = layers.len() - 1;
        layers[last] = a.compose(&self.layers[last])?;
        Ok(Network { layers })
    }

    /// Plain-text form: a header `D L k1 .. kL OUT`, then one line per
    /// neuron of every affine map listing its dense weights and bias.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.write_text(&mut s);
        s
    }

    pub fn write_text(&self, s: &mut String) {
        let _ = write!(s, "{} {}", self.input_dim(), self.depth());
        for w in self.hidden_widths() {
            let _ = write!(s, " {w}");
        }
        let _ = writeln!(s, " {}", self.output_dim());
        for a in &self.layers {
            for (row, b) in a.to_dense().iter().zip(a.bias()) {
                for w in row {
                    let _ = write!(s, "{w} ");
                }
                let _ = writeln!(s, "{b}");
            }
        }
    }

    /// Parses [`Network::to_text`] output. Blank lines and lines starting
    /// with `#` are skipped.
    pub fn from_text(text: &str) -> Result<Network> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or(Error::Parse {
            line: 0,
            msg: "missing header".into(),
        })?;
        let nums = parse_usizes(header, hl)?;
        if nums.len() < 3 {
            return Err(Error::Parse {
                line: hl,
                msg: "header needs at least D L OUT".into(),
            });
        }
        let depth = nums[1];
        if nums.len() != depth + 3 {
            return Err(Error::Parse {
                line: hl,
                msg: format!("header lists {} widths for depth {depth}", nums.len() - 3),
            });
        }
        let mut sizes = vec![nums[0]];
        sizes.extend_from_slice(&nums[2..]);
        let mut layers = Vec::with_capacity(depth + 1);
        for w in sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let mut a = Affine::with_input(n_in);
            for _ in 0..n_out {
                let (ln, line) = lines.next().ok_or(Error::Parse {
                    line: 0,
                    msg: "unexpected end of input".into(),
                })?;
                let vals = parse_f64s(line, ln)?;
                if vals.len() != n_in + 1 {
                    return Err(Error::Parse {
                        line: ln,
                        msg: format!("expected {} numbers, got {}", n_in + 1, vals.len()),
                    });
                }
                let entries: Vec<(usize, f64)> = vals[..n_in].iter().copied().enumerate().collect();
                a.push_row(&entries, vals[n_in]);
            }
            layers.push(a);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::Parse {
                line: ln,
                msg: "trailing data".into(),
            });
        }
        Network::new(layers)
    }
}

fn parse_usizes(line: &str, ln: usize) -> Result<Vec<usize>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<usize>().map_err(|e| Error::Parse {
                line: ln,
                msg: format!("{t:?}: {e}"),
            })
        })
        .collect()
}

fn parse_f64s(line: &str, ln: usize) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|e| Error::Parse {
                line: ln,
                msg: format!("{t:?}: {e}"),
            })
        })
        .collect()
}
