//! A minimal reverse-mode differentiation tape over vector-valued nodes.
//!
//! The op set is fixed to what the models need: slicing and concatenation,
//! elementwise arithmetic, affine maps, ReLU/tanh/exp, Gaussian log densities,
//! Bernoulli log-masses from logits and log-sum-exp. Nodes are appended in
//! evaluation order, so a single reverse sweep computes all adjoints.
//!
//! ```
//! use vrbound::tape::Tape;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(vec![1.0, 2.0]);
//! let y = tape.mul(x, x);
//! let s = tape.sum(y);
//! let grads = tape.backward(s);
//! assert_eq!(tape.scalar(s), 5.0);
//! assert_eq!(grads.wrt(x), vec![2.0, 4.0]);
//! ```

use crate::numeric::{logsumexp, HALF_LN_2PI};

/// Probabilities from a Bernoulli decoder are clamped to `[P_MIN, 1 - P_MIN]`.
pub const P_MIN: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Slice { src: usize, start: usize },
    Concat(Vec<usize>),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Exp(usize),
    Tanh(usize),
    Relu(usize),
    Affine { w: usize, x: usize, b: usize, rows: usize, cols: usize },
    Sum(usize),
    Dot(usize, usize),
    GaussianLogPdf { x: usize, mean: usize, log_sd: usize },
    BernoulliLogits { logits: usize, target: Vec<f64> },
    LogSumExp(usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for one reverse sweep. Not shared across threads.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if `v` did not influence the output.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        let g = &self.grads[v.0];
        if g.is_empty() {
            vec![0.0; self.lens[v.0]]
        } else {
            g.clone()
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = match op {
            Op::Leaf => true,
            Op::Const => false,
            _ => inputs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Const, &[])
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = &self.nodes[v.0].value;
        debug_assert_eq!(val.len(), 1);
        val[0]
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Var {
        let value = self.nodes[src.0].value[start..start + len].to_vec();
        self.push(value, Op::Slice { src: src.0, start }, &[src.0])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::new();
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(value, Op::Concat(idx.clone()), &idx)
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.len(), vb.len(), "elementwise op on different lengths");
        va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes[a.0].value.iter().map(|&x| f(x)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x + y);
        self.push(v, Op::Add(a.0, b.0), &[a.0, b.0])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a.0, b.0), &[a.0, b.0])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a.0, b.0), &[a.0, b.0])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.map(a, |x| c * x);
        self.push(v, Op::Scale(a.0, c), &[a.0])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::exp);
        self.push(v, Op::Exp(a.0), &[a.0])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.map(a, f64::tanh);
        self.push(v, Op::Tanh(a.0), &[a.0])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.map(a, |x| x.max(0.0));
        self.push(v, Op::Relu(a.0), &[a.0])
    }

    /// `W x + b` with `W` stored row-major as `rows × cols`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var, rows: usize, cols: usize) -> Var {
        let (wv, xv, bv) = (&self.nodes[w.0].value, &self.nodes[x.0].value, &self.nodes[b.0].value);
        assert_eq!(wv.len(), rows * cols, "affine weight shape");
        assert_eq!(xv.len(), cols, "affine input length");
        assert_eq!(bv.len(), rows, "affine bias length");
        let mut out = bv.clone();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wv[r * cols..(r + 1) * cols];
            *o += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
        }
        self.push(
            out,
            Op::Affine {
                w: w.0,
                x: x.0,
                b: b.0,
                rows,
                cols,
            },
            &[w.0, x.0, b.0],
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        self.push(vec![s], Op::Sum(a.0), &[a.0])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let s = self.zip(a, b, |x, y| x * y).iter().sum();
        self.push(vec![s], Op::Dot(a.0, b.0), &[a.0, b.0])
    }

    /// `Σ_i log N(x_i; mean_i, exp(log_sd_i)²)`. `mean` and `log_sd` may have
    /// length 1, in which case they are broadcast.
    pub fn gaussian_log_pdf(&mut self, x: Var, mean: Var, log_sd: Var) -> Var {
        let n = self.nodes[x.0].value.len();
        let (xv, mv, lv) = (
            &self.nodes[x.0].value,
            &self.nodes[mean.0].value,
            &self.nodes[log_sd.0].value,
        );
        assert!(mv.len() == n || mv.len() == 1, "gaussian mean length");
        assert!(lv.len() == n || lv.len() == 1, "gaussian log_sd length");
        let mut total = 0.0;
        for i in 0..n {
            let m = mv[if mv.len() == 1 { 0 } else { i }];
            let ls = lv[if lv.len() == 1 { 0 } else { i }];
            let z = (xv[i] - m) * (-ls).exp();
            total += -0.5 * z * z - ls - HALF_LN_2PI;
        }
        self.push(
            vec![total],
            Op::GaussianLogPdf {
                x: x.0,
                mean: mean.0,
                log_sd: log_sd.0,
            },
            &[x.0, mean.0, log_sd.0],
        )
    }

    /// `Σ_i log Bern(target_i; clamp(sigmoid(logits_i)))`.
    pub fn bernoulli_log_pmf(&mut self, logits: Var, target: &[f64]) -> Var {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.len(), target.len(), "bernoulli target length");
        let total = lv
            .iter()
            .zip(target)
            .map(|(&l, &t)| {
                let p = squash(l);
                t * p.ln() + (1.0 - t) * (1.0 - p).ln()
            })
            .sum();
        self.push(
            vec![total],
            Op::BernoulliLogits {
                logits: logits.0,
                target: target.to_vec(),
            },
            &[logits.0],
        )
    }

    pub fn logsumexp(&mut self, a: Var) -> Var {
        let v = logsumexp(&self.nodes[a.0].value);
        self.push(vec![v], Op::LogSumExp(a.0), &[a.0])
    }

    /// Reverse sweep from a scalar output with unit seed.
    pub fn backward(&self, output: Var) -> Gradients {
        self.backward_seeded(&[(output, 1.0)])
    }

    /// Reverse sweep from several scalar outputs, each with its own seed;
    /// yields the gradient of `Σ seed_i · output_i`.
    pub fn backward_seeded(&self, seeds: &[(Var, f64)]) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); n];
        let lens: Vec<usize> = self.nodes.iter().map(|nd| nd.value.len()).collect();
        let mut top = 0;
        for &(v, s) in seeds {
            debug_assert_eq!(lens[v.0], 1, "seeded output must be scalar");
            target(&mut grads, &lens, v.0)[0] += s;
            top = top.max(v.0);
        }
        for i in (0..=top).rev() {
            if grads[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            self.propagate(i, &g, &mut grads, &lens);
            grads[i] = g;
        }
        Gradients { grads, lens }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Vec<f64>], lens: &[usize]) {
        let node = &self.nodes[i];
        let live = |j: usize| self.nodes[j].needs_grad;
        match &node.op {
            Op::Leaf | Op::Const => {}
            Op::Slice { src, start } => {
                if live(*src) {
                    let t = target(grads, lens, *src);
                    for (acc, gk) in t[*start..*start + g.len()].iter_mut().zip(g) {
                        *acc += gk;
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    if live(p) {
                        let t = target(grads, lens, p);
                        for (acc, gk) in t.iter_mut().zip(&g[off..off + lens[p]]) {
                            *acc += gk;
                        }
                    }
                    off += lens[p];
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if live(*a) {
                    let t = target(grads, lens, *a);
                    for (acc, gk) in t.iter_mut().zip(g) {
                        *acc += gk;
                    }
                }
                if live(*b) {
                    let t = target(grads, lens, *b);
                    for (acc, gk) in t.iter_mut().zip(g) {
                        *acc += sign * gk;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if live(*a) {
                    let t = target(grads, lens, *a);
                    for k in 0..g.len() {
                        t[k] += g[k] * vb[k];
                    }
                }
                if live(*b) {
                    let t = target(grads, lens, *b);
                    for k in 0..g.len() {
                        t[k] += g[k] * va[k];
                    }
                }
            }
            Op::Scale(a, c) => {
                let t = target(grads, lens, *a);
                for (acc, gk) in t.iter_mut().zip(g) {
                    *acc += c * gk;
                }
            }
            Op::Exp(a) => {
                let t = target(grads, lens, *a);
                for k in 0..g.len() {
                    t[k] += g[k] * node.value[k];
                }
            }
            Op::Tanh(a) => {
                let t = target(grads, lens, *a);
                for k in 0..g.len() {
                    let y = node.value[k];
                    t[k] += g[k] * (1.0 - y * y);
                }
            }
            Op::Relu(a) => {
                let va = &self.nodes[*a].value;
                let t = target(grads, lens, *a);
                for k in 0..g.len() {
                    if va[k] > 0.0 {
                        t[k] += g[k];
                    }
                }
            }
            Op::Affine { w, x, b, rows, cols } => {
                let (wv, xv) = (&self.nodes[*w].value, &self.nodes[*x].value);
                let (rows, cols) = (*rows, *cols);
                if live(*b) {
                    let t = target(grads, lens, *b);
                    for r in 0..rows {
                        t[r] += g[r];
                    }
                }
                if live(*w) {
                    let gw = target(grads, lens, *w);
                    for r in 0..rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            for (acc, xc) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *acc += gr * xc;
                            }
                        }
                    }
                }
                if live(*x) {
                    let gx = target(grads, lens, *x);
                    for r in 0..rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            for (acc, wc) in gx.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                                *acc += gr * wc;
                            }
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let t = target(grads, lens, *a);
                for acc in t.iter_mut() {
                    *acc += g[0];
                }
            }
            Op::Dot(a, b) => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                if live(*a) {
                    let t = target(grads, lens, *a);
                    for k in 0..vb.len() {
                        t[k] += g[0] * vb[k];
                    }
                }
                if live(*b) {
                    let t = target(grads, lens, *b);
                    for k in 0..va.len() {
                        t[k] += g[0] * va[k];
                    }
                }
            }
            Op::GaussianLogPdf { x, mean, log_sd } => {
                let (xv, mv, lv) = (
                    &self.nodes[*x].value,
                    &self.nodes[*mean].value,
                    &self.nodes[*log_sd].value,
                );
                let n = xv.len();
                let mut dx = vec![0.0; n];
                let mut dm = vec![0.0; mv.len()];
                let mut dl = vec![0.0; lv.len()];
                for k in 0..n {
                    let mk = if mv.len() == 1 { 0 } else { k };
                    let lk = if lv.len() == 1 { 0 } else { k };
                    let inv_sd = (-lv[lk]).exp();
                    let z = (xv[k] - mv[mk]) * inv_sd;
                    dx[k] = -g[0] * z * inv_sd;
                    dm[mk] += g[0] * z * inv_sd;
                    dl[lk] += g[0] * (z * z - 1.0);
                }
                for (j, d) in [(*x, dx), (*mean, dm), (*log_sd, dl)] {
                    if live(j) {
                        let t = target(grads, lens, j);
                        for (acc, v) in t.iter_mut().zip(&d) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::BernoulliLogits { logits, target: tv } => {
                let lv = &self.nodes[*logits].value;
                let t = target(grads, lens, *logits);
                for k in 0..lv.len() {
                    let raw = sigmoid(lv[k]);
                    // flat where the clamp is active
                    if raw > P_MIN && raw < 1.0 - P_MIN {
                        t[k] += g[0] * (tv[k] - raw);
                    }
                }
            }
            Op::LogSumExp(a) => {
                let va = &self.nodes[*a].value;
                let lse = node.value[0];
                if lse.is_finite() {
                    let t = target(grads, lens, *a);
                    for k in 0..va.len() {
                        t[k] += g[0] * (va[k] - lse).exp();
                    }
                }
            }
        }
    }
}

/// Adjoint buffer of node `j`, allocated on first use.
fn target<'g>(grads: &'g mut [Vec<f64>], lens: &[usize], j: usize) -> &'g mut [f64] {
    if grads[j].is_empty() {
        grads[j] = vec![0.0; lens[j]];
    }
    &mut grads[j]
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid clamped to `[P_MIN, 1 - P_MIN]`.
pub fn squash(x: f64) -> f64 {
    sigmoid(x).clamp(P_MIN, 1.0 - P_MIN)
}
