//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns gradients for the parameters and for any
//! recorded node. Parameters are borrowed from a [`Params`] store instead of
//! copied onto the tape. Attention, layer norm, cross-entropy and the loss
//! terms are fused ops with hand-written adjoints, which keeps the tape short
//! and the finite-difference checks in the tests meaningful.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Named parameter tensors, kept in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: BTreeMap<String, usize>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    /// Adds a tensor. Panics on a duplicate name, which is a programming error.
    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: usize) -> &Array2<f64> {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Array2<f64> {
        &mut self.values[id]
    }

    pub fn by_name(&self, name: &str) -> Option<&Array2<f64>> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.values.iter_mut()
    }

    /// Total number of scalar entries.
    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }
}

/// Block layout for [`Tape::attention`]: `batch` independent blocks, each
/// with `lq` query rows and `lk` key/value rows stacked row-wise.
#[derive(Debug, Clone)]
pub struct AttnLayout {
    pub batch: usize,
    pub lq: usize,
    pub lk: usize,
    pub heads: usize,
    /// Number of leading valid keys per block; later keys are padding.
    pub key_len: Vec<usize>,
    /// Query `i` may only see keys `j <= i`.
    pub causal: bool,
}

impl AttnLayout {
    fn visible(&self, b: usize, i: usize, j: usize) -> bool {
        j < self.key_len[b] && (!self.causal || j <= i)
    }
}

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Tanh(Var),
    Relu(Var),
    Dropout(Var, Array2<f64>),
    Gather {
        table: Var,
        idx: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        layout: AttnLayout,
        /// Softmax weights per (block, head), each `lq x lk`.
        probs: Vec<Array2<f64>>,
    },
    MeanPool {
        x: Var,
        len: usize,
        lengths: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Array2<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    Kl {
        m: Var,
        s: Var,
    },
    Combine(Vec<(Var, f64)>),
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads {
    params: Vec<Option<Array2<f64>>>,
    nodes: Vec<Option<Array2<f64>>>,
}

impl Grads {
    /// Gradient for parameter `id`; `None` if the loss does not depend on it.
    pub fn param(&self, id: usize) -> Option<&Array2<f64>> {
        self.params[id].as_ref()
    }

    /// Gradient for a non-parameter node such as a leaf input.
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.nodes[v.0].as_ref()
    }

    pub fn into_params(self) -> Vec<Option<Array2<f64>>> {
        self.params
    }
}

pub struct Tape<'p> {
    params: &'p Params,
    nodes: Vec<Node>,
}

const LN_EPS: f64 = 1e-5;

fn row_slice(a: &Array2<f64>, r: usize) -> &[f64] {
    let c = a.ncols();
    &a.as_slice().expect("standard layout")[r * c..(r + 1) * c]
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p Params) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("non-parameter nodes own their value"),
        }
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.dim(), (1, 1));
        a[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        // Everything downstream indexes raw row slices, so keep one layout.
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input or constant. Its gradient is available through [`Grads::wrt`].
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: usize) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Parameter by name; panics if it does not exist (a model-wiring bug).
    pub fn named(&mut self, name: &str) -> Var {
        let id = self
            .params
            .id(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.param(id)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// `a + b` with the `1 x n` row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.value(b).nrows(), 1);
        let out = self.value(a) + self.value(b);
        self.push(out, Op::AddRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Multiplies by a fixed mask (already scaled by `1/(1-p)`).
    pub fn dropout(&mut self, a: Var, mask: Array2<f64>) -> Var {
        let out = self.value(a) * &mask;
        self.push(out, Op::Dropout(a, mask))
    }

    /// `x W + b` for a weight `in x out` and a bias row `1 x out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Rows of `table` picked by `idx` (embedding lookup).
    pub fn gather(&mut self, table: Var, idx: Vec<usize>) -> Var {
        let t = self.value(table);
        let mut out = Array2::zeros((idx.len(), t.ncols()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&t.row(i));
        }
        self.push(out, Op::Gather { table, idx })
    }

    /// Row-wise layer normalization with gain and bias rows.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = Array2::zeros(xv.dim());
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for (r, row) in xv.rows().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(is);
            for (c, v) in row.iter().enumerate() {
                xhat[[r, c]] = (v - mean) * is;
            }
        }
        let out = &xhat * self.value(gain) + self.value(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Multi-head scaled dot-product attention over already projected
    /// queries, keys and values (head `h` owns columns `h*dh..(h+1)*dh`).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, layout: AttnLayout) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / layout.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        debug_assert_eq!(qv.nrows(), layout.batch * layout.lq);
        debug_assert_eq!(kv.nrows(), layout.batch * layout.lk);
        let mut out = Array2::zeros((qv.nrows(), d));
        let mut probs = Vec::with_capacity(layout.batch * layout.heads);
        let mut scores = vec![0.0; layout.lk];
        for b in 0..layout.batch {
            for h in 0..layout.heads {
                let cols = h * dh..(h + 1) * dh;
                let mut p = Array2::zeros((layout.lq, layout.lk));
                for i in 0..layout.lq {
                    let qi = &row_slice(qv, b * layout.lq + i)[cols.clone()];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate() {
                        if layout.visible(b, i, j) {
                            let kj = &row_slice(kv, b * layout.lk + j)[cols.clone()];
                            *s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                            max = max.max(*s);
                        }
                    }
                    let mut total = 0.0;
                    for (j, s) in scores.iter().enumerate() {
                        if layout.visible(b, i, j) {
                            let e = (s - max).exp();
                            p[[i, j]] = e;
                            total += e;
                        }
                    }
                    let mut orow = out.row_mut(b * layout.lq + i);
                    for j in 0..layout.lk {
                        if p[[i, j]] == 0.0 {
                            continue;
                        }
                        p[[i, j]] /= total;
                        let w = p[[i, j]];
                        let vj = &row_slice(vv, b * layout.lk + j)[cols.clone()];
                        for (c, x) in cols.clone().zip(vj) {
                            orow[c] += w * x;
                        }
                    }
                }
                probs.push(p);
            }
        }
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                layout,
                probs,
            },
        )
    }

    /// Mean of the first `lengths[b]` rows of each `len`-row block.
    pub fn mean_pool(&mut self, x: Var, len: usize, lengths: Vec<usize>) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros((lengths.len(), xv.ncols()));
        for (b, &l) in lengths.iter().enumerate() {
            let mut row = out.row_mut(b);
            for t in 0..l {
                row += &xv.row(b * len + t);
            }
            row /= l as f64;
        }
        self.push(out, Op::MeanPool { x, len, lengths })
    }

    /// `sum_r -log softmax(logits_r)[target_r]` over rows with a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>) -> Var {
        let lv = self.value(logits);
        let mut probs = Array2::zeros(lv.dim());
        let mut total = 0.0;
        for (r, row) in lv.rows().into_iter().enumerate() {
            let Some(t) = targets[r] else { continue };
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for (c, v) in row.iter().enumerate() {
                probs[[r, c]] = (v - max).exp() / z;
            }
            total += z.ln() + max - row[t];
        }
        self.push(
            Array2::from_elem((1, 1), total),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
        )
    }

    /// Mean squared error of an `n x 1` prediction column.
    pub fn mse(&mut self, pred: Var, target: Vec<f64>) -> Var {
        let pv = self.value(pred);
        let n = target.len() as f64;
        let total: f64 = pv.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum();
        self.push(Array2::from_elem((1, 1), total / n), Op::Mse { pred, target })
    }

    /// Mean over all entries of `exp(s) - (1 + s) + m^2`.
    pub fn kl(&mut self, m: Var, s: Var) -> Var {
        let (mv, sv) = (self.value(m), self.value(s));
        let n = mv.len() as f64;
        let total: f64 = mv
            .iter()
            .zip(sv.iter())
            .map(|(m, s)| s.exp() - (1.0 + s) + m * m)
            .sum();
        self.push(Array2::from_elem((1, 1), total / n), Op::Kl { m, s })
    }

    /// Linear combination of scalar nodes.
    pub fn combine(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let total: f64 = terms.iter().map(|&(v, c)| c * self.scalar(v)).sum();
        self.push(Array2::from_elem((1, 1), total), Op::Combine(terms))
    }

    /// Gradients of the scalar node `root` with respect to every parameter
    /// and every node it depends on.
    pub fn backward(&self, root: Var) -> Grads {
        let mut nodes: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params: Vec<Option<Array2<f64>>> = (0..self.params.len()).map(|_| None).collect();
        nodes[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let Some(g) = nodes[i].take() else { continue };
            let mut acc = |v: Var, delta: Array2<f64>| {
                let slot = match self.nodes[v.0].op {
                    Op::Param(id) => &mut params[id],
                    _ => &mut nodes[v.0],
                };
                match slot {
                    Some(s) => *s += &delta,
                    None => *slot = Some(delta),
                }
            };
            let out = self.nodes[i].value.as_ref();
            match &self.nodes[i].op {
                Op::Leaf | Op::Param(_) => {}
                &Op::MatMul(a, b) => {
                    acc(a, g.dot(&self.value(b).t()));
                    acc(b, self.value(a).t().dot(&g));
                }
                &Op::Add(a, b) => {
                    acc(a, g.clone());
                    acc(b, g.clone());
                }
                &Op::AddRow(a, b) => {
                    acc(b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(a, g.clone());
                }
                &Op::Mul(a, b) => {
                    acc(a, &g * self.value(b));
                    acc(b, &g * self.value(a));
                }
                &Op::Scale(a, c) => acc(a, &g * c),
                &Op::Exp(a) => acc(a, &g * out.unwrap()),
                &Op::Tanh(a) => acc(a, &g * &out.unwrap().mapv(|y| 1.0 - y * y)),
                &Op::Relu(a) => {
                    let mut d = g.clone();
                    d.zip_mut_with(out.unwrap(), |d, &y| {
                        if y <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(a, d);
                }
                Op::Dropout(a, mask) => acc(*a, &g * mask),
                Op::Gather { table, idx } => {
                    let t = self.value(*table);
                    let mut d = Array2::zeros(t.dim());
                    for (r, &row) in idx.iter().enumerate() {
                        let mut dst = d.row_mut(row);
                        dst += &g.row(r);
                    }
                    acc(*table, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    acc(*bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*gain, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * self.value(*gain);
                    let n = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dr = dxhat.row(r);
                        let hr = xhat.row(r);
                        let s1 = dr.sum();
                        let s2: f64 = dr.iter().zip(hr.iter()).map(|(a, b)| a * b).sum();
                        for c in 0..xhat.ncols() {
                            dx[[r, c]] = inv_std[r] / n * (n * dr[c] - s1 - hr[c] * s2);
                        }
                    }
                    acc(*x, dx);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    layout,
                    probs,
                } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qv.ncols();
                    let dh = d / layout.heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut dq = Array2::zeros(qv.dim());
                    let mut dk = Array2::zeros(kv.dim());
                    let mut dv = Array2::zeros(vv.dim());
                    let mut dp = vec![0.0; layout.lk];
                    for b in 0..layout.batch {
                        for h in 0..layout.heads {
                            let p = &probs[b * layout.heads + h];
                            let c0 = h * dh;
                            for i in 0..layout.lq {
                                let qr = b * layout.lq + i;
                                let go = &row_slice(&g, qr)[c0..c0 + dh];
                                // dP_ij = dO_i . V_j, then the softmax adjoint.
                                let mut dot = 0.0;
                                for j in 0..layout.lk {
                                    let pij = p[[i, j]];
                                    if pij == 0.0 {
                                        dp[j] = 0.0;
                                        continue;
                                    }
                                    let kr = b * layout.lk + j;
                                    let vj = &row_slice(vv, kr)[c0..c0 + dh];
                                    dp[j] = go.iter().zip(vj).map(|(x, y)| x * y).sum();
                                    dot += pij * dp[j];
                                    for c in 0..dh {
                                        dv[[kr, c0 + c]] += pij * go[c];
                                    }
                                }
                                for j in 0..layout.lk {
                                    let pij = p[[i, j]];
                                    if pij == 0.0 {
                                        continue;
                                    }
                                    let ds = pij * (dp[j] - dot) * scale;
                                    let kr = b * layout.lk + j;
                                    for c in 0..dh {
                                        dq[[qr, c0 + c]] += ds * kv[[kr, c0 + c]];
                                        dk[[kr, c0 + c]] += ds * qv[[qr, c0 + c]];
                                    }
                                }
                            }
                        }
                    }
                    acc(*q, dq);
                    acc(*k, dk);
                    acc(*v, dv);
                }
                Op::MeanPool { x, len, lengths } => {
                    let xv = self.value(*x);
                    let mut d = Array2::zeros(xv.dim());
                    for (b, &l) in lengths.iter().enumerate() {
                        let gb = g.row(b).mapv(|v| v / l as f64);
                        for t in 0..l {
                            let mut dst = d.row_mut(b * len + t);
                            dst += &gb;
                        }
                    }
                    acc(*x, d);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let gs = g[[0, 0]];
                    let mut d = probs * gs;
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            d[[r, t]] -= gs;
                        }
                    }
                    acc(*logits, d);
                }
                Op::Mse { pred, target } => {
                    let gs = g[[0, 0]];
                    let n = target.len() as f64;
                    let pv = self.value(*pred);
                    let mut d = Array2::zeros(pv.dim());
                    for (r, t) in target.iter().enumerate() {
                        d[[r, 0]] = gs * 2.0 * (pv[[r, 0]] - t) / n;
                    }
                    acc(*pred, d);
                }
                Op::Kl { m, s } => {
                    let gs = g[[0, 0]];
                    let mv = self.value(*m);
                    let n = mv.len() as f64;
                    acc(*m, mv.mapv(|m| gs * 2.0 * m / n));
                    acc(*s, self.value(*s).mapv(|s| gs * (s.exp() - 1.0) / n));
                }
                Op::Combine(terms) => {
                    let gs = g[[0, 0]];
                    for &(v, c) in terms {
                        acc(v, Array2::from_elem((1, 1), gs * c));
                    }
                }
            }
            nodes[i] = Some(g);
        }
        Grads { params, nodes }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng as _;

    fn rand_mat(rng: &mut crate::rng::Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Checks every parameter entry of `f` against central differences.
    fn check(params: &mut Params, f: impl Fn(&mut Tape) -> Var) {
        let grads = {
            let mut tape = Tape::new(params);
            let root = f(&mut tape);
            tape.backward(root).into_params()
        };
        let h = 1e-5;
        for id in 0..params.len() {
            for idx in 0..params.get(id).len() {
                let orig = params.get(id).as_slice().unwrap()[idx];
                let mut eval = |x: f64| {
                    params.get_mut(id).as_slice_mut().unwrap()[idx] = x;
                    let mut tape = Tape::new(params);
                    let root = f(&mut tape);
                    tape.scalar(root)
                };
                let num = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
                eval(orig);
                let ana = grads[id].as_ref().map_or(0.0, |g| g.as_slice().unwrap()[idx]);
                let err = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
                assert!(err < 1e-5, "{}[{idx}]: analytic {ana} numeric {num}", params.name(id));
            }
        }
    }

    #[test]
    fn elementwise_and_matmul_grads() {
        let mut rng = seeded(1);
        let mut p = Params::new();
        p.insert("a", rand_mat(&mut rng, 3, 4));
        p.insert("b", rand_mat(&mut rng, 4, 2));
        p.insert("r", rand_mat(&mut rng, 1, 2));
        let t = vec![0.3, -0.2, 0.9];
        check(&mut p, |tape| {
            let (a, b, r) = (tape.named("a"), tape.named("b"), tape.named("r"));
            let x = tape.affine(a, b, r);
            let y = tape.tanh(x);
            let e = tape.exp(y);
            let z = tape.mul(e, y);
            let z = tape.scale(z, 0.7);
            let z = tape.relu(z);
            let col = tape.leaf(Array2::from_shape_vec((2, 1), vec![1.0, -0.5]).unwrap());
            let pred = tape.matmul(z, col);
            let l1 = tape.mse(pred, t.clone());
            let l2 = tape.kl(y, x);
            tape.combine(vec![(l1, 0.8), (l2, 0.3)])
        });
    }

    #[test]
    fn layer_norm_gather_pool_ce_grads() {
        let mut rng = seeded(2);
        let mut p = Params::new();
        p.insert("emb", rand_mat(&mut rng, 5, 6));
        p.insert("g", rand_mat(&mut rng, 1, 6));
        p.insert("b", rand_mat(&mut rng, 1, 6));
        p.insert("w", rand_mat(&mut rng, 6, 5));
        let mask = Array2::from_shape_fn((6, 6), |(r, c)| if (r + c) % 3 == 0 { 0.0 } else { 1.25 });
        check(&mut p, |tape| {
            let emb = tape.named("emb");
            let x = tape.gather(emb, vec![0, 3, 3, 1, 4, 2]);
            let x = tape.dropout(x, mask.clone());
            let (g, b) = (tape.named("g"), tape.named("b"));
            let y = tape.layer_norm(x, g, b);
            let w = tape.named("w");
            let logits = tape.matmul(y, w);
            let ce = tape.cross_entropy(logits, vec![Some(1), None, Some(4), Some(0), None, Some(2)]);
            let pooled = tape.mean_pool(y, 3, vec![2, 3]);
            let s = tape.scale(pooled, 0.5);
            let kl = tape.kl(pooled, s);
            tape.combine(vec![(ce, 1.0), (kl, 1.0)])
        });
    }

    #[test]
    fn attention_grads_causal_and_masked() {
        for causal in [false, true] {
            let mut rng = seeded(3);
            let mut p = Params::new();
            p.insert("q", rand_mat(&mut rng, 2 * 3, 4));
            p.insert("k", rand_mat(&mut rng, 2 * 3, 4));
            p.insert("v", rand_mat(&mut rng, 2 * 3, 4));
            p.insert("w", rand_mat(&mut rng, 4, 3));
            check(&mut p, |tape| {
                let (q, k, v) = (tape.named("q"), tape.named("k"), tape.named("v"));
                let layout = AttnLayout {
                    batch: 2,
                    lq: 3,
                    lk: 3,
                    heads: 2,
                    key_len: vec![3, 2],
                    causal,
                };
                let o = tape.attention(q, k, v, layout);
                let w = tape.named("w");
                let logits = tape.matmul(o, w);
                tape.cross_entropy(logits, vec![Some(0), Some(1), Some(2), Some(2), Some(1), None])
            });
        }
    }

    #[test]
    fn attention_rows_are_convex_combinations() {
        let mut p = Params::new();
        p.insert("q", Array2::zeros((2, 2)));
        p.insert("k", Array2::zeros((2, 2)));
        p.insert("v", Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let mut tape = Tape::new(&p);
        let (q, k, v) = (tape.named("q"), tape.named("k"), tape.named("v"));
        let layout = AttnLayout {
            batch: 1,
            lq: 2,
            lk: 2,
            heads: 1,
            key_len: vec![2],
            causal: true,
        };
        let o = tape.attention(q, k, v, layout);
        // Row 0 sees only key 0; row 1 averages both equally.
        assert_eq!(tape.value(o).row(0).to_vec(), vec![1.0, 2.0]);
        assert_eq!(tape.value(o).row(1).to_vec(), vec![2.0, 3.0]);
    }

    #[test]
    fn leaf_gradient_available() {
        let p = Params::new();
        let mut tape = Tape::new(&p);
        let x = tape.leaf(Array2::from_shape_vec((2, 1), vec![1.0, -2.0]).unwrap());
        let y = tape.mse(x, vec![0.0, 0.0]);
        let g = tape.backward(y);
        assert_eq!(g.wrt(x).unwrap().column(0).to_vec(), vec![1.0, -2.0]);
    }
}
