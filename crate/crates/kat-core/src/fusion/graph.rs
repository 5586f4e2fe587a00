//! Reverse-mode differentiation over row-major matrices.
//!
//! A [`Graph`] records operations as they execute; [`Graph::backward`] walks
//! the record in reverse and accumulates gradients. Attention, layer norm and
//! cross-entropy are single fused nodes with hand-written adjoints.

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct NodeId(usize);

/// One attention block: query rows `q_start..q_start+q_len` attend over key
/// rows `k_start..k_start+k_valid`. Rows of the key segment past `k_valid`
/// are padding and never receive weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AttnBlock {
    pub q_start: usize,
    pub q_len: usize,
    pub k_start: usize,
    pub k_valid: usize,
    pub causal: bool,
}

enum Op<T> {
    Leaf,
    Param(usize),
    Gather { table: NodeId, ids: Vec<usize> },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Array2<T>, inv_std: Vec<T> },
    Gelu(NodeId),
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, blocks: Vec<AttnBlock>, probs: Vec<Array2<T>> },
    SegmentMean { x: NodeId, segments: Vec<(usize, usize)> },
    CrossEntropy { logits: NodeId, targets: Vec<Option<usize>>, probs: Array2<T> },
}

struct Node<T> {
    value: Option<Array2<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-6;

/// Tape of operations over a borrowed parameter set.
pub(crate) struct Graph<'p, T: Scalar> {
    params: &'p [Array2<T>],
    param_nodes: Vec<Option<NodeId>>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p [Array2<T>]) -> Self {
        Self { params, param_nodes: vec![None; params.len()], nodes: Vec::new() }
    }

    fn push(&mut self, value: Option<Array2<T>>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> ArrayView2<'_, T> {
        match (&self.nodes[id.0].value, &self.nodes[id.0].op) {
            (Some(v), _) => v.view(),
            (None, Op::Param(i)) => self.params[*i].view(),
            _ => unreachable!("node without value"),
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn leaf(&mut self, value: Array2<T>) -> NodeId {
        self.push(Some(value), Op::Leaf, false)
    }

    /// Node for parameter `i`; repeated calls share one node.
    pub fn param(&mut self, i: usize) -> NodeId {
        if let Some(id) = self.param_nodes[i] {
            return id;
        }
        let id = self.push(None, Op::Param(i), true);
        self.param_nodes[i] = Some(id);
        id
    }

    pub fn gather(&mut self, table: NodeId, ids: Vec<usize>) -> NodeId {
        let t = self.value(table);
        let mut out = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&t.row(id));
        }
        let needs = self.needs(table);
        self.push(Some(out), Op::Gather { table, ids }, needs)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = self.value(a).dot(&self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(Some(out), Op::MatMul(a, b), needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = &self.value(a) + &self.value(b);
        let needs = self.needs(a) || self.needs(b);
        self.push(Some(out), Op::Add(a, b), needs)
    }

    /// `a + row`, broadcasting a `1 x n` row over every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let out = &self.value(a) + &self.value(row);
        let needs = self.needs(a) || self.needs(row);
        self.push(Some(out), Op::AddRow(a, row), needs)
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let n = T::from_usize(cols).unwrap();
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let mut xhat = Array2::zeros((rows, cols));
        let mut inv_std = Vec::with_capacity(rows);
        for (r, row) in xv.rows().into_iter().enumerate() {
            let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
            let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
            let is = T::one() / (var + eps).sqrt();
            for (c, &v) in row.iter().enumerate() {
                xhat[[r, c]] = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let out = &(&xhat * &self.value(gamma)) + &self.value(beta);
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(Some(out), Op::LayerNorm { x, gamma, beta, xhat, inv_std }, needs)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).mapv(gelu);
        let needs = self.needs(x);
        self.push(Some(out), Op::Gelu(x), needs)
    }

    /// Multi-head scaled dot-product attention over `blocks`. `q`, `k` and `v`
    /// hold all heads side by side; each head scores with `1/sqrt(d_head)`.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, blocks: Vec<AttnBlock>) -> NodeId {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let d = qv.ncols();
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut out = Array2::zeros((qv.nrows(), vv.ncols()));
        let mut probs = Vec::with_capacity(blocks.len() * heads);
        for b in &blocks {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qh = qv.slice(s![b.q_start..b.q_start + b.q_len, cols.clone()]);
                let kh = kv.slice(s![b.k_start..b.k_start + b.k_valid, cols.clone()]);
                let vh = vv.slice(s![b.k_start..b.k_start + b.k_valid, cols.clone()]);
                let mut p = qh.dot(&kh.t());
                p.mapv_inplace(|x| x * scale);
                softmax_rows(&mut p, b.causal);
                out.slice_mut(s![b.q_start..b.q_start + b.q_len, cols]).assign(&p.dot(&vh));
                probs.push(p);
            }
        }
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(Some(out), Op::Attention { q, k, v, heads, blocks, probs }, needs)
    }

    /// Mean of rows `start..start+count` for each segment, one output row each.
    pub fn segment_mean(&mut self, x: NodeId, segments: Vec<(usize, usize)>) -> NodeId {
        let xv = self.value(x);
        let mut out = Array2::zeros((segments.len(), xv.ncols()));
        for (i, &(start, count)) in segments.iter().enumerate() {
            let mean = xv.slice(s![start..start + count, ..]).sum_axis(Axis(0)) / T::from_usize(count).unwrap();
            out.row_mut(i).assign(&mean);
        }
        let needs = self.needs(x);
        self.push(Some(out), Op::SegmentMean { x, segments }, needs)
    }

    /// Summed negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`; rows with `None` are ignored. The result is `1 x 1`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<Option<usize>>) -> NodeId {
        let lv = self.value(logits);
        let mut probs = lv.to_owned();
        softmax_rows(&mut probs, false);
        let mut total = T::zero();
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let row = lv.row(r);
                let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let lse = max + row.iter().fold(T::zero(), |a, &v| a + (v - max).exp()).ln();
                total += lse - row[t];
            }
        }
        let needs = self.needs(logits);
        self.push(Some(Array2::from_elem((1, 1), total)), Op::CrossEntropy { logits, targets, probs }, needs)
    }

    /// Attention weight matrices recorded so far, block-major then head.
    pub fn attention_maps(&self) -> Vec<Array2<T>> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Attention { probs, .. } => Some(probs.clone()),
                _ => None,
            })
            .flatten()
            .collect()
    }

    /// Back-propagates `seed * d(root)` and returns per-parameter gradients
    /// (`None` for parameters the root does not depend on).
    pub fn backward(&self, root: NodeId, seed: T) -> Vec<Option<Array2<T>>> {
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let shape = self.value(root).dim();
        grads[root.0] = Some(Array2::from_elem(shape, seed));
        let mut param_grads: Vec<Option<Array2<T>>> = vec![None; self.params.len()];

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(i) => param_grads[*i] = Some(g),
                Op::Gather { table, ids } => {
                    let mut gt = Array2::zeros(self.value(*table).dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = gt.row_mut(id);
                        row += &g.row(r);
                    }
                    self.accumulate(&mut grads, *table, gt);
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        self.accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        self.accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        self.accumulate(&mut grads, *b, g.clone());
                    }
                    self.accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.accumulate(&mut grads, *row, gr);
                    }
                    self.accumulate(&mut grads, *a, g);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    if self.needs(*gamma) {
                        let gg = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.accumulate(&mut grads, *gamma, gg);
                    }
                    if self.needs(*beta) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.accumulate(&mut grads, *beta, gb);
                    }
                    if self.needs(*x) {
                        let dxhat = &g * &self.value(*gamma);
                        let n = T::from_usize(dxhat.ncols()).unwrap();
                        let mut dx = Array2::zeros(dxhat.dim());
                        for r in 0..dxhat.nrows() {
                            let dr = dxhat.row(r);
                            let xr = xhat.row(r);
                            let mean_d = dr.sum() / n;
                            let mean_dx = dr.iter().zip(xr.iter()).fold(T::zero(), |a, (&d, &x)| a + d * x) / n;
                            for c in 0..dr.len() {
                                dx[[r, c]] = inv_std[r] * (dr[c] - mean_d - xr[c] * mean_dx);
                            }
                        }
                        self.accumulate(&mut grads, *x, dx);
                    }
                }
                Op::Gelu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    dx.zip_mut_with(&xv, |d, &v| *d *= gelu_grad(v));
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Attention { q, k, v, heads, blocks, probs } => {
                    let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                    let dh = qv.ncols() / heads;
                    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
                    let mut dq = Array2::zeros(qv.dim());
                    let mut dk = Array2::zeros(kv.dim());
                    let mut dv = Array2::zeros(vv.dim());
                    let mut pi = 0;
                    for b in blocks {
                        for h in 0..*heads {
                            let p = &probs[pi];
                            pi += 1;
                            let cols = h * dh..(h + 1) * dh;
                            let qrows = b.q_start..b.q_start + b.q_len;
                            let krows = b.k_start..b.k_start + b.k_valid;
                            let go = g.slice(s![qrows.clone(), cols.clone()]);
                            let qh = qv.slice(s![qrows.clone(), cols.clone()]);
                            let kh = kv.slice(s![krows.clone(), cols.clone()]);
                            let vh = vv.slice(s![krows.clone(), cols.clone()]);
                            let mut dvh = dv.slice_mut(s![krows.clone(), cols.clone()]);
                            dvh += &p.t().dot(&go);
                            let dp = go.dot(&vh.t());
                            let mut ds = Array2::zeros(p.dim());
                            for r in 0..p.nrows() {
                                let dot = p.row(r).iter().zip(dp.row(r).iter()).fold(T::zero(), |a, (&x, &y)| a + x * y);
                                for c in 0..p.ncols() {
                                    ds[[r, c]] = p[[r, c]] * (dp[[r, c]] - dot) * scale;
                                }
                            }
                            let mut dqh = dq.slice_mut(s![qrows, cols.clone()]);
                            dqh += &ds.dot(&kh);
                            let mut dkh = dk.slice_mut(s![krows, cols]);
                            dkh += &ds.t().dot(&qh);
                        }
                    }
                    if self.needs(*q) {
                        self.accumulate(&mut grads, *q, dq);
                    }
                    if self.needs(*k) {
                        self.accumulate(&mut grads, *k, dk);
                    }
                    if self.needs(*v) {
                        self.accumulate(&mut grads, *v, dv);
                    }
                }
                Op::SegmentMean { x, segments } => {
                    let mut dx = Array2::zeros(self.value(*x).dim());
                    for (i, &(start, count)) in segments.iter().enumerate() {
                        let share = g.row(i).mapv(|v| v / T::from_usize(count).unwrap());
                        for r in start..start + count {
                            let mut row = dx.row_mut(r);
                            row += &share;
                        }
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let s = g[[0, 0]];
                    let mut dl = Array2::zeros(probs.dim());
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let mut row = dl.row_mut(r);
                            row.assign(&probs.row(r).mapv(|p| p * s));
                            row[t] -= s;
                        }
                    }
                    self.accumulate(&mut grads, *logits, dl);
                }
            }
        }
        param_grads
    }

    fn accumulate(&self, grads: &mut [Option<Array2<T>>], id: NodeId, g: Array2<T>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => *existing += &g,
            slot @ None => *slot = Some(g),
        }
    }
}

/// In-place row softmax. With `causal`, entry `(r, c)` for `c > r` is masked.
pub(crate) fn softmax_rows<T: Scalar>(m: &mut Array2<T>, causal: bool) {
    for (r, mut row) in m.rows_mut().into_iter().enumerate() {
        let limit = if causal { r + 1 } else { row.len() };
        let max = row.iter().take(limit).fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for (c, v) in row.iter_mut().enumerate() {
            if c < limit {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = T::zero();
            }
        }
        row.mapv_inplace(|v| v / sum);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64_lossy(GELU_C);
    let a = T::from_f64_lossy(GELU_A);
    let half = T::from_f64_lossy(0.5);
    let three = T::from_f64_lossy(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}
