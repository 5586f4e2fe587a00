use ndarray::Array2;

use super::graph::{AttnBlock, Graph};
use super::FusionError;
use crate::Scalar;

/// Projection matrices of one multi-head attention, all `d x d`, heads laid
/// out side by side along the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttentionWeights<T> {
    pub w_q: Array2<T>,
    pub w_k: Array2<T>,
    pub w_v: Array2<T>,
    pub w_o: Array2<T>,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttention<T> {
    /// One row per decoder state.
    pub output: Array2<T>,
    /// Per head, a `rows(H) x rows(X)` weight matrix.
    pub weights: Vec<Array2<T>>,
}

/// Decoder states `h` attend over knowledge rows `x`: per head
/// `softmax(Q K^T / sqrt(d_head)) V` with `Q = H W_Q`, `K = X W_K`,
/// `V = X W_V`, then heads are concatenated and projected by `W_O`.
pub fn cross_attend<T: Scalar>(
    x: &Array2<T>,
    h: &Array2<T>,
    w: &CrossAttentionWeights<T>,
) -> Result<CrossAttention<T>, FusionError> {
    if x.nrows() == 0 {
        return Err(FusionError::NoKnowledge);
    }
    let d = w.w_q.nrows();
    if w.heads == 0 || !d.is_multiple_of(w.heads) {
        return Err(FusionError::Contract(format!("{} heads do not divide width {d}", w.heads)));
    }
    for (name, m) in [("W_Q", &w.w_q), ("W_K", &w.w_k), ("W_V", &w.w_v), ("W_O", &w.w_o)] {
        if m.dim() != (d, d) {
            return Err(FusionError::Contract(format!("{name} has shape {:?}, expected ({d}, {d})", m.dim())));
        }
    }
    if x.ncols() != d || h.ncols() != d {
        return Err(FusionError::Contract(format!("inputs must have width {d}")));
    }
    let params = [w.w_q.clone(), w.w_k.clone(), w.w_v.clone(), w.w_o.clone()];
    let mut g = Graph::new(&params);
    let (hn, xn) = (g.leaf(h.clone()), g.leaf(x.clone()));
    let (wq, wk, wv, wo) = (g.param(0), g.param(1), g.param(2), g.param(3));
    let q = g.matmul(hn, wq);
    let k = g.matmul(xn, wk);
    let v = g.matmul(xn, wv);
    let block = AttnBlock { q_start: 0, q_len: h.nrows(), k_start: 0, k_valid: x.nrows(), causal: false };
    let a = g.attention(q, k, v, w.heads, vec![block]);
    let out = g.matmul(a, wo);
    Ok(CrossAttention { output: g.value(out).to_owned(), weights: g.attention_maps() })
}
