//! Operators composed from graph primitives.

use super::{Graph, Real, Var};
use crate::error::{shape_err, Result};

/// `softmax(Q Kᵀ / sqrt(d)) V` for `Q: [N_q,d]`, `K: [N_k,d]`, `V: [N_k,d_v]`.
///
/// `mask`, when given, is a constant `[N_q,N_k]` additive bias applied to the
/// scores before the softmax (use `-inf` to exclude keys).
pub fn scaled_dot_attention<F: Real>(
    g: &mut Graph<'_, F>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<Var>,
) -> Result<Var> {
    let (sq, sk, sv) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if sq.len() != 2 || sk.len() != 2 || sv.len() != 2 || sq[1] != sk[1] || sk[0] != sv[0] {
        return Err(shape_err!("attention shapes Q {sq:?}, K {sk:?}, V {sv:?} do not agree"));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let mut scores = g.scale(scores, 1.0 / (sq[1] as f64).sqrt());
    if let Some(m) = mask {
        scores = g.add(scores, m)?;
    }
    let attn = g.softmax(scores)?;
    g.matmul(attn, v)
}

/// `[C,H,W] -> [H·W, C]`, one row per spatial position.
pub fn positions_as_rows<F: Real>(g: &mut Graph<'_, F>, x: Var) -> Result<Var> {
    let (c, h, w) = g.value(x).chw()?;
    let flat = g.reshape(x, &[c, h * w])?;
    g.transpose(flat)
}
