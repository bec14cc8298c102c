//! Per-window adjacency from attention scores, row-wise top-k sparsification
//! and the shared graph convolution.

use crate::error::{contract, shape_err, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Axis, Tape, Var};
use crate::tensor::Tensor;

/// Snapshot of one window's graph, for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicGraph {
    pub window_index: usize,
    /// `V × V`, entries in (0,1) or exactly 0 where pruned.
    pub adjacency: Tensor,
    /// `V × d_model`
    pub node_features: Tensor,
}

/// Shared graph-convolution weights, one matrix per layer.
#[derive(Clone, Debug)]
pub struct GcnParams {
    pub layers: Vec<ParamId>,
}

impl GcnParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        depth: usize,
        seed: u64,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|l| {
                let rows = if l == 0 { d_in } else { d_out };
                store.glorot(&format!("{prefix}.layer{l}.w"), rows, d_out, seed)
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }
}

/// Default edge budget per row: `ceil(V / 4)`.
pub fn default_k(regions: usize) -> usize {
    regions.div_ceil(4).max(1)
}

/// `A = sigmoid(scores)`.
pub fn build_adjacency(tape: &mut Tape, scores: Var) -> Result<Var> {
    match tape.shape(scores) {
        [r, c] if r == c => Ok(tape.sigmoid(scores)),
        other => shape_err("build_adjacency", other, &[other[0], other[0]]),
    }
}

/// Keep-mask selecting the `k` largest entries of each row of a
/// `rows × cols` matrix; ties go to the lower column index.
pub fn topk_mask(values: &[f64], cols: usize, k: usize) -> Result<Vec<bool>> {
    if k == 0 || k > cols {
        return contract(format!("sparsity k={k} must be in 1..={cols}"));
    }
    let mut keep = vec![false; values.len()];
    let mut order: Vec<usize> = Vec::with_capacity(cols);
    for (r, row) in values.chunks(cols).enumerate() {
        order.clear();
        order.extend(0..cols);
        // stable sort keeps lower column first among equal values
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
        for &j in &order[..k] {
            keep[r * cols + j] = true;
        }
    }
    Ok(keep)
}

/// Row-wise top-k as a forward-time mask; gradient flows only through kept
/// entries.
pub fn sparsify(tape: &mut Tape, a: Var, k: usize) -> Result<Var> {
    let cols = match tape.shape(a) {
        [r, c] if r == c => *c,
        other => return shape_err("sparsify", other, &[other[0], other[0]]),
    };
    let keep = topk_mask(tape.value(a), cols, k)?;
    tape.mask(a, keep)
}

/// Symmetric renormalization `D̂^{-1/2} (A + I) D̂^{-1/2}` with `D̂` the row
/// sums of `A + I`.
pub fn normalized_adjacency(tape: &mut Tape, a: Var) -> Result<Var> {
    let n = match tape.shape(a) {
        [r, c] if r == c => *r,
        other => return shape_err("gcn_forward", other, &[other[0], other[0]]),
    };
    let eye = tape.constant(Tensor::identity(n)?);
    let a_hat = tape.add(a, eye)?;
    let deg = tape.sum_over_axis(a_hat, Axis::Cols)?;
    let d_inv_sqrt = tape.powf(deg, -0.5);
    let left = tape.mul(a_hat, d_inv_sqrt)?;
    let d_row = tape.transpose(d_inv_sqrt)?;
    tape.mul(left, d_row)
}

/// `H = ReLU(N F W)` per layer, `N` the normalized adjacency.
pub fn gcn_forward(
    tape: &mut Tape,
    bound: &Bound,
    features: Var,
    a: Var,
    params: &GcnParams,
) -> Result<Var> {
    let (nf, na) = (tape.shape(features)[0], tape.shape(a)[0]);
    if nf != na {
        return shape_err("gcn_forward", tape.shape(features), tape.shape(a));
    }
    let norm = normalized_adjacency(tape, a)?;
    let mut h = features;
    for &w in &params.layers {
        let agg = tape.matmul(norm, h)?;
        let lin = tape.matmul(agg, bound.var(w))?;
        h = tape.relu(lin);
    }
    Ok(h)
}
