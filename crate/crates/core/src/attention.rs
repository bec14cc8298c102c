//! Multi-head self-attention over the rows of a matrix, used along the
//! temporal axis (timepoints of a window) and the spatial axis (regions).

use crate::error::{shape_err, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
}

/// Bias-free projections: per head `input_dim × d_k` query/key/value
/// matrices, and an `(heads·d_k) × d_model` output projection.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub heads: Vec<HeadParams>,
    pub w_o: ParamId,
    pub input_dim: usize,
    pub d_k: usize,
    pub d_model: usize,
}

impl AttentionParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        d_k: usize,
        num_heads: usize,
        d_model: usize,
        seed: u64,
    ) -> Result<Self> {
        let heads = (0..num_heads)
            .map(|h| {
                Ok(HeadParams {
                    w_q: store.glorot(&format!("{prefix}.head{h}.w_q"), input_dim, d_k, seed)?,
                    w_k: store.glorot(&format!("{prefix}.head{h}.w_k"), input_dim, d_k, seed)?,
                    w_v: store.glorot(&format!("{prefix}.head{h}.w_v"), input_dim, d_k, seed)?,
                })
            })
            .collect::<Result<_>>()?;
        let w_o = store.glorot(&format!("{prefix}.w_o"), num_heads * d_k, d_model, seed)?;
        Ok(Self {
            heads,
            w_o,
            input_dim,
            d_k,
            d_model,
        })
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// `rows × d_model`
    pub features: Var,
    /// Per head, the `rows × rows` pre-softmax logits `QKᵀ/√d_k`.
    pub scores: Vec<Var>,
}

impl AttentionOutput {
    /// Mean of the per-head score matrices.
    pub fn mean_scores(&self, tape: &mut Tape) -> Result<Var> {
        let mut acc = self.scores[0];
        for &s in &self.scores[1..] {
            acc = tape.add(acc, s)?;
        }
        Ok(tape.scale(acc, 1.0 / self.scores.len() as f64))
    }
}

pub fn self_attention(
    tape: &mut Tape,
    bound: &Bound,
    x: Var,
    params: &AttentionParams,
) -> Result<AttentionOutput> {
    match tape.shape(x) {
        [_, c] if *c == params.input_dim => {}
        other => return shape_err("self_attention", other, &[params.input_dim]),
    }
    let inv_sqrt_dk = 1.0 / (params.d_k as f64).sqrt();
    let mut outputs = Vec::with_capacity(params.heads.len());
    let mut scores = Vec::with_capacity(params.heads.len());
    for head in &params.heads {
        let q = tape.matmul(x, bound.var(head.w_q))?;
        let k = tape.matmul(x, bound.var(head.w_k))?;
        let v = tape.matmul(x, bound.var(head.w_v))?;
        let kt = tape.transpose(k)?;
        let qk = tape.matmul(q, kt)?;
        let s = tape.scale(qk, inv_sqrt_dk);
        let attn = tape.softmax_rows(s)?;
        outputs.push(tape.matmul(attn, v)?);
        scores.push(s);
    }
    let concat = if outputs.len() == 1 {
        outputs[0]
    } else {
        tape.concat_cols(&outputs)?
    };
    let features = tape.matmul(concat, bound.var(params.w_o))?;
    Ok(AttentionOutput { features, scores })
}

/// Attention whose tokens are the `P` timepoints of a `P × V` window.
pub fn temporal_attention(
    tape: &mut Tape,
    bound: &Bound,
    window: Var,
    params: &AttentionParams,
) -> Result<AttentionOutput> {
    self_attention(tape, bound, window, params)
}

/// Attention whose tokens are the `V` regions of a `P × V` window; each
/// region's `P`-long profile is one token.
pub fn spatial_attention(
    tape: &mut Tape,
    bound: &Bound,
    window: Var,
    params: &AttentionParams,
) -> Result<AttentionOutput> {
    let xt = tape.transpose(window)?;
    self_attention(tape, bound, xt, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn setup(
        input_dim: usize,
        heads: usize,
        d_k: usize,
        d_model: usize,
    ) -> (ParamStore, AttentionParams) {
        let mut store = ParamStore::new();
        let p =
            AttentionParams::init(&mut store, "attn", input_dim, d_k, heads, d_model, 11).unwrap();
        (store, p)
    }

    #[test]
    fn zero_input_gives_zero_features_and_scores() {
        let (store, p) = setup(4, 2, 3, 5);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[3, 4]).unwrap());
        let out = self_attention(&mut tape, &b, x, &p).unwrap();
        assert!(tape.value(out.features).iter().all(|&v| v == 0.0));
        for s in &out.scores {
            assert!(tape.value(*s).iter().all(|&v| v == 0.0));
            let a = tape.softmax_rows(*s).unwrap();
            assert!(tape.value(a).iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn single_row_is_value_projection() {
        let (store, p) = setup(3, 1, 2, 4);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(Tensor::from_rows(&[[0.5, -1.0, 2.0]]).unwrap());
        let out = self_attention(&mut tape, &b, x, &p).unwrap();
        let a = tape.softmax_rows(out.scores[0]).unwrap();
        assert_eq!(tape.value(a), &[1.0]);
        let v = tape.matmul(x, b.var(p.heads[0].w_v)).unwrap();
        let expect = tape.matmul(v, b.var(p.w_o)).unwrap();
        assert_eq!(tape.value(out.features), tape.value(expect));
    }

    #[test]
    fn rejects_wrong_input_dim() {
        let (store, p) = setup(4, 1, 2, 2);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[3, 5]).unwrap());
        assert!(self_attention(&mut tape, &b, x, &p).is_err());
    }

    #[test]
    fn spatial_scores_are_region_sized() {
        let (store, p) = setup(4, 2, 2, 3);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(Tensor::matrix(4, 1, vec![0.1, 0.2, -0.3, 0.4]).unwrap());
        let out = spatial_attention(&mut tape, &b, x, &p).unwrap();
        assert_eq!(tape.shape(out.scores[0]), &[1, 1]);
        assert_eq!(tape.shape(out.features), &[1, 3]);
    }

    #[test]
    fn identical_regions_give_identical_rows() {
        let (store, p) = setup(3, 2, 2, 4);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        // regions 0 and 2 share the same profile over the 3 timepoints
        let x = tape.constant(
            Tensor::from_rows(&[[0.3, 1.0, 0.3], [-0.7, 0.2, -0.7], [1.1, -0.4, 1.1]]).unwrap(),
        );
        let out = spatial_attention(&mut tape, &b, x, &p).unwrap();
        let f = tape.tensor(out.features);
        assert_eq!(f.row(0), f.row(2));
        let s = tape.tensor(out.scores[0]);
        assert_eq!(s.row(0), s.row(2));
    }
}
