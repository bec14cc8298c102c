//! Window-token readout and the pre-norm transformer encoder over windows.

use crate::attention::{self_attention, AttentionParams};
use crate::error::{shape_err, Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Axis, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Positional {
    Sinusoidal,
    None,
}

impl Positional {
    pub fn as_str(self) -> &'static str {
        match self {
            Positional::Sinusoidal => "sinusoidal",
            Positional::None => "none",
        }
    }
}

impl std::str::FromStr for Positional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoidal" => Ok(Positional::Sinusoidal),
            "none" => Ok(Positional::None),
            other => Err(Error::Config(format!(
                "unknown positional encoding {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub positional: Positional,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 5,
            num_heads: 4,
            d_model: 64,
            d_ff: 256,
            positional: Positional::Sinusoidal,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.d_model == 0 || self.d_model % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.d_ff == 0 {
            return Err(Error::Config("d_ff must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub ln1_gain: ParamId,
    pub ln1_bias: ParamId,
    pub attn: AttentionParams,
    pub ln2_gain: ParamId,
    pub ln2_bias: ParamId,
    pub ff_w1: ParamId,
    pub ff_b1: ParamId,
    pub ff_w2: ParamId,
    pub ff_b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub layers: Vec<EncoderLayer>,
}

impl EncoderParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let d_k = d / cfg.num_heads;
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let p = format!("{prefix}.layer{l}");
                Ok(EncoderLayer {
                    ln1_gain: store.constant(&format!("{p}.ln1.gain"), 1, d, 1.0)?,
                    ln1_bias: store.constant(&format!("{p}.ln1.bias"), 1, d, 0.0)?,
                    attn: AttentionParams::init(
                        store,
                        &format!("{p}.attn"),
                        d,
                        d_k,
                        cfg.num_heads,
                        d,
                        seed,
                    )?,
                    ln2_gain: store.constant(&format!("{p}.ln2.gain"), 1, d, 1.0)?,
                    ln2_bias: store.constant(&format!("{p}.ln2.bias"), 1, d, 0.0)?,
                    ff_w1: store.glorot(&format!("{p}.ff.w1"), d, cfg.d_ff, seed)?,
                    ff_b1: store.constant(&format!("{p}.ff.b1"), 1, cfg.d_ff, 0.0)?,
                    ff_w2: store.glorot(&format!("{p}.ff.w2"), cfg.d_ff, d, seed)?,
                    ff_b2: store.constant(&format!("{p}.ff.b2"), 1, d, 0.0)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }
}

/// `PE[pos][2i] = sin(pos / 10000^(2i/d))`, `PE[pos][2i+1] = cos(...)`.
pub fn sinusoidal_encoding(n: usize, d: usize) -> Result<Tensor> {
    let mut data = vec![0.0; n * d];
    for pos in 0..n {
        for j in 0..d {
            let i2 = (j - j % 2) as f64;
            let angle = pos as f64 / 10000f64.powf(i2 / d as f64);
            data[pos * d + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(n, d, data)
}

/// Mean over the node rows of `h`, then the optional `d_gcn × d_model`
/// projection.
pub fn pool_nodes(tape: &mut Tape, bound: &Bound, h: Var, proj: Option<ParamId>) -> Result<Var> {
    let mean = tape.mean_over_axis(h, Axis::Rows)?;
    match proj {
        Some(w) => tape.matmul(mean, bound.var(w)),
        None => Ok(mean),
    }
}

/// Mean over the token rows.
pub fn pool_sequence(tape: &mut Tape, encoded: Var) -> Result<Var> {
    tape.mean_over_axis(encoded, Axis::Rows)
}

pub fn encoder_forward(
    tape: &mut Tape,
    bound: &Bound,
    tokens: Var,
    cfg: &EncoderConfig,
    params: &EncoderParams,
) -> Result<Var> {
    let n = match tape.shape(tokens) {
        [n, d] if *d == cfg.d_model => *n,
        other => return shape_err("encoder_forward", other, &[other[0], cfg.d_model]),
    };
    let mut x = tokens;
    if cfg.positional == Positional::Sinusoidal {
        let pe = tape.constant(sinusoidal_encoding(n, cfg.d_model)?);
        x = tape.add(x, pe)?;
    }
    for layer in &params.layers {
        let h = tape.layer_norm(x, bound.var(layer.ln1_gain), bound.var(layer.ln1_bias))?;
        let attn = self_attention(tape, bound, h, &layer.attn)?;
        x = tape.add(x, attn.features)?;

        let h = tape.layer_norm(x, bound.var(layer.ln2_gain), bound.var(layer.ln2_bias))?;
        let h = tape.matmul(h, bound.var(layer.ff_w1))?;
        let h = tape.add(h, bound.var(layer.ff_b1))?;
        let h = tape.relu(h);
        let h = tape.matmul(h, bound.var(layer.ff_w2))?;
        let h = tape.add(h, bound.var(layer.ff_b2))?;
        x = tape.add(x, h)?;
    }
    Ok(x)
}
