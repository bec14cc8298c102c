//! Finite-difference verification of every model component on a tiny
//! configuration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attention::{self_attention, AttentionParams};
use crate::data::BoldSignal;
use crate::dyngraph::{build_adjacency, gcn_forward, sparsify, GcnParams};
use crate::encoder::{encoder_forward, pool_sequence, EncoderParams};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::model::{MlpHead, Model, ModelConfig};
use crate::params::ParamStore;
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ModuleCheck {
    pub module: &'static str,
    pub report: GradCheckReport,
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub regions: usize,
    pub windows: usize,
    pub step: f64,
    pub seed: u64,
    pub fault: Option<OpKind>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            regions: 6,
            windows: 3,
            step: crate::gradcheck::DEFAULT_STEP,
            seed: 1,
            fault: None,
        }
    }
}

/// The small architecture used for gradient verification: `P=4`, `d_model=8`,
/// one GCN layer, two encoder layers, two heads.
pub fn tiny_config() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.window_size = 4;
    c.attn_heads = 2;
    c.d_gcn = 8;
    c.gcn_layers = 1;
    c.encoder.d_model = 8;
    c.encoder.num_heads = 2;
    c.encoder.num_layers = 2;
    c.encoder.d_ff = 32;
    c.mlp_hidden = vec![8];
    c
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(&mut *rng))
        .collect();
    Tensor::matrix(rows, cols, data).expect("positive dims")
}

/// `sum(x ⊙ weights)` for fixed weights, so no output direction cancels.
fn probe(tape: &mut Tape, x: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let y = tape.mul(x, w)?;
    Ok(tape.sum(y))
}

pub fn check_attention(cfg: &ModelConfig, opts: &SuiteOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut store = ParamStore::new();
    let (rows, input_dim, d_model) = (cfg.window_size, opts.regions, cfg.d_model());
    let params = AttentionParams::init(
        &mut store,
        "attention",
        input_dim,
        d_model / cfg.attn_heads,
        cfg.attn_heads,
        d_model,
        opts.seed,
    )?;
    let x = gaussian(rows, input_dim, &mut rng);
    let wf = gaussian(rows, d_model, &mut rng);
    let ws = gaussian(rows, rows, &mut rng);
    grad_check(&store, opts.step, opts.fault, |tape, b| {
        let xv = tape.constant(x.clone());
        let out = self_attention(tape, b, xv, &params)?;
        let lf = probe(tape, out.features, &wf)?;
        let s = out.mean_scores(tape)?;
        let ls = probe(tape, s, &ws)?;
        tape.add(lf, ls)
    })
}

/// Spatial attention scores → adjacency → top-k → GCN; the attention weights
/// are included so the adjacency path is differentiated too.
pub fn check_dyngraph(cfg: &ModelConfig, opts: &SuiteOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed + 1);
    let mut store = ParamStore::new();
    let (v, p, d_model) = (opts.regions, cfg.window_size, cfg.d_model());
    let attn = AttentionParams::init(
        &mut store,
        "spatial",
        p,
        d_model / cfg.attn_heads,
        cfg.attn_heads,
        d_model,
        opts.seed,
    )?;
    let gcn = GcnParams::init(
        &mut store,
        "gcn",
        d_model,
        cfg.d_gcn,
        cfg.gcn_layers,
        opts.seed,
    )?;
    let x = gaussian(v, p, &mut rng);
    let wh = gaussian(v, cfg.d_gcn, &mut rng);
    let k = cfg.k_for(v);
    grad_check(&store, opts.step, opts.fault, |tape, b| {
        let xv = tape.constant(x.clone());
        let out = self_attention(tape, b, xv, &attn)?;
        let s = out.mean_scores(tape)?;
        let a = build_adjacency(tape, s)?;
        let a = sparsify(tape, a, k)?;
        let h = gcn_forward(tape, b, out.features, a, &gcn)?;
        probe(tape, h, &wh)
    })
}

pub fn check_encoder(cfg: &ModelConfig, opts: &SuiteOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed + 2);
    let mut store = ParamStore::new();
    let params = EncoderParams::init(&mut store, "encoder", &cfg.encoder, opts.seed)?;
    // perturb layer-norm affine parameters away from (1, 0)
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        if store.name(id).contains(".ln") || store.name(id).contains(".b") {
            let t = store.get_mut(id);
            let n = t.numel();
            let noise = gaussian(1, n, &mut rng);
            for (d, z) in t.data_mut().iter_mut().zip(noise.data()) {
                *d += 0.1 * z;
            }
        }
    }
    let d = cfg.d_model();
    let tokens = gaussian(opts.windows, d, &mut rng);
    let wo = gaussian(1, d, &mut rng);
    grad_check(&store, opts.step, opts.fault, |tape, b| {
        let t = tape.constant(tokens.clone());
        let enc = encoder_forward(tape, b, t, &cfg.encoder, &params)?;
        let pooled = pool_sequence(tape, enc)?;
        probe(tape, pooled, &wo)
    })
}

pub fn check_head(cfg: &ModelConfig, opts: &SuiteOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed + 3);
    let mut store = ParamStore::new();
    let head = MlpHead::init(
        &mut store,
        "head",
        cfg.d_model(),
        &cfg.mlp_hidden,
        opts.seed,
    )?;
    let x = gaussian(1, cfg.d_model(), &mut rng);
    grad_check(&store, opts.step, opts.fault, |tape, b| {
        let xv = tape.constant(x.clone());
        let logits = head.forward(tape, b, xv)?;
        tape.cross_entropy(logits, 1)
    })
}

/// The whole classifier with cross-entropy loss on one synthetic subject.
pub fn check_model(cfg: &ModelConfig, opts: &SuiteOptions) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed + 4);
    let mut store = ParamStore::new();
    let model = Model::new(cfg, opts.regions, &mut store, opts.seed)?;
    let series = gaussian(opts.windows * cfg.window_size, opts.regions, &mut rng);
    let signal = BoldSignal::new("gradcheck", series)?;
    grad_check(&store, opts.step, opts.fault, |tape, b| {
        let logits = model.forward(tape, b, &signal)?;
        tape.cross_entropy(logits, 1)
    })
}

/// Runs every module check in a fixed order.
pub fn run_suite(cfg: &ModelConfig, opts: &SuiteOptions) -> Result<Vec<ModuleCheck>> {
    Ok(vec![
        ModuleCheck {
            module: "attention",
            report: check_attention(cfg, opts)?,
        },
        ModuleCheck {
            module: "dyngraph",
            report: check_dyngraph(cfg, opts)?,
        },
        ModuleCheck {
            module: "encoder",
            report: check_encoder(cfg, opts)?,
        },
        ModuleCheck {
            module: "head",
            report: check_head(cfg, opts)?,
        },
        ModuleCheck {
            module: "model",
            report: check_model(cfg, opts)?,
        },
    ])
}
