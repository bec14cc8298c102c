//! The end-to-end classifier: windowing, dual attention, dynamic graphs,
//! shared GCN, window-sequence encoder and MLP head.

use crate::attention::{spatial_attention, temporal_attention, AttentionParams};
use crate::data::{window, zscore_normalize, BoldSignal};
use crate::dyngraph::{build_adjacency, default_k, gcn_forward, sparsify, DynamicGraph, GcnParams};
use crate::encoder::{encoder_forward, pool_nodes, pool_sequence, EncoderConfig, EncoderParams};
use crate::error::{shape_err, Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tape::{Axis, Tape, Var};

/// Architecture hyperparameters. The region count comes from the data.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub window_size: usize,
    /// Edges kept per adjacency row; `None` means `ceil(V/4)`.
    pub sparsity_k: Option<usize>,
    pub attn_heads: usize,
    pub d_gcn: usize,
    pub gcn_layers: usize,
    pub encoder: EncoderConfig,
    pub mlp_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window_size: 20,
            sparsity_k: None,
            attn_heads: 4,
            d_gcn: 64,
            gcn_layers: 1,
            encoder: EncoderConfig::default(),
            mlp_hidden: vec![32],
        }
    }
}

impl ModelConfig {
    pub fn d_model(&self) -> usize {
        self.encoder.d_model
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.window_size == 0 {
            return Err(Error::Config("window_size must be positive".into()));
        }
        if self.attn_heads == 0 || self.d_model() % self.attn_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by attn_heads {}",
                self.d_model(),
                self.attn_heads
            )));
        }
        if self.d_gcn == 0 || self.gcn_layers == 0 {
            return Err(Error::Config(
                "d_gcn and gcn_layers must be positive".into(),
            ));
        }
        if self.sparsity_k == Some(0) || self.mlp_hidden.contains(&0) {
            return Err(Error::Config(
                "sparsity_k and mlp_hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn k_for(&self, regions: usize) -> usize {
        self.sparsity_k.unwrap_or_else(|| default_k(regions))
    }
}

#[derive(Clone, Debug)]
pub struct MlpHead {
    pub layers: Vec<(ParamId, ParamId)>,
}

impl MlpHead {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_in: usize,
        hidden: &[usize],
        seed: u64,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut prev = d_in;
        for (l, &w) in hidden.iter().chain(std::iter::once(&2)).enumerate() {
            let weight = store.glorot(&format!("{prefix}.layer{l}.w"), prev, w, seed)?;
            let bias = store.constant(&format!("{prefix}.layer{l}.b"), 1, w, 0.0)?;
            layers.push((weight, bias));
            prev = w;
        }
        Ok(Self { layers })
    }

    /// `1 × d_in` → `1 × 2` logits; ReLU between layers.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, bound.var(w))?;
            h = tape.add(h, bound.var(b))?;
            if l + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub regions: usize,
    pub temporal: AttentionParams,
    pub spatial: AttentionParams,
    pub gcn: GcnParams,
    pub pool_proj: Option<ParamId>,
    pub encoder: EncoderParams,
    pub head: MlpHead,
}

struct WindowGraph {
    adjacency: Var,
    node_features: Var,
    embeddings: Var,
}

impl Model {
    /// Registers all parameters in `store`; initial values depend only on
    /// `seed` and each parameter's name.
    pub fn new(
        config: &ModelConfig,
        regions: usize,
        store: &mut ParamStore,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if regions == 0 {
            return Err(Error::Config("regions must be positive".into()));
        }
        let k = config.k_for(regions);
        if k > regions {
            return Err(Error::Config(format!(
                "sparsity_k {k} exceeds region count {regions}"
            )));
        }
        let d_model = config.d_model();
        let d_k = d_model / config.attn_heads;
        let p = config.window_size;
        let temporal = AttentionParams::init(
            store,
            "temporal",
            regions,
            d_k,
            config.attn_heads,
            d_model,
            seed,
        )?;
        let spatial =
            AttentionParams::init(store, "spatial", p, d_k, config.attn_heads, d_model, seed)?;
        let gcn = GcnParams::init(store, "gcn", d_model, config.d_gcn, config.gcn_layers, seed)?;
        let pool_proj = if config.d_gcn != d_model {
            Some(store.glorot("pool.proj", config.d_gcn, d_model, seed)?)
        } else {
            None
        };
        let encoder = EncoderParams::init(store, "encoder", &config.encoder, seed)?;
        let head = MlpHead::init(store, "head", d_model, &config.mlp_hidden, seed)?;
        Ok(Self {
            config: config.clone(),
            regions,
            temporal,
            spatial,
            gcn,
            pool_proj,
            encoder,
            head,
        })
    }

    fn window_graph(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<WindowGraph> {
        let temporal = temporal_attention(tape, bound, x, &self.temporal)?;
        let spatial = spatial_attention(tape, bound, x, &self.spatial)?;
        // temporal context, pooled over timepoints and broadcast onto every node
        let context = tape.mean_over_axis(temporal.features, Axis::Rows)?;
        let node_features = tape.add(spatial.features, context)?;
        let scores = spatial.mean_scores(tape)?;
        let dense = build_adjacency(tape, scores)?;
        let adjacency = sparsify(tape, dense, self.config.k_for(self.regions))?;
        let embeddings = gcn_forward(tape, bound, node_features, adjacency, &self.gcn)?;
        Ok(WindowGraph {
            adjacency,
            node_features,
            embeddings,
        })
    }

    fn windows(&self, tape: &mut Tape, signal: &BoldSignal) -> Result<Vec<Var>> {
        if signal.regions() != self.regions {
            return shape_err(
                "model_forward",
                signal.series.shape(),
                &[signal.timepoints(), self.regions],
            );
        }
        let ws = window(&zscore_normalize(signal), self.config.window_size)?;
        Ok(ws.windows.into_iter().map(|w| tape.constant(w)).collect())
    }

    /// `1 × 2` logits for one subject.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, signal: &BoldSignal) -> Result<Var> {
        let windows = self.windows(tape, signal)?;
        let mut tokens = Vec::with_capacity(windows.len());
        for x in windows {
            let g = self.window_graph(tape, bound, x)?;
            tokens.push(pool_nodes(tape, bound, g.embeddings, self.pool_proj)?);
        }
        let seq = tape.concat_rows(&tokens)?;
        let encoded = encoder_forward(tape, bound, seq, &self.config.encoder, &self.encoder)?;
        let pooled = pool_sequence(tape, encoded)?;
        self.head.forward(tape, bound, pooled)
    }

    /// The sparsified adjacency and fused node features of every window.
    pub fn dynamic_graphs(
        &self,
        store: &ParamStore,
        signal: &BoldSignal,
    ) -> Result<Vec<DynamicGraph>> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let windows = self.windows(&mut tape, signal)?;
        windows
            .into_iter()
            .enumerate()
            .map(|(i, x)| {
                let g = self.window_graph(&mut tape, &bound, x)?;
                Ok(DynamicGraph {
                    window_index: i,
                    adjacency: tape.tensor(g.adjacency),
                    node_features: tape.tensor(g.node_features),
                })
            })
            .collect()
    }

    /// Class-1 probability from a fresh forward pass.
    pub fn predict(&self, store: &ParamStore, signal: &BoldSignal) -> Result<f64> {
        let logits = model_forward(self, store, signal)?;
        Ok(class1_probability(&logits))
    }
}

/// Runs the classifier on one subject and returns its two logits.
pub fn model_forward(model: &Model, store: &ParamStore, signal: &BoldSignal) -> Result<[f64; 2]> {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let logits = model.forward(&mut tape, &bound, signal)?;
    let v = tape.value(logits);
    Ok([v[0], v[1]])
}

/// `softmax(logits)[1]`.
pub fn class1_probability(logits: &[f64; 2]) -> f64 {
    let d = logits[0] - logits[1];
    if d >= 0.0 {
        let e = (-d).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + d.exp())
    }
}
