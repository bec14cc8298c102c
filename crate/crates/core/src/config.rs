//! Flat `key=value` configuration. Blank lines and `#` comments are ignored;
//! unknown keys are rejected.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Precision;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub min_improvement: f64,
    pub lr_floor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of the train split held out to drive the scheduler.
    pub val_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub precision: Precision,
    /// Fail training if some parameter gets no gradient on the first subject.
    pub check_dead_params: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 0.001,
            scheduler_factor: 0.1,
            scheduler_patience: 5,
            min_improvement: 1e-4,
            lr_floor: 1e-7,
            epochs: 50,
            batch_size: 8,
            seed: 0,
            val_fraction: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            precision: Precision::F64,
            check_dead_params: true,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn fmt_list(v: &[usize]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

/// Parses `key=value` lines into `(key, value)` pairs, in order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key=value, got {line:?}",
                n + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ModelConfig {
    /// Applies one key; returns `Ok(false)` when the key is not an
    /// architecture key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "window_size" => self.window_size = parse(key, v)?,
            "sparsity_k" => {
                self.sparsity_k = if v == "auto" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "attn_heads" => self.attn_heads = parse(key, v)?,
            "d_model" => self.encoder.d_model = parse(key, v)?,
            "d_gcn" => self.d_gcn = parse(key, v)?,
            "gcn_layers" => self.gcn_layers = parse(key, v)?,
            "layers" => self.encoder.num_layers = parse(key, v)?,
            "heads" => self.encoder.num_heads = parse(key, v)?,
            "d_ff" => self.encoder.d_ff = parse(key, v)?,
            "positional" => self.encoder.positional = v.parse()?,
            "mlp_hidden" => self.mlp_hidden = parse_list(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let e = &self.encoder;
        [
            ("window_size", self.window_size.to_string()),
            (
                "sparsity_k",
                self.sparsity_k.map_or("auto".into(), |k| k.to_string()),
            ),
            ("attn_heads", self.attn_heads.to_string()),
            ("d_model", e.d_model.to_string()),
            ("d_gcn", self.d_gcn.to_string()),
            ("gcn_layers", self.gcn_layers.to_string()),
            ("layers", e.num_layers.to_string()),
            ("heads", e.num_heads.to_string()),
            ("d_ff", e.d_ff.to_string()),
            ("positional", e.positional.as_str().to_string()),
            ("mlp_hidden", fmt_list(&self.mlp_hidden)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Builds a config from pairs; `d_ff` defaults to `4·d_model` when absent.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut d_ff_set = false;
        for (k, v) in pairs {
            if !cfg.set(k, v)? {
                return Err(Error::Config(format!("unknown key {k:?}")));
            }
            d_ff_set |= k == "d_ff";
        }
        if !d_ff_set {
            cfg.encoder.d_ff = 4 * cfg.encoder.d_model;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut d_ff_set = false;
        for (key, v) in pairs {
            let (key, v) = (key.as_str(), v.as_str());
            if cfg.model.set(key, v)? {
                d_ff_set |= key == "d_ff";
                continue;
            }
            match key {
                "lr" => cfg.lr = parse(key, v)?,
                "scheduler_factor" => cfg.scheduler_factor = parse(key, v)?,
                "scheduler_patience" => cfg.scheduler_patience = parse(key, v)?,
                "min_improvement" => cfg.min_improvement = parse(key, v)?,
                "lr_floor" => cfg.lr_floor = parse(key, v)?,
                "epochs" => cfg.epochs = parse(key, v)?,
                "batch_size" => cfg.batch_size = parse(key, v)?,
                "seed" => cfg.seed = parse(key, v)?,
                "val_fraction" => cfg.val_fraction = parse(key, v)?,
                "adam_beta1" => cfg.adam_beta1 = parse(key, v)?,
                "adam_beta2" => cfg.adam_beta2 = parse(key, v)?,
                "adam_epsilon" => cfg.adam_epsilon = parse(key, v)?,
                "precision" => {
                    cfg.precision = match v {
                        "f64" => Precision::F64,
                        "f32" => Precision::F32,
                        _ => return Err(Error::Config(format!("invalid precision {v:?}"))),
                    }
                }
                "check_dead_params" => cfg.check_dead_params = parse(key, v)?,
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            }
        }
        if !d_ff_set {
            cfg.model.encoder.d_ff = 4 * cfg.model.encoder.d_model;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let positive = [
            ("lr", self.lr),
            ("scheduler_factor", self.scheduler_factor),
            ("adam_epsilon", self.adam_epsilon),
            ("lr_floor", self.lr_floor),
        ];
        for (k, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        for (k, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{k} must be in [0, 1)")));
            }
        }
        if self.min_improvement < 0.0 {
            return Err(Error::Config("min_improvement must be >= 0".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = self.model.to_pairs();
        let rest = [
            ("lr", format!("{:?}", self.lr)),
            ("scheduler_factor", format!("{:?}", self.scheduler_factor)),
            ("scheduler_patience", self.scheduler_patience.to_string()),
            ("min_improvement", format!("{:?}", self.min_improvement)),
            ("lr_floor", format!("{:?}", self.lr_floor)),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("val_fraction", format!("{:?}", self.val_fraction)),
            ("adam_beta1", format!("{:?}", self.adam_beta1)),
            ("adam_beta2", format!("{:?}", self.adam_beta2)),
            ("adam_epsilon", format!("{:?}", self.adam_epsilon)),
            (
                "precision",
                match self.precision {
                    Precision::F64 => "f64".into(),
                    Precision::F32 => "f32".into(),
                },
            ),
            ("check_dead_params", self.check_dead_params.to_string()),
        ];
        out.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Positional;

    #[test]
    fn defaults_mirror_reported_setup() {
        let c = TrainConfig::default();
        assert_eq!(c.lr, 0.001);
        assert_eq!((c.scheduler_factor, c.scheduler_patience), (0.1, 5));
        assert_eq!(c.model.window_size, 20);
        assert_eq!(c.model.encoder.num_layers, 5);
        assert_eq!(c.model.encoder.num_heads, 4);
        assert_eq!(c.model.encoder.d_ff, 256);
        assert_eq!(c.model.encoder.positional, Positional::Sinusoidal);
    }

    #[test]
    fn text_round_trip() {
        let text = "# tiny\nwindow_size=4\nd_model=8\nheads=2\nattn_heads=2\nlayers=2\nsparsity_k=3\nmlp_hidden=8,4\nprecision=f32\n";
        let c = TrainConfig::parse(text).unwrap();
        assert_eq!(c.model.encoder.d_ff, 32);
        assert_eq!(c.model.sparsity_k, Some(3));
        assert_eq!(c.model.mlp_hidden, vec![8, 4]);
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(TrainConfig::parse("windowsize=20").is_err());
        assert!(TrainConfig::parse("lr").is_err());
        assert!(TrainConfig::parse("lr=fast").is_err());
        assert!(TrainConfig::parse("d_model=10\nheads=4").is_err());
        assert!(TrainConfig::parse("positional=learned").is_err());
    }
}
