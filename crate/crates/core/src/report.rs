//! Line-oriented run reports: `key=value` lines followed by a CSV history
//! block. Floats use shortest round-trip formatting so a report re-parses to
//! identical values.

use std::fmt::Write as _;

use crate::data::Split;
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::training::EpochRecord;

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_accuracy,val_loss,lr";

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub config: Vec<(String, String)>,
    pub metrics: Vec<(Split, Metrics)>,
    pub history: Vec<EpochRecord>,
    /// Omitted unless requested, so reports of identical runs are identical.
    pub wall_clock_seconds: Option<f64>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(format!("malformed report: {}", msg.into()))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse().map_err(|_| bad(format!("bad number {s:?}")))
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# dgnc run report\n");
        let _ = writeln!(s, "seed={}", self.seed);
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        for (split, m) in &self.metrics {
            let p = split.as_str();
            let _ = writeln!(s, "metrics.{p}.accuracy={:?}", m.accuracy);
            let _ = writeln!(s, "metrics.{p}.auc={:?}", m.auc);
            let _ = writeln!(s, "metrics.{p}.recall={:?}", m.recall);
            let _ = writeln!(s, "metrics.{p}.precision={:?}", m.precision);
            let _ = writeln!(s, "metrics.{p}.auc_undefined={}", m.auc_undefined);
        }
        if let Some(t) = self.wall_clock_seconds {
            let _ = writeln!(s, "wall_clock_seconds={t:.3}");
        }
        let _ = writeln!(s, "epochs_run={}", self.history.len());
        s.push_str("history:\n");
        s.push_str(HISTORY_HEADER);
        s.push('\n');
        for r in &self.history {
            let _ = writeln!(
                s,
                "{},{:?},{:?},{:?},{:?}",
                r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.lr
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut report = RunReport {
            seed: 0,
            config: Vec::new(),
            metrics: Vec::new(),
            history: Vec::new(),
            wall_clock_seconds: None,
        };
        let mut seen_seed = false;
        for line in lines.by_ref() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line == "history:" {
                break;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| bad(line))?;
            if k == "seed" {
                report.seed = num(v)?;
                seen_seed = true;
            } else if k == "wall_clock_seconds" {
                report.wall_clock_seconds = Some(num(v)?);
            } else if k == "epochs_run" {
                continue;
            } else if let Some(key) = k.strip_prefix("config.") {
                report.config.push((key.to_string(), v.to_string()));
            } else if let Some(rest) = k.strip_prefix("metrics.") {
                let (split, field) = rest.split_once('.').ok_or_else(|| bad(k))?;
                let split: Split = split.parse()?;
                let pos = match report.metrics.iter().position(|(s, _)| *s == split) {
                    Some(p) => p,
                    None => {
                        let empty = Metrics {
                            accuracy: 0.0,
                            auc: 0.0,
                            recall: 0.0,
                            precision: 0.0,
                            auc_undefined: false,
                        };
                        report.metrics.push((split, empty));
                        report.metrics.len() - 1
                    }
                };
                let m = &mut report.metrics[pos].1;
                match field {
                    "accuracy" => m.accuracy = num(v)?,
                    "auc" => m.auc = num(v)?,
                    "recall" => m.recall = num(v)?,
                    "precision" => m.precision = num(v)?,
                    "auc_undefined" => m.auc_undefined = num(v)?,
                    _ => return Err(bad(format!("unknown metric {field}"))),
                }
            } else {
                return Err(bad(format!("unknown key {k}")));
            }
        }
        if !seen_seed {
            return Err(bad("missing seed"));
        }
        match lines.next() {
            Some(h) if h.trim() == HISTORY_HEADER => {}
            None => return Ok(report),
            Some(h) => return Err(bad(format!("unexpected history header {h:?}"))),
        }
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("history row {line:?}")));
            }
            report.history.push(EpochRecord {
                epoch: num(f[0])?,
                train_loss: num(f[1])?,
                train_accuracy: num(f[2])?,
                val_loss: num(f[3])?,
                lr: num(f[4])?,
            });
        }
        Ok(report)
    }

    pub fn metric(&self, split: Split) -> Option<&Metrics> {
        self.metrics
            .iter()
            .find(|(s, _)| *s == split)
            .map(|(_, m)| m)
    }
}
