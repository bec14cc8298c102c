//! Mini-batch training with Adam and plateau scheduling, and evaluation.
//!
//! Per-subject forward/backward passes run on worker threads, each with its
//! own tape. Gradients are summed in subject order, so results do not depend
//! on thread scheduling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::TrainConfig;
use crate::data::{LabeledDataset, Split};
use crate::error::{contract, Error, Result};
use crate::metrics::{compute_metrics, Metrics};
use crate::model::{class1_probability, Model};
use crate::optim::{Adam, ReduceOnPlateau};
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::set_precision;

const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub store: ParamStore,
    pub history: Vec<EpochRecord>,
}

struct SubjectPass {
    loss: f64,
    prob: f64,
    grads: Vec<Option<Vec<f64>>>,
}

fn subject_pass(
    model: &Model,
    store: &ParamStore,
    ds: &LabeledDataset,
    idx: usize,
) -> Result<SubjectPass> {
    let subject = &ds.subjects()[idx];
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let logits = model.forward(&mut tape, &bound, &subject.signal)?;
    let z = tape.value(logits);
    let prob = class1_probability(&[z[0], z[1]]);
    let loss = tape.cross_entropy(logits, subject.label as usize)?;
    let loss_value = tape.value(loss)[0];
    tape.backward(loss)?;
    Ok(SubjectPass {
        loss: loss_value,
        prob,
        grads: store.collect_grads(&tape, &bound),
    })
}

/// Names of parameters whose gradient is identically zero for one subject.
pub fn dead_parameters(
    model: &Model,
    store: &ParamStore,
    ds: &LabeledDataset,
    idx: usize,
) -> Result<Vec<String>> {
    let pass = subject_pass(model, store, ds, idx)?;
    Ok(store
        .ids()
        .zip(&pass.grads)
        .filter(|(_, g)| g.as_ref().is_some_and(|g| g.iter().all(|&v| v == 0.0)))
        .map(|(id, _)| store.name(id).to_string())
        .collect())
}

/// Cross-entropy losses and class-1 probabilities for the given subjects.
pub fn losses_and_scores(
    model: &Model,
    store: &ParamStore,
    ds: &LabeledDataset,
    indices: &[usize],
) -> Result<Vec<(f64, f64)>> {
    indices
        .par_iter()
        .map(|&i| {
            let subject = &ds.subjects()[i];
            let mut tape = Tape::new();
            let bound = store.bind(&mut tape);
            let logits = model.forward(&mut tape, &bound, &subject.signal)?;
            let z = tape.value(logits);
            let prob = class1_probability(&[z[0], z[1]]);
            let loss = tape.cross_entropy(logits, subject.label as usize)?;
            Ok((tape.value(loss)[0], prob))
        })
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Splits the train indices into (fit, validation) with a seeded shuffle.
pub fn validation_split(train: &[usize], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n_val = (train.len() as f64 * fraction).floor() as usize;
    let mut shuffled = train.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    shuffled.shuffle(&mut rng);
    let mut val = shuffled[..n_val].to_vec();
    let mut fit = shuffled[n_val..].to_vec();
    val.sort_unstable();
    fit.sort_unstable();
    (fit, val)
}

/// Trains a freshly initialized model on the train split of `ds`.
pub fn train(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(ds, cfg, |_| {})
}

pub fn train_with_callback(
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    set_precision(cfg.precision);
    let train_idx = ds.indices(Split::Train);
    if train_idx.is_empty() {
        return contract("train split is empty");
    }
    let regions = ds.regions().expect("non-empty dataset");
    let mut store = ParamStore::new();
    let model = Model::new(&cfg.model, regions, &mut store, cfg.seed)?;

    let (fit, val) = validation_split(train_idx, cfg.val_fraction, cfg.seed);
    if cfg.check_dead_params {
        let dead = dead_parameters(&model, &store, ds, fit[0])?;
        if !dead.is_empty() {
            return contract(format!("parameters without gradient: {}", dead.join(", ")));
        }
    }

    let mut adam = Adam::new(&store, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
    let mut sched = ReduceOnPlateau::new(
        cfg.lr,
        cfg.scheduler_factor,
        cfg.scheduler_patience,
        cfg.min_improvement,
        cfg.lr_floor,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order = fit.clone();

    for epoch in 1..=cfg.epochs {
        let lr = sched.lr();
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(order.len());
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let passes: Vec<SubjectPass> = batch
                .par_iter()
                .map(|&i| subject_pass(&model, &store, ds, i))
                .collect::<Result<_>>()?;
            store.zero_grad();
            for (pass, &i) in passes.iter().zip(batch) {
                if !pass.loss.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite loss at epoch {epoch} for subject {}",
                        ds.subjects()[i].signal.subject_id
                    )));
                }
                store.accumulate_grads(&pass.grads)?;
                losses.push(pass.loss);
                correct += usize::from((pass.prob > 0.5) == (ds.subjects()[i].label == 1));
            }
            adam.step(&mut store, lr, 1.0 / batch.len() as f64);
        }
        store.zero_grad();
        let train_loss = mean(losses.iter().copied());
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            let v = losses_and_scores(&model, &store, ds, &val)?;
            mean(v.iter().map(|p| p.0))
        };
        if !val_loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            train_accuracy: correct as f64 / order.len() as f64,
            val_loss,
            lr,
        };
        log::debug!(
            "epoch {epoch}: loss {train_loss:.5} acc {:.3} val {val_loss:.5} lr {lr:e}",
            record.train_accuracy
        );
        on_epoch(&record);
        history.push(record);
        sched.step(val_loss);
    }
    Ok(TrainOutcome {
        model,
        store,
        history,
    })
}

/// Metrics of `model` on one split of `ds`.
pub fn evaluate(
    model: &Model,
    store: &ParamStore,
    ds: &LabeledDataset,
    split: Split,
) -> Result<Metrics> {
    let idx = ds.indices(split);
    if idx.is_empty() {
        return contract(format!("{} split is empty", split.as_str()));
    }
    let scores: Vec<f64> = losses_and_scores(model, store, ds, idx)?
        .into_iter()
        .map(|p| p.1)
        .collect();
    let labels: Vec<u8> = idx.iter().map(|&i| ds.subjects()[i].label).collect();
    compute_metrics(&scores, &labels)
}
