use dgnc_core::data::synth_generate;
use dgnc_core::model::model_forward;
use dgnc_core::training::{dead_parameters, train_with_callback};
use dgnc_core::verify::tiny_config;
use dgnc_core::{evaluate, train, Error, Model, ParamStore, Split, SynthSpec, TrainConfig};

fn small_config() -> TrainConfig {
    TrainConfig {
        model: tiny_config(),
        epochs: 4,
        batch_size: 4,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn small_data(seed: u64) -> dgnc_core::LabeledDataset {
    synth_generate(&SynthSpec {
        subjects: 12,
        regions: 6,
        timepoints: 12,
        window_size: 4,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

#[test]
fn identical_seeds_give_bit_identical_history_and_weights() {
    let ds = small_data(0);
    let cfg = small_config();
    let a = train(&ds, &cfg).unwrap();
    let b = train(&ds, &cfg).unwrap();
    assert_eq!(a.history, b.history);
    for ((na, ta), (nb, tb)) in a.store.iter().zip(b.store.iter()) {
        assert_eq!(na, nb);
        assert_eq!(ta.data(), tb.data());
    }
    let m1 = evaluate(&a.model, &a.store, &ds, Split::Test).unwrap();
    let m2 = evaluate(&a.model, &a.store, &ds, Split::Test).unwrap();
    assert_eq!(m1, m2);
}

#[test]
fn forced_plateau_cuts_lr_by_factor() {
    let ds = small_data(1);
    // lr too small to move the loss by min_improvement, so every epoch is flat
    let cfg = TrainConfig {
        lr: 1e-9,
        lr_floor: 1e-12,
        min_improvement: 1.0,
        epochs: 14,
        scheduler_patience: 5,
        ..small_config()
    };
    let mut lrs = Vec::new();
    train_with_callback(&ds, &cfg, |r| lrs.push(r.lr)).unwrap();
    let mut expected = vec![1e-9; 7];
    expected.extend([1e-9 * 0.1; 6]);
    expected.push(1e-9 * 0.1 * 0.1);
    assert_eq!(lrs, expected);
}

#[test]
fn untrained_model_is_at_chance() {
    let ds = synth_generate(&SynthSpec {
        subjects: 64,
        regions: 6,
        timepoints: 12,
        window_size: 4,
        test_fraction: 0.5,
        ..SynthSpec::default()
    })
    .unwrap();
    let mut accs = Vec::new();
    for seed in 0..8 {
        let mut store = ParamStore::new();
        let model = Model::new(&tiny_config(), 6, &mut store, seed).unwrap();
        accs.push(evaluate(&model, &store, &ds, Split::Test).unwrap().accuracy);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    assert!((mean - 0.5).abs() <= 0.15, "{accs:?}");
}

#[test]
fn every_parameter_receives_gradient() {
    let ds = small_data(2);
    let mut store = ParamStore::new();
    let model = Model::new(&tiny_config(), 6, &mut store, 0).unwrap();
    assert_eq!(
        dead_parameters(&model, &store, &ds, 1).unwrap(),
        Vec::<String>::new()
    );
}

#[test]
fn duplicate_input_gives_identical_logits() {
    let ds = small_data(3);
    let mut store = ParamStore::new();
    let model = Model::new(&tiny_config(), 6, &mut store, 0).unwrap();
    let s = &ds.subjects()[0].signal;
    let a = model_forward(&model, &store, s).unwrap();
    assert!(a.iter().all(|v| v.is_finite()));
    assert_eq!(a, model_forward(&model, &store, &s.clone()).unwrap());
}

#[test]
fn empty_splits_are_contract_errors() {
    let ds = synth_generate(&SynthSpec {
        subjects: 4,
        regions: 3,
        timepoints: 8,
        window_size: 4,
        test_fraction: 0.0,
        ..SynthSpec::default()
    })
    .unwrap();
    let mut store = ParamStore::new();
    let model = Model::new(&tiny_config(), 3, &mut store, 0).unwrap();
    assert!(matches!(
        evaluate(&model, &store, &ds, Split::Test),
        Err(Error::Contract(_))
    ));

    let all_test = synth_generate(&SynthSpec {
        subjects: 4,
        regions: 6,
        timepoints: 8,
        window_size: 4,
        test_fraction: 1.0,
        ..SynthSpec::default()
    })
    .unwrap();
    assert!(matches!(
        train(&all_test, &small_config()),
        Err(Error::Contract(_))
    ));
}

#[test]
fn exploding_learning_rate_is_reported_as_divergence() {
    let ds = small_data(4);
    let cfg = TrainConfig {
        lr: 1e308,
        epochs: 3,
        ..small_config()
    };
    match train(&ds, &cfg) {
        Err(Error::Divergence(_)) => {}
        Ok(out) => panic!("no divergence: {:?}", out.history.last()),
        Err(e) => panic!("unexpected error {e}"),
    }
}
