use dgnc_core::gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP, DEFAULT_TOLERANCE};
use dgnc_core::verify::{gaussian, run_suite, tiny_config, SuiteOptions};
use dgnc_core::{Axis, Bound, OpKind, ParamStore, Result, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: std::ops::Range<u64> = 0..10;

fn store_of(seed: u64, shapes: &[(&str, usize, usize)]) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for &(name, r, c) in shapes {
        store.insert(name, gaussian(r, c, &mut rng)).unwrap();
    }
    store
}

fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = tape.constant(gaussian(shape[0], shape[1], &mut rng));
    let y = tape.mul(x, w)?;
    Ok(tape.sum(y))
}

fn check<F>(shapes: &[(&str, usize, usize)], f: F)
where
    F: Fn(&mut Tape, &Bound, u64) -> Result<Var>,
{
    for seed in SEEDS {
        let store = store_of(seed, shapes);
        let report: GradCheckReport =
            grad_check(&store, DEFAULT_STEP, None, |t, b| f(t, b, seed)).unwrap();
        assert!(
            report.max_rel_error() < DEFAULT_TOLERANCE,
            "seed {seed}: {:?}",
            report.worst()
        );
    }
}

fn id(b: &Bound, i: usize) -> Var {
    b.vars()[i]
}

#[test]
fn matmul() {
    check(&[("a", 3, 4), ("b", 4, 2)], |t, b, s| {
        let y = t.matmul(id(b, 0), id(b, 1))?;
        weighted_sum(t, y, s)
    });
}

#[test]
fn elementwise_with_broadcast() {
    check(&[("a", 3, 4), ("row", 1, 4), ("col", 3, 1)], |t, b, s| {
        let x = t.add(id(b, 0), id(b, 1))?;
        let x = t.mul(x, id(b, 2))?;
        let x = t.sub(x, id(b, 1))?;
        let x = t.scale(x, -0.7);
        weighted_sum(t, x, s)
    });
}

#[test]
fn sigmoid_and_powf() {
    check(&[("a", 3, 3)], |t, b, s| {
        let x = t.sigmoid(id(b, 0));
        let x = t.powf(x, -0.5);
        weighted_sum(t, x, s)
    });
}

#[test]
fn relu_away_from_kink() {
    check(&[("a", 4, 4)], |t, b, s| {
        let x = t.relu(id(b, 0));
        weighted_sum(t, x, s)
    });
}

#[test]
fn softmax_rows() {
    check(&[("a", 3, 5)], |t, b, s| {
        let x = t.softmax_rows(id(b, 0))?;
        weighted_sum(t, x, s)
    });
}

#[test]
fn matmul_softmax_chain() {
    check(&[("x", 4, 3), ("wq", 3, 2), ("wk", 3, 2)], |t, b, s| {
        let q = t.matmul(id(b, 0), id(b, 1))?;
        let k = t.matmul(id(b, 0), id(b, 2))?;
        let kt = t.transpose(k)?;
        let qk = t.matmul(q, kt)?;
        let p = t.softmax_rows(qk)?;
        let y = t.matmul(p, id(b, 0))?;
        weighted_sum(t, y, s)
    });
}

#[test]
fn reductions_and_transpose() {
    check(&[("a", 3, 4)], |t, b, s| {
        let m = t.mean_over_axis(id(b, 0), Axis::Rows)?;
        let r = t.sum_over_axis(id(b, 0), Axis::Cols)?;
        let tr = t.transpose(id(b, 0))?;
        let a = weighted_sum(t, m, s)?;
        let c = weighted_sum(t, r, s + 1)?;
        let d = weighted_sum(t, tr, s + 2)?;
        let x = t.add(a, c)?;
        t.add(x, d)
    });
}

#[test]
fn concatenation() {
    check(&[("a", 2, 3), ("b", 2, 2), ("c", 1, 5)], |t, b, s| {
        let x = t.concat_cols(&[id(b, 0), id(b, 1)])?;
        let y = t.concat_rows(&[x, id(b, 2)])?;
        let y = t.sigmoid(y);
        weighted_sum(t, y, s)
    });
}

#[test]
fn layer_norm() {
    check(&[("x", 3, 5), ("g", 1, 5), ("b", 1, 5)], |t, b, s| {
        let y = t.layer_norm(id(b, 0), id(b, 1), id(b, 2))?;
        weighted_sum(t, y, s)
    });
}

#[test]
fn mask() {
    check(&[("a", 3, 3)], |t, b, s| {
        let keep = vec![true, false, true, false, true, true, false, false, true];
        let y = t.mask(id(b, 0), keep)?;
        let y = t.sigmoid(y);
        weighted_sum(t, y, s)
    });
}

#[test]
fn cross_entropy() {
    check(&[("z", 1, 2)], |t, b, s| {
        t.cross_entropy(id(b, 0), (s % 2) as usize)
    });
}

#[test]
fn full_model_suite_over_seeds() {
    let cfg = tiny_config();
    for seed in 1..11 {
        let opts = SuiteOptions {
            seed,
            ..SuiteOptions::default()
        };
        for m in run_suite(&cfg, &opts).unwrap() {
            assert!(
                m.report.max_rel_error() < DEFAULT_TOLERANCE,
                "seed {seed} module {}: {:?}",
                m.module,
                m.report.worst()
            );
        }
    }
}

#[test]
fn injected_faults_are_caught() {
    let cfg = tiny_config();
    for op in [
        OpKind::MatMul,
        OpKind::SoftmaxRows,
        OpKind::LayerNorm,
        OpKind::Sigmoid,
    ] {
        let opts = SuiteOptions {
            fault: Some(op),
            ..SuiteOptions::default()
        };
        let worst = run_suite(&cfg, &opts)
            .unwrap()
            .iter()
            .map(|m| m.report.max_rel_error())
            .fold(0.0, f64::max);
        assert!(worst > 1e-2, "{op}: {worst}");
    }
}
