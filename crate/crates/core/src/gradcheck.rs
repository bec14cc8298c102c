//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::params::{Bound, ParamStore};
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::{precision, set_precision, Precision};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// Entries whose probes straddled a kink even at the smallest step.
    pub skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn skipped(&self) -> usize {
        self.params.iter().map(|p| p.skipped).sum()
    }

    pub fn failures(&self, tol: f64) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| !(p.max_rel_error < tol))
    }
}

/// `|a - n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

struct PrecisionGuard(Precision);

impl Drop for PrecisionGuard {
    fn drop(&mut self) {
        set_precision(self.0);
    }
}

/// Step shrink factors tried when a probe crosses a kink.
const SHRINK: [f64; 4] = [1.0, 1e-1, 1e-2, 1e-3];

fn eval_loss<F>(store: &ParamStore, f: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    Ok((tape.value(loss)[0], tape.decision_signature()))
}

/// Compares the tape gradient of the scalar program `f` with central
/// differences of step `h` for every trainable entry of `store`. Frozen
/// tensors are skipped. Always runs in 64-bit mode.
///
/// A difference quotient is only meaningful on one smooth piece of the
/// program, so when a probe changes a ReLU sign or a sparsity mask the step
/// is shrunk (down to `h/1000`); entries that still straddle a kink are
/// counted in [`ParamCheck::skipped`] instead of being compared.
pub fn grad_check<F>(
    store: &ParamStore,
    h: f64,
    fault: Option<OpKind>,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let _guard = PrecisionGuard(precision());
    set_precision(Precision::F64);

    let mut tape = Tape::new();
    tape.inject_fault(fault);
    let bound = store.bind(&mut tape);
    let loss = f(&mut tape, &bound)?;
    let base_signature = tape.decision_signature();
    tape.backward(loss)?;
    let analytic = store.collect_grads(&tape, &bound);
    drop(tape);

    let mut probe = store.clone();
    let mut report = GradCheckReport::default();
    for id in store.ids() {
        let Some(grad) = &analytic[id.index()] else {
            continue;
        };
        let mut worst = (0.0, 0);
        let mut skipped = 0;
        for k in 0..grad.len() {
            let orig = store.get(id).data()[k];
            let mut numeric = None;
            for shrink in SHRINK {
                let step = h * shrink;
                probe.get_mut(id).data_mut()[k] = orig + step;
                let (plus, sig_plus) = eval_loss(&probe, &f)?;
                probe.get_mut(id).data_mut()[k] = orig - step;
                let (minus, sig_minus) = eval_loss(&probe, &f)?;
                if sig_plus == base_signature && sig_minus == base_signature {
                    numeric = Some((plus - minus) / (2.0 * step));
                    break;
                }
            }
            probe.get_mut(id).data_mut()[k] = orig;
            let Some(numeric) = numeric else {
                skipped += 1;
                continue;
            };
            let err = relative_error(grad[k], numeric);
            if !(err <= worst.0) {
                worst = (err, k);
            }
        }
        report.params.push(ParamCheck {
            name: store.name(id).to_string(),
            max_rel_error: worst.0,
            worst_index: worst.1,
            skipped,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn frozen_tensor_is_skipped() {
        let mut store = ParamStore::new();
        let w = store.constant("w", 2, 2, 0.5).unwrap();
        let frozen = store.constant("frozen", 2, 2, 1.0).unwrap();
        store.get_mut(frozen).set_requires_grad(false);
        let report = grad_check(&store, DEFAULT_STEP, None, |t, b| {
            let y = t.matmul(b.var(w), b.var(frozen))?;
            let y = t.sigmoid(y);
            Ok(t.sum(y))
        })
        .unwrap();
        assert_eq!(report.params.len(), 1);
        assert_eq!(report.params[0].name, "w");
        assert!(report.max_rel_error() < DEFAULT_TOLERANCE);
    }

    #[test]
    fn injected_fault_is_detected() {
        let mut store = ParamStore::new();
        let w = store
            .insert("w", Tensor::from_rows(&[[0.3, -0.2], [0.1, 0.4]]).unwrap())
            .unwrap();
        let run = |fault| {
            grad_check(&store, DEFAULT_STEP, fault, |t, b| {
                let y = t.sigmoid(b.var(w));
                Ok(t.sum(y))
            })
            .unwrap()
            .max_rel_error()
        };
        assert!(run(None) < DEFAULT_TOLERANCE);
        assert!(run(Some(OpKind::Sigmoid)) > 1e-2);
    }

    #[test]
    fn relative_error_denominator() {
        assert_eq!(relative_error(0.0, 1e-5), 1e-5);
        assert_eq!(relative_error(100.0, 101.0), 1.0 / 101.0);
    }
}
