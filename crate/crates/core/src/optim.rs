//! Adam and the reduce-on-plateau learning-rate schedule.

use crate::params::ParamStore;

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update from the gradients accumulated in `store`,
    /// each multiplied by `grad_scale`. Tensors without a gradient buffer are
    /// left untouched.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, grad_scale: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let tensor = store.get_mut(id);
            let Some(grad) = tensor.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            for (k, p) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[k] * grad_scale;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Mode-min plateau schedule: a loss counts as an improvement when it beats
/// the best by at least `min_improvement`; after more than `patience`
/// consecutive non-improving epochs the rate is multiplied by `factor`
/// (never below `floor`) and the counter resets.
#[derive(Clone, Debug, PartialEq)]
pub struct ReduceOnPlateau {
    lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub min_improvement: f64,
    pub floor: f64,
    best: f64,
    counter: usize,
}

impl ReduceOnPlateau {
    pub fn new(lr: f64, factor: f64, patience: usize, min_improvement: f64, floor: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            min_improvement,
            floor,
            best: f64::INFINITY,
            counter: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn counter(&self) -> usize {
        self.counter
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feeds one epoch's monitored loss; returns the rate for the next epoch.
    pub fn step(&mut self, loss: f64) -> f64 {
        if self.best - loss >= self.min_improvement {
            self.best = loss;
            self.counter = 0;
        } else {
            self.counter += 1;
        }
        if self.counter > self.patience {
            self.lr = (self.lr * self.factor).max(self.floor);
            self.counter = 0;
        }
        self.lr
    }
}
