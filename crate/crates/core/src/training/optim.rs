use serde::{Deserialize, Serialize};

use crate::model::{Gradients, ParamSelection, Parameters, Selection};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    AdamW,
    Sgd,
}

/// AdamW (or plain SGD) that only ever reads and writes selected entries.
///
/// Moment buffers exist only for touched tensors, and weight decay is applied
/// to selected entries of matrices only, so unselected parameters are never
/// modified.
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64, n_tensors: usize) -> Self {
        Self { kind, lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: vec![None; n_tensors] }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Gradients, selection: &ParamSelection) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, slot) in self.moments.iter_mut().enumerate() {
            let sel = selection.get(i);
            if matches!(sel, Selection::Nothing) {
                continue;
            }
            let t = params.tensor_mut(i);
            let decay = if t.shape().len() > 1 { self.weight_decay } else { 0.0 };
            let len = t.numel();
            let w = t.data_mut();
            let g = grads.tensor(i);
            match self.kind {
                OptimizerKind::Sgd => sel.for_each(len, |j| {
                    w[j] -= self.lr * (g[j] + decay * w[j]);
                }),
                OptimizerKind::AdamW => {
                    let (m, v) = slot.get_or_insert_with(|| (vec![0.0; len], vec![0.0; len]));
                    let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
                    sel.for_each(len, |j| {
                        m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                        v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                        let update = (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                        w[j] -= lr * (update + decay * w[j]);
                    });
                }
            }
        }
    }
}

/// Rescales `grads` so its global norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) {
    let n = grads.norm();
    if n > max_norm && n > 0.0 {
        grads.scale(max_norm / n);
    }
}
