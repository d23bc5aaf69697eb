//! First-order optimisers over lists of flat parameter buffers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain gradient descent `p -= lr * g`.
    Sgd,
}

/// Adam with the PyTorch update rule and dense moment updates, or plain SGD.
///
/// Buffers are matched to parameters by position. A buffer that grows
/// (an expandable table gaining rows) has its moments zero-extended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(lr)
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Clears moments and the step counter.
    pub fn reset(&mut self) {
        self.t = 0;
        self.m.clear();
        self.v.clear();
    }

    /// Applies one update. `params[i]` and `grads[i]` must have equal length;
    /// `None` entries are skipped but keep their slot.
    pub fn step(&mut self, params: Vec<Option<&mut [f64]>>, grads: Vec<Option<&[f64]>>) {
        debug_assert_eq!(params.len(), grads.len());
        if self.kind == OptimizerKind::Sgd {
            for (p, g) in params.into_iter().zip(grads) {
                if let (Some(p), Some(g)) = (p, g) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= self.lr * gi;
                    }
                }
            }
            return;
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2_sqrt = (1.0 - self.beta2.powi(self.t as i32)).sqrt();
        let step_size = self.lr / bc1;
        if self.m.len() < params.len() {
            self.m.resize(params.len(), Vec::new());
            self.v.resize(params.len(), Vec::new());
        }
        for (slot, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (Some(p), Some(g)) = (p, g) else { continue };
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            if m.len() < p.len() {
                m.resize(p.len(), 0.0);
                v.resize(p.len(), 0.0);
            }
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let denom = v[i].sqrt() / bc2_sqrt + self.eps;
                p[i] -= step_size * m[i] / denom;
            }
        }
    }
}
