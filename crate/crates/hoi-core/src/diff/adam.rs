//! Adaptive moment estimation over a [`ParamStore`].

use super::params::ParamStore;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let m = store.iter().map(|e| vec![0.0; e.data.len()]).collect();
        let v = store.iter().map(|e| vec![0.0; e.data.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }

    /// Apply one update. `grads` must be aligned with the store's entries;
    /// frozen entries are skipped.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) {
        assert_eq!(grads.len(), store.len(), "gradient/entry count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..store.len() {
            if !store.entry(i).trainable {
                continue;
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = &mut store.entry_mut(i).data;
            let g = &grads[i];
            for j in 0..data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Gradient accumulator aligned with a store's entries.
pub struct GradAccum {
    sums: Vec<Vec<f64>>,
}

impl GradAccum {
    pub fn new(store: &ParamStore) -> Self {
        GradAccum {
            sums: store.iter().map(|e| vec![0.0; e.data.len()]).collect(),
        }
    }

    pub fn add(&mut self, entry: usize, grad: &[f64]) {
        let s = &mut self.sums[entry];
        debug_assert_eq!(s.len(), grad.len());
        for (a, b) in s.iter_mut().zip(grad) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for s in &mut self.sums {
            for v in s.iter_mut() {
                *v *= k;
            }
        }
    }

    pub fn reset(&mut self) {
        for s in &mut self.sums {
            s.fill(0.0);
        }
    }

    pub fn sums(&self) -> &[Vec<f64>] {
        &self.sums
    }
}
