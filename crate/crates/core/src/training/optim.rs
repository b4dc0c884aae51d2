use disentangle_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::model::ParamSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adam over one parameter group. Moments are allocated lazily on the
/// first update.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    pub hyper: AdamHyper,
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(hyper: AdamHyper) -> Self {
        Self {
            hyper,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update. `grads` lines up with the tensors of `sets`
    /// flattened in order; `None` entries are treated as zero gradients.
    pub fn step(&mut self, sets: Vec<&mut ParamSet<T>>, grads: &[Option<Tensor<T>>], group: &str) -> Result<()> {
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            return Err(Error::Divergence {
                term: format!("gradient of {group}"),
            });
        }
        let total: usize = sets.iter().map(|s| s.len()).sum();
        assert_eq!(total, grads.len(), "one gradient slot per parameter");
        if self.m.is_empty() {
            for s in &sets {
                for t in s.tensors() {
                    self.m.push(vec![T::zero(); t.numel()]);
                    self.v.push(vec![T::zero(); t.numel()]);
                }
            }
        }
        self.t += 1;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(self.t as i32);
        let bc2 = 1.0 - h.beta2.powi(self.t as i32);
        let (b1, b2) = (T::lit(h.beta1), T::lit(h.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - h.beta1), T::lit(1.0 - h.beta2));
        let step = T::lit(h.lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(h.eps);
        let mut k = 0;
        for set in sets {
            for i in 0..set.len() {
                let (m, v) = (&mut self.m[k], &mut self.v[k]);
                let p = set.get(i);
                let mut data = p.to_vec();
                if let Some(g) = &grads[k] {
                    for (((x, &g), m), v) in data.iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + one_b1 * g;
                        *v = b2 * *v + one_b2 * g * g;
                        *x = *x - step * *m / ((*v * inv_bc2).sqrt() + eps);
                    }
                } else {
                    for ((x, m), v) in data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m;
                        *v = b2 * *v;
                        *x = *x - step * *m / ((*v * inv_bc2).sqrt() + eps);
                    }
                }
                set.set(i, data);
                k += 1;
            }
        }
        Ok(())
    }
}
