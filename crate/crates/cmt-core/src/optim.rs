//! Named parameter sets and the Adam optimizer with decoupled weight decay.

use std::collections::BTreeMap;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Ordered map of named parameters. Iteration order is lexicographic, which
/// keeps every consumer (optimizer, checkpoints, digests) deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet<S = f64> {
    map: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet {
            map: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<S>) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.map.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Concatenated little-endian byte image of all tensors in name order.
    /// Two sets compare byte-identical iff this image matches (given equal
    /// names and shapes).
    pub fn byte_image(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, t) in &self.map {
            out.extend_from_slice(name.as_bytes());
            out.push(0);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.to_f64_le_bytes());
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("gradient for unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("gradient shape {grad:?} does not match parameter {name:?} shape {param:?}")]
    ShapeMismatch {
        name: String,
        param: Vec<usize>,
        grad: Vec<usize>,
    },
}

/// Adam with decoupled weight decay. Parameters without a gradient entry in
/// a step are left bit-identical (their moment state is untouched too).
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Default)]
pub struct Adam<S = f64> {
    pub cfg: AdamConfig,
    step: u64,
    m: BTreeMap<String, Tensor<S>>,
    v: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over possibly several parameter sets sharing this
    /// optimizer state. The step counter advances once per call.
    pub fn step(
        &mut self,
        sets: &mut [(&mut ParamSet<S>, &BTreeMap<String, Tensor<S>>)],
    ) -> Result<(), OptimError> {
        self.step += 1;
        let t = self.step;
        let b1 = S::from_f64(self.cfg.beta1);
        let b2 = S::from_f64(self.cfg.beta2);
        let lr = S::from_f64(self.cfg.lr);
        let eps = S::from_f64(self.cfg.eps);
        let wd = S::from_f64(self.cfg.weight_decay);
        let one = S::one();
        let bc1 = S::from_f64(1.0 - self.cfg.beta1.powi(t as i32));
        let bc2 = S::from_f64(1.0 - self.cfg.beta2.powi(t as i32));

        for (params, grads) in sets.iter_mut() {
            for (name, g) in grads.iter() {
                let p = params
                    .get_mut(name)
                    .ok_or_else(|| OptimError::UnknownParam(name.clone()))?;
                if p.shape() != g.shape() {
                    return Err(OptimError::ShapeMismatch {
                        name: name.clone(),
                        param: p.shape().to_vec(),
                        grad: g.shape().to_vec(),
                    });
                }
                let m = self
                    .m
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(g.shape()));
                let v = self
                    .v
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(g.shape()));
                let pd = p.data_mut();
                let md = m.data_mut();
                let vd = v.data_mut();
                for i in 0..pd.len() {
                    let gi = g.data()[i];
                    md[i] = b1 * md[i] + (one - b1) * gi;
                    vd[i] = b2 * vd[i] + (one - b2) * gi * gi;
                    let mhat = md[i] / bc1;
                    let vhat = vd[i] / bc2;
                    // Decoupled decay: the penalty bypasses the adaptive
                    // scaling entirely.
                    pd[i] = pd[i] - lr * (mhat / (vhat.sqrt() + eps) + wd * pd[i]);
                }
            }
        }
        Ok(())
    }
}

/// Scale all gradients in place so their joint L2 norm is at most
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm<S: Scalar>(
    grads: &mut [&mut BTreeMap<String, Tensor<S>>],
    max_norm: f64,
) -> f64 {
    let mut total = 0.0f64;
    for gm in grads.iter() {
        for t in gm.values() {
            for &x in t.data() {
                let v = x.into_f64();
                total += v * v;
            }
        }
    }
    let norm = total.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = S::from_f64(max_norm / norm);
        for gm in grads.iter_mut() {
            for t in gm.values_mut() {
                for x in t.data_mut() {
                    *x = *x * scale;
                }
            }
        }
    }
    norm
}
