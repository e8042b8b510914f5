use super::graph::{BnUpdate, BN_MOMENTUM};
use super::value::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Buffers (running statistics, frozen embedders) are stored but never differentiated.
    pub trainable: bool,
}

/// Named parameter and buffer storage shared by every network in a system.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, false)
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Param { name, value, grad, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.entries[id.0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Ids of trainable entries whose name starts with `prefix`.
    pub fn trainable_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.trainable && p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        self.entries[id.0].grad.add_assign(g);
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Folds queued batch statistics into the running averages.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for u in updates {
            let m = &mut self.entries[u.running_mean.0].value;
            for (r, b) in m.data_mut().iter_mut().zip(&u.batch_mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
            let v = &mut self.entries[u.running_var.0].value;
            for (r, b) in v.data_mut().iter_mut().zip(&u.batch_var_unbiased) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * b;
            }
        }
    }

    /// Replaces running statistics with the plain average of the given
    /// per-batch statistics. Each inner slice is one forward pass.
    pub fn set_bn_stats(&mut self, passes: &[Vec<BnUpdate>]) {
        if passes.is_empty() {
            return;
        }
        let n = passes.len() as f64;
        for (slot, first) in passes[0].iter().enumerate() {
            let mut mean = vec![0.0; first.batch_mean.len()];
            let mut var = vec![0.0; first.batch_var_unbiased.len()];
            for pass in passes {
                let u = &pass[slot];
                for (m, b) in mean.iter_mut().zip(&u.batch_mean) {
                    *m += b / n;
                }
                for (v, b) in var.iter_mut().zip(&u.batch_var_unbiased) {
                    *v += b / n;
                }
            }
            self.entries[first.running_mean.0].value.data_mut().copy_from_slice(&mean);
            self.entries[first.running_var.0].value.data_mut().copy_from_slice(&var);
        }
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Overwrites values from `other` for every entry with a matching name and shape.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.entries {
            let Some(id) = other.find(&p.name) else {
                return Err(Error::Format(format!("checkpoint is missing {}", p.name)));
            };
            let src = &other.get(id).value;
            if src.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "{}: checkpoint shape {:?}, expected {:?}",
                    p.name,
                    src.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.clone();
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam over a fixed group of parameters, with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    ids: Vec<ParamId>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, config: AdamConfig) -> Self {
        let first = ids.iter().map(|&id| Tensor::zeros(store.get(id).value.shape())).collect();
        let second = ids.iter().map(|&id| Tensor::zeros(store.get(id).value.shape())).collect();
        Self { config, ids, first, second, step: 0 }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        for &id in &self.ids {
            let p = store.get(id);
            if !p.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (slot, &id) in self.ids.iter().enumerate() {
            let p = store.get_mut(id);
            let m = self.first[slot].data_mut();
            let v = self.second[slot].data_mut();
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for j in 0..value.len() {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                value[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_slice(&[3], &[1.0, -2.0, 0.5]).unwrap());
        let mut adam = Adam::new(&store, vec![id], AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.get(id).value.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.0));
        store.accumulate_grad(id, &Tensor::scalar(1.0));
        let mut adam = Adam::new(&store, vec![id], AdamConfig { lr: 1e-3, ..AdamConfig::default() });
        adam.step(&mut store).unwrap();
        // m̂ = 1, v̂ = 1, so Δ = -lr · 1/(1 + eps)
        let delta = store.get(id).value.item();
        assert!((delta + 1e-3).abs() < 1e-10, "{delta}");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = ParamStore::new();
        let id = store.add("enc.conv1.w", Tensor::scalar(0.0));
        store.get_mut(id).grad = Tensor::scalar(f64::INFINITY);
        let mut adam = Adam::new(&store, vec![id], AdamConfig::default());
        let err = adam.step(&mut store).unwrap_err().to_string();
        assert!(err.contains("enc.conv1.w"), "{err}");
    }
}
