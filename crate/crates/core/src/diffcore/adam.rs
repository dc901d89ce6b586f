use super::graph::Gradients;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for a fixed list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        Self {
            config,
            t: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// One update of every tensor in `params` from its gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (j, (w, gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Adam over a chosen subset of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    ids: Vec<ParamId>,
    state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore, ids: Vec<ParamId>) -> Self {
        let shapes: Vec<&[usize]> = ids.iter().map(|id| store.get(*id).shape()).collect();
        let state = AdamState::new(config, &shapes);
        Self { ids, state }
    }

    /// Adam over every trainable parameter.
    pub fn all(config: AdamConfig, store: &ParamStore) -> Self {
        Self::new(config, store, store.trainable_ids())
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn steps(&self) -> u64 {
        self.state.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        let zeros: Vec<Tensor> = self
            .ids
            .iter()
            .map(|id| Tensor::zeros(store.get(*id).shape()))
            .collect();
        let gs: Vec<&Tensor> = self
            .ids
            .iter()
            .zip(&zeros)
            .map(|(id, z)| grads.param(*id).unwrap_or(z))
            .collect();
        let mut taken: Vec<Tensor> = self
            .ids
            .iter()
            .map(|id| std::mem::replace(store.get_mut(*id), Tensor::scalar(0.0)))
            .collect();
        {
            let mut refs: Vec<&mut Tensor> = taken.iter_mut().collect();
            self.state.step(&mut refs, &gs);
        }
        for (id, t) in self.ids.iter().zip(taken) {
            *store.get_mut(*id) = t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut s = AdamState::new(AdamConfig::default(), &[&[3]]);
        s.step(&mut [&mut p], &[&g]);
        assert_eq!(p, before);
    }

    #[test]
    fn first_unit_step_is_lr() {
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::ones(&[2]);
        let mut s = AdamState::new(AdamConfig::with_lr(0.001), &[&[2]]);
        s.step(&mut [&mut p], &[&g]);
        let expect = -0.001 / (1.0 + 1e-8);
        assert!(p.data().iter().all(|v| (v - expect).abs() < 1e-15));
        assert_eq!(s.t, 1);
    }

    #[test]
    fn minimizes_square() {
        let mut p = Tensor::scalar(1.0);
        let mut s = AdamState::new(AdamConfig::with_lr(0.05), &[&[]]);
        for _ in 0..200 {
            let g = Tensor::scalar(2.0 * p.item());
            s.step(&mut [&mut p], &[&g]);
        }
        assert!(p.item().abs() < 0.1);
    }
}
