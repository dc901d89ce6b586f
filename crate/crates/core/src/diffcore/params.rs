use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;

/// Name endings that mark non-trainable buffers.
pub const BUFFER_SUFFIXES: [&str; 2] = [".running_mean", ".running_var"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named tensors. Buffers (such as batch-norm running statistics) are stored
/// alongside trainable weights but are never handed to an optimizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    trainable: Vec<bool>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        assert!(self.id_of(&name).is_none(), "duplicate parameter name `{name}`");
        self.names.push(name);
        self.values.push(value);
        self.trainable.push(trainable);
        ParamId(self.values.len() - 1)
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, false)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|id| self.trainable[id.0]).collect()
    }

    /// Trainable parameters whose name starts with `prefix`.
    pub fn trainable_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids()
            .filter(|id| self.trainable[id.0] && self.names[id.0].starts_with(prefix))
            .collect()
    }

    /// Total scalar count of trainable parameters.
    pub fn num_trainable(&self) -> usize {
        self.ids()
            .filter(|id| self.trainable[id.0])
            .map(|id| self.values[id.0].len())
            .sum()
    }

    /// Copy every entry of `other` whose name starts with `prefix` into the
    /// entry of the same name here. Returns the number copied.
    pub fn copy_matching(&mut self, other: &ParamStore, prefix: &str) -> crate::Result<usize> {
        let mut copied = 0;
        for id in other.ids() {
            let name = other.name(id);
            if !name.starts_with(prefix) {
                continue;
            }
            let Some(dst) = self.id_of(name) else {
                return Err(crate::Error::Contract(format!("no parameter named `{name}`")));
            };
            if self.values[dst.0].shape() != other.get(id).shape() {
                return Err(crate::Error::shape(
                    "copy_matching",
                    self.values[dst.0].shape(),
                    other.get(id).shape(),
                ));
            }
            self.values[dst.0] = other.get(id).clone();
            copied += 1;
        }
        Ok(copied)
    }
}

/// Standard deviation of the Glorot normal initializer.
pub fn glorot_sigma(fan_in: usize, fan_out: usize) -> f64 {
    (2.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `[fan_in, fan_out]` tensor with entries from `Normal(0, 2 / (fan_in + fan_out))`.
pub fn glorot_normal_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    glorot_normal_shaped(&[fan_in, fan_out], fan_in, fan_out, rng)
}

pub fn glorot_normal_shaped<R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor {
    let dist = Normal::new(0.0, glorot_sigma(fan_in, fan_out)).expect("positive sigma");
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches count")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigma_formula() {
        assert!((glorot_sigma(2, 2) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empirical_std_within_two_percent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = glorot_normal_shaped(&[100_000], 64, 64, &mut rng);
        let (_, s) = crate::dsp::mean_std(t.data());
        let target = (2.0f64 / 128.0).sqrt();
        assert!((s - target).abs() / target < 0.02);
    }

    #[test]
    fn same_seed_same_tensor() {
        let a = glorot_normal_init(5, 3, &mut ChaCha8Rng::seed_from_u64(3));
        let b = glorot_normal_init(5, 3, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
    }
}
