//! Dense `f64` tensors with reverse-mode differentiation, initializers,
//! Adam and parameter checkpoints.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamState};
pub use gradcheck::{check_gradients, check_param_gradients, GradCheck, FD_STEP, SMALL_GRAD};
pub use graph::{
    BatchNormMode, BatchStats, Gradients, Graph, Var, BATCH_NORM_EPS, LAYER_NORM_EPS, MIN_NORM,
};
pub use params::{
    glorot_normal_init, glorot_normal_shaped, glorot_sigma, ParamId, ParamStore, BUFFER_SUFFIXES,
};
pub use tensor::Tensor;

/// Relative tolerance of the gradient checks.
pub const GRAD_REL_TOL: f64 = 1e-4;
/// Absolute tolerance where the analytic gradient is below [`SMALL_GRAD`].
pub const GRAD_ABS_TOL: f64 = 1e-7;

/// Deterministic pseudo-random tensor for tests and examples.
pub fn seeded_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect())
        .expect("shape matches count")
}
