//! Fixtures shared by the benchmarks.

use lvm_core::zoo::{LinearGaussianLvmSpec, ModelSpec};
use lvm_core::{Matrix, RngStream};

/// FA spec with `p` observed and `d` latent dimensions and random loadings.
pub fn fa_spec(p: usize, d: usize, seed: u64) -> ModelSpec {
    let mut rng = RngStream::new(seed);
    let loading = Matrix::from_fn(p, d, |_, _| rng.standard_normal());
    let noise = (0..p).map(|j| 0.5 + 0.1 * (j % 5) as f64).collect();
    ModelSpec::Fa(LinearGaussianLvmSpec::fa(loading, noise))
}
