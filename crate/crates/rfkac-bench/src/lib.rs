//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rfkac::field::sample_field;
use rfkac::gibbs::{Boundary, GibbsSpec};
use rfkac::walk::WalkPath;

/// Gaussian walk of `n` steps with variance ε per step.
pub fn gaussian_path(seed: u64, n: usize, eps: f64) -> WalkPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(0.0, eps.sqrt()).expect("positive variance");
    let chi: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
    WalkPath::from_increments(1, &chi).expect("non-empty")
}

/// Free-boundary window of `n` sites at β = 2, θ = 0.1.
pub fn free_window(seed: u64, n: usize, gamma: f64) -> GibbsSpec {
    let h = sample_field(seed, 1, n).expect("n > 0");
    GibbsSpec::new(2.0, 0.1, gamma, h, Boundary::Free).expect("valid spec")
}
