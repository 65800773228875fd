//! Shared fixtures for the benchmarks.

use spinewalker::labeling::{likelihood_vector, DEFAULT_SIGMA};
use spinewalker::phantom::generate_phantom;
use spinewalker::{LevelLikelihood, PhantomSpec, SpineGroundTruth, Volume};

/// A lumbar-sized phantom: eight vertebrae in a 160 x 128 x 260 mm volume.
pub fn small_phantom(seed: u64) -> (Volume, SpineGroundTruth) {
    let spec = PhantomSpec { n_vertebrae: 8, dims: [160, 128, 260], curvature_amplitude_mm: 10.0, ..PhantomSpec::default() };
    generate_phantom(&spec, seed).expect("fixture geometry fits")
}

/// The full 24-vertebra default phantom.
pub fn full_phantom(seed: u64) -> (Volume, SpineGroundTruth) {
    generate_phantom(&PhantomSpec::default(), seed).expect("fixture geometry fits")
}

/// Likelihoods for `n` instances whose predictions drift around `first..`.
pub fn likelihoods(n: usize, first: f64) -> Vec<LevelLikelihood> {
    (0..n)
        .map(|i| {
            let wobble = ((i * 7919) % 11) as f64 / 10.0 - 0.5;
            likelihood_vector((first + i as f64 + wobble).max(0.5), DEFAULT_SIGMA).expect("positive level")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        let (vol, truth) = small_phantom(1);
        assert_eq!(vol.dims(), [160, 128, 260]);
        assert_eq!(truth.n_instances(), 8);
        assert_eq!(likelihoods(24, 1.0).len(), 24);
    }
}
