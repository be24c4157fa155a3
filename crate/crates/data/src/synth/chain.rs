use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use somnet_core::{Hypnogram, Stage, NUM_STAGES};

use super::profile::TransitionMatrix;

/// Index drawn from the distribution `p` (assumed to sum to 1).
pub(crate) fn draw(p: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// First-order Markov chain; the initial stage is uniform.
pub fn generate_hypnogram_with(n_epochs: usize, transitions: &TransitionMatrix, rng: &mut impl Rng) -> Hypnogram {
    let mut k = rng.random_range(0..NUM_STAGES);
    let mut stages = Vec::with_capacity(n_epochs);
    for _ in 0..n_epochs {
        stages.push(Stage::SCORED[k]);
        k = draw(&transitions.0[k], rng);
    }
    Hypnogram::new(stages)
}

/// [`generate_hypnogram_with`] under the default sleep chain.
pub fn generate_hypnogram(n_epochs: usize, seed: u64) -> Hypnogram {
    generate_hypnogram_with(n_epochs, &TransitionMatrix::sleep(), &mut ChaCha8Rng::seed_from_u64(seed))
}
