//! Seeded fixtures for the benchmarks.

use pal_core::{BinaryMask, PreferenceVotes, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A `side`×`side` mask with `blobs` filled squares of side 4..=side/8 at random places.
pub fn blob_mask(side: usize, blobs: usize, seed: u64) -> BinaryMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = BinaryMask::new(side, side).expect("non-empty grid");
    let max = (side / 8).max(4);
    for _ in 0..blobs {
        let s = rng.gen_range(4..=max).min(side);
        let x0 = rng.gen_range(0..=side - s);
        let y0 = rng.gen_range(0..=side - s);
        for y in y0..y0 + s {
            for x in x0..x0 + s {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Uniform noise image.
pub fn noise_image(side: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = (0..side * side * 3).map(|_| rng.gen()).collect();
    RgbImage::new(side, side, raw).expect("buffer matches size")
}

/// `n` votes drawn from {−1, 0, +1}.
pub fn random_votes(n: usize, seed: u64) -> PreferenceVotes {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PreferenceVotes::new("bench", (0..n).map(|_| rng.gen_range(-1..=1)).collect()).expect("valid votes")
}
