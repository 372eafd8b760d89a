//! Frozen 256-pair sampling pattern for the binary descriptor.
//!
//! Offsets are drawn from an isotropic Gaussian (σ = 6.2 px) with each point
//! kept inside a radius-13 disc, so every rotated sample stays within the
//! 16 px border once the 5×5 smoothing window is added.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const PATTERN_SEED: u64 = 0x0b1f_5eed_2561_0035;
pub const PATTERN_SIGMA: f64 = 6.2;
pub const PATTERN_RADIUS: i32 = 13;

/// Regenerates the table; `PATTERN` is its frozen output for `PATTERN_SEED`.
pub fn generate_pattern(seed: u64) -> [[i8; 4]; 256] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, PATTERN_SIGMA).expect("valid sigma");
    let point = |rng: &mut ChaCha8Rng| loop {
        let x = normal.sample(rng).round() as i32;
        let y = normal.sample(rng).round() as i32;
        if x * x + y * y <= PATTERN_RADIUS * PATTERN_RADIUS {
            return (x as i8, y as i8);
        }
    };
    let mut out = [[0i8; 4]; 256];
    let mut i = 0;
    while i < 256 {
        let a = point(&mut rng);
        let b = point(&mut rng);
        if a == b {
            continue;
        }
        out[i] = [a.0, a.1, b.0, b.1];
        i += 1;
    }
    out
}

#[rustfmt::skip]
pub const PATTERN: [[i8; 4]; 256] = [
    [4, 10, 1, 2],
    [-2, -1, -8, -2],
    [3, 5, 2, -1],
    [-8, -9, -3, -1],
    [2, 1, 3, -3],
    [-1, 0, 5, -6],
    [3, -2, -1, 0],
    [4, -6, -3, -2],
    [4, -7, -7, -2],
    [-3, 5, -3, -2],
    [-3, 1, 8, 3],
    [-4, -12, 9, 0],
    [-2, 0, 0, 6],
    [0, -3, -6, -10],
    [-3, 3, 3, 9],
    [1, 0, 7, -6],
    [-3, -2, 6, -1],
    [-1, -2, 1, -11],
    [4, 0, -6, 6],
    [2, 9, -6, 4],
    [-4, -2, -2, -2],
    [2, 7, -2, 3],
    [-6, -2, -5, -7],
    [6, -4, -4, 0],
    [-4, -2, 8, 8],
    [-1, -10, 8, 7],
    [3, -10, 2, 11],
    [-6, 4, -12, 2],
    [6, 1, -7, -3],
    [9, -1, 5, -2],
    [-3, 5, 3, -2],
    [-6, 2, 3, 1],
    [-2, 0, 7, 8],
    [1, -8, -7, -2],
    [0, -2, -5, -5],
    [6, -3, 4, -4],
    [1, -6, -2, 0],
    [0, 1, 3, 10],
    [-3, -12, -5, 3],
    [1, -4, -10, 6],
    [-4, -5, 6, 4],
    [-3, 9, 0, -5],
    [4, 11, -3, 6],
    [1, 2, -9, 3],
    [5, 1, 0, -6],
    [7, 10, -8, -1],
    [2, 10, 7, 0],
    [-4, -4, -1, 5],
    [2, 3, -5, -3],
    [-2, -9, -3, -1],
    [3, 8, 5, -5],
    [6, -5, 9, 3],
    [1, 1, -8, 0],
    [-2, 11, -4, 5],
    [-3, 1, -2, 3],
    [-2, 2, 3, -1],
    [0, -3, 0, 1],
    [2, -10, 8, 0],
    [3, 2, -1, -4],
    [8, -4, -9, 9],
    [8, 0, 3, -3],
    [4, 5, -7, -3],
    [-5, 3, -1, 8],
    [-8, 10, 0, 9],
    [3, -4, 8, 1],
    [1, 11, 0, -4],
    [8, -8, 5, 4],
    [4, 9, 2, 2],
    [-8, 0, -11, -3],
    [-7, -2, -4, -1],
    [0, 11, -2, -2],
    [3, 3, -3, 11],
    [-1, 0, 0, -5],
    [-2, 3, -2, 5],
    [4, -1, 5, -4],
    [-3, -2, 9, 1],
    [-7, 1, 1, 8],
    [-4, 5, 0, -1],
    [3, 6, 6, 0],
    [5, 1, 3, 4],
    [10, -4, 10, -2],
    [-10, -6, 7, -2],
    [-4, 4, 5, -6],
    [-4, -1, -6, 5],
    [-11, -4, -4, -2],
    [-8, 1, -3, -4],
    [-2, 1, -10, 5],
    [-6, -2, 2, -4],
    [-1, -7, 1, 0],
    [1, -1, 1, 9],
    [-5, -1, 1, -1],
    [2, 0, -11, 2],
    [-2, 10, 0, -5],
    [0, -13, 1, 0],
    [4, -1, 0, 5],
    [-7, 3, -2, 3],
    [-12, 4, -5, -11],
    [4, -2, 6, -1],
    [1, -5, 0, 3],
    [7, -9, 2, -8],
    [3, -4, -5, 3],
    [-9, -6, -8, 8],
    [4, 4, 2, -11],
    [8, 10, 10, 4],
    [-3, -7, 3, -9],
    [10, -8, 6, -6],
    [-8, -1, -3, 5],
    [-10, 0, 8, -6],
    [-4, 2, -5, -1],
    [5, -2, 3, -3],
    [-2, 0, -10, -3],
    [9, 2, 5, -6],
    [-7, 5, 7, 7],
    [-2, 11, -2, -12],
    [5, 9, -2, 1],
    [-6, 6, 0, 6],
    [3, 1, -8, -2],
    [2, 7, -5, 11],
    [3, -6, -4, 5],
    [1, -1, -6, 3],
    [-1, 5, -3, -7],
    [4, 0, 5, 7],
    [-2, 2, 10, 4],
    [-3, 0, 7, -1],
    [1, 0, 7, 2],
    [1, -1, 4, -1],
    [-1, -9, 6, 6],
    [5, 4, 11, 2],
    [4, 6, -1, -5],
    [-5, -2, 2, -3],
    [2, -5, 5, 12],
    [5, -4, 4, 8],
    [1, 10, 6, -6],
    [2, -1, 4, 8],
    [-4, 2, -6, 0],
    [2, 4, 8, -10],
    [-2, -1, -2, 9],
    [-6, 6, 2, 4],
    [-10, 6, -1, 4],
    [5, 0, -3, 6],
    [-1, 2, 7, -2],
    [8, -9, 1, 7],
    [-3, -2, 0, 7],
    [-2, 8, 2, -5],
    [4, 6, -4, 1],
    [-2, 4, -7, 2],
    [-3, -4, 4, -4],
    [-7, 1, -4, 2],
    [-7, -9, 5, 9],
    [-3, 4, 3, -4],
    [3, 0, -8, 8],
    [-9, -4, -8, 3],
    [-7, 2, 1, -3],
    [10, 6, 3, -2],
    [-6, -10, -6, 6],
    [3, 2, -8, 2],
    [-3, -6, 6, -11],
    [6, 4, 0, 7],
    [1, -2, 1, 2],
    [-2, 10, 11, 5],
    [-7, -3, 5, 10],
    [4, -2, 7, 1],
    [5, -3, -6, 2],
    [2, -10, 0, 4],
    [1, 2, 10, -3],
    [-3, 0, -3, 3],
    [-7, 5, -2, 0],
    [3, -3, -6, -9],
    [9, -7, 8, -9],
    [-5, 0, -9, -6],
    [-5, 7, -4, 12],
    [8, -6, 2, 3],
    [-3, -9, 3, 0],
    [2, 4, -6, 5],
    [-2, -11, -4, -6],
    [0, -7, 7, -5],
    [-4, -2, 3, 5],
    [-4, 6, 1, -7],
    [3, -4, 7, 2],
    [-1, 3, -5, -10],
    [-1, -3, -3, -3],
    [8, 5, 2, -2],
    [8, 1, 7, -6],
    [-1, 4, -5, 1],
    [-2, 5, -1, -7],
    [-3, -7, 0, -9],
    [1, -6, 2, -7],
    [1, 7, 5, -3],
    [-2, -9, -10, -5],
    [11, -3, -1, -2],
    [0, -3, -6, -1],
    [1, 4, 4, -3],
    [1, 10, 10, -6],
    [-3, 0, 11, -2],
    [-10, -6, 5, -1],
    [5, 5, 2, -4],
    [-1, -2, -5, -5],
    [3, -3, 0, -4],
    [-5, -3, -4, 3],
    [-1, 1, -3, -11],
    [5, -4, 12, -1],
    [-3, -5, 3, 3],
    [-6, 0, 4, 6],
    [4, -1, -3, -1],
    [-7, -7, 0, 1],
    [-1, 1, 0, 2],
    [-8, -2, 3, -7],
    [2, -1, -4, 0],
    [-1, -5, -2, 6],
    [2, 0, 1, 3],
    [0, 0, -2, 4],
    [2, 1, -3, -5],
    [3, -3, -8, -3],
    [2, -2, 0, 7],
    [-6, -1, 0, 7],
    [0, -4, -5, 1],
    [0, 1, 5, -4],
    [5, -2, 0, 3],
    [1, 9, -12, 1],
    [6, 0, 1, 2],
    [-1, -1, 1, 3],
    [-12, -3, 0, 0],
    [-9, 1, -4, 6],
    [0, 5, 3, 3],
    [0, -4, 4, -1],
    [-1, -4, -8, -7],
    [-7, 2, -1, -4],
    [-7, 1, -7, 0],
    [3, 7, -3, -7],
    [1, -4, -2, -9],
    [10, 1, 3, -2],
    [-3, -2, -4, -8],
    [6, 2, 5, -1],
    [2, -2, 6, -1],
    [-10, 8, -1, 0],
    [-1, -1, -7, 1],
    [-3, 1, 4, -2],
    [4, 2, -4, 1],
    [4, -6, 5, -4],
    [5, -8, 4, -2],
    [-13, 0, 3, 1],
    [2, 12, -1, -7],
    [0, 3, -4, 8],
    [-3, 4, 4, 3],
    [-11, -3, -3, 4],
    [4, 4, -4, -9],
    [-4, 2, -4, 6],
    [-5, 4, -1, -4],
    [2, -6, 9, 1],
    [5, 5, 3, 3],
    [-3, -4, -10, 1],
    [2, 6, 1, 4],
    [5, 7, 4, 0],
    [-1, -1, -2, -3],
    [-5, 10, 9, 3],
    [3, 6, -1, -3],
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_table_matches_generator() {
        assert_eq!(generate_pattern(PATTERN_SEED), PATTERN);
    }

    #[test]
    fn samples_fit_the_disc() {
        for p in &PATTERN {
            for (x, y) in [(p[0], p[1]), (p[2], p[3])] {
                let r2 = (x as i32).pow(2) + (y as i32).pow(2);
                assert!(r2 <= PATTERN_RADIUS * PATTERN_RADIUS);
            }
            assert!(p[0..2] != p[2..4]);
        }
    }
}
