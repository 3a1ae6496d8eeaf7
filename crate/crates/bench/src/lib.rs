//! Seeded inputs shared by the benchmarks.

use mikani_core::data::{CharMask, HardSpan};
use mikani_core::wiki::Candidate;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const VOCAB: [&str; 24] = [
    "the", "river", "city", "tower", "north", "built", "stone", "king", "museum", "opera", "bridge", "harbour",
    "paris", "sydney", "year", "capital", "largest", "war", "century", "island", "church", "founded", "people",
    "railway",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sentence(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words).map(|_| *VOCAB.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// `n` page sentences of 8 to 30 words.
pub fn candidates(rng: &mut ChaCha8Rng, n: usize) -> Vec<Candidate> {
    (0..n)
        .map(|_| {
            let len = rng.random_range(8..30);
            Candidate::new(sentence(rng, len), "Page")
        })
        .collect()
}

/// Feature rows in `[-1, 1]^d` with sparse targets, like per-token data.
pub fn regression_set(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let targets = rows.iter().map(|r| if r[0] > 0.4 { (r[0] + 0.2 * r[1 % d]).clamp(0.0, 1.0) } else { 0.0 }).collect();
    (rows, targets)
}

pub fn hard_spans(rng: &mut ChaCha8Rng, len: usize, count: usize) -> Vec<HardSpan> {
    (0..count)
        .map(|_| {
            let a = rng.random_range(0..len);
            HardSpan::new(a, rng.random_range(a + 1..=len))
        })
        .collect()
}

pub fn mask(rng: &mut ChaCha8Rng, len: usize) -> CharMask {
    let mut m = CharMask::zeros(len);
    for v in &mut m.values {
        *v = if rng.random_bool(0.7) { 0.0 } else { rng.random_range(0.0..1.0) };
    }
    m
}
