//! Addressable random streams.
//!
//! A [`StreamKey`] names an independent ChaCha stream. Keys are derived by
//! hashing a parent key with an index or label, so every
//! (seed, phase, step, iteration, row) tuple gets its own generator no matter
//! in which order the streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(mix(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)))
    }

    pub fn child(self, index: u64) -> Self {
        StreamKey(mix(self.0 ^ mix(index.wrapping_add(0x632b_e59b_d9b4_e019))))
    }

    /// Domain-separated child, e.g. `key.domain("train")`.
    pub fn domain(self, label: &str) -> Self {
        let h = label
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
        self.child(h)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// `rows × cols` standard normals; row `r` is drawn from `self.child(r)`.
    pub fn normal_rows(self, rows: usize, cols: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let mut rng = self.child(r as u64).rng();
            out.extend((0..cols).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
        }
        out
    }
}
