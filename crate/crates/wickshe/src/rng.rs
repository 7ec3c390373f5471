//! Keyed random substreams. A master seed and a stream name hash to a ChaCha
//! key; the batch index selects the ChaCha stream. Adding workers or batches
//! never shifts another stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stream {
    seed: u64,
    name: String,
}

impl Stream {
    pub fn new(seed: u64, name: &str) -> Self {
        Self { seed, name: name.to_string() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn child(&self, suffix: &str) -> Self {
        Self { seed: self.seed, name: format!("{}/{}", self.name, suffix) }
    }

    pub fn batch(&self, index: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(b"wickshe.stream.v1");
        h.update(self.seed.to_le_bytes());
        h.update((self.name.len() as u64).to_le_bytes());
        h.update(self.name.as_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest[..32]);
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}

/// Splits `n` items into fixed-size batches: (start, len) per batch.
pub fn batches(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let bs = batch_size.max(1);
    (0..n.div_ceil(bs)).map(|b| (b * bs, bs.min(n - b * bs))).collect()
}
