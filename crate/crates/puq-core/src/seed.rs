//! Deterministic random-stream derivation.
//!
//! Every random decision in a run is drawn from a stream derived from
//! `(master_seed, instance, tag)`. Identical triples yield identical
//! streams on every platform, distinct triples yield independent ones,
//! so whole pipelines replay bit-identically from one `u64`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSpec {
    master: u64,
}

impl SeedSpec {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    fn key(&self, instance: u64, tag: &str) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.master.to_le_bytes());
        hasher.update(instance.to_le_bytes());
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag.as_bytes());
        hasher.finalize().into()
    }

    /// Random stream for one `(instance, tag)` pair.
    pub fn stream(&self, instance: u64, tag: &str) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.key(instance, tag))
    }

    /// Derived sub-seed, e.g. one per replicate. Streams of the child are
    /// independent of the parent's.
    pub fn child(&self, index: u64, tag: &str) -> SeedSpec {
        let key = self.key(index, tag);
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&key[..8]);
        SeedSpec::new(u64::from_le_bytes(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    fn draw(rng: &mut ChaCha12Rng, n: usize) -> alloc::vec::Vec<u64> {
        (0..n).map(|_| rng.next_u64()).collect()
    }

    #[test]
    fn identical_triples_replay() {
        let s = SeedSpec::new(42);
        let a = draw(&mut s.stream(0, "sample"), 16);
        let b = draw(&mut s.stream(0, "sample"), 16);
        assert_eq!(a, b);
    }

    #[test]
    fn instance_and_tag_separate_streams() {
        let s = SeedSpec::new(42);
        let base = draw(&mut s.stream(0, "sample"), 16);
        assert_ne!(base, draw(&mut s.stream(1, "sample"), 16));
        assert_ne!(base, draw(&mut s.stream(0, "split"), 16));
    }

    #[test]
    fn child_seeds_differ_from_parent_and_each_other() {
        let s = SeedSpec::new(7);
        let c0 = s.child(0, "replicate");
        let c1 = s.child(1, "replicate");
        assert_ne!(c0.master(), c1.master());
        let a = draw(&mut c0.stream(0, "sample"), 8);
        assert_ne!(a, draw(&mut c1.stream(0, "sample"), 8));
        assert_ne!(a, draw(&mut s.stream(0, "sample"), 8));
        // derivation itself is deterministic
        assert_eq!(c0, s.child(0, "replicate"));
    }
}
