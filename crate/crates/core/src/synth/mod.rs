//! Corruption and augmentation generators.
//!
//! Subtitle-side generators produce Loose samples (added captions, scrambled
//! targets) and Bad samples (random and drifted alignment). The corruptions in
//! [`corruption`] build the parallel-text corpus the random forest learns from.

pub mod corruption;
pub mod generators;
pub mod lexicon;
pub mod ngram;
pub mod weights;

use rand::{Error as RandError, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use corruption::{
    build_rfc_corpus, random_sentence_swap, split_train_test, substitute_rare_words, trigram_substitute,
    Corruption, RfcCorpus, RfcSample,
};
pub use generators::{add_captions, drift_align, random_align, scramble_target, DriftReport};
pub use lexicon::CaptionLexicon;
pub use ngram::{FrequencyTable, NgramStats, TrigramTable};
pub use weights::SourceWeights;

/// Deterministic random stream: same seed, same output.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// Serializable position of a [`SeededRng`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for a named stage: `seed XOR fnv1a(tag)`.
    pub fn derive(&self, tag: &str) -> SeededRng {
        SeededRng::new(derive_seed(self.seed, tag))
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut rng = SeededRng::new(state.seed);
        rng.inner.set_word_pos(state.word_pos);
        rng
    }
}

pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    seed ^ fnv1a(tag.as_bytes())
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), RandError> {
        self.inner.try_fill_bytes(dest)
    }
}
