//! Unigram, bigram and trigram statistics over tokenized text.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::subtitle::TokenSequence;

/// Unigram counts with a sampler over the empirical distribution.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: BTreeMap<String, u64>,
    total: u64,
}

impl FrequencyTable {
    pub fn build<'a, I>(sentences: I) -> Self
    where
        I: IntoIterator<Item = &'a TokenSequence>,
    {
        let mut table = FrequencyTable::default();
        for s in sentences {
            for tok in s.tokens() {
                *table.counts.entry(tok.clone()).or_insert(0) += 1;
                table.total += 1;
            }
        }
        table
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(word).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn vocabulary_size(&self) -> usize {
        self.counts.len()
    }

    pub fn probability(&self, word: &str) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(word) as f64 / self.total as f64
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(w, &c)| (w.as_str(), c))
    }

    /// Draws a word proportionally to its count; `None` for an empty table.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&str> {
        if self.total == 0 {
            return None;
        }
        let mut target = rng.gen_range(0..self.total);
        for (w, &c) in &self.counts {
            if target < c {
                return Some(w);
            }
            target -= c;
        }
        unreachable!("target below total")
    }
}

/// Conditional next-word distributions keyed by the preceding word bigram.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrigramTable {
    table: BTreeMap<(String, String), Vec<(String, f64)>>,
}

impl TrigramTable {
    pub fn build<'a, I>(sentences: I) -> Self
    where
        I: IntoIterator<Item = &'a TokenSequence>,
    {
        let mut counts: BTreeMap<(String, String), BTreeMap<String, u64>> = BTreeMap::new();
        for s in sentences {
            for w in s.tokens().windows(3) {
                *counts
                    .entry((w[0].clone(), w[1].clone()))
                    .or_default()
                    .entry(w[2].clone())
                    .or_insert(0) += 1;
            }
        }
        let table = counts
            .into_iter()
            .map(|(k, next)| {
                let total: u64 = next.values().sum();
                let dist = next.into_iter().map(|(w, c)| (w, c as f64 / total as f64)).collect();
                (k, dist)
            })
            .collect();
        TrigramTable { table }
    }

    /// Builds a table from explicit conditional distributions, normalizing each.
    pub fn from_distributions<I>(entries: I) -> Self
    where
        I: IntoIterator<Item = ((String, String), Vec<(String, f64)>)>,
    {
        let table = entries
            .into_iter()
            .filter_map(|(k, mut dist)| {
                dist.sort_by(|a, b| a.0.cmp(&b.0));
                let total: f64 = dist.iter().map(|(_, p)| p).sum();
                (total > 0.0).then(|| (k, dist.into_iter().map(|(w, p)| (w, p / total)).collect()))
            })
            .collect();
        TrigramTable { table }
    }

    pub fn distribution(&self, w1: &str, w2: &str) -> Option<&[(String, f64)]> {
        self.table
            .get(&(w1.to_string(), w2.to_string()))
            .map(Vec::as_slice)
    }

    pub fn contains(&self, w1: &str, w2: &str) -> bool {
        self.distribution(w1, w2).is_some()
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), &[(String, f64)])> {
        self.table.iter().map(|(k, v)| (k, v.as_slice()))
    }

    /// Draws a continuation of `(w1, w2)` from its conditional distribution.
    pub fn sample<R: Rng + ?Sized>(&self, w1: &str, w2: &str, rng: &mut R) -> Option<&str> {
        let dist = self.distribution(w1, w2)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (w, p) in dist {
            acc += p;
            if u < acc {
                return Some(w);
            }
        }
        dist.last().map(|(w, _)| w.as_str())
    }
}

/// Joint n-gram probabilities (n = 1..3) for one language.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NgramStats {
    orders: [BTreeMap<String, u64>; 3],
    totals: [u64; 3],
}

impl NgramStats {
    pub fn build<'a, I>(sentences: I) -> Self
    where
        I: IntoIterator<Item = &'a TokenSequence>,
    {
        let mut stats = NgramStats::default();
        for s in sentences {
            for n in 1..=3 {
                for gram in s.tokens().windows(n) {
                    *stats.orders[n - 1].entry(gram.join(" ")).or_insert(0) += 1;
                    stats.totals[n - 1] += 1;
                }
            }
        }
        stats
    }

    /// Relative frequency of an n-gram among all n-grams of the same order.
    pub fn probability(&self, gram: &[String]) -> f64 {
        let n = gram.len();
        if !(1..=3).contains(&n) || self.totals[n - 1] == 0 {
            return 0.0;
        }
        let count = self.orders[n - 1].get(&gram.join(" ")).copied().unwrap_or(0);
        count as f64 / self.totals[n - 1] as f64
    }

    pub fn unigrams(&self) -> FrequencyTable {
        FrequencyTable {
            counts: self.orders[0].clone(),
            total: self.totals[0],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SeededRng;
    use proptest::prelude::*;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::from_tokens(s.split_whitespace())
    }

    #[test]
    fn frequency_counts() {
        let corpus = [seq("the cat is the best"), seq("the dog")];
        let f = FrequencyTable::build(&corpus);
        assert_eq!(f.count("the"), 3);
        assert_eq!(f.total(), 7);
        assert!((f.probability("dog") - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(f.probability("zebra"), 0.0);
        let sum: f64 = f.iter().map(|(w, _)| f.probability(w)).sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn trigram_distributions() {
        let corpus = [seq("a b c"), seq("a b d"), seq("a b c x")];
        let t = TrigramTable::build(&corpus);
        let d = t.distribution("a", "b").unwrap();
        assert_eq!(d.len(), 2);
        assert!((d[0].1 - 2.0 / 3.0).abs() < 1e-12);
        for (_, dist) in t.iter() {
            assert!((dist.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(!t.contains("c", "a"));
    }

    #[test]
    fn ngram_probabilities() {
        let corpus = [seq("a b a b")];
        let s = NgramStats::build(&corpus);
        assert_eq!(s.probability(&["a".into()]), 0.5);
        assert!((s.probability(&["a".into(), "b".into()]) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.probability(&["b".into(), "a".into(), "b".into()]), 0.5);
        assert_eq!(s.probability(&["z".into()]), 0.0);
    }

    proptest! {
        #[test]
        fn sampling_stays_in_vocabulary(words in prop::collection::vec("[a-d]", 1..30), seed in any::<u64>()) {
            let corpus = [TokenSequence::from_tokens(&words)];
            let f = FrequencyTable::build(&corpus);
            let mut rng = SeededRng::new(seed);
            let w = f.sample(&mut rng).unwrap();
            prop_assert!(f.count(w) > 0);
        }
    }
}
