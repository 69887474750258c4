//! Parallel-text corruptions used to train the random forest: rare-word
//! substitution, random sentence swaps and trigram substitution.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subtitle::{BilingualPair, Provenance, TokenSequence};
use crate::synth::generators::draw_foreign;
use crate::synth::ngram::{FrequencyTable, TrigramTable};

/// Removes the two rarest tokens and inserts two words drawn from the
/// unigram distribution at random positions.
pub fn substitute_rare_words<R: Rng + ?Sized>(
    sentence: &TokenSequence,
    freq: &FrequencyTable,
    rng: &mut R,
) -> Result<TokenSequence> {
    let tokens = sentence.tokens();
    if tokens.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: tokens.len(),
        });
    }
    if freq.total() == 0 {
        return Err(Error::EmptyVocabulary);
    }
    let mut by_rarity: Vec<usize> = (0..tokens.len()).collect();
    // stable sort keeps earlier positions first among ties
    by_rarity.sort_by_key(|&i| freq.count(&tokens[i]));
    let (drop_a, drop_b) = (by_rarity[0], by_rarity[1]);
    let mut kept: Vec<String> = tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != drop_a && *i != drop_b)
        .map(|(_, t)| t.clone())
        .collect();
    for _ in 0..2 {
        let word = freq.sample(rng).expect("non-empty table").to_string();
        let at = rng.gen_range(0..=kept.len());
        kept.insert(at, word);
    }
    Ok(TokenSequence::from_tokens(kept))
}

/// Corpus-level random target swap; same contract as [`crate::synth::random_align`].
pub fn random_sentence_swap<R: Rng + ?Sized>(pairs: &[BilingualPair], rng: &mut R) -> Result<Vec<BilingualPair>> {
    crate::synth::generators::random_align(pairs, rng)
}

/// Replaces the last word of one randomly chosen known trigram with a
/// continuation drawn from the table, re-drawing once if it repeats the original.
pub fn trigram_substitute<R: Rng + ?Sized>(
    sentence: &TokenSequence,
    table: &TrigramTable,
    rng: &mut R,
) -> Result<TokenSequence> {
    let tokens = sentence.tokens();
    if tokens.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: tokens.len(),
        });
    }
    let eligible: Vec<usize> = (0..tokens.len() - 2)
        .filter(|&k| table.contains(&tokens[k], &tokens[k + 1]))
        .collect();
    let &k = eligible.choose(rng).ok_or(Error::NoEligibleTrigram)?;
    let (w1, w2) = (&tokens[k], &tokens[k + 1]);
    let mut word = table.sample(w1, w2, rng).expect("eligible bigram");
    if word == tokens[k + 2] {
        word = table.sample(w1, w2, rng).expect("eligible bigram");
    }
    let mut out = tokens.to_vec();
    out[k + 2] = word.to_string();
    Ok(TokenSequence::from_tokens(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Corruption {
    RareWordSubstitution,
    RandomSentence,
    TrigramSubstitution,
}

impl Corruption {
    pub const ALL: [Corruption; 3] = [
        Corruption::RareWordSubstitution,
        Corruption::RandomSentence,
        Corruption::TrigramSubstitution,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Corruption::RareWordSubstitution => "rare_word_substitution",
            Corruption::RandomSentence => "random_sentence",
            Corruption::TrigramSubstitution => "trigram_substitution",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfcSample {
    pub pair: BilingualPair,
    /// `true` for an original (correct) translation.
    pub positive: bool,
    pub corruption: Option<Corruption>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RfcCorpus {
    pub samples: Vec<RfcSample>,
    /// Corruption attempts that failed (too short, no eligible trigram, ...).
    pub skipped: usize,
    pub frequencies: FrequencyTable,
    pub trigrams: TrigramTable,
}

impl RfcCorpus {
    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|s| s.positive).count()
    }

    pub fn negatives(&self) -> usize {
        self.samples.len() - self.positives()
    }

    pub fn count(&self, corruption: Corruption) -> usize {
        self.samples.iter().filter(|s| s.corruption == Some(corruption)).count()
    }
}

fn corrupted_source(pair: &BilingualPair, tokens: TokenSequence, corruption: Corruption) -> RfcSample {
    RfcSample {
        pair: BilingualPair {
            source_text: tokens.join(),
            provenance: Provenance::Aligned,
            ..pair.clone()
        },
        positive: false,
        corruption: Some(corruption),
    }
}

/// Labeled corpus of originals plus `round(1.2 n)` corrupted negatives split
/// evenly over the three corruptions.
///
/// Corruptions are applied to the source side; the frequency and trigram
/// tables are estimated from the corpus' own source sentences.
pub fn build_rfc_corpus<R: Rng + ?Sized>(parallel: &[BilingualPair], rng: &mut R) -> Result<RfcCorpus> {
    if parallel.is_empty() {
        return Ok(RfcCorpus::default());
    }
    let sources: Vec<TokenSequence> = parallel.iter().map(|p| p.source_tokens()).collect();
    let frequencies = FrequencyTable::build(&sources);
    let trigrams = TrigramTable::build(&sources);

    let mut samples: Vec<RfcSample> = parallel
        .iter()
        .map(|p| RfcSample {
            pair: p.clone(),
            positive: true,
            corruption: None,
        })
        .collect();

    let negatives = (1.2 * parallel.len() as f64).round() as usize;
    let mut skipped = 0;
    for (c, corruption) in Corruption::ALL.into_iter().enumerate() {
        let quota = negatives / 3 + usize::from(c < negatives % 3);
        if corruption == Corruption::RandomSentence && parallel.len() < 2 {
            skipped += quota;
            continue;
        }
        let mut order: Vec<usize> = (0..parallel.len()).collect();
        order.shuffle(rng);
        let mut produced = 0;
        let max_attempts = quota.max(1) * 4 + parallel.len();
        for attempt in 0..max_attempts {
            if produced == quota {
                break;
            }
            let i = order[attempt % order.len()];
            let sample = match corruption {
                Corruption::RareWordSubstitution => substitute_rare_words(&sources[i], &frequencies, rng)
                    .map(|t| corrupted_source(&parallel[i], t, corruption)),
                Corruption::TrigramSubstitution => trigram_substitute(&sources[i], &trigrams, rng)
                    .map(|t| corrupted_source(&parallel[i], t, corruption)),
                Corruption::RandomSentence => match draw_foreign(parallel, i, rng) {
                    Some(j) => Ok(RfcSample {
                        pair: BilingualPair {
                            target_text: parallel[j].target_text.clone(),
                            provenance: Provenance::RandomlyAligned,
                            ..parallel[i].clone()
                        },
                        positive: false,
                        corruption: Some(corruption),
                    }),
                    None => Err(Error::CorpusTooSmall { needed: 2, got: 1 }),
                },
            };
            let changed = |s: &RfcSample| match corruption {
                Corruption::RandomSentence => true,
                _ => s.pair.source_tokens() != sources[i],
            };
            match sample {
                // an unchanged sentence is not a corruption
                Ok(s) if s.pair.validate().is_ok() && changed(&s) => {
                    samples.push(s);
                    produced += 1;
                }
                _ => skipped += 1,
            }
        }
        if produced < quota {
            log::warn!("{}: produced {produced} of {quota} negatives", corruption.as_str());
        }
    }
    Ok(RfcCorpus {
        samples,
        skipped,
        frequencies,
        trigrams,
    })
}

/// Seeded shuffle then split; returns `(train, test)`.
pub fn split_train_test<T: Clone, R: Rng + ?Sized>(items: &[T], train_fraction: f64, rng: &mut R) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(rng);
    let n_train = (train_fraction * items.len() as f64).round() as usize;
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SeededRng;
    use proptest::prelude::*;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::from_tokens(s.split_whitespace())
    }

    fn ab_table() -> TrigramTable {
        TrigramTable::from_distributions([(
            ("a".to_string(), "b".to_string()),
            vec![("c".to_string(), 0.5), ("d".to_string(), 0.5)],
        )])
    }

    #[test]
    fn rare_words_are_removed() {
        let corpus: Vec<TokenSequence> = (0..20).map(|_| seq("the is the is")).collect();
        let freq = FrequencyTable::build(&corpus);
        let input = seq("the aardvark zymurgy is");
        for seed in 0..20 {
            let out = substitute_rare_words(&input, &freq, &mut SeededRng::new(seed)).unwrap();
            assert_eq!(out.len(), input.len());
            assert!(!out.tokens().iter().any(|t| t == "aardvark" || t == "zymurgy"));
        }
        let a = substitute_rare_words(&input, &freq, &mut SeededRng::new(4)).unwrap();
        let b = substitute_rare_words(&input, &freq, &mut SeededRng::new(4)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            substitute_rare_words(&seq("a b"), &freq, &mut SeededRng::new(0)),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn rarity_ties_break_by_position() {
        let freq = FrequencyTable::build(&[seq("x")]);
        // all unseen: the first two positions go
        let out = substitute_rare_words(&seq("p q r"), &freq, &mut SeededRng::new(0)).unwrap();
        assert!(out.tokens().contains(&"r".to_string()));
        assert_eq!(out.tokens().iter().filter(|t| *t == "x").count(), 2);
    }

    #[test]
    fn trigram_examples() {
        let t = ab_table();
        let out = trigram_substitute(&seq("a b c"), &t, &mut SeededRng::new(0)).unwrap();
        assert!(out == seq("a b c") || out == seq("a b d"));
        assert!(matches!(
            trigram_substitute(&seq("x y z"), &t, &mut SeededRng::new(0)),
            Err(Error::NoEligibleTrigram)
        ));
    }

    #[test]
    fn trigram_redraw_biases_away_from_original() {
        // exact two-draw rule: P(d) = 1/2 + 1/2 * 1/2
        let oracle = 0.5 + 0.5 * 0.5;
        let t = ab_table();
        let mut rng = SeededRng::new(21);
        let draws = 10_000;
        let d = (0..draws)
            .filter(|_| trigram_substitute(&seq("a b c"), &t, &mut rng).unwrap().tokens()[2] == "d")
            .count();
        let frac = d as f64 / draws as f64;
        assert!(frac >= 0.6);
        assert!((frac - oracle).abs() < 0.02, "{frac}");
    }

    fn parallel(n: usize) -> Vec<BilingualPair> {
        (0..n)
            .map(|i| {
                BilingualPair::new(
                    format!("the member states must act now number {i}"),
                    format!("die mitgliedstaaten müssen jetzt handeln nummer {i}"),
                    "en",
                    "de",
                    Provenance::Aligned,
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn rfc_corpus_ratio() {
        let corpus = build_rfc_corpus(&parallel(100), &mut SeededRng::new(1)).unwrap();
        assert_eq!(corpus.positives(), 100);
        assert_eq!(corpus.negatives(), 120);
        for c in Corruption::ALL {
            assert_eq!(corpus.count(c), 40, "{c:?}");
        }
        assert!(build_rfc_corpus(&[], &mut SeededRng::new(1)).unwrap().samples.is_empty());
    }

    #[test]
    fn train_test_split_counts() {
        let corpus = build_rfc_corpus(&parallel(50), &mut SeededRng::new(3)).unwrap();
        let total = corpus.samples.len();
        let (train, test) = split_train_test(&corpus.samples, 0.8, &mut SeededRng::new(3));
        assert_eq!(train.len(), (0.8 * total as f64).round() as usize);
        assert_eq!(train.len() + test.len(), total);
        let pos = |v: &[RfcSample]| v.iter().filter(|s| s.positive).count();
        assert_eq!(pos(&train) + pos(&test), 50);
    }

    proptest! {
        #[test]
        fn rare_substitution_keeps_length(words in prop::collection::vec("[a-f]{1,3}", 3..25), seed in any::<u64>()) {
            let s = TokenSequence::from_tokens(&words);
            let freq = FrequencyTable::build(&[s.clone()]);
            let out = substitute_rare_words(&s, &freq, &mut SeededRng::new(seed)).unwrap();
            prop_assert_eq!(out.len(), s.len());
        }
    }
}
