//! Fixed 273-slot feature vector describing a translation pair.
//!
//! | slots     | family              | contents                                             |
//! |-----------|---------------------|------------------------------------------------------|
//! | 0         | average vector      | cosine of the mean source and mean target word vectors |
//! | 1..=126   | similarity          | for n = 1..6: 10 row maxima, 10 column maxima and the mean of the n-gram cosine matrix |
//! | 127..=270 | n-gram frequency    | source then target: 25 unigram, 24 bigram, 23 trigram probabilities |
//! | 271, 272  | structural          | source and target token counts                       |
//!
//! n-gram vectors are the mean of their word vectors. Out-of-vocabulary words
//! are dropped before n-grams are formed; statistics that cannot be computed
//! are left at zero.

use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine_unchecked, lookup_f64, EmbeddingTable};
use crate::subtitle::{BilingualPair, TokenSequence, MAX_TOKENS};
use crate::synth::NgramStats;

pub const FEATURE_DIM: usize = 273;
pub const MAX_NGRAM: usize = 6;
pub const MAXIMA_LEN: usize = 10;
const SIM_BLOCK: usize = 2 * MAXIMA_LEN + 1;

pub const AVG_SLOT: usize = 0;
pub const SIM_START: usize = 1;
pub const FREQ_START: usize = SIM_START + SIM_BLOCK * MAX_NGRAM;
const FREQ_SIDE: usize = MAX_TOKENS + (MAX_TOKENS - 1) + (MAX_TOKENS - 2);
pub const STRUCT_START: usize = FREQ_START + 2 * FREQ_SIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureFamily {
    AverageVector,
    Similarity,
    NgramFrequency,
    Structural,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 4] = [
        FeatureFamily::AverageVector,
        FeatureFamily::Similarity,
        FeatureFamily::NgramFrequency,
        FeatureFamily::Structural,
    ];

    pub fn of_slot(slot: usize) -> FeatureFamily {
        match slot {
            AVG_SLOT => FeatureFamily::AverageVector,
            s if s < FREQ_START => FeatureFamily::Similarity,
            s if s < STRUCT_START => FeatureFamily::NgramFrequency,
            _ => FeatureFamily::Structural,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureFamily::AverageVector => "average_vector",
            FeatureFamily::Similarity => "similarity",
            FeatureFamily::NgramFrequency => "ngram_frequency",
            FeatureFamily::Structural => "structural",
        }
    }
}

/// Human-readable description of a slot.
pub fn describe_slot(slot: usize) -> String {
    assert!(slot < FEATURE_DIM, "slot {slot} out of range");
    match FeatureFamily::of_slot(slot) {
        FeatureFamily::AverageVector => "cosine of mean word vectors".to_string(),
        FeatureFamily::Similarity => {
            let off = slot - SIM_START;
            let n = off / SIM_BLOCK + 1;
            match off % SIM_BLOCK {
                k if k < MAXIMA_LEN => format!("{n}-gram similarity: source row max #{k}"),
                k if k < 2 * MAXIMA_LEN => format!("{n}-gram similarity: target column max #{}", k - MAXIMA_LEN),
                _ => format!("{n}-gram similarity: matrix mean"),
            }
        }
        FeatureFamily::NgramFrequency => {
            let off = slot - FREQ_START;
            let side = if off < FREQ_SIDE { "source" } else { "target" };
            let k = off % FREQ_SIDE;
            let (order, pos) = if k < MAX_TOKENS {
                (1, k)
            } else if k < 2 * MAX_TOKENS - 1 {
                (2, k - MAX_TOKENS)
            } else {
                (3, k - (2 * MAX_TOKENS - 1))
            };
            format!("{side} {order}-gram probability #{pos}")
        }
        FeatureFamily::Structural => {
            if slot == STRUCT_START {
                "source token count".to_string()
            } else {
                "target token count".to_string()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn zeros() -> Self {
        FeatureVector(vec![0.0; FEATURE_DIM])
    }

    pub fn from_vec(values: Vec<f64>) -> Option<Self> {
        (values.len() == FEATURE_DIM && values.iter().all(|v| v.is_finite())).then_some(FeatureVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, slot: usize) -> f64 {
        self.0[slot]
    }
}

/// Everything needed to featurize pairs of one language pair.
#[derive(Debug, Clone, Copy)]
pub struct FeatureContext<'a> {
    pub src_table: &'a EmbeddingTable,
    pub tgt_table: &'a EmbeddingTable,
    pub src_stats: &'a NgramStats,
    pub tgt_stats: &'a NgramStats,
}

fn mean_vector(vectors: &[Vec<f64>]) -> Vec<f64> {
    let dim = vectors[0].len();
    let mut out = vec![0.0; dim];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    out.iter_mut().for_each(|o| *o /= vectors.len() as f64);
    out
}

fn ngram_vectors(words: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    if words.len() < n {
        return Vec::new();
    }
    words.windows(n).map(mean_vector).collect()
}

fn write_padded(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *s;
    }
}

fn write_ngram_probs(dst: &mut [f64], tokens: &[String], stats: &NgramStats) {
    let mut at = 0;
    for n in 1..=3 {
        let width = MAX_TOKENS + 1 - n;
        if tokens.len() >= n {
            for (k, gram) in tokens.windows(n).take(width).enumerate() {
                dst[at + k] = stats.probability(gram);
            }
        }
        at += width;
    }
}

pub fn extract_features(pair: &BilingualPair, ctx: &FeatureContext<'_>) -> FeatureVector {
    extract_token_features(&pair.source_tokens(), &pair.target_tokens(), ctx)
}

pub fn extract_token_features(src: &TokenSequence, tgt: &TokenSequence, ctx: &FeatureContext<'_>) -> FeatureVector {
    let mut x = vec![0.0; FEATURE_DIM];
    let embed = |seq: &TokenSequence, table: &EmbeddingTable| -> Vec<Vec<f64>> {
        seq.tokens().iter().filter_map(|t| lookup_f64(table, t)).collect()
    };
    let src_vecs = embed(src, ctx.src_table);
    let tgt_vecs = embed(tgt, ctx.tgt_table);

    if !src_vecs.is_empty() && !tgt_vecs.is_empty() && ctx.src_table.dim() == ctx.tgt_table.dim() {
        x[AVG_SLOT] = cosine_unchecked(&mean_vector(&src_vecs), &mean_vector(&tgt_vecs));
        for n in 1..=MAX_NGRAM {
            let a = ngram_vectors(&src_vecs, n);
            let b = ngram_vectors(&tgt_vecs, n);
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let mut row_max = vec![f64::NEG_INFINITY; a.len()];
            let mut col_max = vec![f64::NEG_INFINITY; b.len()];
            let mut sum = 0.0;
            for (i, u) in a.iter().enumerate() {
                for (j, v) in b.iter().enumerate() {
                    let c = cosine_unchecked(u, v);
                    row_max[i] = row_max[i].max(c);
                    col_max[j] = col_max[j].max(c);
                    sum += c;
                }
            }
            let base = SIM_START + (n - 1) * SIM_BLOCK;
            write_padded(&mut x[base..base + MAXIMA_LEN], &row_max);
            write_padded(&mut x[base + MAXIMA_LEN..base + 2 * MAXIMA_LEN], &col_max);
            x[base + 2 * MAXIMA_LEN] = sum / (a.len() * b.len()) as f64;
        }
    }

    write_ngram_probs(&mut x[FREQ_START..FREQ_START + FREQ_SIDE], src.tokens(), ctx.src_stats);
    write_ngram_probs(&mut x[FREQ_START + FREQ_SIDE..STRUCT_START], tgt.tokens(), ctx.tgt_stats);
    x[STRUCT_START] = src.len() as f64;
    x[STRUCT_START + 1] = tgt.len() as f64;
    FeatureVector(x)
}

/// Slot table as TSV: `slot<TAB>family<TAB>description`.
pub fn layout_tsv() -> String {
    let mut out = String::from("slot\tfamily\tdescription\n");
    for slot in 0..FEATURE_DIM {
        out.push_str(&format!(
            "{slot}\t{}\t{}\n",
            FeatureFamily::of_slot(slot).as_str(),
            describe_slot(slot)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subtitle::Provenance;

    #[test]
    fn layout_adds_up() {
        assert_eq!(SIM_BLOCK * MAX_NGRAM, 126);
        assert_eq!(FREQ_START, 127);
        assert_eq!(STRUCT_START, 271);
        assert_eq!(STRUCT_START + 2, FEATURE_DIM);
        let counts = FeatureFamily::ALL.map(|f| (0..FEATURE_DIM).filter(|&s| FeatureFamily::of_slot(s) == f).count());
        assert_eq!(counts, [1, 126, 144, 2]);
        assert_eq!(layout_tsv().lines().count(), FEATURE_DIM + 1);
        assert_eq!(describe_slot(127), "source 1-gram probability #0");
        assert_eq!(describe_slot(199), "target 1-gram probability #0");
        assert_eq!(describe_slot(21), "1-gram similarity: matrix mean");
    }

    fn tables() -> (EmbeddingTable, EmbeddingTable) {
        let en = EmbeddingTable::from_entries(
            "en",
            2,
            [("cat".to_string(), vec![1.0, 0.0]), ("sleeps".to_string(), vec![0.0, 1.0])],
        )
        .unwrap();
        let de = EmbeddingTable::from_entries(
            "de",
            2,
            [("katze".to_string(), vec![1.0, 0.1]), ("schläft".to_string(), vec![0.1, 1.0])],
        )
        .unwrap();
        (en, de)
    }

    #[test]
    fn identical_sentence_has_unit_average_cosine() {
        let (en, _) = tables();
        let stats = NgramStats::default();
        let ctx = FeatureContext {
            src_table: &en,
            tgt_table: &en,
            src_stats: &stats,
            tgt_stats: &stats,
        };
        let pair = BilingualPair::new("cat sleeps", "cat sleeps", "en", "xx", Provenance::Aligned).unwrap();
        let x = extract_features(&pair, &ctx);
        assert!((x.get(AVG_SLOT) - 1.0).abs() < 1e-12);
        assert_eq!(x.values().len(), FEATURE_DIM);
    }

    #[test]
    fn oov_target_zeroes_similarity_but_keeps_length() {
        let (en, de) = tables();
        let stats = NgramStats::default();
        let ctx = FeatureContext {
            src_table: &en,
            tgt_table: &de,
            src_stats: &stats,
            tgt_stats: &stats,
        };
        let pair = BilingualPair::new("cat sleeps", "hund bellt laut", "en", "de", Provenance::Aligned).unwrap();
        let x = extract_features(&pair, &ctx);
        assert!(x.values()[..FREQ_START].iter().all(|v| *v == 0.0));
        assert_eq!(x.get(STRUCT_START), 2.0);
        assert_eq!(x.get(STRUCT_START + 1), 3.0);
    }

    /// Straight-line recomputation of every non-zero slot for a two-word pair.
    #[test]
    fn two_word_pair_matches_hand_oracle() {
        let (en, de) = tables();
        let src_corpus = [TokenSequence::from_tokens(["cat", "sleeps"]), TokenSequence::from_tokens(["cat"])];
        let tgt_corpus = [TokenSequence::from_tokens(["katze", "schläft"])];
        let src_stats = NgramStats::build(&src_corpus);
        let tgt_stats = NgramStats::build(&tgt_corpus);
        let ctx = FeatureContext {
            src_table: &en,
            tgt_table: &de,
            src_stats: &src_stats,
            tgt_stats: &tgt_stats,
        };
        let pair = BilingualPair::new("Cat sleeps", "Katze schläft", "en", "de", Provenance::Aligned).unwrap();
        let x = extract_features(&pair, &ctx);

        let cos = |a: [f64; 2], b: [f64; 2]| {
            (a[0] * b[0] + a[1] * b[1]) / ((a[0] * a[0] + a[1] * a[1]).sqrt() * (b[0] * b[0] + b[1] * b[1]).sqrt())
        };
        let (cat, sleeps) = ([1.0, 0.0], [0.0, 1.0]);
        let t = f64::from(0.1f32);
        let (katze, schlaeft) = ([1.0, t], [t, 1.0]);
        let mut expected = vec![0.0; FEATURE_DIM];
        expected[0] = cos([0.5, 0.5], [(1.0 + t) / 2.0, (1.0 + t) / 2.0]);
        // unigrams: 2x2 matrix
        let s = [[cos(cat, katze), cos(cat, schlaeft)], [cos(sleeps, katze), cos(sleeps, schlaeft)]];
        expected[1] = s[0][0].max(s[0][1]);
        expected[2] = s[1][0].max(s[1][1]);
        expected[11] = s[0][0].max(s[1][0]);
        expected[12] = s[0][1].max(s[1][1]);
        expected[21] = (s[0][0] + s[0][1] + s[1][0] + s[1][1]) / 4.0;
        // bigrams: one averaged vector per side
        let bi = expected[0];
        expected[22] = bi;
        expected[32] = bi;
        expected[42] = bi;
        // source unigram probabilities: cat 2/3, sleeps 1/3; bigram "cat sleeps" 1/1
        expected[127] = 2.0 / 3.0;
        expected[128] = 1.0 / 3.0;
        expected[127 + 25] = 1.0;
        // target unigrams 1/2 each, bigram 1
        expected[199] = 0.5;
        expected[200] = 0.5;
        expected[199 + 25] = 1.0;
        expected[271] = 2.0;
        expected[272] = 2.0;

        for (slot, (got, want)) in x.values().iter().zip(&expected).enumerate() {
            assert!((got - want).abs() < 1e-12, "slot {slot}: {got} vs {want}");
        }
    }
}
