//! Deterministic synthetic bilingual corpus for end-to-end runs.
//!
//! Two pseudo-languages share a set of concepts. Each concept has one source
//! and one target word whose embeddings are noisy copies of a common concept
//! vector, so the word-level dictionary is recoverable from the embeddings
//! alone. Sentences follow topic-specific successor chains, which gives both
//! languages a word order that scrambling visibly breaks.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr_free::standard_normal;

use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::labeler::LabeledPair;
use crate::subtitle::{
    serialize_srt, tokenize, write_pairs_tsv, BilingualPair, Provenance, SubtitleFile, TextBlock, Timestamp,
};
use crate::synth::{add_captions, drift_align, random_align, scramble_target, CaptionLexicon, SeededRng};

mod rand_distr_free {
    use rand::Rng;

    /// Box-Muller draw from N(0, 1).
    pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub seed: u64,
    pub source_lang: String,
    pub target_lang: String,
    pub embed_dim: usize,
    pub n_topics: usize,
    pub words_per_topic: usize,
    /// Concepts usable in every topic.
    pub shared_words: usize,
    /// Allowed next words per word within a topic.
    pub successors: usize,
    /// Expected norm of the per-language noise added to a unit concept vector.
    pub noise: f64,
    pub documents: usize,
    pub blocks_per_document: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Probability that an aligned target block is a loose rendering.
    pub loose_block_rate: f64,
    /// Probability that an aligned target block belongs to another line.
    pub bad_block_rate: f64,
    pub parallel_sentences: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            seed: 7,
            source_lang: "en".into(),
            target_lang: "de".into(),
            embed_dim: 24,
            n_topics: 12,
            words_per_topic: 30,
            shared_words: 20,
            successors: 4,
            noise: 0.3,
            documents: 60,
            blocks_per_document: 60,
            min_words: 3,
            max_words: 10,
            loose_block_rate: 0.1,
            bad_block_rate: 0.1,
            parallel_sentences: 10_000,
        }
    }
}

/// Ground-truth state of an aligned target block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockTruth {
    Translation,
    Loose,
    Mismatch,
}

#[derive(Debug, Clone)]
pub struct ToyDocument {
    pub topic: usize,
    pub source: SubtitleFile,
    pub target: SubtitleFile,
    pub truth: Vec<BlockTruth>,
}

impl ToyDocument {
    /// Block pairs whose target is a faithful translation, with block ids.
    pub fn clean_pairs(&self) -> Vec<BilingualPair> {
        self.source
            .blocks
            .iter()
            .zip(&self.target.blocks)
            .zip(&self.truth)
            .filter(|(_, t)| **t == BlockTruth::Translation)
            .map(|((s, t), _)| {
                BilingualPair::new(
                    s.text(),
                    t.text(),
                    self.source.language.clone(),
                    self.target.language.clone(),
                    Provenance::GoodPairsFile,
                )
                .expect("toy blocks are non-empty")
                .with_block_ids(Some(s.index), Some(t.index))
            })
            .collect()
    }
}

struct Language {
    src_words: Vec<String>,
    tgt_words: Vec<String>,
    /// Concept ids available to each topic.
    topic_pools: Vec<Vec<usize>>,
    /// Successor lists per topic and concept.
    successors: Vec<BTreeMap<usize, Vec<usize>>>,
}

pub struct ToyCorpus {
    pub config: ToyConfig,
    pub src_embeddings: EmbeddingTable,
    pub tgt_embeddings: EmbeddingTable,
    pub dictionary: BTreeMap<String, String>,
    pub documents: Vec<ToyDocument>,
    /// Sentence-level parallel text with faithful translations.
    pub parallel: Vec<BilingualPair>,
    pub lexicon: CaptionLexicon,
    language: Language,
}

fn pseudo_word<R: Rng + ?Sized>(onsets: &[&str], vowels: &[&str], rng: &mut R) -> String {
    let syllables = rng.gen_range(2..=3);
    (0..syllables)
        .map(|_| format!("{}{}", onsets.choose(rng).unwrap(), vowels.choose(rng).unwrap()))
        .collect()
}

fn unique_words<R: Rng + ?Sized>(n: usize, onsets: &[&str], vowels: &[&str], taken: &mut HashSet<String>, rng: &mut R) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(onsets, vowels, rng);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn noisy<R: Rng + ?Sized>(base: &[f64], noise: f64, rng: &mut R) -> Vec<f32> {
    let scale = noise / (base.len() as f64).sqrt();
    let v: Vec<f64> = base.iter().map(|x| x + scale * standard_normal(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / norm) as f32).collect()
}

impl ToyCorpus {
    pub fn generate(config: &ToyConfig) -> Result<Self> {
        if config.min_words < 2 || config.max_words < config.min_words || 2 * config.max_words + 2 > 25 {
            return Err(Error::Config("toy sentence lengths must satisfy 2 <= min <= max <= 11".into()));
        }
        let root = SeededRng::new(config.seed);
        let mut rng = root.derive("toy-language");
        let n_concepts = config.shared_words + config.n_topics * config.words_per_topic;
        let mut taken = HashSet::new();
        let src_words = unique_words(n_concepts, &["k", "l", "m", "n", "p", "s", "t", "v"], &["a", "e", "i", "o", "u"], &mut taken, &mut rng);
        let tgt_words = unique_words(
            n_concepts,
            &["b", "d", "f", "g", "h", "r", "sch", "z"],
            &["aa", "ei", "ie", "oo", "u", "ä", "ö", "ü"],
            &mut taken,
            &mut rng,
        );

        let topic_pools: Vec<Vec<usize>> = (0..config.n_topics)
            .map(|t| {
                let own = config.shared_words + t * config.words_per_topic;
                (0..config.shared_words).chain(own..own + config.words_per_topic).collect()
            })
            .collect();
        let successors = topic_pools
            .iter()
            .map(|pool| {
                pool.iter()
                    .map(|&c| {
                        let next: Vec<usize> = pool.choose_multiple(&mut rng, config.successors).copied().collect();
                        (c, next)
                    })
                    .collect()
            })
            .collect();
        let language = Language {
            src_words,
            tgt_words,
            topic_pools,
            successors,
        };

        let mut erng = root.derive("toy-embeddings");
        let dim = config.embed_dim;
        let mut src_entries = Vec::new();
        let mut tgt_entries = Vec::new();
        for c in 0..n_concepts {
            let base = unit_vector(dim, &mut erng);
            src_entries.push((language.src_words[c].clone(), noisy(&base, config.noise, &mut erng)));
            tgt_entries.push((language.tgt_words[c].clone(), noisy(&base, config.noise, &mut erng)));
        }
        let period = unit_vector(dim, &mut erng);
        src_entries.push((".".to_string(), noisy(&period, config.noise, &mut erng)));
        tgt_entries.push((".".to_string(), noisy(&period, config.noise, &mut erng)));
        let lexicon = CaptionLexicon::default();
        let mut caption_tokens: Vec<String> = lexicon
            .captions()
            .iter()
            .flat_map(|c| tokenize(c).into_inner())
            .collect();
        caption_tokens.sort();
        caption_tokens.dedup();
        for tok in caption_tokens {
            let v = unit_vector(dim, &mut erng);
            src_entries.push((tok, v.iter().map(|&x| x as f32).collect()));
        }
        let src_embeddings = EmbeddingTable::from_entries(config.source_lang.clone(), dim, src_entries)?;
        let tgt_embeddings = EmbeddingTable::from_entries(config.target_lang.clone(), dim, tgt_entries)?;
        let dictionary = language
            .src_words
            .iter()
            .cloned()
            .zip(language.tgt_words.iter().cloned())
            .collect();

        let mut corpus = ToyCorpus {
            config: config.clone(),
            src_embeddings,
            tgt_embeddings,
            dictionary,
            documents: Vec::new(),
            parallel: Vec::new(),
            lexicon,
            language,
        };

        let mut drng = root.derive("toy-documents");
        corpus.documents = (0..config.documents).map(|d| corpus.document(d, &mut drng)).collect::<Result<_>>()?;

        let mut prng = root.derive("toy-parallel");
        corpus.parallel = (0..config.parallel_sentences)
            .map(|_| {
                let topic = prng.gen_range(0..config.n_topics);
                let s = corpus.sentence(topic, &mut prng);
                corpus.pair(&s, &s, Provenance::GoodPairsFile)
            })
            .collect::<Result<_>>()?;
        Ok(corpus)
    }

    /// Concept ids of one sentence drawn from the topic's successor chain.
    fn sentence<R: Rng + ?Sized>(&self, topic: usize, rng: &mut R) -> Vec<usize> {
        let len = rng.gen_range(self.config.min_words..=self.config.max_words);
        let pool = &self.language.topic_pools[topic];
        let mut out = vec![*pool.choose(rng).unwrap()];
        while out.len() < len {
            let prev = *out.last().unwrap();
            out.push(*self.language.successors[topic][&prev].choose(rng).unwrap());
        }
        out
    }

    fn render(words: &[String], concepts: &[Vec<usize>]) -> String {
        concepts
            .iter()
            .map(|s| format!("{}.", s.iter().map(|&c| words[c].as_str()).collect::<Vec<_>>().join(" ")))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn source_text(&self, sentence: &[usize]) -> String {
        Self::render(&self.language.src_words, &[sentence.to_vec()])
    }

    pub fn target_text(&self, sentence: &[usize]) -> String {
        Self::render(&self.language.tgt_words, &[sentence.to_vec()])
    }

    fn pair(&self, src: &[usize], tgt: &[usize], provenance: Provenance) -> Result<BilingualPair> {
        BilingualPair::new(
            self.source_text(src),
            self.target_text(tgt),
            self.config.source_lang.clone(),
            self.config.target_lang.clone(),
            provenance,
        )
    }

    fn document<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Result<ToyDocument> {
        let cfg = &self.config;
        let topic = d % cfg.n_topics;
        let mut src_blocks = Vec::new();
        let mut tgt_blocks = Vec::new();
        let mut truth = Vec::new();
        let mut clock = rng.gen_range(1_000..5_000u64);
        for i in 0..cfg.blocks_per_document {
            let n_sent = if rng.gen_bool(0.25) { 2 } else { 1 };
            let src: Vec<Vec<usize>> = (0..n_sent).map(|_| self.sentence(topic, rng)).collect();
            let roll: f64 = rng.gen();
            let (tgt, state) = if roll < cfg.bad_block_rate {
                ((0..n_sent).map(|_| self.sentence(topic, rng)).collect(), BlockTruth::Mismatch)
            } else if roll < cfg.bad_block_rate + cfg.loose_block_rate {
                let mut t = src.clone();
                let s = &mut t[0];
                let k = rng.gen_range(0..s.len());
                if s.len() > 2 && rng.gen_bool(0.5) {
                    s.remove(k);
                } else {
                    s[k] = *self.language.topic_pools[topic].choose(rng).unwrap();
                }
                (t, BlockTruth::Loose)
            } else {
                (src.clone(), BlockTruth::Translation)
            };
            let dur = rng.gen_range(1_500..3_000u64);
            let index = i as u32 + 1;
            let start = Timestamp::from_millis(clock)?;
            let end = Timestamp::from_millis(clock + dur)?;
            src_blocks.push(TextBlock::new(index, start, end, vec![Self::render(&self.language.src_words, &src)])?);
            let jitter = rng.gen_range(0..200u64);
            let t_start = Timestamp::from_millis(clock + jitter)?;
            let t_end = Timestamp::from_millis(clock + dur + jitter / 2)?;
            tgt_blocks.push(TextBlock::new(index, t_start, t_end, vec![Self::render(&self.language.tgt_words, &tgt)])?);
            truth.push(state);
            clock += dur + rng.gen_range(300..1_500u64);
        }
        Ok(ToyDocument {
            topic,
            source: SubtitleFile::new(cfg.source_lang.clone(), src_blocks),
            target: SubtitleFile::new(cfg.target_lang.clone(), tgt_blocks),
            truth,
        })
    }

    /// Documents held out for testing: every fifth one.
    pub fn is_test_document(d: usize) -> bool {
        d % 5 == 4
    }

    /// Class-balanced QE samples built with the synthetic generators.
    ///
    /// Good pairs are faithful block translations; Loose pairs get a caption
    /// or a scrambled target; Bad pairs are randomly or drift aligned.
    pub fn qe_samples(&self, test: bool, n: usize, rng: &mut SeededRng) -> Result<Vec<LabeledPair>> {
        let docs: Vec<&ToyDocument> = self
            .documents
            .iter()
            .enumerate()
            .filter(|(d, _)| Self::is_test_document(*d) == test)
            .map(|(_, doc)| doc)
            .collect();
        let per_doc: Vec<Vec<BilingualPair>> = docs.iter().map(|d| d.clean_pairs()).collect();
        let clean: Vec<BilingualPair> = per_doc.iter().flatten().cloned().collect();
        if clean.len() < 2 {
            return Err(Error::CorpusTooSmall {
                needed: 2,
                got: clean.len(),
            });
        }
        let quota = |k: usize| n / 6 + usize::from(k < n % 6);
        let mut out = Vec::with_capacity(n);

        // good: two shares
        for _ in 0..quota(0) + quota(1) {
            out.push(clean.choose(rng).unwrap().clone());
        }
        for _ in 0..quota(2) {
            out.push(add_captions(clean.choose(rng).unwrap(), &self.lexicon, rng)?);
        }
        let mut scrambled = 0;
        while scrambled < quota(3) {
            if let Ok(p) = scramble_target(clean.choose(rng).unwrap(), rng) {
                out.push(p);
                scrambled += 1;
            }
        }
        let mut random = random_align(&clean, rng)?;
        random.shuffle(rng);
        out.extend(random.into_iter().cycle().take(quota(4)));
        let mut drifted = Vec::new();
        for (doc, pairs) in docs.iter().zip(&per_doc) {
            drifted.extend(drift_align(&doc.target, pairs, 3, rng)?.0);
        }
        drifted.shuffle(rng);
        out.extend(drifted.into_iter().cycle().take(quota(5)));

        let mut labeled = out
            .into_iter()
            .map(LabeledPair::from_provenance)
            .collect::<Result<Vec<_>>>()?;
        labeled.shuffle(rng);
        Ok(labeled)
    }

    /// Aligned source/target subtitle files, one pair per document.
    pub fn subtitle_pairs(&self) -> impl Iterator<Item = (&SubtitleFile, &SubtitleFile)> {
        self.documents.iter().map(|d| (&d.source, &d.target))
    }

    /// Writes subtitles, embeddings, lexicon and text corpora under `dir`.
    pub fn write_workspace(&self, dir: &Path) -> Result<()> {
        let (sl, tl) = (&self.config.source_lang, &self.config.target_lang);
        let src_dir = dir.join("subtitles").join(sl);
        let tgt_dir = dir.join("subtitles").join(tl);
        fs::create_dir_all(&src_dir)?;
        fs::create_dir_all(&tgt_dir)?;
        for (d, doc) in self.documents.iter().enumerate() {
            fs::write(src_dir.join(format!("doc{d:03}.srt")), serialize_srt(&doc.source))?;
            fs::write(tgt_dir.join(format!("doc{d:03}.srt")), serialize_srt(&doc.target))?;
        }
        let mut buf = Vec::new();
        self.src_embeddings.write_text(&mut buf)?;
        fs::write(dir.join(format!("embeddings.{sl}.vec")), &buf)?;
        buf.clear();
        self.tgt_embeddings.write_text(&mut buf)?;
        fs::write(dir.join(format!("embeddings.{tl}.vec")), &buf)?;
        fs::write(dir.join("captions.txt"), self.lexicon.captions().join("\n") + "\n")?;

        let half = self.parallel.len() / 2;
        let good: String = self.parallel[..half]
            .iter()
            .map(|p| format!("{}\t{}\n", p.source_text, p.target_text))
            .collect();
        fs::write(dir.join("good_pairs.tsv"), good)?;
        let mut buf = Vec::new();
        write_pairs_tsv(&mut buf, &self.parallel[half..])?;
        fs::write(dir.join("parallel.tsv"), buf)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeler::QeLabel;
    use crate::subtitle::align_by_timestamp;

    fn small() -> ToyConfig {
        ToyConfig {
            documents: 5,
            blocks_per_document: 20,
            parallel_sentences: 50,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = ToyCorpus::generate(&small()).unwrap();
        let b = ToyCorpus::generate(&small()).unwrap();
        assert_eq!(a.parallel, b.parallel);
        assert_eq!(serialize_srt(&a.documents[0].target), serialize_srt(&b.documents[0].target));
    }

    #[test]
    fn dictionary_pairs_are_nearest_neighbours() {
        let c = ToyCorpus::generate(&small()).unwrap();
        let mut hits = 0;
        for (s, t) in c.dictionary.iter().take(50) {
            let sv: Vec<f64> = c.src_embeddings.get(s).unwrap().iter().map(|&x| x as f64).collect();
            let best = c
                .tgt_embeddings
                .words()
                .iter()
                .max_by(|a, b| {
                    let cos = |w: &String| {
                        let tv: Vec<f64> = c.tgt_embeddings.get(w).unwrap().iter().map(|&x| x as f64).collect();
                        crate::embeddings::cosine(&sv, &tv).unwrap()
                    };
                    cos(a).total_cmp(&cos(b))
                })
                .unwrap();
            hits += usize::from(best == t);
        }
        assert!(hits >= 48, "{hits}");
    }

    #[test]
    fn documents_align_block_for_block() {
        let c = ToyCorpus::generate(&small()).unwrap();
        for doc in &c.documents {
            let (pairs, report) = align_by_timestamp(&doc.source, &doc.target, 0.5).unwrap();
            assert_eq!(pairs.len(), doc.source.blocks.len());
            assert_eq!(report.unmatched_source, 0);
            for p in &pairs {
                assert_eq!(p.source_block_id, p.target_block_id);
            }
        }
    }

    #[test]
    fn qe_samples_are_balanced_and_consistent() {
        let c = ToyCorpus::generate(&small()).unwrap();
        let data = c.qe_samples(false, 600, &mut SeededRng::new(1)).unwrap();
        assert_eq!(data.len(), 600);
        for label in QeLabel::ALL {
            assert_eq!(data.iter().filter(|p| p.label == label).count(), 200);
        }
        assert!(data.iter().all(LabeledPair::is_consistent));
        assert!(data.iter().all(|p| p.pair.source_tokens().len() <= 25));
    }
}
