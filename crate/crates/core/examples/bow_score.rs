//! Bag-of-words similarity: a hand-written matrix and a real sentence pair.

use subqe::bow::{bow_binary_label, bow_score, bow_sentence_scores, BowParams};
use subqe::embeddings::{similarity_matrix, SimilarityMatrix};
use subqe::subtitle::tokenize;
use subqe::toy::{ToyConfig, ToyCorpus};

fn main() -> subqe::Result<()> {
    let s = SimilarityMatrix::from_rows(&[vec![0.9, 0.2], vec![0.1, 0.7]])?;
    let params = BowParams::new(0.6, 0.35, "de")?;
    println!("sentence scores {:?}", bow_sentence_scores(&s, params.theta1)?);
    println!("pair score {}", bow_score(&s, &params)?);

    let corpus = ToyCorpus::generate(&ToyConfig {
        documents: 1,
        parallel_sentences: 2,
        ..Default::default()
    })?;
    let good = &corpus.parallel[0];
    let other = &corpus.parallel[1];
    for (name, src, tgt) in [
        ("translation", &good.source_text, &good.target_text),
        ("unrelated", &good.source_text, &other.target_text),
    ] {
        let m = similarity_matrix(&tokenize(src), &tokenize(tgt), &corpus.src_embeddings, &corpus.tgt_embeddings)?;
        let score = bow_score(&m, &params)?;
        println!("{name:12} s_bow = {score:.3}  above theta2: {}", bow_binary_label(score, &params));
    }
    Ok(())
}
