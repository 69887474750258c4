//! The four synthetic generators applied to toy subtitle pairs.

use subqe::synth::{add_captions, drift_align, random_align, scramble_target, CaptionLexicon, SeededRng};
use subqe::toy::{ToyConfig, ToyCorpus};

fn main() -> subqe::Result<()> {
    let corpus = ToyCorpus::generate(&ToyConfig {
        documents: 1,
        blocks_per_document: 8,
        parallel_sentences: 0,
        ..Default::default()
    })?;
    let doc = &corpus.documents[0];
    let pairs = doc.clean_pairs();
    let mut rng = SeededRng::new(3);
    let lexicon = CaptionLexicon::default();
    let p = &pairs[0];
    println!("original      {} | {}", p.source_text, p.target_text);
    let c = add_captions(p, &lexicon, &mut rng)?;
    println!("{:13} {} | {}", c.provenance.as_str(), c.source_text, c.target_text);
    let s = scramble_target(p, &mut rng)?;
    println!("{:13} {} | {}", s.provenance.as_str(), s.source_text, s.target_text);
    let r = &random_align(&pairs, &mut rng)?[0];
    println!("{:13} {} | {}", r.provenance.as_str(), r.source_text, r.target_text);
    let (drifted, report) = drift_align(&doc.target, &pairs, 2, &mut rng)?;
    let d = &drifted[0];
    println!(
        "{:13} block {:?} -> {:?}: {}",
        d.provenance.as_str(),
        p.target_block_id,
        d.target_block_id,
        d.target_text
    );
    println!("{report:?}");
    Ok(())
}
