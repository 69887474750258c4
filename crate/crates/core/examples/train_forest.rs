//! Corrupt a parallel corpus, extract pair features and train the forest.

use subqe::features::{extract_features, FeatureContext, FeatureFamily, FeatureVector};
use subqe::forest::{family_importance, feature_importance, train_rfc, ForestParams};
use subqe::subtitle::BilingualPair;
use subqe::synth::{build_rfc_corpus, split_train_test, NgramStats, SeededRng};
use subqe::toy::{ToyConfig, ToyCorpus};

fn main() -> subqe::Result<()> {
    let corpus = ToyCorpus::generate(&ToyConfig {
        documents: 1,
        parallel_sentences: 2_000,
        ..Default::default()
    })?;
    let mut rng = SeededRng::new(11);
    let rfc = build_rfc_corpus(&corpus.parallel, &mut rng)?;
    println!("{} positives, {} negatives", rfc.positives(), rfc.negatives());

    let src: Vec<_> = corpus.parallel.iter().map(BilingualPair::source_tokens).collect();
    let tgt: Vec<_> = corpus.parallel.iter().map(BilingualPair::target_tokens).collect();
    let (src_stats, tgt_stats) = (NgramStats::build(&src), NgramStats::build(&tgt));
    let ctx = FeatureContext {
        src_table: &corpus.src_embeddings,
        tgt_table: &corpus.tgt_embeddings,
        src_stats: &src_stats,
        tgt_stats: &tgt_stats,
    };
    let data: Vec<(FeatureVector, bool)> =
        rfc.samples.iter().map(|s| (extract_features(&s.pair, &ctx), s.positive)).collect();
    let (train, test) = split_train_test(&data, 0.8, &mut rng);
    let params = ForestParams {
        n_trees: 30,
        ..Default::default()
    };
    let model = train_rfc(&train, &params, 5)?;
    let acc = |set: &[(FeatureVector, bool)]| {
        set.iter().filter(|(x, y)| model.predict(x.values()) == *y).count() as f64 / set.len() as f64
    };
    println!("train accuracy {:.4}, test accuracy {:.4}", acc(&train), acc(&test));
    let fam = family_importance(&feature_importance(&model));
    for f in FeatureFamily::ALL {
        println!("{:>16}: {:.3}", f.as_str(), fam[&f]);
    }
    Ok(())
}
