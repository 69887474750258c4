//! Score fusion into weak labels and source-weighted dataset assembly.

use subqe::labeler::{build_dataset, fuse_labels, FusionThresholds, LabeledPair, SourcePools};
use subqe::synth::{SeededRng, SourceWeights};
use subqe::toy::{ToyConfig, ToyCorpus};

fn main() -> subqe::Result<()> {
    let t = FusionThresholds::default();
    println!("fusion grid (rows s_bow, columns s_rfc):");
    let grid = [0.0, 0.2, 0.3, 0.5, 0.75, 0.9, 1.0];
    print!("{:>6}", "");
    for r in grid {
        print!("{r:>7}");
    }
    println!();
    for b in grid {
        print!("{b:>6}");
        for r in grid {
            let cell = fuse_labels(b, r, &t)?.map_or("-", |l| l.as_str());
            print!("{cell:>7}");
        }
        println!();
    }

    let corpus = ToyCorpus::generate(&ToyConfig {
        documents: 10,
        parallel_sentences: 0,
        ..Default::default()
    })?;
    let mut rng = SeededRng::new(4);
    let mut pools = SourcePools::new();
    pools.extend(corpus.qe_samples(false, 3_000, &mut rng)?);
    for p in corpus.documents[0].clean_pairs() {
        pools.add(LabeledPair::from_provenance(p)?);
    }
    let weights = SourceWeights::for_language("de").expect("tuned weights");
    let (dataset, report) = build_dataset(&pools, &weights, None, &mut rng)?;
    println!("\n{} samples\n{}", dataset.len(), report.render("de"));
    Ok(())
}
