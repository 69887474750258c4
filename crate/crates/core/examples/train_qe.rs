//! Train a QE model on the toy corpus and evaluate it.
//!
//! Usage: `train_qe [hybrid|lstm|cnn] [classification|scoring] [epochs]`

use subqe::eval::{evaluate, render_metrics_table};
use subqe::nn::{predict_examples, Embedder, Example, ModelConfig, QeModel, TrainConfig, Trainer};
use subqe::synth::SeededRng;
use subqe::toy::{ToyConfig, ToyCorpus};

fn main() -> subqe::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arch = args.first().map_or("hybrid", String::as_str).parse()?;
    let head = args.get(1).map_or("classification", String::as_str).parse()?;
    let epochs = args.get(2).and_then(|e| e.parse().ok()).unwrap_or(4);

    let corpus = ToyCorpus::generate(&ToyConfig::default())?;
    let mut rng = SeededRng::new(1);
    let train: Vec<Example> = corpus.qe_samples(false, 5_000, &mut rng)?.iter().map(Example::from_labeled).collect();
    let test: Vec<Example> = corpus.qe_samples(true, 1_000, &mut rng)?.iter().map(Example::from_labeled).collect();
    let embedder = Embedder::new(&corpus.src_embeddings, &corpus.tgt_embeddings)?;

    let config = ModelConfig {
        embed_dim: embedder.dim(),
        architecture: arch,
        head,
        ..Default::default()
    };
    let model = QeModel::new(config, &mut SeededRng::new(2))?;
    println!("{} parameters", model.n_parameters());
    let mut trainer = Trainer::new(
        model,
        TrainConfig {
            batch_size: 64,
            max_epochs: epochs,
            seed: 3,
            ..Default::default()
        },
    )?;
    for e in trainer.fit(&train, &embedder)? {
        println!("epoch {} loss {:.4} lr {:e} ({:.1}s)", e.epoch, e.loss, e.lr, e.seconds);
    }
    let pred: Vec<_> = predict_examples(&trainer.model, &test, &embedder, 256)?.iter().map(|p| p.label).collect();
    let truth: Vec<_> = test.iter().map(|e| e.label).collect();
    let lens: Vec<_> = test.iter().map(|e| e.tgt.len()).collect();
    let (cm, report) = evaluate(&pred, &truth, &lens)?;
    println!("{}\n{}", render_metrics_table(&[(arch.as_str().to_string(), report)]), cm.render());
    Ok(())
}
