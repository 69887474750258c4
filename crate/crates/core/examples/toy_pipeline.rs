//! Every pipeline command on a generated toy workspace.

use subqe::cli::{
    cmd_align, cmd_eval, cmd_label, cmd_score, cmd_synth, cmd_toy, cmd_train_qe, cmd_train_rfc, score_tsv, ScoreInput,
};
use subqe::config::PipelineConfig;
use subqe::toy::ToyConfig;

fn main() -> subqe::Result<()> {
    let dir = tempfile::tempdir()?;
    let ws = dir.path();
    let toy = ToyConfig {
        documents: 20,
        parallel_sentences: 4_000,
        ..Default::default()
    };
    let mut cfg = PipelineConfig::load(&cmd_toy(&toy, ws)?)?;
    cfg.train.max_epochs = 3;
    cfg.validate()?;
    println!("{}", cfg.emit());

    let aligned = ws.join("aligned.tsv");
    let a = cmd_align(&cfg, &cfg.require("src_subtitles")?, &cfg.require("tgt_subtitles")?, &aligned)?;
    println!("align: {a:?}");
    let rfc = ws.join("rfc.json");
    println!("train-rfc: {:?}", cmd_train_rfc(&cfg, &cfg.require("parallel")?, &rfc)?);
    let synth = ws.join("synth.tsv");
    println!("synth: {:?}", cmd_synth(&cfg, &synth)?);
    let labeled = ws.join("labeled.tsv");
    let report = cmd_label(&cfg, Some(&aligned), Some(&synth), Some(&rfc), &labeled)?;
    println!("{}", report.render(&cfg.target_lang));
    let ckpt = ws.join("qe.json");
    println!("train-qe: {:?}", cmd_train_qe(&cfg, &labeled, &ckpt)?);
    let eval = cmd_eval(&cfg, &ckpt, &labeled, &ws.join("report.txt"), false)?;
    println!("{}", std::fs::read_to_string(ws.join("report.txt"))?);
    println!("accuracy {:.4}", eval.metrics.map_or(0.0, |m| m.accuracy));
    let rows = cmd_score(&cfg, &ckpt, &ScoreInput::Pair("lilemo nata.".into(), "feifüfä röhü.".into()), false)?;
    print!("{}", score_tsv(&rows));
    Ok(())
}
