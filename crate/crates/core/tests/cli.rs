use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use subqe::cli::{cmd_align, cmd_label, cmd_score, cmd_synth, cmd_toy, cmd_train_qe, cmd_train_rfc, ScoreInput};
use subqe::config::PipelineConfig;
use subqe::labeler::{read_labeled_tsv, write_labeled_tsv, QeLabel};
use subqe::subtitle::{read_good_pairs, Provenance};
use subqe::synth::SourceWeights;
use subqe::toy::ToyConfig;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    aligned: PathBuf,
    rfc: PathBuf,
    synth: PathBuf,
    labeled: PathBuf,
    checkpoint: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let toy = ToyConfig {
            documents: 20,
            parallel_sentences: 4_000,
            ..Default::default()
        };
        let config = cmd_toy(&toy, &root.join("ws")).unwrap();
        let mut cfg = PipelineConfig::load(&config).unwrap();
        cfg.train.max_epochs = 4;
        fs::write(&config, cfg.emit()).unwrap();
        let aligned = root.join("aligned.tsv");
        cmd_align(&cfg, &cfg.require("src_subtitles").unwrap(), &cfg.require("tgt_subtitles").unwrap(), &aligned)
            .unwrap();
        let rfc = root.join("rfc.json");
        cmd_train_rfc(&cfg, &cfg.require("parallel").unwrap(), &rfc).unwrap();
        let synth = root.join("synth.tsv");
        cmd_synth(&cfg, &synth).unwrap();
        let labeled = root.join("labeled.tsv");
        cmd_label(&cfg, Some(&aligned), Some(&synth), Some(&rfc), &labeled).unwrap();
        let checkpoint = root.join("qe.json");
        cmd_train_qe(&cfg, &labeled, &checkpoint).unwrap();
        Fixture {
            _dir: dir,
            root,
            config,
            aligned,
            rfc,
            synth,
            labeled,
            checkpoint,
        }
    })
}

fn subqe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subqe")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_line(out: &Output) -> String {
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "stderr: {err:?}");
    err.trim_end().to_string()
}

#[test]
fn config_file_round_trips_through_validation() {
    let f = fixture();
    let cfg = PipelineConfig::load(&f.config).unwrap();
    cfg.validate().unwrap();
    let back = PipelineConfig::parse(&cfg.emit()).unwrap();
    back.validate().unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn invalid_config_exits_with_code_2() {
    let f = fixture();
    let bad = f.root.join("bad.conf");
    fs::write(&bad, "seed = 1\nfusion.delta1 = 0.9\n").unwrap();
    let out = subqe(&["--config", s(&bad), "synth", "--out", s(&f.root.join("x.tsv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error[invalid_threshold]:"));

    fs::write(&bad, "no_such_key = 1\n").unwrap();
    let out = subqe(&["--config", s(&bad), "synth", "--out", s(&f.root.join("x.tsv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).contains("no_such_key"));

    let out = subqe(&["--config", s(&f.config), "--set", "path.captions=missing.txt", "synth", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_with_code_1() {
    let f = fixture();
    let missing = f.root.join("missing.tsv");
    let out = subqe(&[
        "--config",
        s(&f.config),
        "train-qe",
        "--dataset",
        s(&missing),
        "--out",
        s(&f.root.join("never.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let line = stderr_line(&out);
    assert!(line.starts_with("error[io]:") && line.contains("missing.tsv"), "{line}");
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let f = fixture();
    let run = |seed: &str, name: &str| {
        let out = f.root.join(name);
        let o = subqe(&["--config", s(&f.config), "--seed", seed, "synth", "--out", s(&out)]);
        assert!(o.status.success(), "{o:?}");
        fs::read(out).unwrap()
    };
    let a = run("5", "s1.tsv");
    assert_eq!(a, run("5", "s2.tsv"));
    assert_ne!(a, run("6", "s3.tsv"));
}

#[test]
fn train_qe_is_byte_identical_for_a_seed() {
    let f = fixture();
    let cfg = PipelineConfig::load(&f.config).unwrap();
    let data = read_labeled_tsv(
        std::io::BufReader::new(fs::File::open(&f.labeled).unwrap()),
        &cfg.source_lang,
        &cfg.target_lang,
    )
    .unwrap();
    let small = f.root.join("small.tsv");
    write_labeled_tsv(fs::File::create(&small).unwrap(), &data[..200]).unwrap();
    let run = |name: &str| {
        let out = f.root.join(name);
        let o = subqe(&[
            "--config",
            s(&f.config),
            "--arch",
            "cnn",
            "--set",
            "train.max_epochs=2",
            "train-qe",
            "--dataset",
            s(&small),
            "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{o:?}");
        assert!(out.with_extension("json.log").exists());
        fs::read(out).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
}

#[test]
fn label_with_only_random_alignment_is_all_bad() {
    let f = fixture();
    let mut args = vec!["--config".to_string(), s(&f.config).to_string()];
    let only = SourceWeights::only(Provenance::RandomlyAligned).to_array();
    for (key, w) in [
        "statistical",
        "good_pairs",
        "added_captions",
        "scrambled_text",
        "drifted_aligned",
        "randomly_aligned",
    ]
    .iter()
    .zip(only)
    {
        args.push("--set".into());
        args.push(format!("weights.{key}={w}"));
    }
    let out = f.root.join("random_only.tsv");
    args.extend(["label", "--synth", s(&f.synth), "--out", s(&out)].map(String::from));
    let o = subqe(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(o.status.success(), "{o:?}");
    let data = read_labeled_tsv(std::io::BufReader::new(fs::File::open(&out).unwrap()), "en", "de").unwrap();
    assert!(!data.is_empty());
    assert!(data.iter().all(|p| p.label == QeLabel::Bad && p.source_tag == Provenance::RandomlyAligned));
}

#[test]
fn label_writes_sidecars_and_statistical_scores() {
    let f = fixture();
    let report = fs::read_to_string(format!("{}.report.txt", f.labeled.display())).unwrap();
    assert!(report.contains("statistical") && report.contains("good"));
    let discards = fs::read_to_string(format!("{}.discards.tsv", f.labeled.display())).unwrap();
    assert!(discards.starts_with("source_text\ttarget_text\ts_bow\ts_rfc"));
    let data = read_labeled_tsv(std::io::BufReader::new(fs::File::open(&f.labeled).unwrap()), "en", "de").unwrap();
    let stat: Vec<_> = data
        .iter()
        .filter(|p| p.source_tag == Provenance::StatisticalClassification)
        .collect();
    assert!(!stat.is_empty());
    assert!(stat.iter().all(|p| p.s_bow.is_some() && p.s_rfc.is_some()));
    assert!(f.aligned.exists() && f.rfc.exists());
}

#[test]
fn score_labels_a_good_toy_pair_good() {
    let f = fixture();
    let cfg = PipelineConfig::load(&f.config).unwrap();
    let good = read_good_pairs(
        std::io::BufReader::new(fs::File::open(cfg.require("good_pairs").unwrap()).unwrap()),
        "en",
        "de",
    )
    .unwrap();
    let pair = &good[0];
    let rows = cmd_score(
        &cfg,
        &f.checkpoint,
        &ScoreInput::Pair(pair.source_text.clone(), pair.target_text.clone()),
        true,
    )
    .unwrap();
    let p = rows[0].prediction;
    let probs = p.probabilities.unwrap();
    assert_eq!(p.label, QeLabel::Good);
    assert!(probs[QeLabel::Good.index()] >= probs.iter().cloned().fold(0.0, f64::max));
    assert_eq!(rows[0].activations.as_ref().unwrap().len(), cfg.model.fc_width);

    let o = subqe(&[
        "--config",
        s(&f.config),
        "score",
        "--checkpoint",
        s(&f.checkpoint),
        "--source",
        &pair.source_text,
        "--target",
        &pair.target_text,
        "--dump-activations",
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    assert_eq!(&header[..6], ["source_text", "target_text", "label", "p_bad", "p_loose", "p_good"]);
    assert_eq!(header.len(), 6 + cfg.model.fc_width);
    assert_eq!(lines.next().unwrap().split('\t').nth(2), Some("good"));
}

#[test]
fn eval_reports_metrics_and_positives_only_mode() {
    let f = fixture();
    let report = f.root.join("eval.txt");
    let o = subqe(&[
        "--config",
        s(&f.config),
        "eval",
        "--checkpoint",
        s(&f.checkpoint),
        "--dataset",
        s(&f.labeled),
        "--out",
        s(&report),
    ]);
    assert!(o.status.success(), "{o:?}");
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.contains("accuracy") && text.contains("truth\\pred") && text.contains("21-25"));

    let o = subqe(&[
        "--config",
        s(&f.config),
        "eval",
        "--positives-only",
        "--checkpoint",
        s(&f.checkpoint),
        "--dataset",
        s(&f.labeled),
        "--out",
        s(&report),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert!(fs::read_to_string(&report).unwrap().contains("miss_rate\t"));
}

#[test]
fn arch_and_head_flags_override_config() {
    let f = fixture();
    let o = subqe(&["--config", s(&f.config), "--arch", "mlp", "synth", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = subqe(&["--config", s(&f.config), "--lang-pair", "en", "synth", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}
