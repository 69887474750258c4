//! Flat `key = value` pipeline configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths are
//! resolved against `data_dir`, or against `$SUBQE_DATA_DIR` when the key is
//! absent, or the working directory otherwise.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bow::BowParams;
use crate::error::{Error, Result};
use crate::features::FEATURE_DIM;
use crate::forest::ForestParams;
use crate::labeler::FusionThresholds;
use crate::nn::{Architecture, Head, ModelConfig, TrainConfig};
use crate::subtitle::DEFAULT_MIN_OVERLAP;
use crate::synth::{derive_seed, SeededRng, SourceWeights};

pub const DATA_DIR_ENV: &str = "SUBQE_DATA_DIR";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathConfig {
    pub src_embeddings: Option<PathBuf>,
    pub tgt_embeddings: Option<PathBuf>,
    pub src_subtitles: Option<PathBuf>,
    pub tgt_subtitles: Option<PathBuf>,
    pub good_pairs: Option<PathBuf>,
    pub captions: Option<PathBuf>,
    pub parallel: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub source_lang: String,
    pub target_lang: String,
    pub data_dir: Option<PathBuf>,
    pub paths: PathConfig,
    pub min_overlap: f64,
    pub bow: BowParams,
    pub fusion: FusionThresholds,
    pub forest: ForestParams,
    /// Share of the forest corpus used for training.
    pub forest_train_fraction: f64,
    pub model: ModelConfig,
    /// The seed field is ignored; training seeds derive from `seed`.
    pub train: TrainConfig,
    pub weights: SourceWeights,
    pub drift_window: usize,
    /// `None` uses the largest size the pools support.
    pub dataset_size: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_pair("en", "de")
    }
}

impl PipelineConfig {
    pub fn for_pair(source_lang: &str, target_lang: &str) -> Self {
        PipelineConfig {
            seed: 0,
            source_lang: source_lang.into(),
            target_lang: target_lang.into(),
            data_dir: None,
            paths: PathConfig::default(),
            min_overlap: DEFAULT_MIN_OVERLAP,
            bow: BowParams::for_language(target_lang),
            fusion: FusionThresholds::default(),
            forest: ForestParams::default(),
            forest_train_fraction: 0.8,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            weights: SourceWeights::for_language(target_lang)
                .unwrap_or_else(|| SourceWeights::from_array([1.0; 6])),
            drift_window: 3,
            dataset_size: None,
        }
    }

    /// Stage-specific random stream: `seed XOR fnv1a(tag)`.
    pub fn rng(&self, tag: &str) -> SeededRng {
        SeededRng::new(derive_seed(self.seed, tag))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "train_qe"),
            ..self.train.clone()
        }
    }

    pub fn base_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_default()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir().join(p)
        }
    }

    /// Resolved path for a configured key, or a config error naming the key.
    pub fn require(&self, key: &str) -> Result<PathBuf> {
        let p = self
            .path_entries()
            .into_iter()
            .find(|(k, _)| *k == key)
            .and_then(|(_, p)| p.clone())
            .ok_or_else(|| Error::Config(format!("missing path.{key}")))?;
        Ok(self.resolve(&p))
    }

    fn path_entries(&self) -> [(&'static str, &Option<PathBuf>); 7] {
        let p = &self.paths;
        [
            ("src_embeddings", &p.src_embeddings),
            ("tgt_embeddings", &p.tgt_embeddings),
            ("src_subtitles", &p.src_subtitles),
            ("tgt_subtitles", &p.tgt_subtitles),
            ("good_pairs", &p.good_pairs),
            ("captions", &p.captions),
            ("parallel", &p.parallel),
        ]
    }

    fn path_slot(&mut self, key: &str) -> Option<&mut Option<PathBuf>> {
        let p = &mut self.paths;
        Some(match key {
            "src_embeddings" => &mut p.src_embeddings,
            "tgt_embeddings" => &mut p.tgt_embeddings,
            "src_subtitles" => &mut p.src_subtitles,
            "tgt_subtitles" => &mut p.tgt_subtitles,
            "good_pairs" => &mut p.good_pairs,
            "captions" => &mut p.captions,
            "parallel" => &mut p.parallel,
            _ => return None,
        })
    }

    /// Range checks plus existence of every configured path.
    pub fn validate(&self) -> Result<()> {
        let lang_ok = |l: &str| !l.is_empty() && l.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !lang_ok(&self.source_lang) || !lang_ok(&self.target_lang) || self.source_lang == self.target_lang {
            return Err(Error::Config(format!(
                "invalid language pair {}-{}",
                self.source_lang, self.target_lang
            )));
        }
        if !(self.min_overlap > 0.0 && self.min_overlap <= 1.0) {
            return Err(Error::Config(format!("align.min_overlap = {} is outside (0, 1]", self.min_overlap)));
        }
        if !(self.forest_train_fraction > 0.0 && self.forest_train_fraction < 1.0) {
            return Err(Error::Config("forest.train_fraction must lie in (0, 1)".into()));
        }
        if self.drift_window == 0 {
            return Err(Error::Config("synth.drift_window must be at least 1".into()));
        }
        if self.dataset_size == Some(0) {
            return Err(Error::Config("dataset.size must be positive".into()));
        }
        self.bow.validate()?;
        self.fusion.validate()?;
        self.forest.validate(FEATURE_DIM)?;
        self.model.validate()?;
        self.train.validate()?;
        self.weights.validate()?;
        for (key, p) in self.path_entries() {
            if let Some(p) = p {
                let full = self.resolve(p);
                if !full.exists() {
                    return Err(Error::Config(format!("path.{key} {} does not exist", full.display())));
                }
            }
        }
        Ok(())
    }

    pub fn emit(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("lang_pair", format!("{}-{}", self.source_lang, self.target_lang));
        if let Some(d) = &self.data_dir {
            kv("data_dir", d.display().to_string());
        }
        for (key, p) in self.path_entries() {
            if let Some(p) = p {
                kv(&format!("path.{key}"), p.display().to_string());
            }
        }
        kv("align.min_overlap", self.min_overlap.to_string());
        kv("bow.theta1", self.bow.theta1.to_string());
        kv("bow.theta2", self.bow.theta2.to_string());
        let f = &self.fusion;
        kv("fusion.delta1", f.delta1.to_string());
        kv("fusion.delta2", f.delta2.to_string());
        kv("fusion.delta3", f.delta3.to_string());
        kv("fusion.delta4", f.delta4.to_string());
        kv("fusion.strict_loose", f.strict_loose.to_string());
        let fp = &self.forest;
        kv("forest.n_trees", fp.n_trees.to_string());
        kv("forest.max_depth", fp.max_depth.map_or("none".into(), |d| d.to_string()));
        kv("forest.min_samples_leaf", fp.min_samples_leaf.to_string());
        kv("forest.features_per_split", fp.features_per_split.to_string());
        kv("forest.train_fraction", self.forest_train_fraction.to_string());
        let m = &self.model;
        kv("model.architecture", m.architecture.as_str().into());
        kv("model.head", m.head.as_str().into());
        kv("model.embed_dim", m.embed_dim.to_string());
        kv("model.seq_len", m.seq_len.to_string());
        kv("model.lstm_hidden", m.lstm_hidden.to_string());
        kv("model.conv_channels", join(&m.conv_channels));
        kv("model.kernel_widths", join(&m.kernel_widths));
        kv("model.fc_width", m.fc_width.to_string());
        kv("model.dropout", m.dropout.to_string());
        kv("model.n_classes", m.n_classes.to_string());
        kv("model.masked_pooling", m.masked_pooling.to_string());
        kv("model.bn_momentum", m.bn_momentum.to_string());
        kv("model.bn_eps", m.bn_eps.to_string());
        kv("model.band_bad", join(&[m.bands.bad.0, m.bands.bad.1]));
        kv("model.band_loose", join(&[m.bands.loose.0, m.bands.loose.1]));
        kv("model.band_good", join(&[m.bands.good.0, m.bands.good.1]));
        let t = &self.train;
        kv("train.learning_rate", t.learning_rate.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.max_epochs", t.max_epochs.to_string());
        kv("train.plateau_threshold", t.plateau_threshold.to_string());
        kv("train.lr_divisor", t.lr_divisor.to_string());
        kv("train.max_decays", t.max_decays.to_string());
        let w = &self.weights;
        kv("weights.statistical", w.statistical.to_string());
        kv("weights.good_pairs", w.good_pairs.to_string());
        kv("weights.added_captions", w.added_captions.to_string());
        kv("weights.scrambled_text", w.scrambled_text.to_string());
        kv("weights.drifted_aligned", w.drifted_aligned.to_string());
        kv("weights.randomly_aligned", w.randomly_aligned.to_string());
        kv("synth.drift_window", self.drift_window.to_string());
        kv("dataset.size", self.dataset_size.map_or("none".into(), |d| d.to_string()));
        out
    }

    /// Parses a config; keys not present keep their defaults. Language
    /// dependent defaults follow `lang_pair`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = match entries.iter().find(|(_, k, _)| k == "lang_pair") {
            Some((line, _, v)) => {
                let (s, t) = parse_lang_pair(v).map_err(|e| at_line(*line, e))?;
                Self::for_pair(&s, &t)
            }
            None => Self::default(),
        };
        for (line, k, v) in entries {
            cfg.set(&k, &v).map_err(|e| at_line(line, e))?;
        }
        Ok(cfg)
    }

    /// Sets one key; used by the parser and for command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "seed" => self.seed = num(key, v)?,
            "lang_pair" => {
                let (s, t) = parse_lang_pair(v)?;
                self.source_lang = s;
                self.target_lang = t.clone();
                self.bow.language = t;
            }
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "align.min_overlap" => self.min_overlap = num(key, v)?,
            "bow.theta1" => self.bow.theta1 = num(key, v)?,
            "bow.theta2" => self.bow.theta2 = num(key, v)?,
            "fusion.delta1" => self.fusion.delta1 = num(key, v)?,
            "fusion.delta2" => self.fusion.delta2 = num(key, v)?,
            "fusion.delta3" => self.fusion.delta3 = num(key, v)?,
            "fusion.delta4" => self.fusion.delta4 = num(key, v)?,
            "fusion.strict_loose" => self.fusion.strict_loose = num(key, v)?,
            "forest.n_trees" => self.forest.n_trees = num(key, v)?,
            "forest.max_depth" => self.forest.max_depth = opt(key, v)?,
            "forest.min_samples_leaf" => self.forest.min_samples_leaf = num(key, v)?,
            "forest.features_per_split" => self.forest.features_per_split = num(key, v)?,
            "forest.train_fraction" => self.forest_train_fraction = num(key, v)?,
            "model.architecture" => self.model.architecture = v.parse::<Architecture>()?,
            "model.head" => self.model.head = v.parse::<Head>()?,
            "model.embed_dim" => self.model.embed_dim = num(key, v)?,
            "model.seq_len" => self.model.seq_len = num(key, v)?,
            "model.lstm_hidden" => self.model.lstm_hidden = num(key, v)?,
            "model.conv_channels" => self.model.conv_channels = pair(key, v)?,
            "model.kernel_widths" => self.model.kernel_widths = pair(key, v)?,
            "model.fc_width" => self.model.fc_width = num(key, v)?,
            "model.dropout" => self.model.dropout = num(key, v)?,
            "model.n_classes" => self.model.n_classes = num(key, v)?,
            "model.masked_pooling" => self.model.masked_pooling = num(key, v)?,
            "model.bn_momentum" => self.model.bn_momentum = num(key, v)?,
            "model.bn_eps" => self.model.bn_eps = num(key, v)?,
            "model.band_bad" => self.model.bands.bad = pair(key, v)?.into(),
            "model.band_loose" => self.model.bands.loose = pair(key, v)?.into(),
            "model.band_good" => self.model.bands.good = pair(key, v)?.into(),
            "train.learning_rate" => self.train.learning_rate = num(key, v)?,
            "train.batch_size" => self.train.batch_size = num(key, v)?,
            "train.max_epochs" => self.train.max_epochs = num(key, v)?,
            "train.plateau_threshold" => self.train.plateau_threshold = num(key, v)?,
            "train.lr_divisor" => self.train.lr_divisor = num(key, v)?,
            "train.max_decays" => self.train.max_decays = num(key, v)?,
            "weights.statistical" => self.weights.statistical = num(key, v)?,
            "weights.good_pairs" => self.weights.good_pairs = num(key, v)?,
            "weights.added_captions" => self.weights.added_captions = num(key, v)?,
            "weights.scrambled_text" => self.weights.scrambled_text = num(key, v)?,
            "weights.drifted_aligned" => self.weights.drifted_aligned = num(key, v)?,
            "weights.randomly_aligned" => self.weights.randomly_aligned = num(key, v)?,
            "synth.drift_window" => self.drift_window = num(key, v)?,
            "dataset.size" => self.dataset_size = opt(key, v)?,
            _ => {
                let slot = key
                    .strip_prefix("path.")
                    .and_then(|k| self.path_slot(k))
                    .ok_or_else(|| Error::Config(format!("unknown key {key:?}")))?;
                *slot = Some(PathBuf::from(v));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

fn at_line(line: usize, e: Error) -> Error {
    Error::Config(format!("line {line}: {}", strip_prefix(&e)))
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn pair<T: FromStr + Copy>(key: &str, v: &str) -> Result<[T; 2]> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([num(key, a)?, num(key, b)?]),
        _ => Err(Error::Config(format!("{key}: expected two comma-separated values"))),
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Splits `src-tgt`.
pub fn parse_lang_pair(v: &str) -> Result<(String, String)> {
    match v.split_once('-') {
        Some((s, t)) if !s.is_empty() && !t.is_empty() => Ok((s.to_string(), t.to_string())),
        _ => Err(Error::Config(format!("lang_pair must look like en-de, got {v:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::parse(&c.emit()).unwrap();
        back.validate().unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn customized_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("e.vec"), "").unwrap();
        let mut c = PipelineConfig::for_pair("en", "fr");
        c.seed = 99;
        c.data_dir = Some(dir.path().to_path_buf());
        c.paths.src_embeddings = Some("e.vec".into());
        c.forest.max_depth = Some(12);
        c.model.architecture = Architecture::CnnOnly;
        c.model.head = Head::Scoring;
        c.model.dropout = 0.1 + 0.2;
        c.dataset_size = Some(1234);
        c.weights = SourceWeights::only(crate::subtitle::Provenance::RandomlyAligned);
        c.validate().unwrap();
        let back = PipelineConfig::parse(&c.emit()).unwrap();
        back.validate().unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn language_defaults_follow_pair() {
        let c = PipelineConfig::parse("lang_pair = en-it\n").unwrap();
        assert_eq!(c.bow.theta1, 0.5);
        assert_eq!(c.weights, SourceWeights::for_language("it").unwrap());
    }

    #[test]
    fn errors_name_line_and_key() {
        let e = PipelineConfig::parse("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(e.to_string().contains("line 2") && e.to_string().contains("bogus"), "{e}");
        let e = PipelineConfig::parse("seed = x\n").unwrap_err();
        assert!(e.to_string().contains("seed"), "{e}");
        assert!(PipelineConfig::parse("no equals sign\n").is_err());
    }

    #[test]
    fn validation_rejects_missing_paths_and_bad_ranges() {
        let mut c = PipelineConfig::default();
        c.paths.captions = Some("/definitely/not/here.txt".into());
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.fusion.delta1 = 0.9;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.source_lang = "de".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn stage_seeds_xor_tag_hash() {
        let mut c = PipelineConfig::default();
        c.seed = 5;
        assert_eq!(c.rng("synth").seed(), derive_seed(5, "synth"));
        assert_eq!(c.train_config().seed, 5 ^ derive_seed(0, "train_qe"));
    }
}
