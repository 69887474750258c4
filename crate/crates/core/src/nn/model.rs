use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::QeLabel;
use crate::subtitle::MAX_TOKENS;
use crate::synth::SeededRng;

use super::data::Batch;
use super::graph::{softmax_rows, BatchStats, BnMode, Graph, Var};
use super::scoring::ScoringBands;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    /// BiLSTM encoders followed by two conv modules.
    Hybrid,
    /// BiLSTM encoders straight into the dense head.
    LstmOnly,
    /// Three conv modules over the raw embeddings.
    CnnOnly,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::Hybrid, Architecture::LstmOnly, Architecture::CnnOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Hybrid => "hybrid",
            Architecture::LstmOnly => "lstm",
            Architecture::CnnOnly => "cnn",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture {s:?} (hybrid, lstm, cnn)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Head {
    /// Three logits trained with cross-entropy.
    Classification,
    /// One sigmoid score trained with the band loss.
    Scoring,
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::Classification => "classification",
            Head::Scoring => "scoring",
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Head {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Head::Classification),
            "scoring" => Ok(Head::Scoring),
            _ => Err(Error::Config(format!("unknown head {s:?} (classification, scoring)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub seq_len: usize,
    pub lstm_hidden: usize,
    /// Output channels of the two conv modules; the third CNN-only module
    /// reuses the second entry.
    pub conv_channels: [usize; 2],
    pub kernel_widths: [usize; 2],
    pub fc_width: usize,
    pub dropout: f64,
    pub n_classes: usize,
    pub architecture: Architecture,
    pub head: Head,
    /// Exclude padded steps from batch statistics and pooling.
    pub masked_pooling: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub bands: ScoringBands,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 300,
            seq_len: MAX_TOKENS,
            lstm_hidden: 32,
            conv_channels: [32, 32],
            kernel_widths: [3, 3],
            fc_width: 64,
            dropout: 0.3,
            n_classes: 3,
            architecture: Architecture::Hybrid,
            head: Head::Classification,
            masked_pooling: true,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
            bands: ScoringBands::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidModelConfig(m));
        if self.seq_len != MAX_TOKENS {
            return bad(format!("seq_len must be {MAX_TOKENS}, got {}", self.seq_len));
        }
        if self.n_classes != 3 {
            return bad(format!("n_classes must be 3, got {}", self.n_classes));
        }
        if [self.embed_dim, self.lstm_hidden, self.fc_width, self.conv_channels[0], self.conv_channels[1]].contains(&0) {
            return bad("dimensions must be positive".into());
        }
        if self.kernel_widths.iter().any(|k| k % 2 == 0) {
            return bad(format!("kernel widths must be odd, got {:?}", self.kernel_widths));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return bad("batch-norm momentum must be in [0, 1] and eps positive".into());
        }
        self.bands.validate()
    }

    pub fn output_dim(&self) -> usize {
        match self.head {
            Head::Classification => self.n_classes,
            Head::Scoring => 1,
        }
    }

    /// `(in_channels, out_channels, kernel)` of each conv module.
    fn conv_modules(&self) -> Vec<(usize, usize, usize)> {
        let [c0, c1] = self.conv_channels;
        let [k0, k1] = self.kernel_widths;
        match self.architecture {
            Architecture::Hybrid => vec![(4 * self.lstm_hidden, c0, k0), (c0, c1, k1)],
            Architecture::CnnOnly => vec![(self.embed_dim, c0, k0), (c0, c1, k1), (c1, c1, k1)],
            Architecture::LstmOnly => vec![],
        }
    }

    /// Width of the flattened sequence fed to the dense head.
    pub fn flat_dim(&self) -> usize {
        if self.architecture == Architecture::LstmOnly {
            return 16 * self.lstm_hidden;
        }
        let mut t = 2 * self.seq_len;
        let modules = self.conv_modules();
        for _ in &modules {
            t = t.div_ceil(2);
        }
        let c = modules.last().map_or(4 * self.lstm_hidden, |m| m.1);
        t * c
    }

    /// Length of the vector returned by penultimate activations.
    pub fn penultimate_dim(&self) -> usize {
        match self.architecture {
            Architecture::LstmOnly => self.flat_dim(),
            _ => self.fc_width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Glorot { fan_in: usize, fan_out: usize },
    Zeros,
    Ones,
    /// Zero except 1 on the forget-gate slice.
    LstmBias,
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut specs = Vec::new();
    let h = cfg.lstm_hidden;
    if cfg.architecture != Architecture::CnnOnly {
        for side in ["src", "tgt"] {
            for layer in 1..=2 {
                let input = if layer == 1 { cfg.embed_dim } else { 2 * h };
                for dir in ["fwd", "bwd"] {
                    let p = format!("{side}.lstm{layer}.{dir}");
                    specs.push((format!("{p}.wx"), vec![input, 4 * h], Init::Glorot { fan_in: input, fan_out: 4 * h }));
                    specs.push((format!("{p}.wh"), vec![h, 4 * h], Init::Glorot { fan_in: h, fan_out: 4 * h }));
                    specs.push((format!("{p}.b"), vec![4 * h], Init::LstmBias));
                }
            }
        }
    }
    for (m, (ci, co, k)) in cfg.conv_modules().into_iter().enumerate() {
        specs.push((format!("conv{m}.w"), vec![k, ci, co], Init::Glorot { fan_in: k * ci, fan_out: k * co }));
        specs.push((format!("conv{m}.b"), vec![co], Init::Zeros));
        specs.push((format!("bn{m}.gamma"), vec![co], Init::Ones));
        specs.push((format!("bn{m}.beta"), vec![co], Init::Zeros));
    }
    let flat = cfg.flat_dim();
    let out = cfg.output_dim();
    if cfg.architecture == Architecture::LstmOnly {
        specs.push(("fc.w".into(), vec![flat, out], Init::Glorot { fan_in: flat, fan_out: out }));
        specs.push(("fc.b".into(), vec![out], Init::Zeros));
        return specs;
    }
    specs.push(("fc1.w".into(), vec![flat, cfg.fc_width], Init::Glorot { fan_in: flat, fan_out: cfg.fc_width }));
    specs.push(("fc1.b".into(), vec![cfg.fc_width], Init::Zeros));
    specs.push(("fc2.w".into(), vec![cfg.fc_width, out], Init::Glorot { fan_in: cfg.fc_width, fan_out: out }));
    specs.push(("fc2.b".into(), vec![out], Init::Zeros));
    specs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Running batch-norm statistics of one conv module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Dropout draws for a training forward pass.
pub enum Mode<'a> {
    Train(&'a mut SeededRng),
    Eval,
}

impl Mode<'_> {
    fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Recorded forward pass.
pub struct ForwardOutput {
    pub graph: Graph,
    /// `[B,3]` logits or `[B,1]` sigmoid scores.
    pub output: Var,
    /// Post-activation input of the last dense layer, `[B, fc_width]`.
    pub penultimate: Var,
    /// Graph handles of the parameters, in `QeModel::params` order.
    pub params: Vec<Var>,
    pub bn_stats: Vec<BatchStats>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: QeLabel,
    /// Class probabilities in `QeLabel::index` order (classification head).
    pub probabilities: Option<[f64; 3]>,
    /// Sigmoid score (scoring head).
    pub score: Option<f64>,
}

/// The quality-estimation network with its parameters and running statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QeModel {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    pub bn: Vec<BnRunning>,
}

struct Cursor<'a> {
    vars: &'a [Var],
    at: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Var {
        self.at += 1;
        self.vars[self.at - 1]
    }
}

impl QeModel {
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let params = param_specs(&config)
            .into_iter()
            .map(|(name, shape, init)| {
                let n: usize = shape.iter().product();
                let data = match init {
                    Init::Glorot { fan_in, fan_out } => {
                        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                        (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
                    }
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::LstmBias => {
                        let h = n / 4;
                        (0..n).map(|i| if (h..2 * h).contains(&i) { 1.0 } else { 0.0 }).collect()
                    }
                };
                Param {
                    name,
                    value: Tensor::new(shape, data).unwrap(),
                }
            })
            .collect();
        let bn = config
            .conv_modules()
            .iter()
            .map(|&(_, co, _)| BnRunning {
                mean: vec![0.0; co],
                var: vec![1.0; co],
            })
            .collect();
        Ok(QeModel { config, params, bn })
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Checks that parameter names and shapes match the config.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let specs = param_specs(&self.config);
        if specs.len() != self.params.len()
            || specs
                .iter()
                .zip(&self.params)
                .any(|((name, shape, _), p)| *name != p.name || shape.as_slice() != p.value.shape())
        {
            return Err(Error::ShapeMismatch("parameters do not match the model config".into()));
        }
        if self.bn.len() != self.config.conv_modules().len() {
            return Err(Error::ShapeMismatch("batch-norm statistics do not match the model config".into()));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let want = [batch.size(), self.config.seq_len, self.config.embed_dim];
        for t in [&batch.src, &batch.tgt] {
            if t.shape() != want {
                return Err(Error::ShapeMismatch(format!(
                    "batch tensor {:?}, model expects {want:?}",
                    t.shape()
                )));
            }
        }
        if batch.tgt_len.len() != batch.size() {
            return Err(Error::ShapeMismatch("source and target batch sizes differ".into()));
        }
        Ok(())
    }

    fn bilstm(g: &mut Graph, cur: &mut Cursor<'_>, x: Var, lengths: &[usize]) -> Var {
        let (wx, wh, b) = (cur.next(), cur.next(), cur.next());
        let fwd = g.lstm(x, wx, wh, b, lengths, false);
        let (wx, wh, b) = (cur.next(), cur.next(), cur.next());
        let bwd = g.lstm(x, wx, wh, b, lengths, true);
        g.concat_feat(fwd, bwd)
    }

    /// Two stacked bidirectional layers, both layers' outputs concatenated.
    fn encoder(g: &mut Graph, cur: &mut Cursor<'_>, x: Var, lengths: &[usize]) -> Var {
        let l1 = Self::bilstm(g, cur, x, lengths);
        let l2 = Self::bilstm(g, cur, l1, lengths);
        g.concat_feat(l1, l2)
    }

    /// Encoder outputs at the last and the first valid step, `[B,1,8H]`.
    fn end_states(g: &mut Graph, enc: Var, lengths: &[usize]) -> Var {
        let (bs, t, c) = (g.value(enc).dim(0), g.value(enc).dim(1), g.value(enc).dim(2));
        let mut stack = vec![0.0; t * c * c];
        for k in 0..t {
            for j in 0..c {
                stack[(k * c + j) * c + j] = 1.0;
            }
        }
        let stack = g.input(Tensor::new(vec![t * c, c], stack).expect("stacked identity"));
        let mut pick = |step: &dyn Fn(usize) -> Option<usize>| {
            let mut mask = vec![0.0; bs * t];
            for (b, &len) in lengths.iter().enumerate() {
                if let Some(s) = step(len) {
                    mask[b * t + s] = 1.0;
                }
            }
            let y = g.mask_time(enc, &mask);
            let y = g.reshape(y, &[bs, t * c]);
            let y = g.matmul(y, stack);
            g.reshape(y, &[bs, 1, c])
        };
        let last = pick(&|len| len.checked_sub(1));
        let first = pick(&|len| (len > 0).then_some(0));
        g.concat_feat(last, first)
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_module(
        &self,
        g: &mut Graph,
        cur: &mut Cursor<'_>,
        index: usize,
        x: Var,
        mask: &[f64],
        train: bool,
        stats: &mut Vec<BatchStats>,
    ) -> (Var, Vec<f64>) {
        let (w, b, gamma, beta) = (cur.next(), cur.next(), cur.next(), cur.next());
        let y = g.conv1d(x, w, b);
        let masked = self.config.masked_pooling;
        let m = masked.then_some(mask);
        let mode = if train {
            BnMode::Train {
                eps: self.config.bn_eps,
            }
        } else {
            BnMode::Eval {
                mean: &self.bn[index].mean,
                var: &self.bn[index].var,
                eps: self.config.bn_eps,
            }
        };
        let (y, st) = g.batch_norm(y, gamma, beta, m, mode);
        stats.extend(st);
        let mut y = g.relu(y);
        if masked {
            y = g.mask_time(y, mask);
        }
        let (y, pooled) = g.max_pool(y, m);
        if masked {
            (y, pooled)
        } else {
            let n = pooled.len();
            (y, vec![1.0; n])
        }
    }

    /// Builds the forward graph for a batch.
    pub fn forward(&self, batch: &Batch, mut mode: Mode<'_>) -> Result<ForwardOutput> {
        self.check_batch(batch)?;
        let train = mode.is_train();
        let bs = batch.size();
        let mut g = Graph::new();
        let params: Vec<Var> = self.params.iter().map(|p| g.param(p.value.clone())).collect();
        let mut cur = Cursor { vars: &params, at: 0 };
        let mut stats = Vec::new();
        let src_mask = Batch::mask(&batch.src_len);
        let tgt_mask = Batch::mask(&batch.tgt_len);
        let src = g.input(batch.src.clone());
        let tgt = g.input(batch.tgt.clone());
        let src = g.mask_time(src, &src_mask);
        let tgt = g.mask_time(tgt, &tgt_mask);
        let mut mask: Vec<f64> = Vec::with_capacity(bs * 2 * MAX_TOKENS);
        for b in 0..bs {
            mask.extend_from_slice(&src_mask[b * MAX_TOKENS..(b + 1) * MAX_TOKENS]);
            mask.extend_from_slice(&tgt_mask[b * MAX_TOKENS..(b + 1) * MAX_TOKENS]);
        }

        if self.config.architecture == Architecture::LstmOnly {
            let es = Self::encoder(&mut g, &mut cur, src, &batch.src_len);
            let et = Self::encoder(&mut g, &mut cur, tgt, &batch.tgt_len);
            let vs = Self::end_states(&mut g, es, &batch.src_len);
            let vt = Self::end_states(&mut g, et, &batch.tgt_len);
            let v = g.concat_feat(vs, vt);
            let penultimate = g.reshape(v, &[bs, self.config.flat_dim()]);
            let (w, b) = (cur.next(), cur.next());
            let d = self.dropout(&mut g, penultimate, &mut mode);
            let out = g.matmul(d, w);
            let output = self.head_output(&mut g, out, b);
            return Ok(ForwardOutput {
                graph: g,
                output,
                penultimate,
                params,
                bn_stats: stats,
            });
        }
        let mut h = match self.config.architecture {
            Architecture::Hybrid => {
                let es = Self::encoder(&mut g, &mut cur, src, &batch.src_len);
                let et = Self::encoder(&mut g, &mut cur, tgt, &batch.tgt_len);
                g.concat_time(es, et)
            }
            _ => g.concat_time(src, tgt),
        };
        for index in 0..self.config.conv_modules().len() {
            let (y, m) = self.conv_module(&mut g, &mut cur, index, h, &mask, train, &mut stats);
            h = y;
            mask = m;
        }

        let flat = g.reshape(h, &[bs, self.config.flat_dim()]);
        let (w1, b1, w2, b2) = (cur.next(), cur.next(), cur.next(), cur.next());
        debug_assert_eq!(cur.at, params.len());
        let z = g.matmul(flat, w1);
        let z = g.add_bias(z, b1);
        let penultimate = g.relu(z);
        let d = self.dropout(&mut g, penultimate, &mut mode);
        let out = g.matmul(d, w2);
        let output = self.head_output(&mut g, out, b2);
        Ok(ForwardOutput {
            graph: g,
            output,
            penultimate,
            params,
            bn_stats: stats,
        })
    }

    /// Inverted dropout on the input of the last dense layer.
    fn dropout(&self, g: &mut Graph, x: Var, mode: &mut Mode<'_>) -> Var {
        let p = self.config.dropout;
        match mode {
            Mode::Train(rng) if p > 0.0 => {
                let n = g.value(x).len();
                let keep: Vec<f64> = (0..n).map(|_| if rng.gen_bool(1.0 - p) { 1.0 / (1.0 - p) } else { 0.0 }).collect();
                g.mul_const(x, keep)
            }
            _ => x,
        }
    }

    fn head_output(&self, g: &mut Graph, x: Var, bias: Var) -> Var {
        let out = g.add_bias(x, bias);
        match self.config.head {
            Head::Scoring => g.sigmoid(out),
            Head::Classification => out,
        }
    }

    /// Appends the head's loss to a forward graph.
    pub fn loss(&self, fwd: &mut ForwardOutput, labels: &[QeLabel]) -> Var {
        match self.config.head {
            Head::Classification => {
                let idx: Vec<usize> = labels.iter().map(|l| l.index()).collect();
                fwd.graph.softmax_ce(fwd.output, &idx)
            }
            Head::Scoring => {
                let bands: Vec<(f64, f64)> = labels.iter().map(|&l| self.config.bands.band(l)).collect();
                fwd.graph.scoring_loss(fwd.output, &bands)
            }
        }
    }

    /// Folds training-batch statistics into the running averages.
    pub fn update_bn(&mut self, stats: &[BatchStats]) {
        let m = self.config.bn_momentum;
        for (run, st) in self.bn.iter_mut().zip(stats) {
            for (r, v) in run.mean.iter_mut().zip(&st.mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in run.var.iter_mut().zip(&st.var) {
                *r = (1.0 - m) * *r + m * v;
            }
        }
    }

    /// Eval-mode logits or scores, `[B, output_dim]`.
    pub fn outputs(&self, batch: &Batch) -> Result<Tensor> {
        let fwd = self.forward(batch, Mode::Eval)?;
        Ok(fwd.graph.value(fwd.output).clone())
    }

    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<Prediction>> {
        let out = self.outputs(batch)?;
        Ok(self.predictions_from_outputs(&out))
    }

    pub fn predictions_from_outputs(&self, out: &Tensor) -> Vec<Prediction> {
        match self.config.head {
            Head::Classification => softmax_rows(out.data(), 3)
                .chunks(3)
                .map(|p| {
                    let probs = [p[0], p[1], p[2]];
                    Prediction {
                        label: argmax_toward_bad(&probs),
                        probabilities: Some(probs),
                        score: None,
                    }
                })
                .collect(),
            Head::Scoring => out
                .data()
                .iter()
                .map(|&s| Prediction {
                    label: self.config.bands.predict(s),
                    probabilities: None,
                    score: Some(s),
                })
                .collect(),
        }
    }

    /// Eval-mode input vectors of the last dense layer, one per pair.
    pub fn penultimate_activations(&self, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        let fwd = self.forward(batch, Mode::Eval)?;
        Ok(fwd
            .graph
            .value(fwd.penultimate)
            .data()
            .chunks(self.config.penultimate_dim())
            .map(<[f64]>::to_vec)
            .collect())
    }
}

/// Index of the largest probability; ties go to the lower (worse) label.
pub fn argmax_toward_bad(p: &[f64; 3]) -> QeLabel {
    let mut best = 0;
    for k in 1..3 {
        if p[k] > p[best] {
            best = k;
        }
    }
    QeLabel::from_index(best).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(arch: Architecture, head: Head) -> ModelConfig {
        ModelConfig {
            embed_dim: 4,
            lstm_hidden: 3,
            conv_channels: [4, 5],
            fc_width: 6,
            architecture: arch,
            head,
            ..Default::default()
        }
    }

    fn random_batch(b: usize, e: usize, rng: &mut SeededRng) -> Batch {
        let n = b * MAX_TOKENS * e;
        let src_len: Vec<usize> = (0..b).map(|_| rng.gen_range(1..=MAX_TOKENS)).collect();
        let tgt_len: Vec<usize> = (0..b).map(|_| rng.gen_range(1..=MAX_TOKENS)).collect();
        let mut src = Tensor::new(vec![b, MAX_TOKENS, e], (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut tgt = Tensor::new(vec![b, MAX_TOKENS, e], (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        for (t, lens) in [(&mut src, &src_len), (&mut tgt, &tgt_len)] {
            for (bi, &l) in lens.iter().enumerate() {
                for v in &mut t.data_mut()[(bi * MAX_TOKENS + l) * e..(bi + 1) * MAX_TOKENS * e] {
                    *v = 0.0;
                }
            }
        }
        Batch {
            src,
            tgt,
            src_len,
            tgt_len,
        }
    }

    fn select(batch: &Batch, i: usize) -> Batch {
        let step = MAX_TOKENS * batch.src.dim(2);
        let e = batch.src.dim(2);
        Batch {
            src: Tensor::new(vec![1, MAX_TOKENS, e], batch.src.data()[i * step..(i + 1) * step].to_vec()).unwrap(),
            tgt: Tensor::new(vec![1, MAX_TOKENS, e], batch.tgt.data()[i * step..(i + 1) * step].to_vec()).unwrap(),
            src_len: vec![batch.src_len[i]],
            tgt_len: vec![batch.tgt_len[i]],
        }
    }

    #[test]
    fn output_shapes_per_head_and_architecture() {
        let mut rng = SeededRng::new(1);
        let batch = random_batch(3, 4, &mut rng);
        for arch in Architecture::ALL {
            for head in [Head::Classification, Head::Scoring] {
                let model = QeModel::new(small(arch, head), &mut rng).unwrap();
                model.validate().unwrap();
                let out = model.outputs(&batch).unwrap();
                assert_eq!(out.shape(), &[3, model.config.output_dim()]);
                if head == Head::Scoring {
                    assert!(out.data().iter().all(|s| *s > 0.0 && *s < 1.0));
                }
                let pen = model.penultimate_activations(&batch).unwrap();
                assert!(pen.iter().all(|v| v.len() == model.config.penultimate_dim()));
            }
        }
    }

    #[test]
    fn encoder_output_shape() {
        let mut rng = SeededRng::new(2);
        let model = QeModel::new(small(Architecture::LstmOnly, Head::Classification), &mut rng).unwrap();
        let batch = random_batch(2, 4, &mut rng);
        let fwd = model.forward(&batch, Mode::Eval).unwrap();
        // two sides x two ends x 4H
        assert_eq!(model.config.flat_dim(), 16 * 3);
        assert_eq!(fwd.graph.value(fwd.penultimate).shape(), &[2, 48]);
    }

    #[test]
    fn end_states_pick_last_and_first_valid_steps() {
        let mut g = Graph::new();
        // B=2, T=3, C=2; value = 10*b + 2*t + c
        let data: Vec<f64> = (0..12).map(|i| (10 * (i / 6) + (i % 6)) as f64).collect();
        let enc = g.input(Tensor::new(vec![2, 3, 2], data).unwrap());
        let v = QeModel::end_states(&mut g, enc, &[2, 3]);
        assert_eq!(g.value(v).shape(), &[2, 1, 4]);
        assert_eq!(g.value(v).data(), &[2.0, 3.0, 0.0, 1.0, 14.0, 15.0, 10.0, 11.0]);
    }

    #[test]
    fn eval_is_deterministic_and_batch_independent() {
        let mut rng = SeededRng::new(3);
        let batch = random_batch(4, 4, &mut rng);
        for arch in Architecture::ALL {
            let model = QeModel::new(small(arch, Head::Classification), &mut rng).unwrap();
            let all = model.outputs(&batch).unwrap();
            assert_eq!(all, model.outputs(&batch).unwrap());
            for i in 0..4 {
                let one = model.outputs(&select(&batch, i)).unwrap();
                for (a, b) in one.data().iter().zip(&all.data()[i * 3..(i + 1) * 3]) {
                    assert!((a - b).abs() < 1e-12, "{arch}");
                }
            }
        }
    }

    #[test]
    fn cnn_logits_ignore_padding_content() {
        let mut rng = SeededRng::new(4);
        let model = QeModel::new(small(Architecture::CnnOnly, Head::Classification), &mut rng).unwrap();
        let batch = random_batch(3, 4, &mut rng);
        let mut junk = batch.clone();
        for (t, lens) in [(&mut junk.src, &batch.src_len), (&mut junk.tgt, &batch.tgt_len)] {
            for (bi, &l) in lens.iter().enumerate() {
                for v in &mut t.data_mut()[(bi * MAX_TOKENS + l) * 4..(bi + 1) * MAX_TOKENS * 4] {
                    *v = rng.gen_range(-50.0..50.0);
                }
            }
        }
        assert_eq!(model.outputs(&batch).unwrap(), model.outputs(&junk).unwrap());
    }

    #[test]
    fn predictions_compose_forward_and_argmax() {
        let mut rng = SeededRng::new(5);
        let model = QeModel::new(small(Architecture::Hybrid, Head::Classification), &mut rng).unwrap();
        let batch = random_batch(10, 4, &mut rng);
        let out = model.outputs(&batch).unwrap();
        let preds = model.predict_batch(&batch).unwrap();
        for (p, row) in preds.iter().zip(out.data().chunks(3)) {
            let probs = p.probabilities.unwrap();
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let best = (0..3).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap();
            assert_eq!(p.label.index(), best);
        }
    }

    #[test]
    fn ties_break_toward_bad() {
        assert_eq!(argmax_toward_bad(&[0.4, 0.4, 0.2]), QeLabel::Bad);
        assert_eq!(argmax_toward_bad(&[0.2, 0.4, 0.4]), QeLabel::Loose);
        assert_eq!(argmax_toward_bad(&[1.0 / 3.0; 3]), QeLabel::Bad);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut rng = SeededRng::new(0);
        for cfg in [
            ModelConfig {
                seq_len: 30,
                ..Default::default()
            },
            ModelConfig {
                kernel_widths: [2, 3],
                ..Default::default()
            },
            ModelConfig {
                dropout: 1.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(QeModel::new(cfg, &mut rng), Err(Error::InvalidModelConfig(_))));
        }
        let model = QeModel::new(small(Architecture::Hybrid, Head::Classification), &mut rng).unwrap();
        let wrong = random_batch(1, 5, &mut rng);
        assert!(matches!(model.outputs(&wrong), Err(Error::ShapeMismatch(_))));
    }
}
