//! Reverse-mode differentiation over a recorded tape of batch-level ops.

use super::tensor::{gemm, gemm_at, gemm_bt, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batch-norm statistics source.
#[derive(Debug, Clone, Copy)]
pub enum BnMode<'a> {
    /// Normalize with statistics of the (unmasked) batch rows.
    Train { eps: f64 },
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64], eps: f64 },
}

/// Per-channel mean and unbiased variance of a training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

struct LstmCache {
    x: Var,
    wx: Var,
    wh: Var,
    b: Var,
    lengths: Vec<usize>,
    steps: Vec<usize>,
    h_prev: Vec<Vec<f64>>,
    c_prev: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
}

struct BnCache {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    std: Vec<f64>,
    mask: Option<Vec<f64>>,
    n_valid: f64,
    train: bool,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    MulConst(Var, Vec<f64>),
    Reshape(Var),
    ConcatTime(Var, Var),
    ConcatFeat(Var, Var),
    Lstm(Box<LstmCache>),
    Conv1d(Var, Var, Var),
    BatchNorm(Box<BnCache>),
    MaxPool(Var, Vec<usize>),
    SoftmaxCe(Var, Vec<f64>, Vec<usize>),
    ScoringLoss(Var, Vec<(f64, f64)>),
    WeightedSum(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// A tape of tensor operations supporting one backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    assert_eq!(t.shape().len(), 3, "expected a [batch, time, features] tensor, got {:?}", t.shape());
    (t.dim(0), t.dim(1), t.dim(2))
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `[m,k] x [k,n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        let (m, k) = (at.dim(0), at.dim(1));
        assert_eq!(bt.dim(0), k, "matmul inner dimensions differ");
        let n = bt.dim(1);
        let mut out = vec![0.0; m * n];
        gemm(at.data(), bt.data(), &mut out, m, k, n);
        self.push(Tensor::new(vec![m, n], out).unwrap(), Op::MatMul(a, b), &[a, b])
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let bt = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        assert_eq!(out.last_dim(), bt.len(), "bias length differs from last axis");
        for row in out.data_mut().chunks_mut(bt.len()) {
            for (v, bv) in row.iter_mut().zip(&bt) {
                *v += bv;
            }
        }
        self.push(out, Op::AddBias(x, b), &[x, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape());
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), self.value(b).shape());
        for (v, w) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *v *= w;
        }
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = f(*v);
        }
        self.push(out, op, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Elementwise product with a constant (dropout and padding masks).
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Var {
        let mut out = self.value(x).clone();
        assert_eq!(out.len(), c.len());
        for (v, m) in out.data_mut().iter_mut().zip(&c) {
            *v *= m;
        }
        self.push(out, Op::MulConst(x, c), &[x])
    }

    /// Zeroes masked time steps of a `[B,T,C]` tensor given a `[B*T]` mask.
    pub fn mask_time(&mut self, x: Var, mask: &[f64]) -> Var {
        let c = self.value(x).last_dim();
        let expanded = mask.iter().flat_map(|&m| std::iter::repeat_n(m, c)).collect();
        self.mul_const(x, expanded)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshaped(shape).expect("reshape preserves size");
        self.push(out, Op::Reshape(x), &[x])
    }

    /// `[B,T1,C] ++ [B,T2,C] -> [B,T1+T2,C]`
    pub fn concat_time(&mut self, a: Var, b: Var) -> Var {
        let (bs, t1, c) = dims3(self.value(a));
        let (bs2, t2, c2) = dims3(self.value(b));
        assert_eq!((bs, c), (bs2, c2));
        let mut out = Vec::with_capacity(bs * (t1 + t2) * c);
        for i in 0..bs {
            out.extend_from_slice(&self.value(a).data()[i * t1 * c..(i + 1) * t1 * c]);
            out.extend_from_slice(&self.value(b).data()[i * t2 * c..(i + 1) * t2 * c]);
        }
        self.push(Tensor::new(vec![bs, t1 + t2, c], out).unwrap(), Op::ConcatTime(a, b), &[a, b])
    }

    /// `[B,T,C1] ++ [B,T,C2] -> [B,T,C1+C2]`
    pub fn concat_feat(&mut self, a: Var, b: Var) -> Var {
        let (bs, t, c1) = dims3(self.value(a));
        let (bs2, t2, c2) = dims3(self.value(b));
        assert_eq!((bs, t), (bs2, t2));
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(bs * t * (c1 + c2));
        for r in 0..bs * t {
            out.extend_from_slice(&ad[r * c1..(r + 1) * c1]);
            out.extend_from_slice(&bd[r * c2..(r + 1) * c2]);
        }
        self.push(Tensor::new(vec![bs, t, c1 + c2], out).unwrap(), Op::ConcatFeat(a, b), &[a, b])
    }

    /// One direction of a masked LSTM over `[B,T,F]`, gate order i, f, g, o.
    ///
    /// Steps at or beyond a sample's length leave its state unchanged and
    /// emit zeros. With `reverse` the sequence is read from the end.
    pub fn lstm(&mut self, x: Var, wx: Var, wh: Var, b: Var, lengths: &[usize], reverse: bool) -> Var {
        let (bs, t_len, f) = dims3(self.value(x));
        let h4 = self.value(wx).dim(1);
        let h = h4 / 4;
        assert_eq!(self.value(wx).shape(), &[f, h4]);
        assert_eq!(self.value(wh).shape(), &[h, h4]);
        assert_eq!(self.value(b).shape(), &[h4]);
        assert_eq!(lengths.len(), bs);

        let mut xw = vec![0.0; bs * t_len * h4];
        gemm(self.value(x).data(), self.value(wx).data(), &mut xw, bs * t_len, f, h4);
        let bias = self.value(b).data();
        for row in xw.chunks_mut(h4) {
            for (v, bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        let t_max = lengths.iter().copied().max().unwrap_or(0).min(t_len);
        let steps: Vec<usize> = if reverse {
            (0..t_max).rev().collect()
        } else {
            (0..t_max).collect()
        };
        let whd = self.value(wh).data();
        let mut hs = vec![0.0; bs * h];
        let mut cs = vec![0.0; bs * h];
        let mut out = vec![0.0; bs * t_len * h];
        let mut cache = LstmCache {
            x,
            wx,
            wh,
            b,
            lengths: lengths.to_vec(),
            steps: steps.clone(),
            h_prev: Vec::with_capacity(steps.len()),
            c_prev: Vec::with_capacity(steps.len()),
            acts: Vec::with_capacity(steps.len()),
            tanh_c: Vec::with_capacity(steps.len()),
        };
        for &t in &steps {
            let mut gates = vec![0.0; bs * h4];
            for bi in 0..bs {
                let src = (bi * t_len + t) * h4;
                gates[bi * h4..(bi + 1) * h4].copy_from_slice(&xw[src..src + h4]);
            }
            gemm(&hs, whd, &mut gates, bs, h, h4);
            cache.h_prev.push(hs.clone());
            cache.c_prev.push(cs.clone());
            let mut tc = vec![0.0; bs * h];
            for bi in 0..bs {
                if t >= lengths[bi] {
                    continue;
                }
                let g = &mut gates[bi * h4..(bi + 1) * h4];
                for j in 0..h {
                    let i_g = sigmoid(g[j]);
                    let f_g = sigmoid(g[h + j]);
                    let g_g = g[2 * h + j].tanh();
                    let o_g = sigmoid(g[3 * h + j]);
                    g[j] = i_g;
                    g[h + j] = f_g;
                    g[2 * h + j] = g_g;
                    g[3 * h + j] = o_g;
                    let k = bi * h + j;
                    let c = f_g * cs[k] + i_g * g_g;
                    let tcv = c.tanh();
                    cs[k] = c;
                    tc[k] = tcv;
                    hs[k] = o_g * tcv;
                    out[(bi * t_len + t) * h + j] = o_g * tcv;
                }
            }
            cache.acts.push(gates);
            cache.tanh_c.push(tc);
        }
        let value = Tensor::new(vec![bs, t_len, h], out).unwrap();
        self.push(value, Op::Lstm(Box::new(cache)), &[x, wx, wh, b])
    }

    /// Same-padded 1-D convolution over time: `[B,T,Ci] * [K,Ci,Co] + [Co]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (bs, t_len, ci) = dims3(self.value(x));
        let (k, ci2, co) = dims3(self.value(w));
        assert_eq!(ci, ci2, "conv input channels differ");
        assert_eq!(k % 2, 1, "conv kernel width must be odd");
        let pad = (k - 1) / 2;
        let mut out = vec![0.0; bs * t_len * co];
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        for row in out.chunks_mut(co) {
            row.copy_from_slice(bd);
        }
        for bi in 0..bs {
            for kk in 0..k {
                let Some((t0, t1)) = conv_range(t_len, kk, pad) else { continue };
                let xs = (bi * t_len + t0 + kk - pad) * ci;
                let os = (bi * t_len + t0) * co;
                let rows = t1 - t0;
                gemm(
                    &xd[xs..xs + rows * ci],
                    &wd[kk * ci * co..(kk + 1) * ci * co],
                    &mut out[os..os + rows * co],
                    rows,
                    ci,
                    co,
                );
            }
        }
        self.push(Tensor::new(vec![bs, t_len, co], out).unwrap(), Op::Conv1d(x, w, b), &[x, w, b])
    }

    /// Batch normalization over the last axis; masked rows are excluded from
    /// the batch statistics. Returns the batch statistics in train mode.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mask: Option<&[f64]>,
        mode: BnMode<'_>,
    ) -> (Var, Option<BatchStats>) {
        let xt = self.value(x);
        let c = xt.last_dim();
        let n_rows = xt.len() / c;
        if let Some(m) = mask {
            assert_eq!(m.len(), n_rows);
        }
        let valid = |r: usize| mask.is_none_or(|m| m[r] != 0.0);
        let xd = xt.data();
        let (mean, var, eps, train) = match mode {
            BnMode::Train { eps } => {
                let mut mean = vec![0.0; c];
                let mut n = 0.0;
                for r in (0..n_rows).filter(|&r| valid(r)) {
                    n += 1.0;
                    for (m, v) in mean.iter_mut().zip(&xd[r * c..(r + 1) * c]) {
                        *m += v;
                    }
                }
                let n_div = if n > 0.0 { n } else { 1.0 };
                mean.iter_mut().for_each(|m| *m /= n_div);
                let mut var = vec![0.0; c];
                for r in (0..n_rows).filter(|&r| valid(r)) {
                    for j in 0..c {
                        let d = xd[r * c + j] - mean[j];
                        var[j] += d * d;
                    }
                }
                var.iter_mut().for_each(|v| *v /= n_div);
                (mean, var, eps, true)
            }
            BnMode::Eval { mean, var, eps } => (mean.to_vec(), var.to_vec(), eps, false),
        };
        let std: Vec<f64> = var.iter().map(|v| (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        for r in 0..n_rows {
            for j in 0..c {
                xhat[r * c + j] = (xd[r * c + j] - mean[j]) / std[j];
            }
        }
        let (g, bta) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for row in out.chunks_mut(c) {
            for j in 0..c {
                row[j] = g[j] * row[j] + bta[j];
            }
        }
        let n_valid = (0..n_rows).filter(|&r| valid(r)).count() as f64;
        let stats = train.then(|| {
            let corr = if n_valid > 1.0 { n_valid / (n_valid - 1.0) } else { 1.0 };
            BatchStats {
                mean: mean.clone(),
                var: var.iter().map(|v| v * corr).collect(),
            }
        });
        let shape = self.value(x).shape().to_vec();
        let cache = BnCache {
            x,
            gamma,
            beta,
            xhat,
            std,
            mask: mask.map(<[f64]>::to_vec),
            n_valid,
            train,
        };
        let v = self.push(Tensor::new(shape, out).unwrap(), Op::BatchNorm(Box::new(cache)), &[x, gamma, beta]);
        (v, stats)
    }

    /// Max-pool over time with window 2 and stride 2 (`ceil(T/2)` outputs).
    ///
    /// Masked steps never win; a window without valid steps emits 0. Returns
    /// the pooled `[B*T']` mask.
    pub fn max_pool(&mut self, x: Var, mask: Option<&[f64]>) -> (Var, Vec<f64>) {
        let (bs, t_len, c) = dims3(self.value(x));
        let t_out = t_len.div_ceil(2);
        let xd = self.value(x).data();
        let valid = |bi: usize, t: usize| t < t_len && mask.is_none_or(|m| m[bi * t_len + t] != 0.0);
        let mut out = vec![0.0; bs * t_out * c];
        let mut arg = vec![usize::MAX; bs * t_out * c];
        let mut out_mask = vec![0.0; bs * t_out];
        for bi in 0..bs {
            for to in 0..t_out {
                let cands: Vec<usize> = [2 * to, 2 * to + 1].into_iter().filter(|&t| valid(bi, t)).collect();
                if cands.is_empty() {
                    continue;
                }
                out_mask[bi * t_out + to] = 1.0;
                for j in 0..c {
                    let mut best = (bi * t_len + cands[0]) * c + j;
                    for &t in &cands[1..] {
                        let idx = (bi * t_len + t) * c + j;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                    out[(bi * t_out + to) * c + j] = xd[best];
                    arg[(bi * t_out + to) * c + j] = best;
                }
            }
        }
        let v = self.push(Tensor::new(vec![bs, t_out, c], out).unwrap(), Op::MaxPool(x, arg), &[x]);
        (v, out_mask)
    }

    /// Mean softmax cross-entropy of `[B,K]` logits.
    pub fn softmax_ce(&mut self, logits: Var, labels: &[usize]) -> Var {
        let lt = self.value(logits);
        let (bs, k) = (lt.dim(0), lt.dim(1));
        assert_eq!(labels.len(), bs);
        let probs = softmax_rows(lt.data(), k);
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = &lt.data()[i * k..(i + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let value = Tensor::scalar(loss / bs as f64);
        self.push(value, Op::SoftmaxCe(logits, probs, labels.to_vec()), &[logits])
    }

    /// Mean band loss `min(0, s - lo)^2 + max(0, s - hi)^2` of `[B,1]` scores.
    pub fn scoring_loss(&mut self, scores: Var, bands: &[(f64, f64)]) -> Var {
        let st = self.value(scores);
        assert_eq!(st.len(), bands.len());
        let loss: f64 = st
            .data()
            .iter()
            .zip(bands)
            .map(|(&s, &(lo, hi))| (s - lo).min(0.0).powi(2) + (s - hi).max(0.0).powi(2))
            .sum();
        let value = Tensor::scalar(loss / bands.len() as f64);
        self.push(value, Op::ScoringLoss(scores, bands.to_vec()), &[scores])
    }

    /// `sum(w * x)` as a scalar.
    pub fn weighted_sum(&mut self, x: Var, w: Vec<f64>) -> Var {
        assert_eq!(self.value(x).len(), w.len());
        let s = self.value(x).data().iter().zip(&w).map(|(a, b)| a * b).sum();
        self.push(Tensor::scalar(s), Op::WeightedSum(x, w), &[x])
    }

    /// Accumulates gradients of the scalar `loss` into every trainable leaf.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::filled(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else { continue };
            let contribs = self.input_grads(i, &g);
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].grad = Some(g);
            }
            for (v, t) in contribs {
                let node = &mut self.nodes[v.0];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&t),
                    None => node.grad = Some(t),
                }
            }
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.value(v).shape().to_vec(), data).unwrap()
    }

    fn input_grads(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let gd = g.data();
        let out_val = &self.nodes[i].value;
        let mut res = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (at, bt) = (self.value(*a), self.value(*b));
                let (m, k, n) = (at.dim(0), at.dim(1), bt.dim(1));
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_bt(gd, bt.data(), &mut da, m, n, k);
                    res.push((*a, self.like(*a, da)));
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_at(at.data(), gd, &mut db, m, k, n);
                    res.push((*b, self.like(*b, db)));
                }
            }
            Op::AddBias(x, b) => {
                if self.needs(*x) {
                    res.push((*x, g.clone()));
                }
                if self.needs(*b) {
                    let n = self.value(*b).len();
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    res.push((*b, self.like(*b, db)));
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(*v) {
                        res.push((*v, g.clone()));
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if self.needs(*v) {
                        let d = gd.iter().zip(self.value(*other).data()).map(|(x, y)| x * y).collect();
                        res.push((*v, self.like(*v, d)));
                    }
                }
            }
            Op::Sigmoid(x) => {
                let d = gd.iter().zip(out_val.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                res.push((*x, self.like(*x, d)));
            }
            Op::Tanh(x) => {
                let d = gd.iter().zip(out_val.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                res.push((*x, self.like(*x, d)));
            }
            Op::Relu(x) => {
                let d = gd
                    .iter()
                    .zip(out_val.data())
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect();
                res.push((*x, self.like(*x, d)));
            }
            Op::MulConst(x, c) => {
                let d = gd.iter().zip(c).map(|(g, m)| g * m).collect();
                res.push((*x, self.like(*x, d)));
            }
            Op::Reshape(x) => res.push((*x, self.like(*x, gd.to_vec()))),
            Op::ConcatTime(a, b) => {
                let (bs, t1, c) = dims3(self.value(*a));
                let t2 = self.value(*b).dim(1);
                let mut da = Vec::with_capacity(bs * t1 * c);
                let mut db = Vec::with_capacity(bs * t2 * c);
                for row in gd.chunks((t1 + t2) * c) {
                    da.extend_from_slice(&row[..t1 * c]);
                    db.extend_from_slice(&row[t1 * c..]);
                }
                if self.needs(*a) {
                    res.push((*a, self.like(*a, da)));
                }
                if self.needs(*b) {
                    res.push((*b, self.like(*b, db)));
                }
            }
            Op::ConcatFeat(a, b) => {
                let c1 = self.value(*a).last_dim();
                let c2 = self.value(*b).last_dim();
                let mut da = Vec::with_capacity(gd.len() / (c1 + c2) * c1);
                let mut db = Vec::with_capacity(gd.len() / (c1 + c2) * c2);
                for row in gd.chunks(c1 + c2) {
                    da.extend_from_slice(&row[..c1]);
                    db.extend_from_slice(&row[c1..]);
                }
                if self.needs(*a) {
                    res.push((*a, self.like(*a, da)));
                }
                if self.needs(*b) {
                    res.push((*b, self.like(*b, db)));
                }
            }
            Op::Lstm(cache) => res.extend(self.lstm_backward(cache, gd)),
            Op::Conv1d(x, w, b) => {
                let (bs, t_len, ci) = dims3(self.value(*x));
                let (k, _, co) = dims3(self.value(*w));
                let pad = (k - 1) / 2;
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                let mut dx = vec![0.0; xd.len()];
                let mut dw = vec![0.0; wd.len()];
                for bi in 0..bs {
                    for kk in 0..k {
                        let Some((t0, t1)) = conv_range(t_len, kk, pad) else { continue };
                        let xs = (bi * t_len + t0 + kk - pad) * ci;
                        let os = (bi * t_len + t0) * co;
                        let rows = t1 - t0;
                        let gblk = &gd[os..os + rows * co];
                        let wk = &wd[kk * ci * co..(kk + 1) * ci * co];
                        if self.needs(*x) {
                            gemm_bt(gblk, wk, &mut dx[xs..xs + rows * ci], rows, co, ci);
                        }
                        gemm_at(&xd[xs..xs + rows * ci], gblk, &mut dw[kk * ci * co..(kk + 1) * ci * co], rows, ci, co);
                    }
                }
                let mut db = vec![0.0; co];
                for row in gd.chunks(co) {
                    for (d, v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                if self.needs(*x) {
                    res.push((*x, self.like(*x, dx)));
                }
                if self.needs(*w) {
                    res.push((*w, self.like(*w, dw)));
                }
                if self.needs(*b) {
                    res.push((*b, self.like(*b, db)));
                }
            }
            Op::BatchNorm(cache) => {
                let c = cache.std.len();
                let gamma = self.value(cache.gamma).data();
                let mut sum_dy = vec![0.0; c];
                let mut sum_dy_xhat = vec![0.0; c];
                for (grow, xrow) in gd.chunks(c).zip(cache.xhat.chunks(c)) {
                    for j in 0..c {
                        sum_dy[j] += grow[j];
                        sum_dy_xhat[j] += grow[j] * xrow[j];
                    }
                }
                if self.needs(cache.x) {
                    let mut dx = vec![0.0; gd.len()];
                    for (r, (grow, xrow)) in gd.chunks(c).zip(cache.xhat.chunks(c)).enumerate() {
                        let valid = cache.mask.as_ref().is_none_or(|m| m[r] != 0.0);
                        for j in 0..c {
                            let scale = gamma[j] / cache.std[j];
                            dx[r * c + j] = if cache.train && valid && cache.n_valid > 0.0 {
                                scale * (grow[j] - sum_dy[j] / cache.n_valid - xrow[j] * sum_dy_xhat[j] / cache.n_valid)
                            } else {
                                scale * grow[j]
                            };
                        }
                    }
                    res.push((cache.x, self.like(cache.x, dx)));
                }
                if self.needs(cache.gamma) {
                    res.push((cache.gamma, self.like(cache.gamma, sum_dy_xhat)));
                }
                if self.needs(cache.beta) {
                    res.push((cache.beta, self.like(cache.beta, sum_dy)));
                }
            }
            Op::MaxPool(x, arg) => {
                let mut dx = vec![0.0; self.value(*x).len()];
                for (g, &a) in gd.iter().zip(arg) {
                    if a != usize::MAX {
                        dx[a] += g;
                    }
                }
                res.push((*x, self.like(*x, dx)));
            }
            Op::SoftmaxCe(logits, probs, labels) => {
                let k = self.value(*logits).dim(1);
                let scale = gd[0] / labels.len() as f64;
                let mut d = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    d[i * k + y] -= 1.0;
                }
                d.iter_mut().for_each(|v| *v *= scale);
                res.push((*logits, self.like(*logits, d)));
            }
            Op::ScoringLoss(scores, bands) => {
                let scale = gd[0] / bands.len() as f64;
                let d = self
                    .value(*scores)
                    .data()
                    .iter()
                    .zip(bands)
                    .map(|(&s, &(lo, hi))| scale * (2.0 * (s - lo).min(0.0) + 2.0 * (s - hi).max(0.0)))
                    .collect();
                res.push((*scores, self.like(*scores, d)));
            }
            Op::WeightedSum(x, w) => {
                let d = w.iter().map(|v| v * gd[0]).collect();
                res.push((*x, self.like(*x, d)));
            }
        }
        res
    }

    fn lstm_backward(&self, cache: &LstmCache, gd: &[f64]) -> Vec<(Var, Tensor)> {
        let (bs, t_len, f) = dims3(self.value(cache.x));
        let h4 = self.value(cache.wx).dim(1);
        let h = h4 / 4;
        let whd = self.value(cache.wh).data();
        let mut dh = vec![0.0; bs * h];
        let mut dc = vec![0.0; bs * h];
        let mut dxw = vec![0.0; bs * t_len * h4];
        let mut dwh = vec![0.0; h * h4];
        for (s, &t) in cache.steps.iter().enumerate().rev() {
            let acts = &cache.acts[s];
            let c_prev = &cache.c_prev[s];
            let tc = &cache.tanh_c[s];
            let mut dg = vec![0.0; bs * h4];
            for bi in 0..bs {
                if t >= cache.lengths[bi] {
                    continue;
                }
                let a = &acts[bi * h4..(bi + 1) * h4];
                for j in 0..h {
                    let k = bi * h + j;
                    let (i_g, f_g, g_g, o_g) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                    let dht = dh[k] + gd[(bi * t_len + t) * h + j];
                    let d_o = dht * tc[k];
                    let dct = dc[k] + dht * o_g * (1.0 - tc[k] * tc[k]);
                    dc[k] = dct * f_g;
                    let row = &mut dg[bi * h4..(bi + 1) * h4];
                    row[j] = dct * g_g * i_g * (1.0 - i_g);
                    row[h + j] = dct * c_prev[k] * f_g * (1.0 - f_g);
                    row[2 * h + j] = dct * i_g * (1.0 - g_g * g_g);
                    row[3 * h + j] = d_o * o_g * (1.0 - o_g);
                }
                let dst = (bi * t_len + t) * h4;
                dxw[dst..dst + h4].copy_from_slice(&dg[bi * h4..(bi + 1) * h4]);
            }
            gemm_at(&cache.h_prev[s], &dg, &mut dwh, bs, h, h4);
            let mut dhp = vec![0.0; bs * h];
            gemm_bt(&dg, whd, &mut dhp, bs, h4, h);
            for bi in 0..bs {
                if t < cache.lengths[bi] {
                    dh[bi * h..(bi + 1) * h].copy_from_slice(&dhp[bi * h..(bi + 1) * h]);
                }
            }
        }
        let mut res = Vec::new();
        if self.needs(cache.x) {
            let mut dx = vec![0.0; bs * t_len * f];
            gemm_bt(&dxw, self.value(cache.wx).data(), &mut dx, bs * t_len, h4, f);
            res.push((cache.x, self.like(cache.x, dx)));
        }
        if self.needs(cache.wx) {
            let mut dwx = vec![0.0; f * h4];
            gemm_at(self.value(cache.x).data(), &dxw, &mut dwx, bs * t_len, f, h4);
            res.push((cache.wx, self.like(cache.wx, dwx)));
        }
        if self.needs(cache.wh) {
            res.push((cache.wh, self.like(cache.wh, dwh)));
        }
        if self.needs(cache.b) {
            let mut db = vec![0.0; h4];
            for row in dxw.chunks(h4) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += v;
                }
            }
            res.push((cache.b, self.like(cache.b, db)));
        }
        res
    }
}

/// Output rows `[t0, t1)` that read input row `t + kk - pad` inside `[0, T)`.
fn conv_range(t_len: usize, kk: usize, pad: usize) -> Option<(usize, usize)> {
    let off = kk as isize - pad as isize;
    let t0 = (-off).max(0) as usize;
    let t1 = (t_len as isize - off).min(t_len as isize).max(0) as usize;
    (t0 < t1).then_some((t0, t1))
}

/// Row-wise softmax of a `[rows, k]` buffer.
pub fn softmax_rows(data: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    out
}
