use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::labeler::{LabeledPair, QeLabel};
use crate::subtitle::{TokenSequence, MAX_TOKENS};

use super::tensor::Tensor;

/// Tokenized, labeled training or evaluation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub src: TokenSequence,
    pub tgt: TokenSequence,
    pub label: QeLabel,
}

impl Example {
    pub fn new(src: TokenSequence, tgt: TokenSequence, label: QeLabel) -> Self {
        Example { src, tgt, label }
    }

    pub fn from_labeled(p: &LabeledPair) -> Self {
        Example {
            src: p.pair.source_tokens(),
            tgt: p.pair.target_tokens(),
            label: p.label,
        }
    }
}

/// Zero-padded embedded inputs of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[B, 25, E]`
    pub src: Tensor,
    /// `[B, 25, E]`
    pub tgt: Tensor,
    pub src_len: Vec<usize>,
    pub tgt_len: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.src_len.len()
    }

    /// `[B*25]` validity mask of one side.
    pub fn mask(lengths: &[usize]) -> Vec<f64> {
        lengths
            .iter()
            .flat_map(|&l| (0..MAX_TOKENS).map(move |t| if t < l { 1.0 } else { 0.0 }))
            .collect()
    }
}

/// Looks up frozen source and target word vectors; OOV tokens embed as zeros.
#[derive(Debug, Clone, Copy)]
pub struct Embedder<'a> {
    src: &'a EmbeddingTable,
    tgt: &'a EmbeddingTable,
}

impl<'a> Embedder<'a> {
    pub fn new(src: &'a EmbeddingTable, tgt: &'a EmbeddingTable) -> Result<Self> {
        if src.dim() != tgt.dim() {
            return Err(Error::DimMismatch {
                expected: src.dim(),
                found: tgt.dim(),
            });
        }
        Ok(Embedder { src, tgt })
    }

    pub fn dim(&self) -> usize {
        self.src.dim()
    }

    fn fill(table: &EmbeddingTable, tokens: &TokenSequence, out: &mut [f64]) -> usize {
        let dim = table.dim();
        let len = tokens.len().min(MAX_TOKENS);
        for (t, tok) in tokens.tokens().iter().take(len).enumerate() {
            if let Some(v) = table.get(tok) {
                for (o, x) in out[t * dim..(t + 1) * dim].iter_mut().zip(v) {
                    *o = f64::from(*x);
                }
            }
        }
        len
    }

    pub fn batch<'e, I>(&self, pairs: I) -> Batch
    where
        I: IntoIterator<Item = (&'e TokenSequence, &'e TokenSequence)>,
    {
        let dim = self.dim();
        let step = MAX_TOKENS * dim;
        let (mut src, mut tgt) = (Vec::new(), Vec::new());
        let (mut src_len, mut tgt_len) = (Vec::new(), Vec::new());
        for (s, t) in pairs {
            src.resize(src.len() + step, 0.0);
            tgt.resize(tgt.len() + step, 0.0);
            let n = src.len();
            src_len.push(Self::fill(self.src, s, &mut src[n - step..]));
            tgt_len.push(Self::fill(self.tgt, t, &mut tgt[n - step..]));
        }
        let b = src_len.len();
        Batch {
            src: Tensor::new(vec![b, MAX_TOKENS, dim], src).unwrap(),
            tgt: Tensor::new(vec![b, MAX_TOKENS, dim], tgt).unwrap(),
            src_len,
            tgt_len,
        }
    }

    pub fn batch_examples(&self, examples: &[&Example]) -> Batch {
        self.batch(examples.iter().map(|e| (&e.src, &e.tgt)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oov_and_padding_are_zero() {
        let en = EmbeddingTable::from_entries("en", 2, [("cat".to_string(), vec![1.0, 2.0])]).unwrap();
        let de = EmbeddingTable::from_entries("de", 2, [("katze".to_string(), vec![3.0, 4.0])]).unwrap();
        let emb = Embedder::new(&en, &de).unwrap();
        let s = TokenSequence::from_tokens(["cat", "zzz"]);
        let t = TokenSequence::from_tokens(["katze"]);
        let b = emb.batch([(&s, &t)]);
        assert_eq!(b.src_len, vec![2]);
        assert_eq!(b.tgt_len, vec![1]);
        assert_eq!(&b.src.data()[..4], &[1.0, 2.0, 0.0, 0.0]);
        assert!(b.src.data()[4..].iter().all(|v| *v == 0.0));
        assert_eq!(&b.tgt.data()[..2], &[3.0, 4.0]);
        assert_eq!(Batch::mask(&[2]).iter().sum::<f64>(), 2.0);
    }
}
