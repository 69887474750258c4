//! Two-parameter bag-of-words translation scorer.
//!
//! Each source word is matched with its most similar target word (and vice
//! versa) after thresholding the cosine matrix at `theta1`; the pair score is
//! the smaller of the two directional averages.

use serde::{Deserialize, Serialize};

use crate::embeddings::SimilarityMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowParams {
    /// Similarity threshold applied element-wise.
    pub theta1: f64,
    /// Binary decision threshold on the pair score.
    pub theta2: f64,
    pub language: String,
}

/// Tuned (theta1, theta2) per target language.
const TUNED: [(&str, f64, f64); 5] = [
    ("fr", 0.6, 0.30),
    ("de", 0.6, 0.35),
    ("it", 0.5, 0.40),
    ("pt", 0.6, 0.30),
    ("es", 0.6, 0.30),
];

impl BowParams {
    pub fn new(theta1: f64, theta2: f64, language: impl Into<String>) -> Result<Self> {
        let params = BowParams {
            theta1,
            theta2,
            language: language.into(),
        };
        params.validate()?;
        Ok(params)
    }

    /// Tuned thresholds for French, German, Italian, Portuguese or Spanish targets.
    pub fn tuned(language: &str) -> Option<Self> {
        TUNED
            .iter()
            .find(|(code, ..)| *code == language)
            .map(|&(code, theta1, theta2)| BowParams {
                theta1,
                theta2,
                language: code.to_string(),
            })
    }

    /// Tuned thresholds when known, otherwise (0.6, 0.30).
    pub fn for_language(language: &str) -> Self {
        Self::tuned(language).unwrap_or_else(|| BowParams {
            theta1: 0.6,
            theta2: 0.30,
            language: language.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("theta1", self.theta1), ("theta2", self.theta2)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidThreshold(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn tau(x: f64, theta1: f64) -> f64 {
    let x = x.max(0.0);
    if x >= theta1 {
        x
    } else {
        0.0
    }
}

/// Directional scores `(s_src, s_tgt)`.
pub fn bow_sentence_scores(s: &SimilarityMatrix, theta1: f64) -> Result<(f64, f64)> {
    if s.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let (n, m) = (s.rows(), s.cols());
    let mut col_max = vec![0.0f64; m];
    let mut src_sum = 0.0;
    for i in 0..n {
        let mut row_max = 0.0f64;
        for (j, &v) in s.row(i).iter().enumerate() {
            let t = tau(v, theta1);
            row_max = row_max.max(t);
            col_max[j] = col_max[j].max(t);
        }
        src_sum += row_max;
    }
    Ok((src_sum / n as f64, col_max.iter().sum::<f64>() / m as f64))
}

pub fn bow_score(s: &SimilarityMatrix, params: &BowParams) -> Result<f64> {
    let (src, tgt) = bow_sentence_scores(s, params.theta1)?;
    Ok(src.min(tgt))
}

pub fn bow_binary_label(s_bow: f64, params: &BowParams) -> bool {
    s_bow > params.theta2
}
