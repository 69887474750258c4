use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::QeLabel;

/// Target interval `(lower, upper)` of the scoring head for each label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringBands {
    pub bad: (f64, f64),
    pub loose: (f64, f64),
    pub good: (f64, f64),
}

impl Default for ScoringBands {
    fn default() -> Self {
        ScoringBands {
            bad: (0.0, 0.35),
            loose: (0.35, 0.65),
            good: (0.65, 1.0),
        }
    }
}

impl ScoringBands {
    pub fn band(&self, label: QeLabel) -> (f64, f64) {
        match label {
            QeLabel::Bad => self.bad,
            QeLabel::Loose => self.loose,
            QeLabel::Good => self.good,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.bad.0 == 0.0
            && self.bad.1 == self.loose.0
            && self.loose.1 == self.good.0
            && self.good.1 == 1.0
            && [self.bad, self.loose, self.good].iter().all(|(lo, hi)| lo < hi);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidThreshold(format!("scoring bands {self:?} must partition [0, 1]")))
        }
    }

    /// Bad below the Loose lower bound, Good from the Good lower bound up.
    pub fn predict(&self, score: f64) -> QeLabel {
        if score < self.loose.0 {
            QeLabel::Bad
        } else if score < self.good.0 {
            QeLabel::Loose
        } else {
            QeLabel::Good
        }
    }

    /// `min(0, s - lo)^2 + max(0, s - hi)^2` for one sample.
    pub fn loss(&self, score: f64, label: QeLabel) -> f64 {
        let (lo, hi) = self.band(label);
        (score - lo).min(0.0).powi(2) + (score - hi).max(0.0).powi(2)
    }
}

pub fn predict_scoring(score: f64, bands: &ScoringBands) -> QeLabel {
    bands.predict(score)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_and_prediction_examples() {
        let b = ScoringBands::default();
        assert_eq!(b.loss(0.5, QeLabel::Loose), 0.0);
        assert!((b.loss(0.2, QeLabel::Good) - 0.2025).abs() < 1e-12);
        assert!((b.loss(0.9, QeLabel::Bad) - 0.3025).abs() < 1e-12);
        assert_eq!(b.predict(0.0), QeLabel::Bad);
        assert_eq!(b.predict(0.5), QeLabel::Loose);
        assert_eq!(b.predict(0.65), QeLabel::Good);
        assert_eq!(b.predict(0.35), QeLabel::Loose);
        b.validate().unwrap();
    }

    #[test]
    fn loss_is_zero_exactly_inside_band() {
        let b = ScoringBands::default();
        for i in 0..=100 {
            let s = i as f64 / 100.0;
            for l in QeLabel::ALL {
                let (lo, hi) = b.band(l);
                assert_eq!(b.loss(s, l) == 0.0, lo <= s && s <= hi, "{s} {l}");
            }
        }
    }
}
