use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subtitle::Provenance;

/// Sampling weights (percent) for the six data sources of the final dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceWeights {
    pub statistical: f64,
    pub good_pairs: f64,
    pub added_captions: f64,
    pub scrambled_text: f64,
    pub drifted_aligned: f64,
    pub randomly_aligned: f64,
}

/// Source mix per target language, in column order statistical, good pairs,
/// added captions, scrambled, drifted, random.
const SOURCE_MIX: [(&str, [f64; 6]); 5] = [
    ("fr", [18.83, 33.76, 6.58, 6.58, 17.13, 17.13]),
    ("de", [17.26, 32.14, 7.07, 7.07, 18.23, 18.23]),
    ("it", [16.44, 32.95, 6.57, 6.57, 18.74, 18.74]),
    ("pt", [16.47, 33.09, 6.59, 6.59, 18.63, 18.63]),
    ("es", [17.82, 29.15, 7.01, 7.01, 19.50, 19.50]),
];

impl SourceWeights {
    /// Column order of the distribution report.
    pub const SOURCES: [Provenance; 6] = [
        Provenance::StatisticalClassification,
        Provenance::GoodPairsFile,
        Provenance::AddedCaptions,
        Provenance::ScrambledText,
        Provenance::DriftedAligned,
        Provenance::RandomlyAligned,
    ];

    pub fn from_array(w: [f64; 6]) -> Self {
        SourceWeights {
            statistical: w[0],
            good_pairs: w[1],
            added_captions: w[2],
            scrambled_text: w[3],
            drifted_aligned: w[4],
            randomly_aligned: w[5],
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [
            self.statistical,
            self.good_pairs,
            self.added_captions,
            self.scrambled_text,
            self.drifted_aligned,
            self.randomly_aligned,
        ]
    }

    pub fn for_language(language: &str) -> Option<Self> {
        SOURCE_MIX
            .iter()
            .find(|(code, _)| *code == language)
            .map(|(_, w)| Self::from_array(*w))
    }

    /// Only one source enabled.
    pub fn only(source: Provenance) -> Self {
        let mut w = [0.0; 6];
        if let Some(i) = Self::SOURCES.iter().position(|&p| p == source) {
            w[i] = 1.0;
        }
        Self::from_array(w)
    }

    pub fn weight(&self, source: Provenance) -> f64 {
        Self::SOURCES
            .iter()
            .position(|&p| p == source)
            .map_or(0.0, |i| self.to_array()[i])
    }

    /// Weights rescaled to fractions summing to 1.
    pub fn fractions(&self) -> Result<[f64; 6]> {
        self.validate()?;
        let w = self.to_array();
        let total: f64 = w.iter().sum();
        Ok(w.map(|x| x / total))
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.to_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Config("source weights must be non-negative".into()));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("at least one source must have positive weight".into()));
        }
        Ok(())
    }
}

impl Default for SourceWeights {
    fn default() -> Self {
        Self::for_language("de").expect("German mix present")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn language_mixes_sum_to_100() {
        for (code, _) in SOURCE_MIX {
            let w = SourceWeights::for_language(code).unwrap();
            assert!((w.to_array().iter().sum::<f64>() - 100.0).abs() < 0.02, "{code}");
        }
        let de = SourceWeights::for_language("de").unwrap();
        assert_eq!(de.to_array(), [17.26, 32.14, 7.07, 7.07, 18.23, 18.23]);
    }

    #[test]
    fn single_source() {
        let w = SourceWeights::only(Provenance::RandomlyAligned);
        assert_eq!(w.fractions().unwrap(), [0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(SourceWeights::from_array([0.0; 6]).validate().is_err());
    }
}
