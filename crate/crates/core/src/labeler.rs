//! Weak labels from fused scorer outputs, and assembly of the training set.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subtitle::{sanitize_field, BilingualPair, Provenance};
use crate::synth::SourceWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QeLabel {
    Bad = 0,
    Loose = 1,
    Good = 2,
}

impl QeLabel {
    pub const ALL: [QeLabel; 3] = [QeLabel::Bad, QeLabel::Loose, QeLabel::Good];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<QeLabel> {
        QeLabel::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QeLabel::Bad => "bad",
            QeLabel::Loose => "loose",
            QeLabel::Good => "good",
        }
    }

    /// Good and Loose count as acceptable translations.
    pub fn is_positive(self) -> bool {
        self != QeLabel::Bad
    }
}

impl fmt::Display for QeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QeLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        QeLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionThresholds {
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub delta4: f64,
    /// Also require `s_bow >= delta2` for Loose.
    pub strict_loose: bool,
}

impl Default for FusionThresholds {
    fn default() -> Self {
        FusionThresholds {
            delta1: 0.25,
            delta2: 0.4,
            delta3: 0.7,
            delta4: 0.8,
            strict_loose: false,
        }
    }
}

impl FusionThresholds {
    pub fn new(delta1: f64, delta2: f64, delta3: f64, delta4: f64) -> Result<Self> {
        let t = FusionThresholds {
            delta1,
            delta2,
            delta3,
            delta4,
            strict_loose: false,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let d = [self.delta1, self.delta2, self.delta3, self.delta4];
        if d.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidThreshold(format!("fusion thresholds {d:?} must lie in [0, 1]")));
        }
        if !(d[0] < d[1] && d[1] <= d[2] && d[2] < d[3]) {
            return Err(Error::InvalidThreshold(format!(
                "fusion thresholds {d:?} must satisfy d1 < d2 <= d3 < d4"
            )));
        }
        Ok(())
    }
}

/// Fuses the bag-of-words and forest scores; `None` means discard.
pub fn fuse_labels(s_bow: f64, s_rfc: f64, t: &FusionThresholds) -> Result<Option<QeLabel>> {
    for s in [s_bow, s_rfc] {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::OutOfRangeScore(s));
        }
    }
    if s_bow <= t.delta1 && s_rfc <= t.delta1 {
        return Ok(Some(QeLabel::Bad));
    }
    if t.delta2 <= s_rfc && s_rfc <= t.delta3 && (!t.strict_loose || s_bow >= t.delta2) {
        return Ok(Some(QeLabel::Loose));
    }
    if s_bow >= t.delta4 && s_rfc >= t.delta4 {
        return Ok(Some(QeLabel::Good));
    }
    Ok(None)
}

/// Fixed label of a generated or trusted source; `None` for scored sources.
pub fn label_for_provenance(p: Provenance) -> Option<QeLabel> {
    match p {
        Provenance::GoodPairsFile => Some(QeLabel::Good),
        Provenance::AddedCaptions | Provenance::ScrambledText => Some(QeLabel::Loose),
        Provenance::DriftedAligned | Provenance::RandomlyAligned => Some(QeLabel::Bad),
        Provenance::Aligned | Provenance::StatisticalClassification => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub pair: BilingualPair,
    pub label: QeLabel,
    pub source_tag: Provenance,
    pub s_bow: Option<f64>,
    pub s_rfc: Option<f64>,
}

impl LabeledPair {
    /// Labels a generated or trusted pair by its provenance.
    pub fn from_provenance(pair: BilingualPair) -> Result<Self> {
        let label = label_for_provenance(pair.provenance).ok_or_else(|| {
            Error::InvalidPair(format!("provenance {} carries no fixed label", pair.provenance))
        })?;
        Ok(LabeledPair {
            source_tag: pair.provenance,
            pair,
            label,
            s_bow: None,
            s_rfc: None,
        })
    }

    /// Checks the label against the provenance rule.
    pub fn is_consistent(&self) -> bool {
        self.source_tag == self.pair.provenance
            && label_for_provenance(self.source_tag).is_none_or(|l| l == self.label)
    }
}

/// An aligned pair with both scorer outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub pair: BilingualPair,
    pub s_bow: f64,
    pub s_rfc: f64,
}

/// Fuses every scored pair; returns the labeled pairs and the discards.
pub fn label_scored(scored: Vec<ScoredPair>, t: &FusionThresholds) -> Result<(Vec<LabeledPair>, Vec<ScoredPair>)> {
    let mut labeled = Vec::new();
    let mut discarded = Vec::new();
    for sp in scored {
        match fuse_labels(sp.s_bow, sp.s_rfc, t)? {
            Some(label) => {
                let mut pair = sp.pair;
                pair.provenance = Provenance::StatisticalClassification;
                labeled.push(LabeledPair {
                    pair,
                    label,
                    source_tag: Provenance::StatisticalClassification,
                    s_bow: Some(sp.s_bow),
                    s_rfc: Some(sp.s_rfc),
                });
            }
            None => discarded.push(sp),
        }
    }
    Ok((labeled, discarded))
}

/// Candidate pools for the six sources, each already labeled.
#[derive(Debug, Clone, Default)]
pub struct SourcePools {
    pools: BTreeMap<Provenance, Vec<LabeledPair>>,
}

impl SourcePools {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, item: LabeledPair) {
        self.pools.entry(item.source_tag).or_default().push(item);
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = LabeledPair>) {
        for item in items {
            self.add(item);
        }
    }

    pub fn len(&self, source: Provenance) -> usize {
        self.pools.get(&source).map_or(0, Vec::len)
    }

    pub fn get(&self, source: Provenance) -> &[LabeledPair] {
        self.pools.get(&source).map_or(&[], Vec::as_slice)
    }
}

/// Per-source and per-label counts of an assembled dataset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DistributionReport {
    pub by_source: [usize; 6],
    pub by_label: [usize; 3],
}

fn percentages<const N: usize>(counts: &[usize; N]) -> [f64; N] {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return [0.0; N];
    }
    counts.map(|c| 100.0 * c as f64 / total as f64)
}

impl DistributionReport {
    pub fn from_pairs(pairs: &[LabeledPair]) -> Self {
        let mut r = DistributionReport::default();
        for p in pairs {
            if let Some(i) = SourceWeights::SOURCES.iter().position(|&s| s == p.source_tag) {
                r.by_source[i] += 1;
            }
            r.by_label[p.label.index()] += 1;
        }
        r
    }

    pub fn total(&self) -> usize {
        self.by_label.iter().sum()
    }

    /// Source percentages in table column order.
    pub fn source_percentages(&self) -> [f64; 6] {
        percentages(&self.by_source)
    }

    /// Label percentages in Good, Loose, Bad order.
    pub fn label_percentages(&self) -> [f64; 3] {
        let p = percentages(&self.by_label);
        [p[QeLabel::Good.index()], p[QeLabel::Loose.index()], p[QeLabel::Bad.index()]]
    }

    pub fn render(&self, language: &str) -> String {
        let mut out = String::new();
        let s = self.source_percentages();
        let _ = writeln!(
            out,
            "{:<10} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "language", "statistical", "good_pairs", "captions", "scrambled", "drifted", "random"
        );
        let _ = writeln!(
            out,
            "{:<10} {:>12.2} {:>12.2} {:>12.2} {:>12.2} {:>12.2} {:>12.2}",
            language, s[0], s[1], s[2], s[3], s[4], s[5]
        );
        let l = self.label_percentages();
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<10} {:>8} {:>8} {:>8} {:>8}", "language", "good", "loose", "bad", "total");
        let _ = writeln!(
            out,
            "{:<10} {:>8.2} {:>8.2} {:>8.2} {:>8}",
            language,
            l[0],
            l[1],
            l[2],
            self.total()
        );
        out
    }
}

/// Splits `total` into per-source quotas by largest remainder.
fn quotas(fractions: &[f64; 6], total: usize) -> [usize; 6] {
    let raw = fractions.map(|f| f * total as f64);
    let mut q = raw.map(|r| r.floor() as usize);
    let mut left = total - q.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for i in order {
        if left == 0 {
            break;
        }
        if fractions[i] > 0.0 {
            q[i] += 1;
            left -= 1;
        }
    }
    q
}

/// Mixes the pools according to `weights` and shuffles the result.
///
/// With `total = None` the largest dataset the pools can fill at the
/// requested mix is drawn. Sources with an empty pool are skipped with a
/// warning and the remaining weights renormalized.
pub fn build_dataset<R: Rng + ?Sized>(
    pools: &SourcePools,
    weights: &SourceWeights,
    total: Option<usize>,
    rng: &mut R,
) -> Result<(Vec<LabeledPair>, DistributionReport)> {
    weights.validate()?;
    let mut w = weights.to_array();
    for (i, &source) in SourceWeights::SOURCES.iter().enumerate() {
        if w[i] > 0.0 && pools.len(source) == 0 {
            log::warn!("source {source} has weight {} but no samples; skipping", w[i]);
            w[i] = 0.0;
        }
    }
    let sum: f64 = w.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Config("no enabled source has any samples".into()));
    }
    let fractions = w.map(|x| x / sum);
    let total = total.unwrap_or_else(|| {
        SourceWeights::SOURCES
            .iter()
            .zip(&fractions)
            .filter(|(_, &f)| f > 0.0)
            .map(|(&s, &f)| (pools.len(s) as f64 / f).floor() as usize)
            .min()
            .unwrap_or(0)
    });
    let q = quotas(&fractions, total);

    let mut out = Vec::with_capacity(total);
    for (i, &source) in SourceWeights::SOURCES.iter().enumerate() {
        let pool = pools.get(source);
        if q[i] > pool.len() {
            log::warn!("source {source}: quota {} exceeds pool of {}; using all", q[i], pool.len());
        }
        let mut idx: Vec<usize> = (0..pool.len()).collect();
        idx.shuffle(rng);
        idx.truncate(q[i]);
        idx.sort_unstable();
        out.extend(idx.into_iter().map(|j| pool[j].clone()));
    }
    out.shuffle(rng);
    let report = DistributionReport::from_pairs(&out);
    Ok((out, report))
}

pub const LABELED_TSV_HEADER: &str = "source_text\ttarget_text\tlabel\tprovenance\ts_bow\ts_rfc";

fn fmt_score(s: Option<f64>) -> String {
    s.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn parse_score(field: &str, line: usize) -> Result<Option<f64>> {
    if field == "NA" {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| Error::MalformedTsv {
        line,
        reason: format!("bad score {field:?}"),
    })
}

pub fn write_labeled_tsv<W: Write>(mut w: W, pairs: &[LabeledPair]) -> Result<()> {
    writeln!(w, "{LABELED_TSV_HEADER}")?;
    for p in pairs {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            sanitize_field(&p.pair.source_text),
            sanitize_field(&p.pair.target_text),
            p.label,
            p.source_tag,
            fmt_score(p.s_bow),
            fmt_score(p.s_rfc)
        )?;
    }
    Ok(())
}

pub fn read_labeled_tsv<R: BufRead>(r: R, source_lang: &str, target_lang: &str) -> Result<Vec<LabeledPair>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if (n == 0 && line == LABELED_TSV_HEADER) || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::MalformedTsv {
                line: lineno,
                reason: format!("expected 6 columns, found {}", f.len()),
            });
        }
        let wrap = |e: Error| Error::MalformedTsv {
            line: lineno,
            reason: e.to_string(),
        };
        let label: QeLabel = f[2].parse().map_err(wrap)?;
        let source_tag: Provenance = f[3].parse().map_err(wrap)?;
        let pair = BilingualPair::new(f[0], f[1], source_lang, target_lang, source_tag).map_err(wrap)?;
        out.push(LabeledPair {
            pair,
            label,
            source_tag,
            s_bow: parse_score(f[4], lineno)?,
            s_rfc: parse_score(f[5], lineno)?,
        });
    }
    Ok(out)
}

pub const DISCARD_TSV_HEADER: &str = "source_text\ttarget_text\ts_bow\ts_rfc";

/// Writes the discarded pairs with both scores.
pub fn write_discards_tsv<W: Write>(mut w: W, discards: &[ScoredPair]) -> Result<()> {
    writeln!(w, "{DISCARD_TSV_HEADER}")?;
    for d in discards {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            sanitize_field(&d.pair.source_text),
            sanitize_field(&d.pair.target_text),
            d.s_bow,
            d.s_rfc
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SeededRng;

    /// Region membership straight from the printed inequalities.
    fn region_oracle(b: f64, r: f64) -> Option<QeLabel> {
        let bad = b <= 0.25 && r <= 0.25;
        let loose = (0.4..=0.7).contains(&r);
        let good = b >= 0.8 && r >= 0.8;
        assert!(u8::from(bad) + u8::from(loose) + u8::from(good) <= 1, "overlap at ({b}, {r})");
        if bad {
            Some(QeLabel::Bad)
        } else if loose {
            Some(QeLabel::Loose)
        } else if good {
            Some(QeLabel::Good)
        } else {
            None
        }
    }

    #[test]
    fn grid_matches_region_oracle() {
        let t = FusionThresholds::default();
        for i in 0..=20 {
            for j in 0..=20 {
                let (b, r) = (i as f64 * 0.05, j as f64 * 0.05);
                assert_eq!(fuse_labels(b, r, &t).unwrap(), region_oracle(b, r), "({b}, {r})");
            }
        }
    }

    #[test]
    fn fusion_examples() {
        let t = FusionThresholds::default();
        assert_eq!(fuse_labels(0.1, 0.1, &t).unwrap(), Some(QeLabel::Bad));
        assert_eq!(fuse_labels(0.9, 0.9, &t).unwrap(), Some(QeLabel::Good));
        assert_eq!(fuse_labels(0.9, 0.5, &t).unwrap(), Some(QeLabel::Loose));
        assert_eq!(fuse_labels(0.9, 0.75, &t).unwrap(), None);
        assert!(matches!(fuse_labels(1.1, 0.5, &t), Err(Error::OutOfRangeScore(_))));
        let strict = FusionThresholds {
            strict_loose: true,
            ..t
        };
        assert_eq!(fuse_labels(0.1, 0.5, &t).unwrap(), Some(QeLabel::Loose));
        assert_eq!(fuse_labels(0.1, 0.5, &strict).unwrap(), None);
        assert!(FusionThresholds::new(0.5, 0.4, 0.7, 0.8).is_err());
    }

    #[test]
    fn good_band_is_monotone_in_bow() {
        let t = FusionThresholds::default();
        for r in [0.8, 0.85, 0.9, 1.0] {
            let mut seen_good = false;
            for i in 0..=100 {
                let l = fuse_labels(i as f64 / 100.0, r, &t).unwrap();
                if seen_good {
                    assert_eq!(l, Some(QeLabel::Good));
                }
                seen_good |= l == Some(QeLabel::Good);
            }
            assert!(seen_good);
        }
    }

    fn pair(i: usize, p: Provenance) -> BilingualPair {
        BilingualPair::new(format!("s{i}"), format!("t{i}"), "en", "de", p).unwrap()
    }

    fn generator_pools(n: usize) -> SourcePools {
        let mut pools = SourcePools::new();
        for p in &SourceWeights::SOURCES[1..] {
            pools.extend((0..n).map(|i| LabeledPair::from_provenance(pair(i, *p)).unwrap()));
        }
        pools
    }

    #[test]
    fn generator_mix_matches_weights() {
        let pools = generator_pools(5000);
        let w = SourceWeights::from_array([0.0, 30.0, 10.0, 10.0, 25.0, 25.0]);
        let mut rng = SeededRng::new(1);
        let (data, report) = build_dataset(&pools, &w, Some(10_000), &mut rng).unwrap();
        assert_eq!(data.len(), 10_000);
        let bad = data.iter().filter(|p| p.label == QeLabel::Bad).count() as f64 / 1e4;
        assert!((bad - 0.5).abs() <= 0.01);
        assert!(data.iter().all(LabeledPair::is_consistent));
        assert!((report.source_percentages().iter().sum::<f64>() - 100.0).abs() < 0.01);
        assert!((report.label_percentages().iter().sum::<f64>() - 100.0).abs() < 0.01);
    }

    #[test]
    fn german_mix_hits_table_targets() {
        let mut pools = generator_pools(10_000);
        pools.extend((0..10_000).map(|i| LabeledPair {
            pair: pair(i, Provenance::StatisticalClassification),
            label: QeLabel::Good,
            source_tag: Provenance::StatisticalClassification,
            s_bow: Some(0.9),
            s_rfc: Some(0.9),
        }));
        let (_, report) =
            build_dataset(&pools, &SourceWeights::default(), Some(10_000), &mut SeededRng::new(3)).unwrap();
        let target = [17.26, 32.14, 7.07, 7.07, 18.23, 18.23];
        for (got, want) in report.source_percentages().iter().zip(target) {
            assert!((got - want).abs() < 0.01, "{got} vs {want}");
        }
    }

    #[test]
    fn auto_total_and_empty_pools() {
        let mut pools = SourcePools::new();
        pools.extend((0..40).map(|i| LabeledPair::from_provenance(pair(i, Provenance::RandomlyAligned)).unwrap()));
        pools.extend((0..100).map(|i| LabeledPair::from_provenance(pair(i, Provenance::GoodPairsFile)).unwrap()));
        let w = SourceWeights::from_array([10.0, 50.0, 0.0, 0.0, 0.0, 50.0]);
        let (data, report) = build_dataset(&pools, &w, None, &mut SeededRng::new(0)).unwrap();
        assert_eq!(data.len(), 80);
        assert_eq!(report.by_source, [0, 40, 0, 0, 0, 40]);
        let only_empty = SourceWeights::only(Provenance::AddedCaptions);
        assert!(build_dataset(&pools, &only_empty, None, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn same_seed_same_dataset() {
        let pools = generator_pools(100);
        let w = SourceWeights::default();
        let a = build_dataset(&pools, &w, Some(200), &mut SeededRng::new(5)).unwrap().0;
        let b = build_dataset(&pools, &w, Some(200), &mut SeededRng::new(5)).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn labeled_tsv_round_trip() {
        let items = vec![
            LabeledPair::from_provenance(pair(0, Provenance::ScrambledText)).unwrap(),
            LabeledPair {
                pair: pair(1, Provenance::StatisticalClassification),
                label: QeLabel::Bad,
                source_tag: Provenance::StatisticalClassification,
                s_bow: Some(0.125),
                s_rfc: Some(0.1),
            },
        ];
        let mut buf = Vec::new();
        write_labeled_tsv(&mut buf, &items).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("s0\tt0\tloose\tscrambled_text\tNA\tNA\n"));
        assert_eq!(read_labeled_tsv(buf.as_slice(), "en", "de").unwrap(), items);
    }

    #[test]
    fn scored_pairs_split_into_labels_and_discards() {
        let scored = vec![
            ScoredPair {
                pair: pair(0, Provenance::Aligned),
                s_bow: 0.9,
                s_rfc: 0.95,
            },
            ScoredPair {
                pair: pair(1, Provenance::Aligned),
                s_bow: 0.9,
                s_rfc: 0.75,
            },
        ];
        let (labeled, discarded) = label_scored(scored, &FusionThresholds::default()).unwrap();
        assert_eq!(labeled.len(), 1);
        assert_eq!(labeled[0].label, QeLabel::Good);
        assert_eq!(labeled[0].pair.provenance, Provenance::StatisticalClassification);
        assert_eq!(discarded.len(), 1);
        let mut buf = Vec::new();
        write_discards_tsv(&mut buf, &discarded).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().nth(1), Some("s1\tt1\t0.9\t0.75"));
    }
}
