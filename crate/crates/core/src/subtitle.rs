//! Subtitle files, bilingual pairs and tokenization.
//!
//! SRT files are parsed into [`SubtitleFile`]s, source and target files are
//! aligned block-to-block by temporal overlap, and block text is tokenized
//! into at most [`MAX_TOKENS`] lowercase tokens.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest token sequence fed to any scorer or model.
pub const MAX_TOKENS: usize = 25;

const MAX_MILLIS: u64 = 100 * 3_600_000 - 1;

/// Milliseconds since the start of a subtitle file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(u64);

impl Timestamp {
    pub fn from_millis(millis: u64) -> Result<Self> {
        if millis > MAX_MILLIS {
            return Err(Error::MalformedTimestamp {
                line: 0,
                reason: format!("{millis} ms exceeds 99:59:59,999"),
            });
        }
        Ok(Timestamp(millis))
    }

    pub fn millis(self) -> u64 {
        self.0
    }

    fn parse(s: &str) -> Option<Self> {
        let (hms, ms) = s.split_once(',')?;
        let mut parts = hms.split(':');
        let h = parse_digits(parts.next()?, 1, 2)?;
        let m = parse_digits(parts.next()?, 2, 2)?;
        let sec = parse_digits(parts.next()?, 2, 2)?;
        if parts.next().is_some() || m > 59 || sec > 59 {
            return None;
        }
        let ms = parse_digits(ms, 3, 3)?;
        Some(Timestamp(((h * 60 + m) * 60 + sec) * 1000 + ms))
    }
}

fn parse_digits(s: &str, min_len: usize, max_len: usize) -> Option<u64> {
    if s.len() < min_len || s.len() > max_len || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ms = self.0 % 1000;
        let total_secs = self.0 / 1000;
        let (h, m, s) = (total_secs / 3600, (total_secs / 60) % 60, total_secs % 60);
        write!(f, "{h:02}:{m:02}:{s:02},{ms:03}")
    }
}

/// One timestamped subtitle unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBlock {
    pub index: u32,
    pub start: Timestamp,
    pub end: Timestamp,
    pub lines: Vec<String>,
}

impl TextBlock {
    pub fn new(index: u32, start: Timestamp, end: Timestamp, lines: Vec<String>) -> Result<Self> {
        if start >= end {
            return Err(Error::MalformedTimestamp {
                line: 0,
                reason: format!("start {start} is not before end {end}"),
            });
        }
        if lines.is_empty() || lines.iter().any(|l| l.trim().is_empty() || l.contains('\n')) {
            return Err(Error::EmptyBlock { index, line: 0 });
        }
        Ok(TextBlock {
            index,
            start,
            end,
            lines,
        })
    }

    pub fn duration(&self) -> u64 {
        self.end.0 - self.start.0
    }

    /// Lines joined with single spaces, with angle-bracket markup removed.
    pub fn text(&self) -> String {
        let joined = self
            .lines
            .iter()
            .map(|l| strip_markup(l))
            .collect::<Vec<_>>()
            .join(" ");
        joined.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

/// Removes `<...>` styling tags such as `<i>` or `<font color="red">`.
pub fn strip_markup(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut rest = line;
    while let Some(open) = rest.find('<') {
        match rest[open..].find('>') {
            Some(close) => {
                out.push_str(&rest[..open]);
                rest = &rest[open + close + 1..];
            }
            None => break,
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtitleFile {
    pub language: String,
    pub blocks: Vec<TextBlock>,
}

impl SubtitleFile {
    pub fn new(language: impl Into<String>, blocks: Vec<TextBlock>) -> Self {
        SubtitleFile {
            language: language.into(),
            blocks,
        }
    }

    pub fn with_language(mut self, language: impl Into<String>) -> Self {
        self.language = language.into();
        self
    }

    /// Position of the block carrying `index`, if any.
    pub fn position_of(&self, index: u32) -> Option<usize> {
        self.blocks.binary_search_by_key(&index, |b| b.index).ok()
    }
}

/// Recoverable irregularities found while parsing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    /// Blocks whose start preceded the previous block's start.
    pub non_monotonic_starts: usize,
    /// Whether blocks were re-sorted and renumbered.
    pub renumbered: bool,
}

/// Parses SRT text. Blocks out of start order are sorted (and renumbered) with a warning.
pub fn parse_srt(text: &str) -> Result<SubtitleFile> {
    parse_srt_with_report(text).map(|(file, _)| file)
}

pub fn parse_srt_with_report(text: &str) -> Result<(SubtitleFile, ParseReport)> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let lines: Vec<&str> = text.lines().map(|l| l.trim_end_matches('\r')).collect();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let index_line = i + 1;
        let index: u32 = lines[i]
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or(Error::MissingIndex { line: index_line })?;
        i += 1;
        let time_line = lines.get(i).copied().unwrap_or("");
        let (start, end) = parse_arrow_line(time_line).ok_or_else(|| Error::MalformedTimestamp {
            line: i + 1,
            reason: format!("expected `HH:MM:SS,mmm --> HH:MM:SS,mmm`, got {time_line:?}"),
        })?;
        if start >= end {
            return Err(Error::MalformedTimestamp {
                line: i + 1,
                reason: format!("start {start} is not before end {end}"),
            });
        }
        i += 1;
        let mut text_lines = Vec::new();
        while i < lines.len() && !lines[i].trim().is_empty() {
            text_lines.push(lines[i].to_string());
            i += 1;
        }
        if text_lines.is_empty() {
            return Err(Error::EmptyBlock {
                index,
                line: index_line,
            });
        }
        blocks.push(TextBlock {
            index,
            start,
            end,
            lines: text_lines,
        });
    }

    let mut report = ParseReport::default();
    report.non_monotonic_starts = blocks.windows(2).filter(|w| w[1].start < w[0].start).count();
    let indices_ok = blocks.windows(2).all(|w| w[0].index < w[1].index);
    if report.non_monotonic_starts > 0 || !indices_ok {
        warn!(
            "subtitle blocks out of order ({} non-monotonic starts); sorting and renumbering",
            report.non_monotonic_starts
        );
        blocks.sort_by_key(|b| (b.start, b.end, b.index));
        for (n, block) in blocks.iter_mut().enumerate() {
            block.index = n as u32 + 1;
        }
        report.renumbered = true;
    }
    Ok((SubtitleFile::new("und", blocks), report))
}

fn parse_arrow_line(line: &str) -> Option<(Timestamp, Timestamp)> {
    let (a, b) = line.split_once("-->")?;
    Some((Timestamp::parse(a.trim())?, Timestamp::parse(b.trim())?))
}

pub fn serialize_srt(file: &SubtitleFile) -> String {
    let mut out = String::new();
    for block in &file.blocks {
        out.push_str(&format!("{}\n{} --> {}\n", block.index, block.start, block.end));
        for line in &block.lines {
            out.push_str(line);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Where a bilingual pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Aligned,
    StatisticalClassification,
    GoodPairsFile,
    AddedCaptions,
    ScrambledText,
    DriftedAligned,
    RandomlyAligned,
}

impl Provenance {
    pub const ALL: [Provenance; 7] = [
        Provenance::Aligned,
        Provenance::StatisticalClassification,
        Provenance::GoodPairsFile,
        Provenance::AddedCaptions,
        Provenance::ScrambledText,
        Provenance::DriftedAligned,
        Provenance::RandomlyAligned,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Aligned => "aligned",
            Provenance::StatisticalClassification => "statistical_classification",
            Provenance::GoodPairsFile => "good_pairs_file",
            Provenance::AddedCaptions => "added_captions",
            Provenance::ScrambledText => "scrambled_text",
            Provenance::DriftedAligned => "drifted_aligned",
            Provenance::RandomlyAligned => "randomly_aligned",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Provenance::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown provenance {s:?}")))
    }
}

/// A source/target text pair, the atomic quality-estimation input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BilingualPair {
    pub source_text: String,
    pub target_text: String,
    pub source_lang: String,
    pub target_lang: String,
    pub provenance: Provenance,
    pub source_block_id: Option<u32>,
    pub target_block_id: Option<u32>,
}

impl BilingualPair {
    pub fn new(
        source_text: impl Into<String>,
        target_text: impl Into<String>,
        source_lang: impl Into<String>,
        target_lang: impl Into<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let pair = BilingualPair {
            source_text: source_text.into(),
            target_text: target_text.into(),
            source_lang: source_lang.into(),
            target_lang: target_lang.into(),
            provenance,
            source_block_id: None,
            target_block_id: None,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn with_block_ids(mut self, source: Option<u32>, target: Option<u32>) -> Self {
        self.source_block_id = source;
        self.target_block_id = target;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.source_text.trim().is_empty() || self.target_text.trim().is_empty() {
            return Err(Error::InvalidPair("empty source or target text".into()));
        }
        if self.source_lang == self.target_lang {
            return Err(Error::InvalidPair(format!(
                "source and target language are both {:?}",
                self.source_lang
            )));
        }
        Ok(())
    }

    pub fn source_tokens(&self) -> TokenSequence {
        tokenize(&self.source_text)
    }

    pub fn target_tokens(&self) -> TokenSequence {
        tokenize(&self.target_text)
    }
}

/// Unmatched-block counts from [`align_by_timestamp`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentReport {
    pub pairs: usize,
    pub unmatched_source: usize,
    pub unmatched_target: usize,
    /// Matched blocks dropped because their text was empty after markup removal.
    pub empty_text: usize,
}

pub const DEFAULT_MIN_OVERLAP: f64 = 0.5;

/// Temporal intersection-over-union of two blocks.
pub fn temporal_iou(a: &TextBlock, b: &TextBlock) -> f64 {
    let inter_start = a.start.max(b.start).0;
    let inter_end = a.end.min(b.end).0;
    if inter_end <= inter_start {
        return 0.0;
    }
    let inter = (inter_end - inter_start) as f64;
    let union = (a.duration() + b.duration()) as f64 - inter;
    inter / union
}

/// Greedy one-to-one block matching by descending temporal IoU.
///
/// Pairs are returned in source order; both sides are used at most once.
pub fn align_by_timestamp(
    src: &SubtitleFile,
    tgt: &SubtitleFile,
    min_overlap_ratio: f64,
) -> Result<(Vec<BilingualPair>, AlignmentReport)> {
    if !(min_overlap_ratio > 0.0 && min_overlap_ratio <= 1.0) {
        return Err(Error::InvalidThreshold(format!(
            "min_overlap_ratio must be in (0, 1], got {min_overlap_ratio}"
        )));
    }
    if src.language == tgt.language {
        return Err(Error::InvalidPair(format!(
            "both subtitle files are in {:?}",
            src.language
        )));
    }
    let mut candidates = Vec::new();
    for (i, s) in src.blocks.iter().enumerate() {
        for (j, t) in tgt.blocks.iter().enumerate() {
            if t.start >= s.end {
                // targets are sorted by start, nothing later can overlap
                break;
            }
            let iou = temporal_iou(s, t);
            if iou >= min_overlap_ratio {
                candidates.push((iou, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut src_used = vec![false; src.blocks.len()];
    let mut tgt_used = vec![false; tgt.blocks.len()];
    let mut matched = Vec::new();
    for (_, i, j) in candidates {
        if !src_used[i] && !tgt_used[j] {
            src_used[i] = true;
            tgt_used[j] = true;
            matched.push((i, j));
        }
    }
    matched.sort_unstable();

    let mut report = AlignmentReport {
        unmatched_source: src_used.iter().filter(|u| !**u).count(),
        unmatched_target: tgt_used.iter().filter(|u| !**u).count(),
        ..Default::default()
    };
    let mut pairs = Vec::with_capacity(matched.len());
    for (i, j) in matched {
        let (s, t) = (&src.blocks[i], &tgt.blocks[j]);
        match BilingualPair::new(s.text(), t.text(), &src.language, &tgt.language, Provenance::Aligned) {
            Ok(pair) => pairs.push(pair.with_block_ids(Some(s.index), Some(t.index))),
            Err(_) => report.empty_text += 1,
        }
    }
    report.pairs = pairs.len();
    Ok((pairs, report))
}

/// Lowercase tokens, at most [`MAX_TOKENS`] long.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    /// Wraps already-tokenized text; tokens are lowercased and truncated.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        TokenSequence(
            tokens
                .into_iter()
                .take(MAX_TOKENS)
                .map(|t| t.as_ref().to_lowercase())
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Space,
    Word,
    Number,
    Punct,
}

fn classify(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Space
    } else if c.is_numeric() {
        CharClass::Number
    } else if c.is_alphabetic() {
        CharClass::Word
    } else {
        CharClass::Punct
    }
}

/// Lowercases and splits text into word, number and punctuation tokens.
///
/// Runs of letters and runs of digits each form one token; every other
/// non-space character is a token of its own.
pub fn tokenize(text: &str) -> TokenSequence {
    let lower = text.to_lowercase();
    let mut tokens: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut current_class = CharClass::Space;
    for c in lower.chars() {
        let class = classify(c);
        let continues = class == current_class && matches!(class, CharClass::Word | CharClass::Number);
        if !continues && !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
            if tokens.len() == MAX_TOKENS {
                return TokenSequence(tokens);
            }
        }
        if class != CharClass::Space {
            current.push(c);
        }
        current_class = class;
    }
    if !current.is_empty() && tokens.len() < MAX_TOKENS {
        tokens.push(current);
    }
    TokenSequence(tokens)
}

pub(crate) fn sanitize_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

pub const PAIR_TSV_HEADER: &str = "source_text\ttarget_text\tsource_lang\ttarget_lang\tprovenance";

/// Writes pairs as TSV with a header row.
pub fn write_pairs_tsv<W: Write>(mut w: W, pairs: &[BilingualPair]) -> Result<()> {
    writeln!(w, "{PAIR_TSV_HEADER}")?;
    for p in pairs {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            sanitize_field(&p.source_text),
            sanitize_field(&p.target_text),
            sanitize_field(&p.source_lang),
            sanitize_field(&p.target_lang),
            p.provenance
        )?;
    }
    Ok(())
}

pub fn read_pairs_tsv<R: BufRead>(r: R) -> Result<Vec<BilingualPair>> {
    let mut pairs = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if n == 0 && line == PAIR_TSV_HEADER {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::MalformedTsv {
                line: n + 1,
                reason: format!("expected 5 columns, found {}", fields.len()),
            });
        }
        let provenance = fields[4].parse().map_err(|e: Error| Error::MalformedTsv {
            line: n + 1,
            reason: e.to_string(),
        })?;
        let pair = BilingualPair::new(fields[0], fields[1], fields[2], fields[3], provenance)
            .map_err(|e| Error::MalformedTsv {
                line: n + 1,
                reason: e.to_string(),
            })?;
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Reads a two-column `source<TAB>target` file of trusted translations.
pub fn read_good_pairs<R: BufRead>(r: R, source_lang: &str, target_lang: &str) -> Result<Vec<BilingualPair>> {
    let mut pairs = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = line.split_once('\t').ok_or_else(|| Error::MalformedTsv {
            line: n + 1,
            reason: "expected `source<TAB>target`".into(),
        })?;
        let tgt = tgt.split('\t').next().unwrap_or(tgt);
        pairs.push(
            BilingualPair::new(src, tgt, source_lang, target_lang, Provenance::GoodPairsFile).map_err(|e| {
                Error::MalformedTsv {
                    line: n + 1,
                    reason: e.to_string(),
                }
            })?,
        );
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block(index: u32, start: u64, end: u64, text: &str) -> TextBlock {
        TextBlock::new(
            index,
            Timestamp::from_millis(start).unwrap(),
            Timestamp::from_millis(end).unwrap(),
            vec![text.to_string()],
        )
        .unwrap()
    }

    #[test]
    fn parses_single_block() {
        let f = parse_srt("1\n00:00:01,000 --> 00:00:02,500\nHello.\n\n").unwrap();
        assert_eq!(f.blocks.len(), 1);
        assert_eq!(f.blocks[0].start.millis(), 1000);
        assert_eq!(f.blocks[0].end.millis(), 2500);
        assert_eq!(f.blocks[0].lines, vec!["Hello."]);
    }

    #[test]
    fn empty_input_has_no_blocks() {
        assert!(parse_srt("").unwrap().blocks.is_empty());
        assert_eq!(serialize_srt(&SubtitleFile::new("en", vec![])), "");
    }

    #[test]
    fn zero_length_block_is_malformed() {
        let err = parse_srt("1\n00:00:01,000 --> 00:00:01,000\nHi\n\n").unwrap_err();
        assert!(matches!(err, Error::MalformedTimestamp { line: 2, .. }));
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_srt("x\n00:00:01,000 --> 00:00:02,000\nHi\n"),
            Err(Error::MissingIndex { line: 1 })
        ));
        assert!(matches!(
            parse_srt("1\n00:00:01.000 -> 00:00:02,000\nHi\n"),
            Err(Error::MalformedTimestamp { .. })
        ));
        assert!(matches!(
            parse_srt("1\n00:00:01,000 --> 00:00:02,000\n\n"),
            Err(Error::EmptyBlock { index: 1, .. })
        ));
    }

    #[test]
    fn crlf_and_bom_are_accepted() {
        let f = parse_srt("\u{feff}1\r\n00:00:01,000 --> 00:00:02,000\r\nHi\r\nthere\r\n\r\n").unwrap();
        assert_eq!(f.blocks[0].lines, vec!["Hi", "there"]);
    }

    #[test]
    fn non_monotonic_blocks_are_sorted() {
        let text = "1\n00:00:05,000 --> 00:00:06,000\nB\n\n2\n00:00:01,000 --> 00:00:02,000\nA\n\n";
        let (f, report) = parse_srt_with_report(text).unwrap();
        assert_eq!(report.non_monotonic_starts, 1);
        assert!(report.renumbered);
        assert_eq!(f.blocks[0].lines, vec!["A"]);
        assert_eq!(f.blocks[0].index, 1);
        assert_eq!(f.blocks[1].index, 2);
    }

    #[test]
    fn serialize_round_trip() {
        let one = "1\n00:00:01,000 --> 00:00:02,500\nHello.\n\n";
        assert_eq!(serialize_srt(&parse_srt(one).unwrap()), one);
        let two = "1\n00:00:01,000 --> 00:00:02,500\nHello.\n\n2\n00:00:03,000 --> 00:00:04,000\nBye.\nNow.\n\n";
        let out = serialize_srt(&parse_srt(two).unwrap());
        assert_eq!(out, two);
        assert_eq!(out.matches("\n\n").count(), 2);
    }

    #[test]
    fn timestamp_format() {
        let t = Timestamp::from_millis(((99 * 60 + 59) * 60 + 59) * 1000 + 999).unwrap();
        assert_eq!(t.to_string(), "99:59:59,999");
        assert_eq!(Timestamp::parse("99:59:59,999"), Some(t));
        assert!(Timestamp::from_millis(100 * 3_600_000).is_err());
    }

    #[test]
    fn markup_is_stripped_from_text() {
        let b = TextBlock::new(
            1,
            Timestamp(0),
            Timestamp(10),
            vec!["<i>Hello</i>".into(), "<b>world</b>!".into()],
        )
        .unwrap();
        assert_eq!(b.text(), "Hello world!");
    }

    #[test]
    fn identical_layouts_align_fully() {
        let src = SubtitleFile::new("en", vec![block(1, 0, 1000, "a"), block(2, 1000, 2000, "b")]);
        let tgt = SubtitleFile::new("de", vec![block(1, 0, 1000, "x"), block(2, 1000, 2000, "y")]);
        let (pairs, report) = align_by_timestamp(&src, &tgt, 0.5).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(report.unmatched_source, 0);
        for (s, t) in src.blocks.iter().zip(&tgt.blocks) {
            assert_eq!(temporal_iou(s, t), 1.0);
        }
        assert_eq!(pairs[1].target_text, "y");
        assert_eq!(pairs[1].target_block_id, Some(2));
    }

    #[test]
    fn disjoint_layouts_align_nothing() {
        let src = SubtitleFile::new("en", vec![block(1, 0, 1000, "a")]);
        let tgt = SubtitleFile::new("de", vec![block(1, 5000, 6000, "x")]);
        let (pairs, report) = align_by_timestamp(&src, &tgt, 0.5).unwrap();
        assert!(pairs.is_empty());
        assert_eq!((report.unmatched_source, report.unmatched_target), (1, 1));
    }

    #[test]
    fn alignment_prefers_larger_overlap() {
        let src = SubtitleFile::new("en", vec![block(1, 0, 1000, "a")]);
        let tgt = SubtitleFile::new("de", vec![block(1, 0, 900, "x"), block(2, 950, 2000, "y")]);
        assert!((temporal_iou(&src.blocks[0], &tgt.blocks[0]) - 0.9).abs() < 1e-12);
        assert!((temporal_iou(&src.blocks[0], &tgt.blocks[1]) - 0.025).abs() < 1e-12);
        let (pairs, _) = align_by_timestamp(&src, &tgt, 0.5).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].target_text, "x");
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Hello, World!").tokens(), ["hello", ",", "world", "!"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("It's 2019.").tokens(), ["it", "'", "s", "2019", "."]);
        assert_eq!(tokenize("[whispers] ok").tokens(), ["[", "whispers", "]", "ok"]);
        let long = (0..30).map(|i| format!("w{}", "x".repeat(i % 3 + 1))).collect::<Vec<_>>().join(" ");
        let toks = tokenize(&long);
        assert_eq!(toks.len(), 25);
        assert_eq!(toks.tokens()[24], long.split(' ').nth(24).unwrap());
    }

    #[test]
    fn pair_tsv_sanitizes_and_reads_back() {
        let p = BilingualPair::new("a\tb", "c\nd", "en", "de", Provenance::ScrambledText).unwrap();
        let mut buf = Vec::new();
        write_pairs_tsv(&mut buf, &[p]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "a b\tc d\ten\tde\tscrambled_text");
        let back = read_pairs_tsv(text.as_bytes()).unwrap();
        assert_eq!(back[0].source_text, "a b");
        assert_eq!(back[0].provenance, Provenance::ScrambledText);
    }

    #[test]
    fn pair_invariants() {
        assert!(BilingualPair::new(" ", "x", "en", "de", Provenance::Aligned).is_err());
        assert!(BilingualPair::new("x", "y", "en", "en", Provenance::Aligned).is_err());
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent_and_lowercase(s in "\\PC{0,80}") {
            let toks = tokenize(&s);
            prop_assert!(toks.len() <= MAX_TOKENS);
            for t in toks.tokens() {
                prop_assert_eq!(t, &t.to_lowercase());
            }
            prop_assert_eq!(tokenize(&toks.join()), toks);
        }

        #[test]
        fn alignment_is_injective(
            src in prop::collection::vec((0u64..20_000, 1u64..3_000), 0..20),
            tgt in prop::collection::vec((0u64..20_000, 1u64..3_000), 0..20),
            ratio in 0.05f64..1.0,
        ) {
            let build = |spans: &[(u64, u64)], lang: &str| {
                let mut spans = spans.to_vec();
                spans.sort();
                let blocks = spans.iter().enumerate()
                    .map(|(i, &(s, d))| block(i as u32 + 1, s, s + d, "t"))
                    .collect();
                SubtitleFile::new(lang, blocks)
            };
            let (s, t) = (build(&src, "en"), build(&tgt, "de"));
            let (pairs, report) = align_by_timestamp(&s, &t, ratio).unwrap();
            let mut seen_s = std::collections::HashSet::new();
            let mut seen_t = std::collections::HashSet::new();
            for p in &pairs {
                prop_assert!(seen_s.insert(p.source_block_id));
                prop_assert!(seen_t.insert(p.target_block_id));
                let a = &s.blocks[s.position_of(p.source_block_id.unwrap()).unwrap()];
                let b = &t.blocks[t.position_of(p.target_block_id.unwrap()).unwrap()];
                prop_assert!(temporal_iou(a, b) >= ratio);
            }
            prop_assert_eq!(report.unmatched_source + pairs.len(), s.blocks.len());
        }
    }
}
