//! Subtitle-side generators: added captions, scrambled text, random and
//! drifted alignment.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::subtitle::{BilingualPair, Provenance, SubtitleFile};
use crate::synth::lexicon::CaptionLexicon;

/// Byte offsets where a caption may be inserted: the start, or after an
/// internal sentence-final mark followed by whitespace.
fn caption_positions(text: &str) -> Vec<usize> {
    let mut positions = vec![0];
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for w in chars.windows(2) {
        let (_, c) = w[0];
        let (next_at, next) = w[1];
        if matches!(c, '.' | '!' | '?' | '…') && next.is_whitespace() {
            let rest = &text[next_at..];
            let skip = rest.len() - rest.trim_start().len();
            let at = next_at + skip;
            if at < text.len() && !positions.contains(&at) {
                positions.push(at);
            }
        }
    }
    positions
}

/// Inserts one caption from the lexicon into the source text.
pub fn add_captions<R: Rng + ?Sized>(
    pair: &BilingualPair,
    lexicon: &CaptionLexicon,
    rng: &mut R,
) -> Result<BilingualPair> {
    if lexicon.is_empty() {
        return Err(Error::EmptyLexicon);
    }
    let source = pair.source_text.trim();
    if source.is_empty() {
        return Err(Error::InvalidPair("empty source text".into()));
    }
    let caption = &lexicon.captions()[rng.gen_range(0..lexicon.len())];
    let positions = caption_positions(source);
    let at = positions[rng.gen_range(0..positions.len())];
    let text = format!("{}{} {}", &source[..at], caption, &source[at..]);
    Ok(BilingualPair {
        source_text: text,
        provenance: Provenance::AddedCaptions,
        ..pair.clone()
    })
}

/// Permutes the target's whitespace tokens; the result differs from the
/// original whenever the target has at least two distinct tokens.
pub fn scramble_target<R: Rng + ?Sized>(pair: &BilingualPair, rng: &mut R) -> Result<BilingualPair> {
    let original: Vec<&str> = pair.target_text.split_whitespace().collect();
    if original.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: original.len(),
        });
    }
    let mut tokens = original.clone();
    let distinct = original.iter().any(|t| *t != original[0]);
    loop {
        tokens.shuffle(rng);
        if !distinct || tokens != original {
            break;
        }
    }
    Ok(BilingualPair {
        target_text: tokens.join(" "),
        provenance: Provenance::ScrambledText,
        ..pair.clone()
    })
}

/// Draws an index in `0..n` other than `own` whose target text differs from `own`'s.
pub(crate) fn draw_foreign<R: Rng + ?Sized>(pairs: &[BilingualPair], own: usize, rng: &mut R) -> Option<usize> {
    let n = pairs.len();
    for _ in 0..64 {
        let mut j = rng.gen_range(0..n - 1);
        if j >= own {
            j += 1;
        }
        if pairs[j].target_text != pairs[own].target_text {
            return Some(j);
        }
    }
    let candidates: Vec<usize> = (0..n)
        .filter(|&j| j != own && pairs[j].target_text != pairs[own].target_text)
        .collect();
    candidates.choose(rng).copied()
}

/// Pairs every source with the target of a uniformly chosen other pair.
///
/// Pairs for which no other pair has a different target are dropped.
pub fn random_align<R: Rng + ?Sized>(pairs: &[BilingualPair], rng: &mut R) -> Result<Vec<BilingualPair>> {
    if pairs.len() < 2 {
        return Err(Error::CorpusTooSmall {
            needed: 2,
            got: pairs.len(),
        });
    }
    let mut out = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        if let Some(j) = draw_foreign(pairs, i, rng) {
            out.push(BilingualPair {
                target_text: pairs[j].target_text.clone(),
                target_block_id: pairs[j].target_block_id,
                provenance: Provenance::RandomlyAligned,
                ..pair.clone()
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DriftReport {
    pub emitted: usize,
    /// Pairs without a usable neighbouring block in the window.
    pub no_neighbor: usize,
    /// Pairs whose target block id is absent from the target file.
    pub unknown_block: usize,
}

/// Replaces each aligned target with a nearby block of the same target file.
///
/// For a pair aligned to the block at position `j`, the new target is drawn
/// uniformly from positions `j'` with `1 <= |j - j'| <= window`.
pub fn drift_align<R: Rng + ?Sized>(
    tgt_file: &SubtitleFile,
    aligned: &[BilingualPair],
    window: usize,
    rng: &mut R,
) -> Result<(Vec<BilingualPair>, DriftReport)> {
    if window == 0 {
        return Err(Error::Config("drift window must be at least 1".into()));
    }
    let texts: Vec<String> = tgt_file.blocks.iter().map(|b| b.text()).collect();
    let mut report = DriftReport::default();
    let mut out = Vec::new();
    for pair in aligned {
        let Some(j) = pair.target_block_id.and_then(|id| tgt_file.position_of(id)) else {
            report.unknown_block += 1;
            continue;
        };
        let lo = j.saturating_sub(window);
        let hi = (j + window).min(tgt_file.blocks.len().saturating_sub(1));
        let candidates: Vec<usize> = (lo..=hi)
            .filter(|&k| k != j && !texts[k].trim().is_empty())
            .collect();
        let Some(&k) = candidates.choose(rng) else {
            report.no_neighbor += 1;
            continue;
        };
        out.push(BilingualPair {
            target_text: texts[k].clone(),
            target_block_id: Some(tgt_file.blocks[k].index),
            provenance: Provenance::DriftedAligned,
            ..pair.clone()
        });
    }
    report.emitted = out.len();
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subtitle::{TextBlock, Timestamp};
    use crate::synth::SeededRng;
    use std::collections::HashMap;

    fn pair(src: &str, tgt: &str) -> BilingualPair {
        BilingualPair::new(src, tgt, "en", "de", Provenance::Aligned).unwrap()
    }

    #[test]
    fn single_caption_goes_first() {
        let lex = CaptionLexicon::new(["[whispers]"]).unwrap();
        let out = add_captions(&pair("hello.", "hallo."), &lex, &mut SeededRng::new(1)).unwrap();
        assert_eq!(out.source_text, "[whispers] hello.");
        assert_eq!(out.target_text, "hallo.");
        assert_eq!(out.provenance, Provenance::AddedCaptions);
    }

    #[test]
    fn captions_can_land_on_sentence_boundaries() {
        assert_eq!(caption_positions("Hi. How are you?"), vec![0, 4]);
        let lex = CaptionLexicon::new(["[sighs]"]).unwrap();
        let mut rng = SeededRng::new(3);
        let outs: std::collections::HashSet<String> = (0..50)
            .map(|_| add_captions(&pair("Hi. How are you?", "x"), &lex, &mut rng).unwrap().source_text)
            .collect();
        assert!(outs.contains("[sighs] Hi. How are you?"));
        assert!(outs.contains("Hi. [sighs] How are you?"));
        assert_eq!(outs.len(), 2);
    }

    #[test]
    fn caption_choice_is_seeded_and_balanced() {
        let lex = CaptionLexicon::new(["[a]", "[b]"]).unwrap();
        let p = pair("hello.", "hallo.");
        assert_eq!(
            add_captions(&p, &lex, &mut SeededRng::new(9)).unwrap(),
            add_captions(&p, &lex, &mut SeededRng::new(9)).unwrap()
        );
        let mut rng = SeededRng::new(11);
        let a = (0..10_000)
            .filter(|_| add_captions(&p, &lex, &mut rng).unwrap().source_text.starts_with("[a]"))
            .count();
        assert!((4700..=5300).contains(&a), "{a}");
    }

    #[test]
    fn scramble_examples() {
        let mut rng = SeededRng::new(0);
        assert_eq!(scramble_target(&pair("x", "a b"), &mut rng).unwrap().target_text, "b a");
        assert_eq!(scramble_target(&pair("x", "a a"), &mut rng).unwrap().target_text, "a a");
        assert!(matches!(scramble_target(&pair("x", "a"), &mut rng), Err(Error::TooShort { .. })));
    }

    #[test]
    fn scramble_is_uniform_over_non_identity_permutations() {
        let mut rng = SeededRng::new(5);
        let mut counts: HashMap<String, usize> = HashMap::new();
        let p = pair("x", "a b c");
        for _ in 0..6000 {
            *counts.entry(scramble_target(&p, &mut rng).unwrap().target_text).or_default() += 1;
        }
        assert_eq!(counts.len(), 5);
        assert!(!counts.contains_key("a b c"));
        for (perm, c) in counts {
            assert!((1050..=1350).contains(&c), "{perm}: {c}");
        }
    }

    #[test]
    fn random_align_examples() {
        let pairs = vec![pair("s1", "t1"), pair("s2", "t2")];
        let out = random_align(&pairs, &mut SeededRng::new(0)).unwrap();
        assert_eq!(out[0].target_text, "t2");
        assert_eq!(out[1].target_text, "t1");
        assert!(out.iter().all(|p| p.provenance == Provenance::RandomlyAligned));
        assert!(matches!(
            random_align(&pairs[..1], &mut SeededRng::new(0)),
            Err(Error::CorpusTooSmall { .. })
        ));
    }

    #[test]
    fn random_align_is_uniform_over_foreign_targets() {
        let pairs = vec![pair("s1", "t1"), pair("s2", "t2"), pair("s3", "t3")];
        let mut rng = SeededRng::new(17);
        let draws = 10_000;
        let mut t2 = 0;
        for _ in 0..draws {
            let out = random_align(&pairs, &mut rng).unwrap();
            for (o, p) in out.iter().zip(&pairs) {
                assert_ne!(o.target_text, p.target_text);
            }
            if out[0].target_text == "t2" {
                t2 += 1;
            }
        }
        let frac = t2 as f64 / draws as f64;
        assert!((frac - 0.5).abs() <= 0.03, "{frac}");
    }

    fn dialogue(n: usize) -> SubtitleFile {
        let blocks = (0..n)
            .map(|i| {
                TextBlock::new(
                    i as u32 + 1,
                    Timestamp::from_millis(i as u64 * 1000).unwrap(),
                    Timestamp::from_millis(i as u64 * 1000 + 900).unwrap(),
                    vec![format!("t{i}")],
                )
                .unwrap()
            })
            .collect();
        SubtitleFile::new("de", blocks)
    }

    fn aligned_to(file: &SubtitleFile) -> Vec<BilingualPair> {
        file.blocks
            .iter()
            .map(|b| pair(&format!("s{}", b.index), &b.text()).with_block_ids(Some(b.index), Some(b.index)))
            .collect()
    }

    #[test]
    fn drift_window_one() {
        let file = dialogue(5);
        let aligned = aligned_to(&file);
        let mut rng = SeededRng::new(2);
        let mut left = 0;
        let draws = 4000;
        for _ in 0..draws {
            let (out, report) = drift_align(&file, &aligned, 1, &mut rng).unwrap();
            assert_eq!(report.emitted, 5);
            // first block can only drift forward
            assert_eq!(out[0].target_text, "t1");
            match out[2].target_text.as_str() {
                "t1" => left += 1,
                "t3" => {}
                other => panic!("unexpected drift target {other}"),
            }
        }
        let frac = left as f64 / draws as f64;
        assert!((frac - 0.5).abs() <= 0.03, "{frac}");
    }

    #[test]
    fn drift_without_neighbors_is_counted() {
        let file = dialogue(1);
        let aligned = aligned_to(&file);
        let (out, report) = drift_align(&file, &aligned, 3, &mut SeededRng::new(0)).unwrap();
        assert!(out.is_empty());
        assert_eq!(report.no_neighbor, 1);
    }
}
