//! Parse two SRT files and pair their blocks by temporal overlap.

use subqe::subtitle::{align_by_timestamp, parse_srt, tokenize, DEFAULT_MIN_OVERLAP};

const EN: &str = "1
00:00:01,000 --> 00:00:03,000
<i>Where are you going?</i>

2
00:00:03,500 --> 00:00:05,000
Home.

3
00:00:09,000 --> 00:00:10,000
[door slams]
";

const DE: &str = "1
00:00:01,100 --> 00:00:03,100
Wohin gehst du?

2
00:00:03,600 --> 00:00:05,200
Nach Hause.
";

fn main() -> subqe::Result<()> {
    let src = parse_srt(EN)?.with_language("en");
    let tgt = parse_srt(DE)?.with_language("de");
    let (pairs, report) = align_by_timestamp(&src, &tgt, DEFAULT_MIN_OVERLAP)?;
    for p in &pairs {
        println!(
            "#{:?} -> #{:?}  {:?} | {:?}",
            p.source_block_id,
            p.target_block_id,
            p.source_text,
            p.target_text
        );
        println!("    tokens: {:?} | {:?}", tokenize(&p.source_text).tokens(), tokenize(&p.target_text).tokens());
    }
    println!("{report:?}");
    Ok(())
}
