//! Metrics, miss rate and length buckets from label vectors.

use subqe::eval::{evaluate, length_buckets, miss_rate, render_fnr_table, render_length_table, render_metrics_table};
use subqe::labeler::QeLabel::{self, Bad, Good, Loose};

fn main() -> subqe::Result<()> {
    let truth: Vec<QeLabel> = vec![Good, Good, Loose, Loose, Bad, Bad, Good, Loose, Bad, Good];
    let pred: Vec<QeLabel> = vec![Good, Loose, Loose, Bad, Bad, Bad, Good, Loose, Good, Good];
    let lens = [3, 7, 12, 4, 9, 22, 15, 5, 8, 18];
    let (cm, report) = evaluate(&pred, &truth, &lens)?;
    println!("{}", render_metrics_table(&[("example".into(), report)]));
    println!("{}", cm.render());
    println!("{}", render_length_table(&length_buckets(&lens, &pred, &truth)?));
    let fnr = miss_rate(&pred, &truth)?;
    println!("{}", render_fnr_table(&[("example".into(), fnr)]));
    Ok(())
}
