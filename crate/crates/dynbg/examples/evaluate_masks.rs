//! Score predicted masks against ground truth with CDnet conventions.
//!
//!     cargo run --example evaluate_masks
//!
//! Demonstrates the label semantics (255 = foreground, 0/50 = background,
//! 85/170 = not evaluated), sequence-level count accumulation, and the
//! recall/precision/F-measure conventions including the 0/0 -> 0 rules.

use dynbg::eval::{
    compare_masks, f_measure, markdown_summary, precision, recall, ConfusionCounts, EvalReport,
};
use ndarray::Array2;

fn main() {
    // A 6x6 toy frame: the true object is a 2x2 block at (1,1); the column
    // x=5 is outside the region of interest; one pixel is marked "unknown".
    let mut gt = Array2::<u8>::zeros((6, 6));
    for y in 1..3 {
        for x in 1..3 {
            gt[(y, x)] = 255;
        }
    }
    gt[(4, 4)] = 170; // boundary pixel: never counted
    gt[(5, 0)] = 50; // shadow: counts as background
    let mut roi = Array2::from_elem((6, 6), true);
    for y in 0..6 {
        roi[(y, 5)] = false;
    }

    // The predictor found 3 of the 4 object pixels plus one false alarm.
    let mut pred = Array2::default((6, 6));
    pred[(1, 1)] = true;
    pred[(1, 2)] = true;
    pred[(2, 1)] = true;
    pred[(0, 4)] = true;

    let counts = compare_masks(&pred, &gt, &roi).expect("shapes match");
    println!(
        "tp={} fp={} fn={} tn={}",
        counts.tp, counts.fp, counts.fn_, counts.tn
    );
    println!("recall    = {:.4}", recall(&counts));
    println!("precision = {:.4}", precision(&counts));
    println!("f-measure = {:.4}", f_measure(&counts));

    // Counts accumulate across frames before the metric is computed — the
    // sequence-level convention.
    let mut total = ConfusionCounts::default();
    total.add(&counts);
    total.add(&counts);
    let report = EvalReport::from_counts("toy-sequence", total, 2);
    println!("\nCSV row:\n{}\n{}", EvalReport::CSV_HEADER, report.csv_row());
    println!("\nMarkdown summary:\n{}", markdown_summary(&[report]));

    // Degenerate conventions: empty prediction and empty ground truth give
    // 0/0 ratios, which are defined as 0.
    let empty = ConfusionCounts::default();
    println!(
        "empty case: recall={} precision={} fm={}",
        recall(&empty),
        precision(&empty),
        f_measure(&empty)
    );
}
