//! Accuracy, forgetting and learning accuracy on a hand-written score
//! matrix, plus mean ± std across sequences.

use flatbasin::metrics::{aggregate, ScoreMatrix, SequenceMetrics};

fn main() -> flatbasin::Result<()> {
    // row t holds the test accuracy on tasks 1..=t after training task t
    let s = ScoreMatrix::from_rows(vec![vec![0.90], vec![0.80, 0.70], vec![0.85, 0.60, 0.95]])?;
    let m = SequenceMetrics::from_scores(&s)?;
    for t in 0..m.tasks() {
        let f = m.forgetting[t].map_or("-".to_owned(), |f| format!("{f:.3}"));
        println!("after task {}: A = {:.3}  F = {f}  LA = {:.3}", t + 1, m.accuracy[t], m.learning_accuracy[t]);
    }

    let other = SequenceMetrics::from_scores(&ScoreMatrix::from_rows(vec![
        vec![0.95],
        vec![0.90, 0.80],
        vec![0.70, 0.75, 0.90],
    ])?)?;
    let report = aggregate(&[m, other])?;
    let f = report.final_forgetting.expect("three tasks");
    println!(
        "over {} sequences: A = {:.3} ± {:.3}, F = {:.3} ± {:.3}",
        report.sequences, report.final_accuracy.mean, report.final_accuracy.std, f.mean, f.std
    );
    Ok(())
}
