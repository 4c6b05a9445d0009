//! Average accuracy, forgetting and learning accuracy over a score matrix.
//!
//! `S[t][τ]` is the test accuracy on the τ-th task of a sequence after
//! training on the t-th. Indices in this module are 1-based to match that
//! notation: `t = 1` is the first task.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower-triangular accuracies; row `t` holds `t` entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    #[serde(with = "crate::io::f17_nested")]
    rows: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut s = Self::new();
        for row in rows {
            s.push_row(row)?;
        }
        Ok(s)
    }

    /// Appends the row measured after the next task.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let t = self.rows.len() + 1;
        if row.len() != t {
            return Err(Error::Incomplete(format!("row {t} needs {t} entries, got {}", row.len())));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Number of completed rows.
    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `S[t][τ]`, 1-based.
    pub fn get(&self, t: usize, tau: usize) -> f64 {
        self.rows[t - 1][tau - 1]
    }

    fn require(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.rows.len() {
            Err(Error::Incomplete(format!("row {t} requested, {} rows present", self.rows.len())))
        } else {
            Ok(())
        }
    }
}

/// `A_t`: mean of row `t`.
pub fn average_accuracy(s: &ScoreMatrix, t: usize) -> Result<f64> {
    s.require(t)?;
    Ok(s.rows[t - 1].iter().sum::<f64>() / t as f64)
}

/// `F_t`: mean drop from each earlier task's best accuracy to its accuracy
/// after task `t`. The best is taken over rows `τ..t-1`, the rows where task
/// τ had already been learned.
pub fn forgetting(s: &ScoreMatrix, t: usize) -> Result<f64> {
    if t < 2 {
        return Err(Error::Undefined("forgetting needs at least two tasks".into()));
    }
    s.require(t)?;
    let mut total = 0.0;
    for tau in 1..t {
        let best = (tau..t).map(|tp| s.get(tp, tau)).fold(f64::NEG_INFINITY, f64::max);
        total += best - s.get(t, tau);
    }
    Ok(total / (t - 1) as f64)
}

/// `LA_t`: mean of the diagonal up to `t`.
pub fn learning_accuracy(s: &ScoreMatrix, t: usize) -> Result<f64> {
    s.require(t)?;
    Ok((1..=t).map(|tau| s.get(tau, tau)).sum::<f64>() / t as f64)
}

/// All three metrics after every task of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    #[serde(with = "crate::io::f17_vec")]
    pub accuracy: Vec<f64>,
    /// `None` for the first task.
    #[serde(with = "crate::io::f17_opt_vec")]
    pub forgetting: Vec<Option<f64>>,
    #[serde(with = "crate::io::f17_vec")]
    pub learning_accuracy: Vec<f64>,
}

impl SequenceMetrics {
    pub fn from_scores(s: &ScoreMatrix) -> Result<Self> {
        let n = s.tasks();
        if n == 0 {
            return Err(Error::Incomplete("empty score matrix".into()));
        }
        Ok(Self {
            accuracy: (1..=n).map(|t| average_accuracy(s, t)).collect::<Result<_>>()?,
            forgetting: (1..=n)
                .map(|t| if t < 2 { Ok(None) } else { forgetting(s, t).map(Some) })
                .collect::<Result<_>>()?,
            learning_accuracy: (1..=n).map(|t| learning_accuracy(s, t)).collect::<Result<_>>()?,
        })
    }

    pub fn tasks(&self) -> usize {
        self.accuracy.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    #[serde(with = "crate::io::f17")]
    pub mean: f64,
    #[serde(with = "crate::io::f17")]
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample (n−1) standard deviation. Values are sorted before
    /// summation so the result does not depend on input order.
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std =
            if v.len() < 2 { 0.0 } else { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
        Self { mean, std }
    }
}

/// Cross-sequence mean ± standard deviation of every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequences: usize,
    pub tasks: usize,
    pub accuracy: Vec<MeanStd>,
    pub forgetting: Vec<Option<MeanStd>>,
    pub learning_accuracy: Vec<MeanStd>,
    pub final_accuracy: MeanStd,
    pub final_forgetting: Option<MeanStd>,
    pub final_learning_accuracy: MeanStd,
}

pub fn aggregate(reports: &[SequenceMetrics]) -> Result<MetricsReport> {
    let first = reports.first().ok_or_else(|| Error::InvalidArgument("no reports to aggregate".into()))?;
    let tasks = first.tasks();
    if let Some(r) = reports.iter().find(|r| r.tasks() != tasks) {
        return Err(Error::InvalidArgument(format!("sequences of {} and {} tasks", tasks, r.tasks())));
    }
    let column = |f: &dyn Fn(&SequenceMetrics) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
    let accuracy: Vec<MeanStd> = (0..tasks).map(|t| column(&|r| r.accuracy[t])).collect();
    let learning_accuracy: Vec<MeanStd> = (0..tasks).map(|t| column(&|r| r.learning_accuracy[t])).collect();
    let forgetting: Vec<Option<MeanStd>> = (0..tasks)
        .map(|t| if t == 0 { None } else { Some(column(&|r| r.forgetting[t].unwrap_or(f64::NAN))) })
        .collect();
    Ok(MetricsReport {
        sequences: reports.len(),
        tasks,
        final_accuracy: accuracy[tasks - 1],
        final_forgetting: forgetting[tasks - 1],
        final_learning_accuracy: learning_accuracy[tasks - 1],
        accuracy,
        forgetting,
        learning_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked() -> ScoreMatrix {
        ScoreMatrix::from_rows(vec![vec![0.90], vec![0.80, 0.70], vec![0.85, 0.60, 0.95]]).unwrap()
    }

    #[test]
    fn worked_example() {
        let s = worked();
        assert!((average_accuracy(&s, 3).unwrap() - 0.80).abs() < 1e-15);
        assert!((forgetting(&s, 3).unwrap() - 0.075).abs() < 1e-15);
        assert!((learning_accuracy(&s, 3).unwrap() - 0.85).abs() < 1e-15);
        assert_eq!(average_accuracy(&s, 1).unwrap(), 0.9);
        assert_eq!(learning_accuracy(&s, 1).unwrap(), 0.9);
    }

    #[test]
    fn forgetting_edge_cases() {
        let s = worked();
        assert!(matches!(forgetting(&s, 1), Err(Error::Undefined(_))));
        assert!(forgetting(&s, 4).is_err());
        let flat = ScoreMatrix::from_rows(vec![vec![0.5], vec![0.5, 0.7], vec![0.5, 0.7, 0.2]]).unwrap();
        assert_eq!(forgetting(&flat, 3).unwrap(), 0.0);
        let improving = ScoreMatrix::from_rows(vec![vec![0.5], vec![0.9, 0.7]]).unwrap();
        assert!(forgetting(&improving, 2).unwrap() < 0.0);
    }

    #[test]
    fn constant_matrix() {
        let c = 0.625;
        let s = ScoreMatrix::from_rows(vec![vec![c], vec![c, c], vec![c, c, c]]).unwrap();
        assert_eq!(average_accuracy(&s, 3).unwrap(), c);
        assert_eq!(learning_accuracy(&s, 3).unwrap(), c);
    }

    #[test]
    fn push_row_validates() {
        let mut s = ScoreMatrix::new();
        assert!(s.push_row(vec![0.5, 0.5]).is_err());
        assert!(s.push_row(vec![1.5]).is_err());
        s.push_row(vec![0.5]).unwrap();
        assert!(average_accuracy(&s, 2).is_err());
    }

    #[test]
    fn aggregate_mean_and_sample_std() {
        let seq = |a: f64| SequenceMetrics { accuracy: vec![a], forgetting: vec![None], learning_accuracy: vec![a] };
        let r = aggregate(&[seq(0.6), seq(0.8)]).unwrap();
        assert!((r.final_accuracy.mean - 0.7).abs() < 1e-12);
        assert!((r.final_accuracy.std - 0.02f64.sqrt()).abs() < 1e-12);
        assert_eq!(aggregate(&[seq(0.6)]).unwrap().final_accuracy.std, 0.0);
        assert_eq!(aggregate(&[seq(0.6), seq(0.8)]).unwrap(), aggregate(&[seq(0.8), seq(0.6)]).unwrap());
        let two = SequenceMetrics::from_scores(&worked()).unwrap();
        assert!(aggregate(&[seq(0.6), two]).is_err());
        assert!(aggregate(&[]).is_err());
    }
}
