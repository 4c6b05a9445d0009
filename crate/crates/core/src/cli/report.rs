//! Summary tables over run records.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::run::{record_files, GroupSummary, RunRecord};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_json, write_text};
use crate::metrics::MeanStd;

/// Reads record files; directories contribute every `*.record.json` inside.
pub fn load_records(paths: &[PathBuf]) -> Result<Vec<RunRecord>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            files.extend(record_files(p)?);
        } else {
            files.push(p.clone());
        }
    }
    files.iter().map(|f| read_json(f)).collect()
}

/// One summary per (method, init), sorted by method then init.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<GroupSummary>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no run records to report".into()));
    }
    let mut groups: BTreeMap<(&str, &str), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((&r.method, &r.init)).or_default().push(r);
    }
    groups.into_iter().map(|((m, i), rs)| GroupSummary::from_records(m, i, &rs)).collect()
}

fn epsilons(rows: &[GroupSummary]) -> Vec<f64> {
    let mut eps: Vec<f64> = rows.iter().flat_map(|r| r.sharpness.iter().map(|s| s.epsilon)).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    eps
}

/// Columns: method, init, accuracy, forgetting, LA (each mean then std),
/// runs, then mean sharpness per ε when present.
pub fn summary_csv(rows: &[GroupSummary]) -> String {
    let eps = epsilons(rows);
    let mut header = vec![
        "method".to_owned(),
        "init".into(),
        "accuracy".into(),
        "accuracy_std".into(),
        "forgetting".into(),
        "forgetting_std".into(),
        "learning_accuracy".into(),
        "learning_accuracy_std".into(),
        "runs".into(),
    ];
    for e in &eps {
        header.push(format!("sharpness_{e:e}"));
        header.push(format!("sharpness_{e:e}_std"));
    }
    let mut out = header.join(",") + "\n";
    for r in rows {
        let m = &r.metrics;
        let pair = |v: Option<MeanStd>| match v {
            Some(v) => [fmt_f64(v.mean), fmt_f64(v.std)],
            None => [String::new(), String::new()],
        };
        let mut cells = vec![r.method.clone(), r.init.clone()];
        cells.extend(pair(Some(m.final_accuracy)));
        cells.extend(pair(m.final_forgetting));
        cells.extend(pair(Some(m.final_learning_accuracy)));
        cells.push(r.runs.to_string());
        for &e in &eps {
            cells.extend(pair(r.sharpness_at(e)));
        }
        out += &(cells.join(",") + "\n");
    }
    out
}

pub fn summary_text(rows: &[GroupSummary]) -> String {
    let eps = epsilons(rows);
    let fmt = |v: Option<MeanStd>| v.map_or("-".to_owned(), |v| format!("{:.4} ± {:.4}", v.mean, v.std));
    let mut header: Vec<String> =
        ["method", "init", "accuracy", "forgetting", "LA", "runs"].iter().map(|s| s.to_string()).collect();
    header.extend(eps.iter().map(|e| format!("φ@{e:e}")));
    let mut table = vec![header];
    for r in rows {
        let m = &r.metrics;
        let mut row = vec![
            r.method.clone(),
            r.init.clone(),
            fmt(Some(m.final_accuracy)),
            fmt(m.final_forgetting),
            fmt(Some(m.final_learning_accuracy)),
            r.runs.to_string(),
        ];
        row.extend(eps.iter().map(|&e| fmt(r.sharpness_at(e))));
        table.push(row);
    }
    let widths: Vec<usize> =
        (0..table[0].len()).map(|c| table.iter().map(|row| row[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
            .collect();
        out += line.join("  ").trim_end();
        out.push('\n');
    }
    out
}

/// Writes `summary.csv` and `summary.txt` into `out`.
pub fn write_report(rows: &[GroupSummary], out: &Path) -> Result<()> {
    write_text(&out.join("summary.csv"), &summary_csv(rows))?;
    write_text(&out.join("summary.txt"), &summary_text(rows))
}
