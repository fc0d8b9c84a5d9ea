//! Aggregate tables over finished experiments.

use std::path::Path;

use crate::error::Result;
use crate::experiment::{ExperimentResult, Stat};

pub const AGGREGATE_HEADER: [&str; 8] = ["Method", "Spec", "Acc (%)", "NLL", "ECE", "FLOPs", "PD", "CS"];

fn pm(s: &Stat, scale: f64, digits: usize) -> String {
    format!("{:.d$} ± {:.d$}", s.mean * scale, s.std * scale, d = digits)
}

fn opt(s: &Option<Stat>) -> String {
    s.as_ref().map_or_else(|| "-".to_string(), |s| pm(s, 1.0, 3))
}

/// Mean ± sample std over seeds, one row per experiment, tagged with the spec hash.
pub fn aggregate_table(rows: &[(String, &ExperimentResult)]) -> String {
    let body: Vec<[String; 8]> = rows
        .iter()
        .map(|(label, r)| {
            let a = &r.aggregate;
            [
                label.clone(),
                r.spec_hash.clone(),
                pm(&a.ensemble_accuracy, 100.0, 2),
                pm(&a.nll, 1.0, 3),
                pm(&a.ece, 1.0, 3),
                format!("{:.3}", a.flops_ratio.mean),
                opt(&a.pd),
                opt(&a.cs),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = AGGREGATE_HEADER.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(AGGREGATE_HEADER.to_vec());
    out.push_str(&format!(
        "|{}|\n",
        widths.iter().map(|w| "-".repeat(w + 2)).collect::<Vec<_>>().join("|")
    ));
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

/// Finds every `result.json` at most two directory levels below `root`.
pub fn load_results(root: &Path) -> Result<Vec<ExperimentResult>> {
    let mut found = Vec::new();
    collect(root, 2, &mut found)?;
    found.sort();
    found
        .iter()
        .map(|p| Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?))
        .collect()
}

fn collect(dir: &Path, depth: usize, out: &mut Vec<std::path::PathBuf>) -> Result<()> {
    let candidate = dir.join("result.json");
    if candidate.is_file() {
        out.push(candidate);
    }
    if depth == 0 {
        return Ok(());
    }
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, depth - 1, out)?;
        }
    }
    Ok(())
}
