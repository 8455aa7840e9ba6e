//! Text prediction files. A header line `# predictions classes=C`, then one
//! line per example: `C` scores, the predicted class and the true class,
//! separated by single spaces. Scores are written in shortest round-trip
//! form, so reading a file back reproduces every bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::diagnostics::PredictionSet;
use crate::error::{Error, Result};

const HEADER: &str = "# predictions classes=";

pub fn format_predictions(set: &PredictionSet) -> String {
    let mut out = format!("{HEADER}{}\n", set.classes);
    for i in 0..set.len() {
        for s in set.row(i) {
            let _ = write!(out, "{s} ");
        }
        let _ = writeln!(out, "{} {}", set.predicted[i], set.labels[i]);
    }
    out
}

pub fn parse_predictions(text: &str) -> Result<PredictionSet> {
    let mut lines = text.lines();
    let classes: usize = lines
        .next()
        .and_then(|h| h.strip_prefix(HEADER))
        .and_then(|c| c.trim().parse().ok())
        .ok_or_else(|| Error::Format("missing prediction header".into()))?;
    let mut scores = vec![];
    let mut predicted = vec![];
    let mut labels = vec![];
    for (no, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != classes + 2 {
            return Err(Error::Format(format!("line {}: expected {} fields, got {}", no + 2, classes + 2, parts.len())));
        }
        for p in &parts[..classes] {
            scores.push(p.parse::<f64>().map_err(|_| Error::Format(format!("line {}: bad score `{p}`", no + 2)))?);
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("line {}: bad class `{s}`", no + 2)));
        predicted.push(idx(parts[classes])?);
        labels.push(idx(parts[classes + 1])?);
    }
    let set = PredictionSet::new(scores, classes, labels)?;
    if let Some(i) = (0..set.len()).find(|&i| set.predicted[i] != predicted[i]) {
        return Err(Error::Format(format!("example {i}: stored prediction {} is not the argmax {}", predicted[i], set.predicted[i])));
    }
    Ok(set)
}

pub fn save_predictions(set: &PredictionSet, path: &Path) -> Result<()> {
    std::fs::write(path, format_predictions(set)).map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: &Path) -> Result<PredictionSet> {
    parse_predictions(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}
