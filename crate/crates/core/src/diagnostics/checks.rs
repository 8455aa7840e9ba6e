use crate::error::{Error, Result};

use super::{GoodnessTable, PredictionSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RedistributionReport {
    /// Largest change of any cumulative class score.
    pub max_score_change: f64,
    pub predictions_unchanged: bool,
    /// Largest deviation of the induced per-block margin shift from
    /// `+-(q(x, y) - q(x, y'))` at the two perturbed depths.
    pub max_margin_shift_error: f64,
}

impl RedistributionReport {
    pub fn passed(&self, score_tol: f64) -> bool {
        self.predictions_unchanged && self.max_score_change <= score_tol
    }
}

/// Adds `q` to block `a` and subtracts it from block `b`, then compares
/// full-depth cumulative scores, predictions and per-block margins.
/// `q` is row-major `examples x classes`.
pub fn redistribution_check(table: &GoodnessTable, a: usize, b: usize, q: &[f64]) -> Result<RedistributionReport> {
    if a == b || a >= table.blocks || b >= table.blocks {
        return Err(Error::Parameter(format!("need distinct depths below {}, got {a} and {b}", table.blocks)));
    }
    let (n, c) = (table.examples(), table.classes);
    if q.len() != n * c {
        return Err(Error::dims("redistribution q", n * c, q.len()));
    }
    let mut moved = table.clone();
    for i in 0..n {
        let qi = &q[i * c..(i + 1) * c];
        moved.block_mut(a, i).iter_mut().zip(qi).for_each(|(g, q)| *g += q);
        moved.block_mut(b, i).iter_mut().zip(qi).for_each(|(g, q)| *g -= q);
    }
    let before = table.predictions()?;
    let after = moved.predictions()?;
    let max_score_change = before
        .scores
        .iter()
        .zip(&after.scores)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);

    let mut shift_err: f64 = 0.0;
    for i in 0..n {
        let y = table.labels[i];
        let qi = &q[i * c..(i + 1) * c];
        for k in (0..c).filter(|&k| k != y) {
            let predicted = qi[y] - qi[k];
            for (d, sign) in [(a, 1.0), (b, -1.0)] {
                let m0 = table.block(d, i)[y] - table.block(d, i)[k];
                let m1 = moved.block(d, i)[y] - moved.block(d, i)[k];
                shift_err = shift_err.max(((m1 - m0) - sign * predicted).abs());
            }
        }
    }
    Ok(RedistributionReport {
        max_score_change,
        predictions_unchanged: before.predicted == after.predicted,
        max_margin_shift_error: shift_err,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityPoint {
    pub t: f64,
    /// `Pr[Delta_A <= 2t] + Pr[E > t]`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub disagreement: f64,
    pub accuracy_gap: f64,
    pub accuracy_within_disagreement: bool,
    pub points: Vec<StabilityPoint>,
}

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.accuracy_within_disagreement && self.points.iter().all(|p| p.holds)
    }
}

/// Top-score margin of A's prediction over the runner-up.
fn top_margin(scores: &[f64], pred: usize) -> f64 {
    let runner_up = scores
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != pred)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    scores[pred] - runner_up
}

pub fn stability_bound_check(a: &PredictionSet, b: &PredictionSet, t_grid: &[f64]) -> Result<StabilityReport> {
    a.check_paired(b)?;
    let n = a.len();
    if n == 0 {
        return Err(Error::Domain("stability check on empty prediction sets".into()));
    }
    let nf = n as f64;
    let delta: Vec<f64> = (0..n).map(|i| top_margin(a.row(i), a.predicted[i])).collect();
    let err: Vec<f64> = (0..n)
        .map(|i| a.row(i).iter().zip(b.row(i)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        .collect();
    let flips = (0..n).filter(|&i| a.predicted[i] != b.predicted[i]).count();
    let disagreement = flips as f64 / nf;
    let correct = |p: &PredictionSet| (0..n).filter(|&i| p.correct(i)).count();
    let (ca, cb) = (correct(a), correct(b));
    let accuracy_gap = ca.abs_diff(cb) as f64 / nf;
    let points = t_grid
        .iter()
        .map(|&t| {
            let close = delta.iter().filter(|&&d| d <= 2.0 * t).count();
            let far = err.iter().filter(|&&e| e > t).count();
            StabilityPoint {
                t,
                bound: (close + far) as f64 / nf,
                holds: flips <= close + far,
            }
        })
        .collect();
    Ok(StabilityReport {
        disagreement,
        accuracy_gap,
        accuracy_within_disagreement: ca.abs_diff(cb) <= flips,
        points,
    })
}
