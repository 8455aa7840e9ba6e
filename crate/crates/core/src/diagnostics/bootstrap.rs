use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

use super::PredictionSet;

pub const DEFAULT_RESAMPLES: usize = 5000;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapReport {
    pub examples: usize,
    pub resamples: usize,
    /// `Acc(A) - Acc(B)`.
    pub delta_acc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub disagreement: f64,
    /// A correct, B wrong.
    pub a_only: usize,
    /// A wrong, B correct.
    pub b_only: usize,
    /// Sorted resampled deltas, kept for further intervals.
    pub distribution: Vec<f64>,
}

impl BootstrapReport {
    /// Percentile interval at the given nominal coverage.
    pub fn interval(&self, coverage: f64) -> (f64, f64) {
        let tail = (1.0 - coverage.clamp(0.0, 1.0)) / 2.0;
        (percentile(&self.distribution, tail), percentile(&self.distribution, 1.0 - tail))
    }
}

impl fmt::Display for BootstrapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "examples      {}", self.examples)?;
        writeln!(f, "resamples     {}", self.resamples)?;
        writeln!(f, "delta_acc     {:+.6}", self.delta_acc)?;
        writeln!(f, "ci95          [{:+.6}, {:+.6}]", self.ci_low, self.ci_high)?;
        writeln!(f, "disagreement  {:.6}", self.disagreement)?;
        write!(f, "flips         a_only={} b_only={}", self.a_only, self.b_only)
    }
}

/// Linear-interpolation percentile of sorted data, `p` in [0, 1].
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Paired bootstrap of per-example correctness deltas. Resample `r` draws
/// from its own stream of a seeded ChaCha generator, so the result does not
/// depend on thread scheduling.
pub fn paired_bootstrap(a: &PredictionSet, b: &PredictionSet, resamples: usize, seed: u64) -> Result<BootstrapReport> {
    a.check_paired(b)?;
    if resamples < 1000 {
        return Err(Error::Parameter(format!("need at least 1000 resamples, got {resamples}")));
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::Domain("bootstrap over zero examples".into()));
    }
    let delta: Vec<i8> = (0..n).map(|i| a.correct(i) as i8 - b.correct(i) as i8).collect();
    let a_only = delta.iter().filter(|&&d| d > 0).count();
    let b_only = delta.iter().filter(|&&d| d < 0).count();
    let disagreement = (0..n).filter(|&i| a.predicted[i] != b.predicted[i]).count() as f64 / n as f64;
    let delta_acc = (a_only as f64 - b_only as f64) / n as f64;

    let mut distribution: Vec<f64> = if a_only == 0 && b_only == 0 {
        vec![0.0; resamples]
    } else {
        (0..resamples)
            .into_par_iter()
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r as u64);
                let mut sum = 0i64;
                for _ in 0..n {
                    sum += i64::from(delta[rng.random_range(0..n)]);
                }
                sum as f64 / n as f64
            })
            .collect()
    };
    distribution.sort_by(f64::total_cmp);
    let mut report = BootstrapReport {
        examples: n,
        resamples,
        delta_acc,
        ci_low: 0.0,
        ci_high: 0.0,
        disagreement,
        a_only,
        b_only,
        distribution,
    };
    (report.ci_low, report.ci_high) = report.interval(0.95);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(pred: &[usize], labels: &[usize]) -> PredictionSet {
        let scores = pred.iter().flat_map(|&p| [(p == 0) as u8 as f64, (p == 1) as u8 as f64]).collect();
        PredictionSet::new(scores, 2, labels.to_vec()).unwrap()
    }

    #[test]
    fn identical_sets_give_a_point_interval() {
        let a = set(&[0, 1, 1, 0], &[0, 1, 0, 0]);
        let r = paired_bootstrap(&a, &a, 2000, 1).unwrap();
        assert_eq!((r.delta_acc, r.ci_low, r.ci_high, r.disagreement), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn single_flip_arithmetic() {
        let labels = vec![0; 10];
        let a = set(&[0; 10], &labels);
        let mut bp = [0; 10];
        bp[3] = 1;
        let b = set(&bp, &labels);
        let r = paired_bootstrap(&a, &b, 1000, 2).unwrap();
        assert_eq!(r.delta_acc, 0.1);
        assert_eq!(r.disagreement, 0.1);
        assert_eq!((r.a_only, r.b_only), (1, 0));
    }

    #[test]
    fn deterministic_and_nested() {
        let labels: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let pa: Vec<usize> = (0..200).map(|i| if i % 7 == 0 { 1 - i % 2 } else { i % 2 }).collect();
        let pb: Vec<usize> = (0..200).map(|i| if i % 5 == 0 { 1 - i % 2 } else { i % 2 }).collect();
        let (a, b) = (set(&pa, &labels), set(&pb, &labels));
        let r1 = paired_bootstrap(&a, &b, 3000, 9).unwrap();
        let r2 = paired_bootstrap(&a, &b, 3000, 9).unwrap();
        assert_eq!(r1, r2);
        let (l90, h90) = r1.interval(0.90);
        let (l99, h99) = r1.interval(0.99);
        assert!(l99 <= r1.ci_low && r1.ci_low <= l90 && h90 <= r1.ci_high && r1.ci_high <= h99);
        assert!(r1.ci_low <= r1.delta_acc && r1.delta_acc <= r1.ci_high);
    }

    #[test]
    fn percentile_interpolates() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(percentile(&s, 0.5), 1.5);
        assert_eq!(percentile(&s, 0.0), 0.0);
        assert_eq!(percentile(&s, 1.0), 3.0);
    }

    #[test]
    fn too_few_resamples_rejected() {
        let a = set(&[0], &[0]);
        assert!(paired_bootstrap(&a, &a, 10, 0).is_err());
    }
}
