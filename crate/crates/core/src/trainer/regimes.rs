//! Side-by-side runs of the same task under different history weights.

use std::fmt;

use crate::error::{Error, Result};
use crate::goodness::GateMode;

use super::epoch::train_from_config;
use super::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeRun {
    pub seed: u64,
    /// End-of-training current-block separation, one entry per block.
    pub sep_cur_nl: Vec<f64>,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSummary {
    pub gamma: f64,
    pub runs: Vec<RegimeRun>,
}

impl RegimeSummary {
    pub fn mean_profile(&self) -> Vec<f64> {
        let depth = self.runs[0].sep_cur_nl.len();
        let n = self.runs.len() as f64;
        (0..depth).map(|d| self.runs.iter().map(|r| r.sep_cur_nl[d]).sum::<f64>() / n).collect()
    }

    /// Square root of the mean per-block sample variance over blocks
    /// `from..`.
    pub fn pooled_std(&self, from: usize) -> f64 {
        let mean = self.mean_profile();
        let k = self.runs.len();
        if k < 2 || from >= mean.len() {
            return 0.0;
        }
        let var: f64 = (from..mean.len())
            .map(|d| self.runs.iter().map(|r| (r.sep_cur_nl[d] - mean[d]).powi(2)).sum::<f64>() / (k - 1) as f64)
            .sum::<f64>()
            / (mean.len() - from) as f64;
        var.sqrt()
    }

    pub fn mean_test_acc(&self) -> f64 {
        self.runs.iter().map(|r| r.test_acc).sum::<f64>() / self.runs.len() as f64
    }
}

/// Outcome of the three-part comparison between the local and the
/// full-history regime.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeRidingVerdict {
    pub local_non_decreasing: bool,
    pub deep_to_first_ratio: f64,
    pub history_starves_deep: bool,
    pub accuracy_gap: f64,
    pub accuracy_close: bool,
}

impl FreeRidingVerdict {
    pub fn passed(&self) -> bool {
        self.local_non_decreasing && self.history_starves_deep && self.accuracy_close
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeComparison {
    pub regimes: Vec<RegimeSummary>,
}

impl RegimeComparison {
    pub fn regime(&self, gamma: f64) -> Option<&RegimeSummary> {
        self.regimes.iter().find(|r| r.gamma == gamma)
    }

    /// Compares `gamma = 0` against `gamma = 1`: the local profile must not
    /// drop by more than one pooled std between consecutive blocks past
    /// block 0, the deepest block under full history must separate at most
    /// half as well as block 1, and mean test accuracies must agree within
    /// `max_gap`.
    pub fn verdict(&self, max_gap: f64) -> Result<FreeRidingVerdict> {
        let (Some(local), Some(full)) = (self.regime(0.0), self.regime(1.0)) else {
            return Err(Error::Parameter("comparison needs gamma = 0 and gamma = 1 runs".into()));
        };
        let lp = local.mean_profile();
        if lp.len() < 3 {
            return Err(Error::Parameter("comparison needs at least 3 blocks".into()));
        }
        let tol = local.pooled_std(1);
        let local_non_decreasing = lp[1..].windows(2).all(|w| w[1] >= w[0] - tol);
        let fp = full.mean_profile();
        let deep_to_first_ratio = fp[fp.len() - 1] / fp[1];
        let history_starves_deep = fp[fp.len() - 1] <= 0.5 * fp[1];
        let accuracy_gap = (local.mean_test_acc() - full.mean_test_acc()).abs();
        Ok(FreeRidingVerdict {
            local_non_decreasing,
            deep_to_first_ratio,
            history_starves_deep,
            accuracy_gap,
            accuracy_close: accuracy_gap <= max_gap,
        })
    }
}

impl fmt::Display for RegimeComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.regimes {
            let profile: Vec<String> = r.mean_profile().iter().map(|v| format!("{v:.4}")).collect();
            writeln!(
                f,
                "gamma={:<4} sep_cur_nl=[{}] pooled_std={:.4} test_acc={:.4}",
                r.gamma,
                profile.join(", "),
                r.pooled_std(1),
                r.mean_test_acc()
            )?;
        }
        Ok(())
    }
}

/// Trains `base` once per (gamma, seed) pair with the gate switched off.
/// The seed replaces both the training and the data seed.
pub fn compare_regimes(base: &TrainConfig, gammas: &[f64], seeds: &[u64]) -> Result<RegimeComparison> {
    if gammas.is_empty() || seeds.is_empty() {
        return Err(Error::Parameter("need at least one gamma and one seed".into()));
    }
    let mut regimes = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.data.seed = seed;
            cfg.gate.gamma0 = gamma;
            cfg.gate.mode = GateMode::Off;
            let (_, outcome) = train_from_config(&cfg, |_| Ok(()))?;
            let last = outcome
                .records
                .last()
                .ok_or_else(|| Error::Parameter("comparison needs at least one epoch".into()))?;
            runs.push(RegimeRun {
                seed,
                sep_cur_nl: last.blocks.iter().map(|b| b.sep_cur_nl).collect(),
                test_acc: outcome.test_accuracy(),
            });
        }
        regimes.push(RegimeSummary { gamma, runs });
    }
    Ok(RegimeComparison { regimes })
}

/// The default comparison task: 4 well-separated blobs in 32 dimensions,
/// a 4-block network and 50 epochs.
pub fn default_comparison_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.data.classes = 4;
    cfg.data.dim = 32;
    cfg.model.blocks = 4;
    cfg.model.hidden_dim = 64;
    cfg.train.epochs = 50;
    cfg.train.label_lr_scale = 0.0;
    cfg
}
