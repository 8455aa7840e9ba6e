//! Named strategies selected from config: how history weight is gated and
//! how hard-negative candidates are scored.

use crate::error::{Error, Result};
use crate::goodness::{effective_gamma, GateConfig, GateMode};

/// Batch-level summaries a gate may look at when block `d` is trained.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GateContext {
    /// Batch mean of `sum_{j<d} g_+^(j)`.
    pub upstream_sum: f64,
    /// Batch mean of the gamma_0-mixed cumulative positive goodness at `d - 1`.
    pub upstream_mixed: f64,
    /// Batch mean of `g_+^(d-1)`; zero at block 0.
    pub previous: f64,
}

pub trait HistoryGate: Send + Sync {
    fn name(&self) -> &'static str;
    fn gamma(&self, ctx: &GateContext) -> f64;
}

struct FixedGate(GateConfig);
struct CumulativeGate(GateConfig);
struct PrevGate(GateConfig);

impl HistoryGate for FixedGate {
    fn name(&self) -> &'static str {
        "off"
    }
    fn gamma(&self, _: &GateContext) -> f64 {
        self.0.gamma0
    }
}

impl HistoryGate for CumulativeGate {
    fn name(&self) -> &'static str {
        "cumulative"
    }
    fn gamma(&self, ctx: &GateContext) -> f64 {
        let g = if self.0.mixed_cumulative { ctx.upstream_mixed } else { ctx.upstream_sum };
        effective_gamma(&self.0, g, ctx.previous)
    }
}

impl HistoryGate for PrevGate {
    fn name(&self) -> &'static str {
        "prev"
    }
    fn gamma(&self, ctx: &GateContext) -> f64 {
        effective_gamma(&self.0, ctx.upstream_sum, ctx.previous)
    }
}

/// Reduces a candidate's per-block teacher goodness to one hardness score.
pub trait NegativeScorer: Send + Sync {
    fn name(&self) -> &'static str;
    fn score(&self, per_block: &[f64]) -> f64;
}

struct Summed;
struct Deepest;

impl NegativeScorer for Summed {
    fn name(&self) -> &'static str {
        "summed"
    }
    fn score(&self, per_block: &[f64]) -> f64 {
        per_block.iter().sum()
    }
}

impl NegativeScorer for Deepest {
    fn name(&self) -> &'static str {
        "deepest"
    }
    fn score(&self, per_block: &[f64]) -> f64 {
        per_block.last().copied().unwrap_or(0.0)
    }
}

type GateBuilder = fn(&GateConfig) -> Box<dyn HistoryGate>;
type ScorerBuilder = fn() -> Box<dyn NegativeScorer>;

const GATES: &[(&str, GateBuilder)] = &[
    ("off", |c| Box::new(FixedGate(*c))),
    ("cumulative", |c| Box::new(CumulativeGate(*c))),
    ("prev", |c| Box::new(PrevGate(*c))),
];

const SCORERS: &[(&str, ScorerBuilder)] = &[("summed", || Box::new(Summed)), ("deepest", || Box::new(Deepest))];

fn unknown(kind: &str, name: &str, known: Vec<&str>) -> Error {
    Error::Config(format!("unknown {kind} `{name}` (known: {})", known.join(", ")))
}

pub fn gate_names() -> Vec<&'static str> {
    GATES.iter().map(|(n, _)| *n).collect()
}

pub fn scorer_names() -> Vec<&'static str> {
    SCORERS.iter().map(|(n, _)| *n).collect()
}

pub fn gate_by_name(name: &str, cfg: &GateConfig) -> Result<Box<dyn HistoryGate>> {
    GATES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, build)| build(cfg))
        .ok_or_else(|| unknown("gate", name, gate_names()))
}

pub fn build_gate(cfg: &GateConfig) -> Box<dyn HistoryGate> {
    // every GateMode has a registered builder
    gate_by_name(cfg.mode.name(), cfg).unwrap_or_else(|_| Box::new(FixedGate(GateConfig { mode: GateMode::Off, ..*cfg })))
}

pub fn scorer_by_name(name: &str) -> Result<Box<dyn NegativeScorer>> {
    SCORERS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, build)| build())
        .ok_or_else(|| unknown("negative scorer", name, scorer_names()))
}
