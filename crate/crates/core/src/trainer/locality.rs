use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{total_block_loss_grad, BlockLossBreakdown, BlockLossInputs, StreamScores};
use crate::model::{accumulate, block_backward, BlockParams, Network};
use crate::numerics::Matrix;

use super::config::TrainConfig;
use super::registry::{build_gate, scorer_by_name};
use super::streams::{block_streams, History, StreamBatch};

/// What crosses the boundary between block `l` and earlier blocks during
/// the reverse pass. `Leaky` skips the detach and exists only as a
/// negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientFlow {
    Detached,
    Leaky,
}

impl GradientFlow {
    fn boundary(self) -> f64 {
        match self {
            GradientFlow::Detached => 0.0,
            GradientFlow::Leaky => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalityEntry {
    pub loss_block: usize,
    pub param_block: usize,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalityReport {
    pub entries: Vec<LocalityEntry>,
}

impl LocalityReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_abs_grad == 0.0)
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.max_abs_grad).fold(0.0, f64::max)
    }
}

impl fmt::Display for LocalityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.entries.is_empty() {
            return write!(f, "no earlier blocks to check");
        }
        for (i, e) in self.entries.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(
                f,
                "loss block {} -> params of block {}: max |grad| = {:e}",
                e.loss_block, e.param_block, e.max_abs_grad
            )?;
        }
        Ok(())
    }
}

fn max_abs(p: &BlockParams) -> f64 {
    p.tensors().iter().flat_map(|t| t.iter()).fold(0.0, |m, v| m.max(v.abs()))
}

fn scale(v: &[f64], s: f64) -> Vec<f64> {
    v.iter().map(|x| x * s).collect()
}

/// Gradient of block `loss_block`'s objective with respect to every
/// block's parameters. The reverse pass always walks back to block 0;
/// under `Detached` the cotangents crossing into earlier blocks are the
/// stop-gradient zero. Residual weights, the gate and the MGC multipliers
/// are treated as constants in both modes.
pub fn network_gradients(
    net: &Network,
    batch: &StreamBatch,
    config: &TrainConfig,
    loss_block: usize,
    flow: GradientFlow,
) -> Result<(BlockLossBreakdown, Vec<BlockParams>)> {
    let depth = net.depth();
    let caches = batch.forward(net, loss_block + 1)?;
    let history = History::from_caches(&caches, loss_block, config.gate.gamma0);
    let fwd = block_streams(&caches, loss_block);
    let g = fwd.goodness();
    let gamma = build_gate(&config.gate).gamma(&history.gate_context());
    let inputs = BlockLossInputs {
        current: &g,
        upstream_sum: &history.upstream,
        previous: history.previous.as_ref(),
        gamma,
        depth: loss_block,
        blocks: depth,
    };
    let (breakdown, grad) = total_block_loss_grad(&inputs, &config.loss, config.train.mgc)?;
    let mut grads: Vec<BlockParams> = net.blocks.iter().map(BlockParams::zeros_like).collect();
    let through = flow.boundary();
    let pick = |s: &StreamScores, k: usize| -> Vec<f64> {
        match k {
            0 => s.pos.clone(),
            1 => s.wrong_label.clone(),
            _ => s.wrong_image.clone(),
        }
    };
    for (k, cache) in caches.iter().enumerate() {
        let (own, d_in) = block_backward(&net.blocks[loss_block], &cache[loss_block], &pick(&grad.current, k), None)?;
        accumulate(&mut grads[loss_block], &own);
        let mut d_out: Matrix = d_in;
        d_out.scale_in_place(through);
        let up = scale(&pick(&grad.upstream_sum, k), through);
        let prev = scale(&pick(&grad.previous, k), through);
        for j in (0..loss_block).rev() {
            let mut dg = up.clone();
            if j + 1 == loss_block {
                dg.iter_mut().zip(&prev).for_each(|(a, b)| *a += b);
            }
            let (gj, dx) = block_backward(&net.blocks[j], &cache[j], &dg, Some(&d_out))?;
            accumulate(&mut grads[j], &gj);
            d_out = dx;
        }
    }
    Ok((breakdown, grads))
}

/// Checks that no block's objective reaches the parameters of an earlier
/// block. Negatives are mined with the network itself as teacher.
pub fn locality_audit(net: &Network, x: &Matrix, labels: &[usize], config: &TrainConfig) -> Result<LocalityReport> {
    locality_audit_flow(net, x, labels, config, GradientFlow::Detached)
}

/// As [`locality_audit`] with an explicit boundary treatment; `Leaky` is
/// the negative control and should fail.
pub fn locality_audit_flow(
    net: &Network,
    x: &Matrix,
    labels: &[usize],
    config: &TrainConfig,
    flow: GradientFlow,
) -> Result<LocalityReport> {
    let scorer = scorer_by_name(&config.train.hnm_scorer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let batch = StreamBatch::build(x, labels, config.train.hnm_k_first, net, scorer.as_ref(), &mut rng)?;
    locality_audit_with(net, &batch, config, flow)
}

pub fn locality_audit_with(net: &Network, batch: &StreamBatch, config: &TrainConfig, flow: GradientFlow) -> Result<LocalityReport> {
    let mut report = LocalityReport::default();
    for l in 1..net.depth() {
        let (_, grads) = network_gradients(net, batch, config, l, flow)?;
        for (j, g) in grads.iter().enumerate().take(l) {
            report.entries.push(LocalityEntry {
                loss_block: l,
                param_block: j,
                max_abs_grad: max_abs(g),
            });
        }
    }
    Ok(report)
}
