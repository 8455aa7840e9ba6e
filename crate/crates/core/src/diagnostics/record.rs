use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::goodness::MarginTrace;
use crate::io::data::Dataset;
use crate::model::Network;
use crate::numerics::argmax;
use crate::trainer::derangement;

use super::{attenuation_by_block, depth_saturation, loss_collapse, own_vs_inherited, sep_cur_nl, sep_nl, GoodnessTable};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BlockDiagnostics {
    pub sep_cur_nl: f64,
    pub sep_nl: f64,
    pub lc: f64,
    pub ds: Option<f64>,
    /// Mean positive current-block goodness seen in training.
    pub gpos_cur: f64,
    pub r_mean: f64,
    pub free_riding: f64,
    pub own_fraction: Option<f64>,
    /// Mean effective history weight.
    pub gamma: f64,
    /// Mean total block objective.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiagnosticsRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub blocks: Vec<BlockDiagnostics>,
}

/// Fixed-point-free pairing for the wrong-image part of loss collapse;
/// identity for a single example.
pub fn eval_pairing(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    derangement(n, &mut rng).unwrap_or_else(|_| (0..n).collect())
}

/// Margin trace of an evaluation set: the wrong label is the strongest
/// wrong class under full-depth cumulative scores, the wrong image comes
/// from `pairing`.
pub fn trace_from_table(table: &GoodnessTable, pairing: &[usize], gammas: &[f64]) -> Result<MarginTrace> {
    let n = table.examples();
    let full = table.predictions()?;
    let rival: Vec<usize> = (0..n)
        .map(|i| {
            let mut row = full.row(i).to_vec();
            row[table.labels[i]] = f64::NEG_INFINITY;
            argmax(&row)
        })
        .collect();
    let mut pos = vec![];
    let mut nl = vec![];
    let mut ni = vec![];
    for d in 0..table.blocks {
        let g: Vec<f64> = (0..n).map(|i| table.block(d, i)[table.labels[i]]).collect();
        nl.push((0..n).map(|i| g[i] - table.block(d, i)[rival[i]]).collect());
        ni.push((0..n).map(|i| g[i] - table.block(d, pairing[i])[table.labels[i]]).collect());
        pos.push(g);
    }
    MarginTrace::from_current(gammas, pos, nl, ni)
}

/// Builds the record for one epoch. Separation, loss collapse and depth
/// saturation come from the evaluation set (`val`, or `train` when `val`
/// is empty); attenuation and goodness statistics from `traces`.
pub fn evaluate(
    epoch: usize,
    net: &Network,
    train: &Dataset,
    val: &Dataset,
    traces: &[MarginTrace],
    block_losses: &[f64],
    beta: f64,
    seed: u64,
) -> Result<DiagnosticsRecord> {
    let train_table = GoodnessTable::from_network(net, &train.x, &train.y)?;
    let train_acc = train_table.predictions()?.accuracy();
    let eval_table = if val.is_empty() {
        train_table
    } else {
        GoodnessTable::from_network(net, &val.x, &val.y)?
    };
    let val_acc = if val.is_empty() { f64::NAN } else { eval_table.predictions()?.accuracy() };
    let pairing = eval_pairing(eval_table.examples(), seed);
    let lc = loss_collapse(&eval_table, &pairing, beta)?;
    let prefixes = (0..net.depth()).map(|d| eval_table.prefix_predictions(d)).collect::<Result<Vec<_>>>()?;
    let ds = depth_saturation(&prefixes)?;
    let att = if traces.is_empty() { vec![] } else { attenuation_by_block(traces, beta)? };
    let own = own_vs_inherited(traces);

    let mut blocks = Vec::with_capacity(net.depth());
    for d in 0..net.depth() {
        let (mut gpos, mut gamma, mut count) = (0.0, 0.0, 0usize);
        for t in traces {
            let b = &t.blocks[d];
            gpos += b.pos_goodness.iter().sum::<f64>();
            gamma += b.gamma * b.pos_goodness.len() as f64;
            count += b.pos_goodness.len();
        }
        let c = count.max(1) as f64;
        blocks.push(BlockDiagnostics {
            sep_cur_nl: sep_cur_nl(&eval_table, d)?,
            sep_nl: sep_nl(&eval_table, d)?,
            lc: lc[d],
            ds: ds[d],
            gpos_cur: gpos / c,
            r_mean: att.get(d).map_or(f64::NAN, |a| a.mean_ratio),
            free_riding: att.get(d).map_or(f64::NAN, |a| a.free_riding),
            own_fraction: own.get(d).copied().flatten(),
            gamma: gamma / c,
            loss: block_losses.get(d).copied().unwrap_or(f64::NAN),
        });
    }
    Ok(DiagnosticsRecord {
        epoch,
        train_acc,
        val_acc,
        blocks,
    })
}
