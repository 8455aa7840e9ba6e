//! Block-health analytics over class-goodness tables and margin traces.

pub mod bootstrap;
pub mod checks;
pub mod record;

use crate::error::{Error, Result};
use crate::goodness::{AttenuationStats, MarginTrace, Sharpness};
use crate::model::{class_goodness_table, Network};
use crate::numerics::{argmax, Matrix};

pub use bootstrap::{paired_bootstrap, BootstrapReport};
pub use checks::{redistribution_check, stability_bound_check, RedistributionReport, StabilityPoint, StabilityReport};
pub use record::{evaluate, BlockDiagnostics, DiagnosticsRecord};

/// Cumulative class scores with argmax predictions (lowest index wins ties).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub classes: usize,
    /// Row-major `n x classes`.
    pub scores: Vec<f64>,
    pub predicted: Vec<usize>,
    pub labels: Vec<usize>,
}

impl PredictionSet {
    pub fn new(scores: Vec<f64>, classes: usize, labels: Vec<usize>) -> Result<Self> {
        if classes == 0 || scores.len() != classes * labels.len() {
            return Err(Error::dims("PredictionSet", scores.len(), classes * labels.len()));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let predicted = scores.chunks(classes).map(argmax).collect();
        Ok(PredictionSet {
            classes,
            scores,
            predicted,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.classes..(i + 1) * self.classes]
    }

    pub fn correct(&self, i: usize) -> bool {
        self.predicted[i] == self.labels[i]
    }

    pub fn accuracy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        (0..self.len()).filter(|&i| self.correct(i)).count() as f64 / self.len() as f64
    }

    pub(crate) fn check_paired(&self, other: &PredictionSet) -> Result<()> {
        if self.labels != other.labels || self.classes != other.classes {
            return Err(Error::Domain("prediction sets cover different examples".into()));
        }
        Ok(())
    }
}

/// Goodness of every (block, example, class) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct GoodnessTable {
    pub blocks: usize,
    pub classes: usize,
    pub labels: Vec<usize>,
    data: Vec<f64>,
}

impl GoodnessTable {
    /// `data[(d * n + i) * classes + y]`.
    pub fn new(blocks: usize, classes: usize, labels: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if data.len() != blocks * labels.len() * classes {
            return Err(Error::dims("GoodnessTable", data.len(), blocks * labels.len() * classes));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(GoodnessTable {
            blocks,
            classes,
            labels,
            data,
        })
    }

    pub fn from_network(net: &Network, x: &Matrix, labels: &[usize]) -> Result<Self> {
        let per_block = class_goodness_table(net, x)?;
        Self::new(net.depth(), net.classes, labels.to_vec(), per_block.concat())
    }

    pub fn examples(&self) -> usize {
        self.labels.len()
    }

    fn at(&self, d: usize, i: usize) -> usize {
        (d * self.examples() + i) * self.classes
    }

    /// Class goodness of example `i` at block `d`.
    pub fn block(&self, d: usize, i: usize) -> &[f64] {
        let a = self.at(d, i);
        &self.data[a..a + self.classes]
    }

    pub fn block_mut(&mut self, d: usize, i: usize) -> &mut [f64] {
        let a = self.at(d, i);
        &mut self.data[a..a + self.classes]
    }

    /// `sum_{j<=d}` of the class goodness of example `i`.
    pub fn prefix(&self, d: usize, i: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.classes];
        for j in 0..=d {
            s.iter_mut().zip(self.block(j, i)).for_each(|(a, b)| *a += b);
        }
        s
    }

    pub fn prefix_predictions(&self, d: usize) -> Result<PredictionSet> {
        let scores = (0..self.examples()).flat_map(|i| self.prefix(d, i)).collect();
        PredictionSet::new(scores, self.classes, self.labels.clone())
    }

    pub fn predictions(&self) -> Result<PredictionSet> {
        self.prefix_predictions(self.blocks.saturating_sub(1))
    }

    fn check_depth(&self, d: usize) -> Result<()> {
        if d >= self.blocks {
            return Err(Error::Parameter(format!("depth {d} out of range for {} blocks", self.blocks)));
        }
        if self.examples() == 0 {
            return Err(Error::Domain("separation of an empty table".into()));
        }
        Ok(())
    }
}

/// Mean over examples of `pos_i - max_{y' != y_i} scores_i[y']`, where
/// `rows[i]` holds the scores of every class and `labels[i]` the true one.
pub fn separation(rows: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Domain("separation of an empty set".into()));
    }
    if rows.len() != labels.len() {
        return Err(Error::dims("separation", rows.len(), labels.len()));
    }
    let mut total = 0.0;
    for (row, &y) in rows.iter().zip(labels) {
        if row.len() < 2 || y >= row.len() {
            return Err(Error::Domain("separation needs at least one wrong class per example".into()));
        }
        let worst = row
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != y)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        total += row[y] - worst;
    }
    Ok(total / rows.len() as f64)
}

/// Current-block separation against the hardest wrong label.
pub fn sep_cur_nl(table: &GoodnessTable, d: usize) -> Result<f64> {
    table.check_depth(d)?;
    let rows: Vec<Vec<f64>> = (0..table.examples()).map(|i| table.block(d, i).to_vec()).collect();
    separation(&rows, &table.labels)
}

/// Separation of prefix-summed goodness through block `d`.
pub fn sep_nl(table: &GoodnessTable, d: usize) -> Result<f64> {
    table.check_depth(d)?;
    let rows: Vec<Vec<f64>> = (0..table.examples()).map(|i| table.prefix(d, i)).collect();
    separation(&rows, &table.labels)
}

/// Prefix accuracy over full accuracy; `None` everywhere when the full
/// model gets nothing right.
pub fn depth_saturation(prefix_sets: &[PredictionSet]) -> Result<Vec<Option<f64>>> {
    let Some(full) = prefix_sets.last() else {
        return Ok(vec![]);
    };
    for s in prefix_sets {
        s.check_paired(full)?;
    }
    let full_acc = full.accuracy();
    Ok(prefix_sets
        .iter()
        .map(|s| (full_acc > 0.0).then(|| s.accuracy() / full_acc))
        .collect())
}

/// End-of-training barrier of the prefix-summed inference margin. The
/// wrong-label part averages over every wrong class; the wrong-image part
/// pairs example `i` with image `pairing[i]` under label `y_i`. The two
/// streams are weighted equally.
pub fn loss_collapse(table: &GoodnessTable, pairing: &[usize], beta: f64) -> Result<Vec<f64>> {
    let n = table.examples();
    if pairing.len() != n {
        return Err(Error::dims("loss_collapse pairing", n, pairing.len()));
    }
    if n == 0 {
        return Err(Error::Domain("loss collapse of an empty table".into()));
    }
    let beta = Sharpness::new(beta)?;
    let c = table.classes;
    let mut out = Vec::with_capacity(table.blocks);
    let mut cum = vec![0.0; n * c];
    for d in 0..table.blocks {
        for i in 0..n {
            cum[i * c..(i + 1) * c].iter_mut().zip(table.block(d, i)).for_each(|(a, b)| *a += b);
        }
        let mut total = 0.0;
        for i in 0..n {
            let y = table.labels[i];
            let row = &cum[i * c..(i + 1) * c];
            let nl = (0..c).filter(|&k| k != y).map(|k| beta.barrier(row[y] - row[k])).sum::<f64>() / (c - 1) as f64;
            let ni = beta.barrier(row[y] - cum[pairing[i] * c + y]);
            total += 0.5 * (nl + ni);
        }
        out.push(total / n as f64);
    }
    Ok(out)
}

/// Same quantity from a training trace: barrier of `P + m` over both
/// recorded negative streams.
pub fn loss_collapse_from_trace(trace: &MarginTrace, beta: f64) -> Result<Vec<f64>> {
    let beta = Sharpness::new(beta)?;
    Ok(trace
        .blocks
        .iter()
        .map(|b| {
            let n = b.pos_goodness.len().max(1) as f64;
            let s = |t: &crate::goodness::StreamTrace| t.margin.iter().zip(&t.upstream).map(|(m, p)| beta.barrier(m + p)).sum::<f64>();
            0.5 * (s(&b.wrong_label) + s(&b.wrong_image)) / n
        })
        .collect())
}

/// Share of block `d`'s gamma-mixed cumulative positive goodness produced
/// by the block itself, pooled over traces.
pub fn own_vs_inherited(traces: &[MarginTrace]) -> Vec<Option<f64>> {
    let depth = traces.first().map_or(0, MarginTrace::depth);
    let mut own = vec![0.0; depth];
    let mut total = vec![0.0; depth];
    for t in traces {
        let n = t.examples();
        let mut up = vec![0.0; n];
        for (d, b) in t.blocks.iter().enumerate().take(depth) {
            for i in 0..n {
                let g = b.pos_goodness[i];
                own[d] += g;
                total[d] += g + b.gamma * up[i];
                up[i] += g;
            }
        }
    }
    own.iter()
        .zip(&total)
        .map(|(&o, &t)| (t != 0.0).then(|| o / t))
        .collect()
}

/// Wrong-label attenuation statistics per block, pooled over traces that
/// may each carry their own gamma.
pub fn attenuation_by_block(traces: &[MarginTrace], beta: f64) -> Result<Vec<AttenuationStats>> {
    let depth = traces.first().map_or(0, MarginTrace::depth);
    let mut out = Vec::with_capacity(depth);
    for d in 0..depth {
        let mut acc = AttenuationStats {
            mean_ratio: 0.0,
            min_ratio: f64::INFINITY,
            max_ratio: f64::NEG_INFINITY,
            free_riding: 0.0,
            frac_separated: 0.0,
        };
        let mut count = 0usize;
        for t in traces {
            let b = &t.blocks[d];
            let n = b.wrong_label.len();
            if n == 0 {
                continue;
            }
            let s = AttenuationStats::from_stream(&b.wrong_label, b.gamma, beta)?;
            let w = n as f64;
            acc.mean_ratio += w * s.mean_ratio;
            acc.free_riding += w * s.free_riding;
            acc.frac_separated += w * s.frac_separated;
            acc.min_ratio = acc.min_ratio.min(s.min_ratio);
            acc.max_ratio = acc.max_ratio.max(s.max_ratio);
            count += n;
        }
        if count == 0 {
            return Err(Error::Domain("attenuation statistics of empty traces".into()));
        }
        let c = count as f64;
        acc.mean_ratio /= c;
        acc.free_riding /= c;
        acc.frac_separated /= c;
        out.push(acc);
    }
    Ok(out)
}
