use rand::Rng;

use crate::error::Result;
use crate::losses::StreamScores;
use crate::model::{BlockForward, Network, StreamForwards};
use crate::numerics::{mean, Matrix};

use super::mining::{derangement, mine_batch};
use super::registry::{GateContext, NegativeScorer};

/// Positive, wrong-label and wrong-image inputs for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBatch {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub wrong_labels: Vec<usize>,
    /// `x_ni[i] = x[shuffle[i]]`, paired with `labels[i]`.
    pub shuffled: Matrix,
    pub shuffle: Vec<usize>,
}

impl StreamBatch {
    /// Mines wrong labels with `teacher` and builds the wrong-image stream
    /// from a fixed-point-free shuffle of the batch.
    pub fn build<R: Rng + ?Sized>(
        x: &Matrix,
        labels: &[usize],
        k: usize,
        teacher: &Network,
        scorer: &dyn NegativeScorer,
        rng: &mut R,
    ) -> Result<Self> {
        let wrong_labels = mine_batch(x, labels, k, teacher, scorer, rng)?;
        let shuffle = derangement(labels.len(), rng)?;
        Ok(StreamBatch {
            x: x.clone(),
            labels: labels.to_vec(),
            wrong_labels,
            shuffled: x.select_rows(&shuffle),
            shuffle,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Forward caches of blocks `0..upto` for the three streams.
    pub fn forward(&self, net: &Network, upto: usize) -> Result<[Vec<BlockForward>; 3]> {
        Ok([
            net.forward_prefix(&self.x, &self.labels, upto)?,
            net.forward_prefix(&self.x, &self.wrong_labels, upto)?,
            net.forward_prefix(&self.shuffled, &self.labels, upto)?,
        ])
    }
}

pub(crate) fn block_streams(caches: &[Vec<BlockForward>; 3], d: usize) -> StreamForwards {
    StreamForwards {
        pos: caches[0][d].clone(),
        wrong_label: caches[1][d].clone(),
        wrong_image: caches[2][d].clone(),
    }
}

/// Running detached summaries of blocks `0..d`.
#[derive(Debug, Clone)]
pub(crate) struct History {
    pub upstream: StreamScores,
    pub previous: Option<StreamScores>,
    gamma0: f64,
}

impl History {
    pub fn new(n: usize, gamma0: f64) -> Self {
        History {
            upstream: StreamScores::zeros(n),
            previous: None,
            gamma0,
        }
    }

    pub fn from_caches(caches: &[Vec<BlockForward>; 3], upto: usize, gamma0: f64) -> Self {
        let mut h = History::new(caches[0].first().map_or(0, |f| f.goodness.len()), gamma0);
        for d in 0..upto {
            h.push(&block_streams(caches, d).goodness());
        }
        h
    }

    pub fn push(&mut self, g: &StreamScores) {
        let add = |acc: &mut Vec<f64>, v: &[f64]| acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        add(&mut self.upstream.pos, &g.pos);
        add(&mut self.upstream.wrong_label, &g.wrong_label);
        add(&mut self.upstream.wrong_image, &g.wrong_image);
        self.previous = Some(g.clone());
    }

    pub fn gate_context(&self) -> GateContext {
        let m = |v: &[f64]| mean(v).unwrap_or(0.0);
        match &self.previous {
            None => GateContext::default(),
            Some(prev) => {
                let sum = m(&self.upstream.pos);
                let last = m(&prev.pos);
                GateContext {
                    upstream_sum: sum,
                    upstream_mixed: last + self.gamma0 * (sum - last),
                    previous: last,
                }
            }
        }
    }
}
