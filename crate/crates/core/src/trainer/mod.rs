//! Block-local training: negatives, per-block objectives, per-block Adam,
//! the EMA teacher, and the locality audit.

pub mod config;
pub mod epoch;
pub mod locality;
pub mod mining;
pub mod optim;
pub mod regimes;
pub mod registry;
pub mod streams;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::goodness::MarginTrace;
use crate::losses::{total_block_loss_grad, BlockLossBreakdown, BlockLossInputs};
use crate::model::{block_gradients, EmaTeacher, Network};
use crate::numerics::Matrix;

pub use config::{TrainConfig, TrainSettings};
pub use locality::{locality_audit, locality_audit_flow, locality_audit_with, GradientFlow, LocalityEntry, LocalityReport};
pub use mining::{derangement, draw_candidates, hard_negative_mine, hnm_ramp, mine_batch};
pub use optim::{adam_step, AdamSettings, OptimizerState};
pub use registry::{GateContext, HistoryGate, NegativeScorer};
pub use streams::StreamBatch;

use streams::{block_streams, History};

/// Per-block losses and the margin trace of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub breakdowns: Vec<BlockLossBreakdown>,
    pub trace: MarginTrace,
}

/// Owns the live network, its teacher and one optimiser per block.
pub struct Trainer {
    pub config: TrainConfig,
    pub net: Network,
    pub teacher: EmaTeacher,
    pub optimizers: Vec<OptimizerState>,
    pub steps: u64,
    gate: Box<dyn HistoryGate>,
    scorer: Box<dyn NegativeScorer>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig, input_dim: usize, classes: usize) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let net = Network::new(&config.model, input_dim, classes, &mut init)?;
        Self::from_network(config, net)
    }

    pub fn from_network(config: TrainConfig, net: Network) -> Result<Self> {
        config.validate()?;
        let teacher = EmaTeacher::new(&net, config.train.ema_decay)?;
        let optimizers = net.blocks.iter().map(OptimizerState::for_block).collect();
        let gate = registry::build_gate(&config.gate);
        let scorer = registry::scorer_by_name(&config.train.hnm_scorer)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer {
            config,
            net,
            teacher,
            optimizers,
            steps: 0,
            gate,
            scorer,
            rng,
        })
    }

    pub fn gate(&self) -> &dyn HistoryGate {
        self.gate.as_ref()
    }

    pub fn scorer(&self) -> &dyn NegativeScorer {
        self.scorer.as_ref()
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Network used for evaluation: the live one, or the teacher if configured.
    pub fn eval_network(&self) -> &Network {
        if self.config.train.eval_teacher {
            &self.teacher.shadow
        } else {
            &self.net
        }
    }

    /// Builds the negative streams for a batch with the current teacher.
    pub fn build_streams(&mut self, x: &Matrix, labels: &[usize], epoch: usize) -> Result<StreamBatch> {
        let t = &self.config.train;
        let k = hnm_ramp(epoch, t.epochs, t.hnm_k_first, t.hnm_k_last);
        StreamBatch::build(x, labels, k, &self.teacher.shadow, self.scorer.as_ref(), &mut self.rng)
    }

    /// One block-local update on a batch of examples.
    pub fn train_step(&mut self, x: &Matrix, labels: &[usize], epoch: usize) -> Result<StepOutput> {
        if labels.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let batch = self.build_streams(x, labels, epoch)?;
        self.step_on(&batch)
    }

    /// Update on prebuilt streams. Blocks are visited in order; each sees
    /// only detached copies of its inputs and of earlier blocks' goodness.
    pub fn step_on(&mut self, batch: &StreamBatch) -> Result<StepOutput> {
        let depth = self.net.depth();
        let cfg = &self.config;
        let adam = cfg.adam();
        let refresh = cfg.train.refresh_tokens;
        let mut caches = batch.forward(&self.net, depth)?;
        let mut history = History::new(batch.len(), cfg.gate.gamma0);
        let mut breakdowns = Vec::with_capacity(depth);
        let (mut gammas, mut pos, mut m_nl, mut m_ni) = (vec![], vec![], vec![], vec![]);

        for d in 0..depth {
            if refresh && d > 0 {
                caches = batch.forward(&self.net, d + 1)?;
                history = History::from_caches(&caches, d, cfg.gate.gamma0);
            }
            let fwd = block_streams(&caches, d);
            let g = fwd.goodness();
            let gamma = self.gate.gamma(&history.gate_context());
            let inputs = BlockLossInputs {
                current: &g,
                upstream_sum: &history.upstream,
                previous: history.previous.as_ref(),
                gamma,
                depth: d,
                blocks: depth,
            };
            let (breakdown, grad) = total_block_loss_grad(&inputs, &cfg.loss, cfg.train.mgc)?;
            if !breakdown.total.is_finite() {
                return Err(Error::Numeric {
                    block: d,
                    what: format!("loss is {}", breakdown.total),
                });
            }
            let (_, grads, _) = block_gradients(&self.net.blocks[d], &fwd, |_| Ok((breakdown.total, grad.current.clone())))
                .map_err(|e| match e {
                    Error::Numeric { what, .. } => Error::Numeric { block: d, what },
                    other => other,
                })?;
            if !grads.is_finite() {
                return Err(Error::Numeric {
                    block: d,
                    what: "non-finite gradient".into(),
                });
            }
            adam_step(&mut self.optimizers[d], &mut self.net.blocks[d], &grads, adam)?;

            gammas.push(gamma);
            m_nl.push(g.pos.iter().zip(&g.wrong_label).map(|(a, b)| a - b).collect());
            m_ni.push(g.pos.iter().zip(&g.wrong_image).map(|(a, b)| a - b).collect());
            pos.push(g.pos.clone());
            history.push(&g);
            breakdowns.push(breakdown);
        }
        self.teacher.update(&self.net)?;
        self.steps += 1;

        let every = self.config.train.audit_every;
        if every > 0 && self.steps % every as u64 == 0 {
            let report = locality_audit_with(&self.net, batch, &self.config, GradientFlow::Detached)?;
            if !report.passed() {
                return Err(Error::Domain(format!("locality audit failed after step {}: {report}", self.steps)));
            }
        }
        Ok(StepOutput {
            breakdowns,
            trace: MarginTrace::from_current(&gammas, pos, m_nl, m_ni)?,
        })
    }
}
