use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diagnostics::{evaluate, DiagnosticsRecord, GoodnessTable, PredictionSet};
use crate::error::Result;
use crate::goodness::MarginTrace;
use crate::io::data::{batch_indices, load_splits, Splits};

use super::{TrainConfig, Trainer};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<DiagnosticsRecord>,
    /// Margin traces of every batch of the final epoch.
    pub final_traces: Vec<MarginTrace>,
    pub test: PredictionSet,
}

impl RunOutcome {
    pub fn test_accuracy(&self) -> f64 {
        self.test.accuracy()
    }
}

/// Runs every epoch, handing one record per epoch to `sink`.
pub fn run<F>(trainer: &mut Trainer, splits: &Splits, mut sink: F) -> Result<RunOutcome>
where
    F: FnMut(&DiagnosticsRecord) -> Result<()>,
{
    let epochs = trainer.config.train.epochs;
    let batch_size = trainer.config.train.batch_size;
    let jitter = trainer.config.train.jitter_std;
    let train = &splits.train;
    let mut records = Vec::with_capacity(epochs);
    let mut traces = vec![];
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(trainer.rng());
        traces.clear();
        let mut loss_sums = vec![0.0; trainer.net.depth()];
        let mut steps = 0usize;
        for idx in batch_indices(&order, batch_size) {
            let mut batch = train.subset(&idx);
            if jitter > 0.0 {
                let rng = trainer.rng();
                for v in batch.x.as_mut_slice() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += jitter * z;
                }
            }
            let out = trainer.train_step(&batch.x, &batch.y, epoch)?;
            for (s, b) in loss_sums.iter_mut().zip(&out.breakdowns) {
                *s += b.total;
            }
            steps += 1;
            traces.push(out.trace);
        }
        let losses: Vec<f64> = loss_sums.iter().map(|s| s / steps.max(1) as f64).collect();
        let record = evaluate(
            epoch + 1,
            trainer.eval_network(),
            train,
            &splits.val,
            &traces,
            &losses,
            trainer.config.loss.beta,
            trainer.config.seed,
        )?;
        sink(&record)?;
        records.push(record);
    }
    let test = GoodnessTable::from_network(trainer.eval_network(), &splits.test.x, &splits.test.y)?.predictions()?;
    Ok(RunOutcome {
        records,
        final_traces: traces,
        test,
    })
}

/// Loads the configured data, builds a fresh trainer and runs it.
pub fn train_from_config<F>(config: &TrainConfig, sink: F) -> Result<(Trainer, RunOutcome)>
where
    F: FnMut(&DiagnosticsRecord) -> Result<()>,
{
    let splits = load_splits(&config.data)?;
    let mut trainer = Trainer::new(config.clone(), splits.train.dim(), splits.train.classes)?;
    let outcome = run(&mut trainer, &splits, sink)?;
    Ok((trainer, outcome))
}
