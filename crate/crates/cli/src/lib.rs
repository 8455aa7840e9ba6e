//! Command-line surface of `cumff`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cumff::audit::{run_all, AuditSizes, DEFAULT_SEED};
use cumff::diagnostics::record::{eval_pairing, trace_from_table};
use cumff::diagnostics::{attenuation_by_block, depth_saturation, evaluate, paired_bootstrap, GoodnessTable, PredictionSet};
use cumff::io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use cumff::io::config::{apply_preset, load_config, preset_names};
use cumff::io::data::{load_splits, Dataset, Splits};
use cumff::io::metrics::{format_line, MetricsSink};
use cumff::io::predictions::{load_predictions, save_predictions};
use cumff::model::Network;
use cumff::trainer::epoch::run;
use cumff::trainer::regimes::{compare_regimes, default_comparison_config};
use cumff::trainer::registry::{gate_names, scorer_names};
use cumff::trainer::{locality_audit, locality_audit_flow, GradientFlow, TrainConfig, Trainer};

#[derive(Parser, Debug)]
#[command(name = "cumff", version, about = "Block-local Forward-Forward training and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train from a config file; writes metrics, checkpoint and test predictions.
    Train {
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Named history regime applied on top of the config.
        #[arg(long)]
        preset: Option<String>,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the closed-form numerical audit.
    VerifyTheorems {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Use reduced case counts.
        #[arg(long)]
        quick: bool,
    },
    /// Check that no block's loss reaches an earlier block's parameters.
    VerifyLocality {
        config: PathBuf,
        /// Also audit a trained model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Examples in the audit batch.
        #[arg(long, default_value_t = 32)]
        batch: usize,
    },
    /// Per-block diagnostics of a checkpoint on the test split of a data config.
    Diagnose { checkpoint: PathBuf, data: PathBuf },
    /// Paired bootstrap of the accuracy difference between two prediction files.
    Bootstrap {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = cumff::diagnostics::bootstrap::DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.95)]
        coverage: f64,
    },
    /// Write test-split predictions of a checkpoint.
    Predict {
        checkpoint: PathBuf,
        data: PathBuf,
        #[arg(long, default_value = "predictions.txt")]
        out: PathBuf,
    },
    /// Train the default blob task under gamma = 0, 0.7 and 1 and compare.
    Compare {
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3])]
        seeds: Vec<u64>,
    },
    /// List registered gates, negative scorers and presets.
    List,
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit status.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

/// `Ok(false)` means the command ran but a check failed.
fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Train {
            config,
            out,
            preset,
            epochs,
            seed,
        } => train(&config, &out, preset.as_deref(), epochs, seed),
        Command::VerifyTheorems { seed, quick } => {
            let sizes = if quick { quick_sizes() } else { AuditSizes::default() };
            let report = run_all(sizes, seed)?;
            println!("{report}");
            Ok(report.passed())
        }
        Command::VerifyLocality {
            config,
            checkpoint,
            batch,
        } => verify_locality(&config, checkpoint.as_deref(), batch),
        Command::Diagnose { checkpoint, data } => diagnose(&checkpoint, &data),
        Command::Bootstrap {
            a,
            b,
            resamples,
            seed,
            coverage,
        } => {
            let pa = load_predictions(&a)?;
            let pb = load_predictions(&b)?;
            let report = paired_bootstrap(&pa, &pb, resamples, seed)?;
            println!("{report}");
            let (lo, hi) = report.interval(coverage);
            println!("{:.0}% interval: [{lo}, {hi}]", coverage * 100.0);
            Ok(true)
        }
        Command::Predict { checkpoint, data, out } => {
            let ck = load_checkpoint(&checkpoint)?;
            let splits = load_data(&data)?;
            let set = predict(&ck.net, &splits.test)?;
            save_predictions(&set, &out)?;
            println!("{} predictions, accuracy {:.4}, written to {}", set.len(), set.accuracy(), out.display());
            Ok(true)
        }
        Command::Compare { epochs, seeds } => {
            let mut base = default_comparison_config();
            base.train.epochs = epochs;
            let cmp = compare_regimes(&base, &[0.0, 0.7, 1.0], &seeds)?;
            print!("{cmp}");
            let v = cmp.verdict(0.03)?;
            println!(
                "local profile non-decreasing: {}; full-history deep/first ratio {:.3}; accuracy gap {:.4}",
                v.local_non_decreasing, v.deep_to_first_ratio, v.accuracy_gap
            );
            Ok(v.passed())
        }
        Command::List => {
            println!("gates: {}", gate_names().join(", "));
            println!("scorers: {}", scorer_names().join(", "));
            println!("presets: {}", preset_names().join(", "));
            Ok(true)
        }
    }
}

fn quick_sizes() -> AuditSizes {
    AuditSizes {
        identity_blocks: 20,
        sandwich_draws: 10_000,
        weight_batches: 1000,
        floor_draws: 10_000,
        mgc_draws: 10_000,
        telescoping: 100,
        redistribution: 100,
        stability: 20,
    }
}

fn load_data(path: &Path) -> Result<Splits> {
    let cfg = load_config(path).with_context(|| format!("reading data config {}", path.display()))?;
    Ok(load_splits(&cfg.data)?)
}

fn predict(net: &Network, data: &Dataset) -> Result<PredictionSet> {
    Ok(GoodnessTable::from_network(net, &data.x, &data.y)?.predictions()?)
}

fn train(config: &Path, out: &Path, preset: Option<&str>, epochs: Option<usize>, seed: Option<u64>) -> Result<bool> {
    let mut cfg: TrainConfig = load_config(config).with_context(|| format!("reading config {}", config.display()))?;
    if let Some(p) = preset {
        apply_preset(&mut cfg, p)?;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let splits = load_splits(&cfg.data)?;
    let mut trainer = Trainer::new(cfg.clone(), splits.train.dim(), splits.train.classes)?;
    let mut sink = MetricsSink::create(&out.join("metrics.txt"))?;
    let outcome = run(&mut trainer, &splits, |rec| {
        sink.write(rec)?;
        println!("{}", format_line(rec));
        Ok(())
    })?;
    let ck = Checkpoint {
        config: cfg,
        net: trainer.net.clone(),
        teacher: Some(trainer.teacher.shadow.clone()),
    };
    save_checkpoint(&ck, &out.join("checkpoint.bin"))?;
    save_predictions(&outcome.test, &out.join("predictions.txt"))?;
    println!("test accuracy {:.4}", outcome.test_accuracy());
    Ok(true)
}

fn audit_batch(data: &Dataset, n: usize) -> Dataset {
    let idx: Vec<usize> = (0..n.min(data.len())).collect();
    data.subset(&idx)
}

fn verify_locality(config: &Path, checkpoint: Option<&Path>, batch: usize) -> Result<bool> {
    let cfg = load_config(config)?;
    let splits = load_splits(&cfg.data)?;
    let data = audit_batch(&splits.train, batch);
    if data.len() < 2 {
        bail!("locality audit needs at least 2 training examples");
    }
    let fresh = Trainer::new(cfg.clone(), data.dim(), data.classes)?;
    let mut models = vec![("fresh", fresh.net.clone(), cfg.clone())];
    if let Some(path) = checkpoint {
        let ck = load_checkpoint(path)?;
        models.push(("checkpoint", ck.net, ck.config));
    }
    let mut ok = true;
    for (name, net, mcfg) in &models {
        let report = locality_audit(net, &data.x, &data.y, mcfg)?;
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        println!("[{verdict}] {name} model: worst earlier-block gradient {:e}", report.worst());
        ok &= report.passed();
    }
    // the leaky hook lets cotangents cross block boundaries and must be caught
    let leaky = locality_audit_flow(&fresh.net, &data.x, &data.y, &cfg, GradientFlow::Leaky)?;
    let caught = fresh.net.depth() < 2 || !leaky.passed();
    println!(
        "[{}] negative control {}",
        if caught { "PASS" } else { "FAIL" },
        if caught { "detected" } else { "was not detected" }
    );
    Ok(ok && caught)
}

fn diagnose(checkpoint: &Path, data: &Path) -> Result<bool> {
    let ck = load_checkpoint(checkpoint)?;
    let splits = load_data(data)?;
    let net = &ck.net;
    let test = &splits.test;
    if test.is_empty() {
        bail!("data config has an empty test split");
    }
    let table = GoodnessTable::from_network(net, &test.x, &test.y)?;
    let gammas = vec![ck.config.gate.gamma0; net.depth()];
    let trace = trace_from_table(&table, &eval_pairing(test.len(), ck.config.seed), &gammas)?;
    let beta = ck.config.loss.beta;
    let rec = evaluate(0, net, &splits.train, test, std::slice::from_ref(&trace), &[], beta, ck.config.seed)?;
    let att = attenuation_by_block(std::slice::from_ref(&trace), beta)?;
    let prefixes = (0..net.depth()).map(|d| table.prefix_predictions(d)).collect::<cumff::Result<Vec<_>>>()?;
    let ds = depth_saturation(&prefixes)?;
    println!("train_acc={:.4} test_acc={:.4}", rec.train_acc, rec.val_acc);
    println!("block  sep_cur_nl    sep_nl        lc            gpos_cur      own     R_mean      R_min       R_max       F       P>=0    prefix_acc  DS");
    for (d, b) in rec.blocks.iter().enumerate() {
        let a = &att[d];
        println!(
            "{d:<6} {:<13.5} {:<13.5} {:<13.6} {:<13.5} {:<7} {:<11.4e} {:<11.4e} {:<11.4e} {:<7.4} {:<7.4} {:<11.4} {}",
            b.sep_cur_nl,
            b.sep_nl,
            b.lc,
            b.gpos_cur,
            b.own_fraction.map_or("na".into(), |v| format!("{v:.4}")),
            a.mean_ratio,
            a.min_ratio,
            a.max_ratio,
            a.free_riding,
            a.frac_separated,
            prefixes[d].accuracy(),
            ds[d].map_or("na".into(), |v| format!("{v:.4}")),
        );
    }
    Ok(true)
}
