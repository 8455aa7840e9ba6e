use std::path::PathBuf;

use proptest::prelude::*;

use cumff::goodness::GateMode;
use cumff::io::config::{parse_config, serialize_config};
use cumff::io::data::{load_idx, DatasetKind};
use cumff::trainer::TrainConfig;

prop_compose! {
    fn configs()(
        seed in any::<u64>(),
        blocks in 1usize..8,
        hidden in 1usize..256,
        output in 1usize..64,
        offset in -4.0f64..4.0,
        every in any::<bool>(),
        gamma in 0.0f64..=1.0,
        mode in prop_oneof![Just(GateMode::Off), Just(GateMode::Cumulative), Just(GateMode::Prev)],
        lr in 1e-6f64..1.0,
        epochs in 1usize..500,
        k in (1usize..20, 1usize..20),
        beta in 0.1f64..16.0,
        eta in 0.0f64..=1.0,
        scorer in prop_oneof![Just("summed"), Just("deepest")],
        per_class in 1usize..1000,
        radius in 0.0f64..10.0,
    ) -> TrainConfig {
        let mut cfg = TrainConfig { seed, ..TrainConfig::default() };
        cfg.model.blocks = blocks;
        cfg.model.hidden_dim = hidden;
        cfg.model.output_dim = output;
        cfg.model.goodness_offset = offset;
        cfg.model.label_every_block = every;
        cfg.gate.gamma0 = gamma;
        cfg.gate.mode = mode;
        cfg.train.learning_rate = lr;
        cfg.train.epochs = epochs;
        cfg.train.hnm_k_first = k.0.min(k.1);
        cfg.train.hnm_k_last = k.0.max(k.1);
        cfg.train.hnm_scorer = scorer.to_string();
        cfg.loss.beta = beta;
        cfg.loss.alpha = beta;
        cfg.loss.eta = eta;
        cfg.data.per_class = per_class;
        cfg.data.radius = radius;
        cfg
    }
}

proptest! {
    #[test]
    fn config_text_round_trips(cfg in configs()) {
        prop_assume!(cfg.validate().is_ok());
        let text = serialize_config(&cfg).unwrap();
        prop_assert_eq!(parse_config(&text).unwrap(), cfg);
    }
}

/// Runs only when `CUMFF_MNIST_DIR` points at the official IDX files.
#[test]
fn official_mnist_test_file() {
    let Some(dir) = std::env::var_os("CUMFF_MNIST_DIR").map(PathBuf::from) else {
        eprintln!("CUMFF_MNIST_DIR not set, skipping");
        return;
    };
    let data = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"), 10).unwrap();
    assert_eq!(data.len(), 10_000);
    assert_eq!(data.dim(), 784);
    assert_eq!(data.y[0], 7);
    assert!(data.x.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn idx_kind_parses_from_text() {
    let cfg = parse_config("[data]\nkind = \"idx\"\nimages = \"a\"\nlabels = \"b\"\nclasses = 10\n").unwrap();
    assert_eq!(cfg.data.kind, DatasetKind::Idx);
}
