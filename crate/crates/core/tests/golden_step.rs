//! One training step from a fixed config must reproduce the stored trace.
//! Regenerate with `UPDATE_GOLDEN=1 cargo test -p cumff --test golden_step`.

use std::fmt::Write as _;
use std::path::PathBuf;

use cumff::io::config::load_config;
use cumff::io::data::load_splits;
use cumff::trainer::Trainer;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn render() -> String {
    let cfg = load_config(&golden_dir().join("one_step.toml")).unwrap();
    let splits = load_splits(&cfg.data).unwrap();
    let mut trainer = Trainer::new(cfg, splits.train.dim(), splits.train.classes).unwrap();
    let out = trainer.train_step(&splits.train.x, &splits.train.y, 0).unwrap();
    let mut s = String::new();
    for (d, (b, loss)) in out.trace.blocks.iter().zip(&out.breakdowns).enumerate() {
        writeln!(s, "block {d} gamma {:e} loss {:e}", b.gamma, loss.total).unwrap();
        let row = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        writeln!(s, "pos {}", row(&b.pos_goodness)).unwrap();
        writeln!(s, "nl_margin {}", row(&b.wrong_label.margin)).unwrap();
        writeln!(s, "nl_upstream {}", row(&b.wrong_label.upstream)).unwrap();
        writeln!(s, "ni_margin {}", row(&b.wrong_image.margin)).unwrap();
        writeln!(s, "ni_upstream {}", row(&b.wrong_image.upstream)).unwrap();
    }
    s
}

fn numbers(text: &str) -> Vec<f64> {
    text.split_whitespace().filter_map(|t| t.parse().ok()).collect()
}

#[test]
fn one_step_matches_golden_trace() {
    let path = golden_dir().join("one_step.trace");
    let got = render();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &got).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).expect("golden trace missing; run with UPDATE_GOLDEN=1");
    let (g, w) = (numbers(&got), numbers(&want));
    assert_eq!(g.len(), w.len(), "trace shape changed");
    for (i, (a, b)) in g.iter().zip(&w).enumerate() {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "value {i}: {a} vs golden {b}");
    }
}

#[test]
fn rendering_is_repeatable() {
    assert_eq!(render(), render());
}
