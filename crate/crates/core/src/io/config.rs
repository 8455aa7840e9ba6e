//! TOML config files. Sections: top-level `seed`, then `[model]`, `[loss]`,
//! `[gate]`, `[train]`, `[data]`; every key is optional and defaults apply.

use std::path::Path;

use crate::error::{Error, Result};
use crate::goodness::GateMode;
use crate::trainer::TrainConfig;

pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn serialize_config(cfg: &TrainConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text)?;
    // relative data paths are resolved against the config file
    if let Some(base) = path.parent() {
        for p in [&mut cfg.data.images, &mut cfg.data.labels].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    Ok(cfg)
}

pub fn save_config(cfg: &TrainConfig, path: &Path) -> Result<()> {
    std::fs::write(path, serialize_config(cfg)?).map_err(|e| Error::io(path, e))
}

type Preset = fn(&mut TrainConfig);

/// Named history regimes applied on top of a loaded config.
const PRESETS: &[(&str, Preset)] = &[
    ("local", |c| {
        c.gate.gamma0 = 0.0;
        c.gate.mode = GateMode::Off;
    }),
    ("cumulative", |c| {
        c.gate.gamma0 = 0.7;
        c.gate.mode = GateMode::Off;
    }),
    ("full-history", |c| {
        c.gate.gamma0 = 1.0;
        c.gate.mode = GateMode::Off;
    }),
    ("gated", |c| {
        c.gate.gamma0 = 0.7;
        c.gate.mode = GateMode::Cumulative;
    }),
    ("mgc", |c| {
        c.gate.gamma0 = 0.7;
        c.train.mgc = true;
    }),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn apply_preset(cfg: &mut TrainConfig, name: &str) -> Result<()> {
    let (_, apply) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}` (known: {})", preset_names().join(", "))))?;
    apply(cfg);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::data::DatasetKind;

    #[test]
    fn default_round_trip() {
        let cfg = TrainConfig::default();
        let text = serialize_config(&cfg).unwrap();
        assert!(text.contains("[gate]") && text.contains("[train]"));
        assert_eq!(parse_config(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = parse_config("seed = 5\n[gate]\ngamma0 = 1.0\nmode = \"prev\"\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.gate.gamma0, 1.0);
        assert_eq!(cfg.gate.mode, GateMode::Prev);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.model, TrainConfig::default().model);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(matches!(parse_config("[train]\nepocs = 3\n"), Err(Error::Config(_))));
        assert!(parse_config("[train]\nepochs = 0\n").is_err());
        assert!(parse_config("[gate]\ngamma0 = 1.5\n").is_err());
        assert!(parse_config("[train]\nhnm_k_first = 0\n").is_err());
    }

    #[test]
    fn idx_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[data]\nkind = \"idx\"\nimages = \"img.idx\"\nlabels = \"/abs/lab.idx\"\nclasses = 10\n").unwrap();
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.data.kind, DatasetKind::Idx);
        assert_eq!(cfg.data.images.unwrap(), dir.path().join("img.idx"));
        assert_eq!(cfg.data.labels.unwrap(), Path::new("/abs/lab.idx"));
    }

    #[test]
    fn presets_apply() {
        let mut cfg = TrainConfig::default();
        apply_preset(&mut cfg, "full-history").unwrap();
        assert_eq!(cfg.gate.gamma0, 1.0);
        apply_preset(&mut cfg, "gated").unwrap();
        assert_eq!(cfg.gate.mode, GateMode::Cumulative);
        assert!(apply_preset(&mut cfg, "nope").is_err());
    }
}
