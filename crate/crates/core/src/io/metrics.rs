//! One `key=value` line per epoch. Keys, in order:
//!
//! `epoch train_acc val_acc sep_cur_nl sep_nl lc ds gpos_cur r_mean free_riding own gamma loss`
//!
//! The per-block keys hold comma-separated lists, one entry per block.
//! Missing values are written `na`. Floats use the shortest text that
//! parses back to the same bits.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::diagnostics::{BlockDiagnostics, DiagnosticsRecord};
use crate::error::{Error, Result};

pub const BLOCK_KEYS: [&str; 10] = [
    "sep_cur_nl",
    "sep_nl",
    "lc",
    "ds",
    "gpos_cur",
    "r_mean",
    "free_riding",
    "own",
    "gamma",
    "loss",
];

fn block_values(b: &BlockDiagnostics) -> [Option<f64>; 10] {
    [
        Some(b.sep_cur_nl),
        Some(b.sep_nl),
        Some(b.lc),
        b.ds,
        Some(b.gpos_cur),
        Some(b.r_mean),
        Some(b.free_riding),
        b.own_fraction,
        Some(b.gamma),
        Some(b.loss),
    ]
}

fn set_block_value(b: &mut BlockDiagnostics, key: usize, v: Option<f64>) -> Result<()> {
    let need = |v: Option<f64>| v.ok_or_else(|| Error::Format(format!("`{}` cannot be missing", BLOCK_KEYS[key])));
    match key {
        0 => b.sep_cur_nl = need(v)?,
        1 => b.sep_nl = need(v)?,
        2 => b.lc = need(v)?,
        3 => b.ds = v,
        4 => b.gpos_cur = need(v)?,
        5 => b.r_mean = need(v)?,
        6 => b.free_riding = need(v)?,
        7 => b.own_fraction = v,
        8 => b.gamma = need(v)?,
        _ => b.loss = need(v)?,
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| x.to_string())
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == "na" {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Format(format!("bad number `{s}`")))
}

pub fn format_line(rec: &DiagnosticsRecord) -> String {
    let mut out = format!("epoch={} train_acc={} val_acc={}", rec.epoch, rec.train_acc, rec.val_acc);
    for (k, key) in BLOCK_KEYS.iter().enumerate() {
        let vals: Vec<String> = rec.blocks.iter().map(|b| fmt_opt(block_values(b)[k])).collect();
        out.push_str(&format!(" {key}={}", vals.join(",")));
    }
    out
}

pub fn parse_line(line: &str) -> Result<DiagnosticsRecord> {
    let mut fields = line.split_whitespace().map(|kv| {
        kv.split_once('=')
            .ok_or_else(|| Error::Format(format!("expected key=value, got `{kv}`")))
    });
    let mut expect = |key: &str| -> Result<&str> {
        let (k, v) = fields.next().ok_or_else(|| Error::Format(format!("missing `{key}`")))??;
        if k != key {
            return Err(Error::Format(format!("expected `{key}`, got `{k}`")));
        }
        Ok(v)
    };
    let epoch = expect("epoch")?.parse().map_err(|_| Error::Format("bad epoch".into()))?;
    let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Format(format!("bad number `{s}`")));
    let train_acc = num(expect("train_acc")?)?;
    let val_acc = num(expect("val_acc")?)?;
    let mut blocks: Vec<BlockDiagnostics> = vec![];
    for (k, key) in BLOCK_KEYS.iter().enumerate() {
        let raw = expect(key)?;
        let vals: Vec<Option<f64>> = if raw.is_empty() {
            vec![]
        } else {
            raw.split(',').map(parse_opt).collect::<Result<_>>()?
        };
        if k == 0 {
            blocks = vec![BlockDiagnostics::default(); vals.len()];
        } else if vals.len() != blocks.len() {
            return Err(Error::Format(format!("`{key}` has {} entries, expected {}", vals.len(), blocks.len())));
        }
        for (b, v) in blocks.iter_mut().zip(vals) {
            set_block_value(b, k, v)?;
        }
    }
    if let Some(extra) = fields.next() {
        let (k, _) = extra?;
        return Err(Error::Format(format!("unexpected key `{k}`")));
    }
    Ok(DiagnosticsRecord {
        epoch,
        train_acc,
        val_acc,
        blocks,
    })
}

/// Append-only metrics file; every line is flushed as soon as it is written.
pub struct MetricsSink {
    path: PathBuf,
    file: File,
}

impl MetricsSink {
    /// Truncates any existing file.
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsSink {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsSink {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write(&mut self, rec: &DiagnosticsRecord) -> Result<()> {
        writeln!(self.file, "{}", format_line(rec))
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads every complete line; a trailing line without newline (from a
/// killed writer) is ignored.
pub fn read_metrics(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut out = vec![];
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 || !line.ends_with('\n') {
            break;
        }
        if !line.trim().is_empty() {
            out.push(parse_line(line.trim_end())?);
        }
    }
    Ok(out)
}
