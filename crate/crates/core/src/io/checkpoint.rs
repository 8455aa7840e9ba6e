//! Binary checkpoint:
//!
//! ```text
//! b"CUMFFCK1"
//! u32 LE   length of the TOML config that follows
//! [u8]     config
//! u64 LE   input_dim
//! u64 LE   classes
//! u8       1 if a teacher network follows the live one
//! per network, per block: u64 LE parameter count, then that many f64 LE
//! ```
//!
//! Parameters are stored by bit pattern, so a round trip is exact.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Network;
use crate::trainer::TrainConfig;

use super::config::{parse_config, serialize_config};

pub const MAGIC: &[u8; 8] = b"CUMFFCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub net: Network,
    pub teacher: Option<Network>,
}

fn put_u64(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_net(buf: &mut Vec<u8>, net: &Network) {
    for b in &net.blocks {
        let flat = b.to_flat();
        put_u64(buf, flat.len());
        for v in flat {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let cfg = serialize_config(&ck.config)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(cfg.as_bytes());
    put_u64(&mut buf, ck.net.input_dim);
    put_u64(&mut buf, ck.net.classes);
    buf.push(ck.teacher.is_some() as u8);
    put_net(&mut buf, &ck.net);
    if let Some(t) = &ck.teacher {
        put_net(&mut buf, t);
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.bytes.len())));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
    }

    fn net_into(&mut self, net: &mut Network) -> Result<()> {
        for (d, block) in net.blocks.iter_mut().enumerate() {
            let n = self.u64()?;
            if n != block.param_count() {
                return Err(Error::Format(format!("block {d} stores {n} parameters, config implies {}", block.param_count())));
            }
            let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("parameter count overflow".into()))?)?;
            let flat: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            block.set_flat(&flat)?;
        }
        Ok(())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    let text = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Format(e.to_string()))?;
    let config = parse_config(text)?;
    let input_dim = r.u64()?;
    let classes = r.u64()?;
    let has_teacher = r.take(1)?[0] == 1;
    // shapes come from the config; values are overwritten below
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = Network::new(&config.model, input_dim, classes, &mut rng)?;
    r.net_into(&mut net)?;
    let teacher = if has_teacher {
        let mut t = net.clone();
        r.net_into(&mut t)?;
        Some(t)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes in checkpoint", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { config, net, teacher })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode(ck)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
