//! Binary checkpoint format.
//!
//! Layout: the 8-byte magic `DDNCKPT\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, the JSON header, then every
//! parameter tensor's values as little-endian `f64` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Calibration, DdnNetwork, LossKind, NetworkConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DDNCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: NetworkConfig,
    pub calibration: Calibration,
    /// Objective the stored weights are trained with.
    #[serde(default)]
    pub objective: Option<LossKind>,
    pub params: Vec<ParamEntry>,
}

impl CheckpointHeader {
    pub fn num_scalars(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }
}

/// Architecture-defining part of a config; seeds and optimizer settings
/// may differ between a checkpoint and the config it is loaded into.
fn architecture(c: &NetworkConfig) -> NetworkConfig {
    NetworkConfig {
        mc_passes: 1,
        seed: 0,
        optimizer: Default::default(),
        noise_mu_source: super::NoiseMuSource::Model,
        dropout: 0.0,
        ..c.clone()
    }
}

fn read_header_from(reader: &mut impl Read, path: &Path) -> Result<CheckpointHeader> {
    let bad = |what: &str| Error::data(format!("{}: {what}", path.display()));
    let mut magic = [0u8; 8];
    reader
        .read_exact(&mut magic)
        .map_err(|_| bad("truncated checkpoint"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut v = [0u8; 4];
    reader
        .read_exact(&mut v)
        .map_err(|_| bad("truncated checkpoint"))?;
    let version = u32::from_le_bytes(v);
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let mut n = [0u8; 8];
    reader
        .read_exact(&mut n)
        .map_err(|_| bad("truncated checkpoint"))?;
    let len = usize::try_from(u64::from_le_bytes(n)).map_err(|_| bad("header too large"))?;
    let mut json = vec![0u8; len];
    reader
        .read_exact(&mut json)
        .map_err(|_| bad("truncated checkpoint header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| bad(&format!("bad header: {e}")))?;
    Ok(header)
}

/// Reads only the header of a checkpoint.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let mut reader = BufReader::new(File::open(path)?);
    read_header_from(&mut reader, path)
}

impl DdnNetwork {
    pub fn checkpoint_header(&self) -> CheckpointHeader {
        CheckpointHeader {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            calibration: self.calibration.clone(),
            objective: self.objective,
            params: self
                .store
                .iter()
                .map(|p| ParamEntry {
                    name: p.name().to_string(),
                    shape: p.shape().to_vec(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.checkpoint_header())?;
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        for p in self.store.iter() {
            for v in p.values() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Loads a checkpoint. With `expected`, the stored architecture must
    /// match it; otherwise a configuration error is returned.
    pub fn load(path: &Path, expected: Option<&NetworkConfig>) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let header = read_header_from(&mut reader, path)?;
        if let Some(expected) = expected {
            if architecture(expected) != architecture(&header.config) {
                return Err(Error::config(format!(
                    "checkpoint {} was trained with a different architecture",
                    path.display()
                )));
            }
        }
        let mut net = DdnNetwork::new(header.config.clone())?;
        if net.checkpoint_header().params != header.params {
            return Err(Error::data(format!(
                "{}: parameter layout does not match its config",
                path.display()
            )));
        }
        let mut buf = [0u8; 8];
        for p in net.store.iter_mut() {
            for v in p.values_mut() {
                reader.read_exact(&mut buf).map_err(|_| {
                    Error::data(format!("{}: truncated parameter data", path.display()))
                })?;
                *v = f64::from_le_bytes(buf);
            }
        }
        if reader.read(&mut buf)? != 0 {
            return Err(Error::data(format!(
                "{}: trailing bytes after parameters",
                path.display()
            )));
        }
        net.calibration = header.calibration;
        net.objective = header.objective;
        Ok(net)
    }
}
