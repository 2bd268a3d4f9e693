//! Checkpoint files: parameters, optimizer moments and caller metadata.
//!
//! Layout: a fixed magic and format version, a JSON header describing
//! every tensor, then one little-endian f32 payload in header order.
//! Values live as f64 in memory, so `save` first rounds the live store and
//! optimizer moments to f32 in place. That makes the file and the running
//! process agree exactly — a training run that saves and keeps going
//! computes the same numbers as one that saves, stops and resumes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{Method, Optimizer, OptimizerState};
use super::params::ParamStore;
use super::{Shape, Tensor, TensorError};

const MAGIC: &[u8; 4] = b"WSCK";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint header: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: [usize; 4],
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct SlotEntry {
    param: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    name: String,
    lr: f64,
    method: Method,
    t: u64,
    slots: Vec<SlotEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    params: Vec<ParamEntry>,
    aliases: Vec<(String, String)>,
    optimizers: Vec<OptimizerEntry>,
}

/// Everything a checkpoint holds, rebuilt in memory.
pub struct LoadedCheckpoint {
    pub meta: serde_json::Value,
    pub store: ParamStore,
    pub optimizers: Vec<(String, OptimizerState)>,
}

impl LoadedCheckpoint {
    pub fn optimizer_state(&self, name: &str) -> Option<&OptimizerState> {
        self.optimizers
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
    }
}

/// Write a checkpoint. Rounds the store and optimizer moments to f32 in
/// place first (see module docs), then writes atomically via a sibling
/// temp file.
pub fn save(
    path: &Path,
    store: &ParamStore,
    optimizers: &mut [(&str, &mut Optimizer)],
    meta: &serde_json::Value,
) -> Result<(), CheckpointError> {
    store.round_to_f32();
    for (_, opt) in optimizers.iter_mut() {
        opt.round_to_f32();
    }

    let unique = store.unique();
    let params: Vec<ParamEntry> = unique
        .iter()
        .map(|(name, t)| {
            let s = t.shape();
            ParamEntry {
                name: name.to_string(),
                shape: [s.n, s.c, s.h, s.w],
                trainable: t.requires_grad(),
            }
        })
        .collect();
    let aliases = store
        .alias_pairs()
        .into_iter()
        .map(|(a, c)| (a.to_string(), c.to_string()))
        .collect();

    let mut opt_entries = Vec::new();
    let mut opt_states = Vec::new();
    for (name, opt) in optimizers.iter() {
        let state = opt.export_state();
        opt_entries.push(OptimizerEntry {
            name: name.to_string(),
            lr: state.lr,
            method: state.method,
            t: state.t,
            slots: state
                .slots
                .iter()
                .map(|(p, m, _)| SlotEntry {
                    param: p.clone(),
                    len: m.len(),
                })
                .collect(),
        });
        opt_states.push(state);
    }

    let header = Header {
        meta: meta.clone(),
        params,
        aliases,
        optimizers: opt_entries,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut payload: Vec<u8> = Vec::new();
    for (_, t) in &unique {
        t.with_data(|d| {
            for &v in d {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        });
    }
    for state in &opt_states {
        for (_, m, v) in &state.slots {
            for &x in m.iter().chain(v.iter()) {
                payload.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }

    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        f.write_all(&header_bytes)?;
        f.write_all(&payload)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<LoadedCheckpoint, CheckpointError> {
    let mut f = fs::File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Format(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut word = [0u8; 4];
    f.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    f.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;

    let param_values: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    let slot_values: usize = header
        .optimizers
        .iter()
        .flat_map(|o| o.slots.iter())
        .map(|s| 2 * s.len)
        .sum();
    let expected = 4 * (param_values + slot_values);
    if payload.len() != expected {
        return Err(CheckpointError::Format(format!(
            "payload holds {} bytes but the header describes {}",
            payload.len(),
            expected
        )));
    }

    let mut cursor = 0usize;
    let mut take = |n: usize| -> Vec<f64> {
        let out = payload[cursor..cursor + 4 * n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        cursor += 4 * n;
        out
    };

    let mut store = ParamStore::new();
    for p in &header.params {
        let shape = Shape::new(p.shape[0], p.shape[1], p.shape[2], p.shape[3]);
        let values = take(shape.len());
        let mut t = Tensor::from_vec(shape, values)?;
        if p.trainable {
            t = t.trainable();
        }
        store.insert(&p.name, t)?;
    }
    for (alias, canonical) in &header.aliases {
        store.alias(alias, canonical)?;
    }

    let mut optimizers = Vec::new();
    for o in &header.optimizers {
        let mut slots = Vec::new();
        for s in &o.slots {
            let m = take(s.len);
            let v = take(s.len);
            slots.push((s.param.clone(), m, v));
        }
        optimizers.push((
            o.name.clone(),
            OptimizerState {
                lr: o.lr,
                method: o.method,
                t: o.t,
                slots,
            },
        ));
    }

    Ok(LoadedCheckpoint {
        meta: header.meta,
        store,
        optimizers,
    })
}
