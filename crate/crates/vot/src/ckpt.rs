//! Checkpoint format: an 8-byte magic, a little-endian u64 header length, a
//! JSON header (progress counters, the resolved run config, and the
//! parameter manifest), then a raw little-endian f64 payload holding every
//! parameter followed by the optimizer's first and second moments per
//! trainable parameter. Everything needed to continue a run bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::model::VotModel;
use crate::train::{AdamW, Trainer};

pub const CKPT_MAGIC: &[u8; 8] = b"VOTCKPT1";

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a checkpoint (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("unreadable checkpoint header: {msg}")]
    BadHeader { msg: String },
    #[error("checkpoint payload ends early: {what}")]
    Truncated { what: String },
    #[error("checkpoint parameter {name} does not match the config-built model")]
    ParamMismatch { name: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
    frozen: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    epoch: usize,
    step_in_epoch: usize,
    adam_step: u64,
    seed: u64,
    config: RunConfig,
    params: Vec<ParamMeta>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CkptError + '_ {
    move |source| CkptError::Io { path: path.to_path_buf(), source }
}

pub fn save_checkpoint(path: &Path, config: &RunConfig, trainer: &Trainer) -> Result<(), CkptError> {
    let store = trainer.model().store();
    let header = Header {
        epoch: trainer.epoch(),
        step_in_epoch: trainer.step_in_epoch(),
        adam_step: trainer.optimizer().adam_step(),
        seed: config.train.seed,
        config: *config,
        params: store
            .entries()
            .iter()
            .map(|e| ParamMeta { name: e.name.clone(), shape: e.shape.clone(), frozen: e.frozen })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");

    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(CKPT_MAGIC).map_err(io_err(path))?;
    w.write_all(&(header_json.len() as u64).to_le_bytes()).map_err(io_err(path))?;
    w.write_all(&header_json).map_err(io_err(path))?;
    for entry in store.entries() {
        for v in &entry.data {
            w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
        }
    }
    let (m, v) = trainer.optimizer().moments();
    for (mi, vi) in m.iter().zip(v) {
        for x in mi {
            w.write_all(&x.to_le_bytes()).map_err(io_err(path))?;
        }
        for x in vi {
            w.write_all(&x.to_le_bytes()).map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn read_f64s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f64>, CkptError> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|_| CkptError::Truncated { what: what.to_string() })?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Rebuilds the model from the stored config, overwrites its parameters and
/// optimizer state from the payload, and returns a trainer positioned where
/// the run left off.
pub fn load_checkpoint(path: &Path) -> Result<(RunConfig, Trainer), CkptError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != CKPT_MAGIC {
        return Err(CkptError::BadMagic { path: path.to_path_buf() });
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)
        .map_err(|_| CkptError::Truncated { what: "header length".into() })?;
    let header_len = u64::from_le_bytes(len8) as usize;
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json)
        .map_err(|_| CkptError::Truncated { what: "header".into() })?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| CkptError::BadHeader { msg: e.to_string() })?;

    let cfg = header.config;
    let mut model = VotModel::new(
        cfg.encoder,
        cfg.decoder,
        cfg.head.representation,
        cfg.head.weights(),
        cfg.image.channels,
        cfg.train.seed,
    );

    // The manifest must describe exactly the model the config builds.
    {
        let entries = model.store().entries();
        if entries.len() != header.params.len() {
            return Err(CkptError::BadHeader {
                msg: format!(
                    "parameter count {} does not match the config-built model ({})",
                    header.params.len(),
                    entries.len()
                ),
            });
        }
        for (meta, entry) in header.params.iter().zip(entries) {
            if meta.name != entry.name || meta.shape != entry.shape || meta.frozen != entry.frozen {
                return Err(CkptError::ParamMismatch { name: meta.name.clone() });
            }
        }
    }

    let names: Vec<(String, usize)> = model
        .store()
        .entries()
        .iter()
        .map(|e| (e.name.clone(), e.data.len()))
        .collect();
    for (name, len) in &names {
        let vals = read_f64s(&mut r, *len, name)?;
        model.store_mut().data_mut(name).copy_from_slice(&vals);
    }
    let trainable: Vec<(String, usize)> = model
        .store()
        .trainable()
        .map(|e| (e.name.clone(), e.data.len()))
        .collect();
    let mut m = Vec::with_capacity(trainable.len());
    let mut v = Vec::with_capacity(trainable.len());
    for (name, len) in &trainable {
        m.push(read_f64s(&mut r, *len, &format!("{name} first moment"))?);
        v.push(read_f64s(&mut r, *len, &format!("{name} second moment"))?);
    }

    let optimizer =
        AdamW::restore(model.store(), cfg.train.weight_decay, header.adam_step, m, v);
    let trainer = Trainer::resume(model, cfg.train, optimizer, header.epoch, header.step_in_epoch);
    Ok((cfg, trainer))
}
