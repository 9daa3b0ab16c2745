//! Checkpoint directory: parameter and optimizer tensors in the container
//! format, a JSON manifest and the training history as CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{NetSpec, Network};
use super::optim::AdamW;
use super::train::{HistoryRow, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{read_tensor, write_tensor, Metadata, Tensor};

pub const FORMAT: &str = "sonoseg-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub net: NetSpec,
    pub train: TrainConfig,
    pub param_count: usize,
    pub epoch: usize,
    pub step: u64,
    pub total_steps: u64,
    pub seed: u64,
    pub stream: u64,
    pub best_epoch: Option<usize>,
    pub best_val_psnr_db: Option<f64>,
}

fn write_vec(path: &Path, values: &[f64]) -> Result<()> {
    let tensor = Tensor::f64(vec![values.len()], values.to_vec())?;
    write_tensor(path, &tensor, &Metadata::new())
}

fn read_vec(path: &Path, len: usize) -> Result<Vec<f64>> {
    let (tensor, _) = read_tensor(path)?;
    if tensor.dims() != [len] {
        return Err(Error::CheckpointMismatch(format!(
            "{} has dims {:?}, expected [{len}]",
            path.display(),
            tensor.dims()
        )));
    }
    Ok(tensor.to_f64())
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["epoch", "lr", "loss_total", "loss_denoise", "loss_seg", "val_psnr_db", "val_iou"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn save(dir: &Path, trainer: &Trainer) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_vec(&dir.join("params.sft"), trainer.net.params())?;
    write_vec(&dir.join("adam_m.sft"), &trainer.opt.m)?;
    write_vec(&dir.join("adam_v.sft"), &trainer.opt.v)?;
    let best = trainer.best_network();
    write_vec(&dir.join("best.sft"), best.params())?;
    write_history(&dir.join("history.csv"), &trainer.history)?;
    let manifest = Manifest {
        format: FORMAT.into(),
        net: trainer.net.spec(),
        train: trainer.cfg,
        param_count: trainer.net.param_count(),
        epoch: trainer.epoch,
        step: trainer.step,
        total_steps: trainer.schedule.total_steps,
        seed: trainer.rng().seed(),
        stream: trainer.rng().stream(),
        best_epoch: trainer.best.as_ref().map(|b| b.1),
        best_val_psnr_db: trainer.best.as_ref().map(|b| b.0).filter(|v| v.is_finite()),
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT {
        return Err(Error::CheckpointMismatch(format!("unknown format {:?}", m.format)));
    }
    Ok(m)
}

/// The best-validation network of a checkpoint.
pub fn load_network(dir: &Path) -> Result<Network> {
    let m = read_manifest(dir)?;
    Network::from_params(m.net, read_vec(&dir.join("best.sft"), m.param_count)?)
}

/// Full trainer state for resuming.
pub fn load_trainer(dir: &Path) -> Result<Trainer> {
    let m = read_manifest(dir)?;
    let n = m.param_count;
    let net = Network::from_params(m.net, read_vec(&dir.join("params.sft"), n)?)?;
    let cfg = m.train;
    let mut opt = AdamW::new(n, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
    opt.m = read_vec(&dir.join("adam_m.sft"), n)?;
    opt.v = read_vec(&dir.join("adam_v.sft"), n)?;
    opt.t = m.step;
    let history = read_history(&dir.join("history.csv"))?;
    let best = match m.best_epoch {
        Some(e) => Some((
            m.best_val_psnr_db.unwrap_or(f64::NAN),
            e,
            read_vec(&dir.join("best.sft"), n)?,
        )),
        None => None,
    };
    let schedule = super::optim::CosineSchedule {
        lr_max: cfg.lr,
        lr_min: cfg.min_lr,
        total_steps: m.total_steps,
    };
    Ok(Trainer::restore(
        cfg,
        net,
        opt,
        schedule,
        m.step,
        m.epoch,
        history,
        best,
        Rng::with_stream(m.seed, m.stream),
    ))
}
