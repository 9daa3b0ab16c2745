use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::infer::NetworkDenoiser;
use super::loss::{sample_loss_grad, DenoiseLoss, LossConfig, LossValue};
use super::network::{NetSpec, Network};
use super::optim::{AdamW, CosineSchedule};
use crate::error::{Error, Result};
use crate::metrics::{iou_mask, psnr_image, Denoiser, SamplePair};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub net: NetSpec,
    pub loss: DenoiseLoss,
    /// Segmentation weight; the preset of `loss` when absent.
    pub lambda: Option<f64>,
    pub alpha: f64,
    pub peak: f64,
    pub lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub threshold: f64,
    /// Random flips, transposes and global phase rotations of training samples.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: NetSpec::default(),
            loss: DenoiseLoss::NPsnr,
            lambda: None,
            alpha: 0.5,
            peak: 1.0,
            lr: 1e-3,
            min_lr: 1e-7,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.9,
            eps: 1e-8,
            batch_size: 4,
            epochs: 100,
            threshold: 0.5,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| self.loss.default_lambda())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            denoise: self.loss,
            lambda: self.lambda(),
            alpha: self.alpha,
            peak: self.peak,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda() > 0.0) {
            return bad("lambda must be > 0");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.peak > 0.0) || !(self.lr > 0.0) || !(self.min_lr >= 0.0) || self.min_lr > self.lr {
            return bad("need peak > 0 and 0 <= min_lr <= lr");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.batch_size) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_denoise: f64,
    pub loss_seg: f64,
    pub val_psnr_db: f64,
    pub val_iou: f64,
}

/// Network tensors prepared for the loss.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub labels: Vec<f64>,
}

pub fn prepare(pairs: &[SamplePair]) -> Result<(Vec<Prepared>, usize, usize)> {
    let first = pairs.first().ok_or(Error::EmptyDataset)?;
    let (w, h) = (first.clean.width(), first.clean.height());
    let out = pairs
        .iter()
        .map(|p| {
            if (p.noisy.width(), p.noisy.height(), p.clean.width(), p.clean.height()) != (w, h, w, h)
                || (p.mask.width(), p.mask.height()) != (w, h)
            {
                return Err(Error::ShapeMismatch(format!(
                    "sample {} is not {w}x{h}",
                    p.id
                )));
            }
            Ok(Prepared {
                input: p.noisy.to_channels(),
                target: p.clean.to_channels(),
                labels: p.mask.labels().iter().map(|&l| f64::from(l)).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, w, h))
}

/// Symmetry of the spectral-image task: a grid flip or transpose of the
/// scene, and a global phase shift of all sources.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augment {
    pub transpose: bool,
    pub flip_x: bool,
    pub flip_y: bool,
    pub phase: f64,
}

impl Augment {
    /// Transposes are drawn only for square images.
    pub fn draw(rng: &mut Rng, square: bool) -> Self {
        Augment {
            transpose: square && rng.uniform() < 0.5,
            flip_x: rng.uniform() < 0.5,
            flip_y: rng.uniform() < 0.5,
            phase: std::f64::consts::TAU * rng.uniform(),
        }
    }

    fn plane(&self, src: &[f64], w: usize, h: usize) -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for i in 0..w {
            for j in 0..h {
                let (a, b) = if self.transpose { (j, i) } else { (i, j) };
                let si = if self.flip_x { w - 1 - a } else { a };
                let sj = if self.flip_y { h - 1 - b } else { b };
                out[i * h + j] = src[si * h + sj];
            }
        }
        out
    }

    fn complex(&self, channels: &[f64], w: usize, h: usize) -> Vec<f64> {
        let n = w * h;
        let (re, im) = (self.plane(&channels[..n], w, h), self.plane(&channels[n..], w, h));
        let (s, c) = self.phase.sin_cos();
        let mut out = vec![0.0; 2 * n];
        for p in 0..n {
            out[p] = c * re[p] - s * im[p];
            out[n + p] = s * re[p] + c * im[p];
        }
        out
    }

    pub fn apply(&self, sample: &Prepared, w: usize, h: usize) -> Prepared {
        assert!(!self.transpose || w == h, "transpose needs a square image");
        Prepared {
            input: self.complex(&sample.input, w, h),
            target: self.complex(&sample.target, w, h),
            labels: self.plane(&sample.labels, w, h),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub net: Network,
    pub opt: AdamW,
    pub schedule: CosineSchedule,
    pub step: u64,
    pub epoch: usize,
    pub history: Vec<HistoryRow>,
    /// Validation PSNR, epoch and parameters of the best epoch so far.
    pub best: Option<(f64, usize, Vec<f64>)>,
    rng: Rng,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, rng: &Rng, train_len: usize) -> Result<Self> {
        cfg.validate()?;
        if train_len == 0 {
            return Err(Error::EmptyDataset);
        }
        let net = Network::new(cfg.net, rng)?;
        let opt = AdamW::new(net.param_count(), cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay);
        Ok(Trainer {
            schedule: CosineSchedule {
                lr_max: cfg.lr,
                lr_min: cfg.min_lr,
                total_steps: cfg.epochs as u64 * cfg.steps_per_epoch(train_len),
            },
            cfg,
            net,
            opt,
            step: 0,
            epoch: 0,
            history: Vec::new(),
            best: None,
            rng: rng.clone(),
        })
    }

    pub(crate) fn restore(
        cfg: TrainConfig,
        net: Network,
        opt: AdamW,
        schedule: CosineSchedule,
        step: u64,
        epoch: usize,
        history: Vec<HistoryRow>,
        best: Option<(f64, usize, Vec<f64>)>,
        rng: Rng,
    ) -> Self {
        Trainer {
            cfg,
            net,
            opt,
            schedule,
            step,
            epoch,
            history,
            best,
            rng,
        }
    }

    pub fn rng(&self) -> &Rng {
        &self.rng
    }

    /// Mean loss and parameter gradient over one batch.
    pub fn batch_gradient(&self, batch: &[&Prepared], w: usize, h: usize) -> (LossValue, Vec<f64>) {
        let loss_cfg = self.cfg.loss_config();
        let scale = 1.0 / batch.len() as f64;
        let parts: Vec<(LossValue, Vec<f64>)> = batch
            .par_iter()
            .map(|s| {
                let trace = self.net.forward_sample(&s.input, w, h, true);
                let (v, mut g_out) = sample_loss_grad(&trace.output, &s.target, &s.labels, &loss_cfg);
                g_out.iter_mut().for_each(|g| *g *= scale);
                let mut grad = vec![0.0; self.net.param_count()];
                self.net.backward_sample(&trace, &g_out, &mut grad);
                (v, grad)
            })
            .collect();
        let mut value = LossValue::default();
        let mut grad = vec![0.0; self.net.param_count()];
        for (v, g) in parts {
            value.total += scale * v.total;
            value.denoise += scale * v.denoise;
            value.seg += scale * v.seg;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        (value, grad)
    }

    pub fn run_epoch(&mut self, train: &[Prepared], w: usize, h: usize, val: &[SamplePair]) -> Result<HistoryRow> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        self.rng.split_index("epoch", self.epoch as u64).shuffle(&mut order);
        let mut sums = LossValue::default();
        let mut lr = self.schedule.lr(self.step);
        let batches: Vec<&[usize]> = order.chunks(self.cfg.batch_size).collect();
        for idx in &batches {
            let augmented: Vec<Prepared> = if self.cfg.augment {
                let mut rng = self.rng.split_index("augment", self.step);
                idx.iter()
                    .map(|&i| Augment::draw(&mut rng, w == h).apply(&train[i], w, h))
                    .collect()
            } else {
                Vec::new()
            };
            let batch: Vec<&Prepared> = if self.cfg.augment {
                augmented.iter().collect()
            } else {
                idx.iter().map(|&i| &train[i]).collect()
            };
            let (value, grad) = self.batch_gradient(&batch, w, h);
            lr = self.schedule.lr(self.step);
            if !value.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step: self.step as usize,
                    lr,
                });
            }
            self.opt.step(self.net.params_mut(), &grad, lr);
            self.step += 1;
            sums.total += value.total;
            sums.denoise += value.denoise;
            sums.seg += value.seg;
        }
        self.epoch += 1;
        let nb = batches.len() as f64;
        let (val_psnr_db, val_iou) = if val.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let den = NetworkDenoiser {
                net: &self.net,
                threshold: self.cfg.threshold,
            };
            let mut sums = (0.0, 0.0);
            for pair in val {
                let (img, mask) = den.denoise(&pair.noisy)?;
                sums.0 += psnr_image(&img, &pair.clean, self.cfg.peak);
                sums.1 += iou_mask(&mask, &pair.mask);
            }
            (sums.0 / val.len() as f64, sums.1 / val.len() as f64)
        };
        let improved = match &self.best {
            None => true,
            Some((best, _, _)) => val.is_empty() || val_psnr_db > *best,
        };
        if improved {
            self.best = Some((val_psnr_db, self.epoch, self.net.params().to_vec()));
        }
        let row = HistoryRow {
            epoch: self.epoch,
            lr,
            loss_total: sums.total / nb,
            loss_denoise: sums.denoise / nb,
            loss_seg: sums.seg / nb,
            val_psnr_db,
            val_iou,
        };
        self.history.push(row.clone());
        Ok(row)
    }

    /// Trains until `cfg.epochs` epochs have run, calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        train: &[SamplePair],
        val: &[SamplePair],
        mut on_epoch: impl FnMut(&Trainer, &HistoryRow) -> Result<()>,
    ) -> Result<()> {
        let (prepared, w, h) = prepare(train)?;
        while self.epoch < self.cfg.epochs {
            let row = self.run_epoch(&prepared, w, h, val)?;
            on_epoch(self, &row)?;
        }
        Ok(())
    }

    /// Parameters of the best validation epoch, or the current ones.
    pub fn best_network(&self) -> Network {
        match &self.best {
            Some((_, _, params)) => {
                Network::from_params(self.net.spec(), params.clone()).expect("same spec")
            }
            None => self.net.clone(),
        }
    }
}

/// Trains a fresh network and returns the best-validation parameters with
/// the per-epoch history.
pub fn train(
    train: &[SamplePair],
    val: &[SamplePair],
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<(Network, Vec<HistoryRow>)> {
    let mut trainer = Trainer::new(*cfg, rng, train.len())?;
    trainer.fit(train, val, |_, _| Ok(()))?;
    Ok((trainer.best_network(), trainer.history))
}
