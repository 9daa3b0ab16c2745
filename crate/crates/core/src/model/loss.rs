//! Composite loss `L = L_denoise + lambda * L_seg` with
//! `L_seg = (1 - alpha) BCE + alpha SoftDice`. Every term is computed per
//! sample and averaged over the batch.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_10;

use super::network::{sigmoid, Batch, OUT_CHANNELS};

pub const MSE_FLOOR: f64 = 1e-12;
pub const DICE_EPS: f64 = 1.0;
const PROB_CLAMP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DenoiseLoss {
    /// Negative PSNR.
    #[default]
    NPsnr,
    Mse,
    L1,
}

impl DenoiseLoss {
    /// Segmentation weight matched to the magnitude of each loss.
    pub fn default_lambda(self) -> f64 {
        match self {
            DenoiseLoss::NPsnr => 10.0,
            DenoiseLoss::Mse => 0.001,
            DenoiseLoss::L1 => 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub denoise: DenoiseLoss,
    pub lambda: f64,
    pub alpha: f64,
    pub peak: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            denoise: DenoiseLoss::NPsnr,
            lambda: 10.0,
            alpha: 0.5,
            peak: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub denoise: f64,
    pub seg: f64,
}

impl LossValue {
    fn add_scaled(&mut self, other: LossValue, s: f64) {
        self.total += s * other.total;
        self.denoise += s * other.denoise;
        self.seg += s * other.seg;
    }
}

fn npsnr_from_mse(mse: f64, peak: f64) -> f64 {
    -10.0 * (peak * peak / mse.max(MSE_FLOOR)).log10()
}

/// Negative PSNR, averaged over the batch.
pub fn loss_denoise(pred: &Batch, target: &Batch, peak: f64) -> f64 {
    assert_eq!(pred.data.len(), target.data.len(), "loss_denoise: shape mismatch");
    let mean = (0..pred.n)
        .map(|i| {
            let (p, t) = (pred.sample(i), target.sample(i));
            let mse = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
            npsnr_from_mse(mse, peak)
        })
        .sum::<f64>();
    mean / pred.n as f64
}

fn bce_dice(prob: &[f64], labels: &[f64], alpha: f64) -> f64 {
    let n = prob.len() as f64;
    let mut bce = 0.0;
    let (mut spy, mut sp, mut sy) = (0.0, 0.0, 0.0);
    for (&p, &y) in prob.iter().zip(labels) {
        let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        bce -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
        spy += p * y;
        sp += p;
        sy += y;
    }
    let dice = 1.0 - (2.0 * spy + DICE_EPS) / (sp + sy + DICE_EPS);
    (1.0 - alpha) * bce / n + alpha * dice
}

/// `(1 - alpha) BCE + alpha SoftDice`, averaged over the batch.
pub fn loss_seg(prob: &Batch, labels: &Batch, alpha: f64) -> f64 {
    assert_eq!(prob.data.len(), labels.data.len(), "loss_seg: shape mismatch");
    (0..prob.n)
        .map(|i| bce_dice(prob.sample(i), labels.sample(i), alpha))
        .sum::<f64>()
        / prob.n as f64
}

pub fn total_loss(
    pred: &Batch,
    target: &Batch,
    prob: &Batch,
    labels: &Batch,
    cfg: &LossConfig,
) -> LossValue {
    let denoise = match cfg.denoise {
        DenoiseLoss::NPsnr => loss_denoise(pred, target, cfg.peak),
        DenoiseLoss::Mse | DenoiseLoss::L1 => {
            (0..pred.n)
                .map(|i| plain_loss(cfg.denoise, pred.sample(i), target.sample(i)))
                .sum::<f64>()
                / pred.n as f64
        }
    };
    let seg = loss_seg(prob, labels, cfg.alpha);
    LossValue {
        total: denoise + cfg.lambda * seg,
        denoise,
        seg,
    }
}

fn plain_loss(kind: DenoiseLoss, p: &[f64], t: &[f64]) -> f64 {
    let n = p.len() as f64;
    match kind {
        DenoiseLoss::L1 => p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / n,
        _ => p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n,
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Loss of one sample from its raw `[3][w][h]` output, and the gradient
/// with respect to that output.
pub fn sample_loss_grad(
    raw: &[f64],
    target: &[f64],
    labels: &[f64],
    cfg: &LossConfig,
) -> (LossValue, Vec<f64>) {
    let hw = labels.len();
    assert_eq!(raw.len(), OUT_CHANNELS * hw);
    assert_eq!(target.len(), 2 * hw);
    let mut grad = vec![0.0; raw.len()];
    let (den, logits) = raw.split_at(2 * hw);
    let (gden, glog) = grad.split_at_mut(2 * hw);

    let m = (2 * hw) as f64;
    let denoise = match cfg.denoise {
        DenoiseLoss::NPsnr => {
            let mse = den.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m;
            let dl_dmse = if mse > MSE_FLOOR { 10.0 / (LN_10 * mse) } else { 0.0 };
            for ((g, a), b) in gden.iter_mut().zip(den).zip(target) {
                *g = dl_dmse * 2.0 * (a - b) / m;
            }
            npsnr_from_mse(mse, cfg.peak)
        }
        DenoiseLoss::Mse => {
            for ((g, a), b) in gden.iter_mut().zip(den).zip(target) {
                *g = 2.0 * (a - b) / m;
            }
            plain_loss(cfg.denoise, den, target)
        }
        DenoiseLoss::L1 => {
            for ((g, a), b) in gden.iter_mut().zip(den).zip(target) {
                *g = (a - b).signum() * f64::from(a != b) / m;
            }
            plain_loss(cfg.denoise, den, target)
        }
    };

    let n = hw as f64;
    let prob: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
    let (mut bce, mut spy, mut sp, mut sy) = (0.0, 0.0, 0.0, 0.0);
    for ((&z, &p), &y) in logits.iter().zip(&prob).zip(labels) {
        bce += softplus(z) - y * z;
        spy += p * y;
        sp += p;
        sy += y;
    }
    let num = 2.0 * spy + DICE_EPS;
    let den_d = sp + sy + DICE_EPS;
    let dice = 1.0 - num / den_d;
    let seg = (1.0 - cfg.alpha) * bce / n + cfg.alpha * dice;
    let lam = cfg.lambda;
    for ((g, &p), &y) in glog.iter_mut().zip(&prob).zip(labels) {
        let d_bce = (p - y) / n;
        let d_dice_dp = -(2.0 * y * den_d - num) / (den_d * den_d);
        *g = lam * ((1.0 - cfg.alpha) * d_bce + cfg.alpha * d_dice_dp * p * (1.0 - p));
    }
    (
        LossValue {
            total: denoise + lam * seg,
            denoise,
            seg,
        },
        grad,
    )
}

/// Batch-mean loss and the gradient with respect to the raw output.
pub fn batch_loss_grad(
    raw: &Batch,
    target: &Batch,
    labels: &Batch,
    cfg: &LossConfig,
) -> (LossValue, Batch) {
    let scale = 1.0 / raw.n as f64;
    let mut value = LossValue::default();
    let mut grad = Vec::with_capacity(raw.data.len());
    for i in 0..raw.n {
        let (v, g) = sample_loss_grad(raw.sample(i), target.sample(i), labels.sample(i), cfg);
        value.add_scaled(v, scale);
        grad.extend(g.into_iter().map(|x| x * scale));
    }
    (
        value,
        Batch {
            n: raw.n,
            c: raw.c,
            w: raw.w,
            h: raw.h,
            data: grad,
        },
    )
}
