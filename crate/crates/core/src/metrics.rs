//! PSNR, SSIM and class-1 IoU, with per-dataset aggregation.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{SilhouetteMask, SpectralImage};
use crate::noise::realized_snr_db;

/// Reported in place of +inf for exact reconstructions.
pub const PSNR_CAP_DB: f64 = 120.0;
pub const DEFAULT_PEAK: f64 = 1.0;

/// `10 log10(peak^2 / mse)` over all values, capped at [`PSNR_CAP_DB`].
pub fn psnr(pred: &[f64], target: &[f64], peak: f64) -> f64 {
    assert_eq!(pred.len(), target.len(), "psnr: length mismatch");
    let mse = pred
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64;
    psnr_from_mse(mse, peak)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

/// PSNR with the MSE taken over the re and im channels jointly.
pub fn psnr_image(pred: &SpectralImage, target: &SpectralImage, peak: f64) -> f64 {
    let pred_ch = pred.to_channels();
    let target_ch = target.to_channels();
    psnr(&pred_ch, &target_ch, peak)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Signals span `[-peak, peak]`, so the dynamic range is `2 peak`.
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: DEFAULT_PEAK,
        }
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over all fully contained windows of a single-channel image
/// stored as `[width][height]`.
pub fn ssim(
    pred: &[f64],
    target: &[f64],
    width: usize,
    height: usize,
    params: &SsimParams,
) -> Result<f64> {
    let win = params.window;
    if pred.len() != width * height || target.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "ssim expects {} values per image, got {} and {}",
            width * height,
            pred.len(),
            target.len()
        )));
    }
    if width < win || height < win {
        return Err(Error::InvalidArgument(format!(
            "image {width}x{height} is smaller than the {win}x{win} SSIM window"
        )));
    }
    let g = gaussian_window(win, params.sigma);
    let range = 2.0 * params.peak;
    let c1 = (params.k1 * range).powi(2);
    let c2 = (params.k2 * range).powi(2);
    let (ow, oh) = (width - win + 1, height - win + 1);
    let mut total = 0.0;
    for i in 0..ow {
        for j in 0..oh {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (a, ga) in g.iter().enumerate() {
                let row = (i + a) * height + j;
                for (b, gb) in g.iter().enumerate() {
                    let w = ga * gb;
                    let x = pred[row + b];
                    let y = target[row + b];
                    mx += w * x;
                    my += w * y;
                    sxx += w * x * x;
                    syy += w * y * y;
                    sxy += w * x * y;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cxy = sxy - mx * my;
            let num = (2.0 * mx * my + c1) * (2.0 * cxy + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            total += num / den;
        }
    }
    Ok(total / (ow * oh) as f64)
}

/// Average of the re-channel and im-channel SSIM.
pub fn ssim_image(pred: &SpectralImage, target: &SpectralImage, params: &SsimParams) -> Result<f64> {
    let (w, h) = (target.width(), target.height());
    let re = ssim(&pred.re, &target.re, w, h, params)?;
    let im = ssim(&pred.im, &target.im, w, h, params)?;
    Ok(0.5 * (re + im))
}

/// Intersection over union for label `class_id`; 1.0 when neither mask
/// contains the class.
pub fn iou(pred: &[u8], gt: &[u8], class_id: u8) -> f64 {
    assert_eq!(pred.len(), gt.len(), "iou: length mismatch");
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (p == class_id, g == class_id);
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn iou_mask(pred: &SilhouetteMask, gt: &SilhouetteMask) -> f64 {
    iou(pred.labels(), gt.labels(), 1)
}

/// Noisy input, clean target and ground-truth mask for one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub noisy: SpectralImage,
    pub clean: SpectralImage,
    pub mask: SilhouetteMask,
    pub id: String,
}

/// Anything that maps a noisy spectral image to a denoised image and a
/// silhouette mask: a trained network or a classical filter.
pub trait Denoiser: Sync {
    fn denoise(&self, noisy: &SpectralImage) -> Result<(SpectralImage, SilhouetteMask)>;
}

/// Returns the input unchanged with an empty mask.
pub struct Identity;

impl Denoiser for Identity {
    fn denoise(&self, noisy: &SpectralImage) -> Result<(SpectralImage, SilhouetteMask)> {
        Ok((
            noisy.clone(),
            SilhouetteMask::empty(noisy.width(), noisy.height()),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub iou: f64,
    pub input_psnr_db: f64,
    /// Realized sound-region SNR of the noisy input.
    pub input_snr_db: f64,
    pub silhouette_area_frac: f64,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub psnr_db: f64,
    pub ssim: f64,
    pub iou: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn summary(&self) -> EvalSummary {
        let n = self.records.len();
        let mean = |f: fn(&EvalRecord) -> f64| self.records.iter().map(f).sum::<f64>() / n as f64;
        EvalSummary {
            psnr_db: mean(|r| r.psnr_db),
            ssim: mean(|r| r.ssim),
            iou: mean(|r| r.iou),
            n,
        }
    }

    pub fn mean_input_psnr_db(&self) -> f64 {
        self.records.iter().map(|r| r.input_psnr_db).sum::<f64>() / self.records.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.summary())?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Writes `snr_vs_psnr.csv` and `area_vs_iou.csv` into `dir`.
    pub fn write_scatter(&self, dir: &Path) -> Result<()> {
        let snr = dir.join("snr_vs_psnr.csv");
        let mut w = csv::Writer::from_path(&snr)?;
        w.write_record(["id", "input_snr_db", "psnr_db"])?;
        for r in &self.records {
            w.write_record([r.id.clone(), r.input_snr_db.to_string(), r.psnr_db.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&snr, e))?;
        let area = dir.join("area_vs_iou.csv");
        let mut w = csv::Writer::from_path(&area)?;
        w.write_record(["id", "silhouette_area_pct", "iou"])?;
        for r in &self.records {
            w.write_record([
                r.id.clone(),
                (100.0 * r.silhouette_area_frac).to_string(),
                r.iou.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&area, e))
    }
}

pub fn evaluate_sample(
    model: &dyn Denoiser,
    pair: &SamplePair,
    ssim_params: &SsimParams,
) -> Result<EvalRecord> {
    let peak = ssim_params.peak;
    let (denoised, mask) = model.denoise(&pair.noisy)?;
    Ok(EvalRecord {
        id: pair.id.clone(),
        psnr_db: psnr_image(&denoised, &pair.clean, peak),
        ssim: ssim_image(&denoised, &pair.clean, ssim_params)?,
        iou: iou_mask(&mask, &pair.mask),
        input_psnr_db: psnr_image(&pair.noisy, &pair.clean, peak),
        input_snr_db: realized_snr_db(&pair.clean, &pair.noisy, &pair.mask, false)
            .unwrap_or(f64::INFINITY),
        silhouette_area_frac: pair.mask.area_fraction(),
        peak,
    })
}

/// Evaluates every pair in parallel; records keep dataset order.
pub fn evaluate_dataset(
    model: &dyn Denoiser,
    pairs: &[SamplePair],
    ssim_params: &SsimParams,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let records = pairs
        .par_iter()
        .map(|p| evaluate_sample(model, p, ssim_params))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { records })
}
