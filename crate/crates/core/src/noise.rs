//! Two-regime noise synthesis for spectral images.
//!
//! Sound-region pixels get circular complex white Gaussian noise. Silhouette
//! pixels, whose clean value is zero, get i.i.d. values drawn from an empirical
//! density (Gaussian KDE + inverse transform sampling). Both SNRs are
//! referenced to the mean clean power over the sound region.

use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{SilhouetteMask, SpectralImage};
use crate::rng::Rng;
use crate::tensor::read_tensor;

pub const SUPPORT_POINTS: usize = 4096;
pub const MIN_SAMPLES: usize = 100;
/// Support padding on each side of the sample range, in bandwidths.
pub const SUPPORT_PAD: f64 = 3.0;

/// Density tabulated on a uniform grid, with its cumulative table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPdf {
    pub support: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl EmpiricalPdf {
    /// Rebuilds the cumulative table after deserialization.
    pub fn from_parts(support: Vec<f64>, density: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if support.len() < 2 || support.len() != density.len() {
            return Err(Error::InvalidArgument(
                "pdf support and density must have equal length >= 2".into(),
            ));
        }
        if density.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err(Error::InvalidArgument("pdf density must be finite and >= 0".into()));
        }
        let mut pdf = EmpiricalPdf {
            support,
            density,
            bandwidth,
            cdf: Vec::new(),
        };
        pdf.normalize()?;
        Ok(pdf)
    }

    fn step(&self) -> f64 {
        self.support[1] - self.support[0]
    }

    fn normalize(&mut self) -> Result<()> {
        let dx = self.step();
        let mut cdf = Vec::with_capacity(self.density.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in self.density.windows(2) {
            acc += 0.5 * (w[0] + w[1]) * dx;
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::DegenerateSamples("density integrates to zero".into()));
        }
        self.density.iter_mut().for_each(|d| *d /= acc);
        cdf.iter_mut().for_each(|c| *c /= acc);
        *cdf.last_mut().unwrap() = 1.0;
        self.cdf = cdf;
        Ok(())
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Trapezoidal integral of the density over the support.
    pub fn integral(&self) -> f64 {
        let dx = self.step();
        self.density.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dx).sum()
    }

    /// Density at `x` by linear interpolation; zero outside the support.
    pub fn density_at(&self, x: f64) -> f64 {
        let (lo, dx) = (self.support[0], self.step());
        let pos = (x - lo) / dx;
        if pos < 0.0 || pos > (self.support.len() - 1) as f64 {
            return 0.0;
        }
        let i = (pos.floor() as usize).min(self.support.len() - 2);
        let frac = pos - i as f64;
        self.density[i] * (1.0 - frac) + self.density[i + 1] * frac
    }

    /// Inverse CDF by linear interpolation of the cumulative table.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        // first index whose cdf >= u; flat (zero-density) runs are skipped
        let hi = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let lo = hi - 1;
        let (c0, c1) = (self.cdf[lo], self.cdf[hi]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.support[lo] + frac * (self.support[hi] - self.support[lo])
    }

    /// Second moment `E[x^2]` of the tabulated density.
    pub fn second_moment(&self) -> f64 {
        let dx = self.step();
        self.support
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[0] * x[0] * d[0] + x[1] * x[1] * d[1]) * dx)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        let dx = self.step();
        self.support
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[0] * d[0] + x[1] * d[1]) * dx)
            .sum()
    }
}

/// Silverman's rule of thumb, `0.9 min(sigma, IQR / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sigma = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sigma.min(iqr / 1.34) } else { sigma };
    0.9 * spread * n.powf(-0.2)
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Gaussian KDE evaluated on a 4096-point grid spanning the sample range
/// padded by three bandwidths. Samples are linearly binned onto the grid
/// before convolving with the sampled kernel.
pub fn fit_kde(samples: &[f64], bandwidth: Option<f64>) -> Result<EmpiricalPdf> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::DegenerateSamples(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateSamples("non-finite sample".into()));
    }
    let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(samples));
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::DegenerateSamples(format!(
            "zero bandwidth (h = {h}); samples are all identical"
        )));
    }
    let (min, max) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let (lo, hi) = (min - SUPPORT_PAD * h, max + SUPPORT_PAD * h);
    let m = SUPPORT_POINTS;
    let dx = (hi - lo) / (m - 1) as f64;
    let support: Vec<f64> = (0..m).map(|i| lo + i as f64 * dx).collect();

    let mut counts = vec![0.0; m];
    for &x in samples {
        let pos = (x - lo) / dx;
        let i = (pos.floor() as usize).min(m - 2);
        let frac = pos - i as f64;
        counts[i] += 1.0 - frac;
        counts[i + 1] += frac;
    }
    let reach = ((6.0 * h / dx).ceil() as usize).min(m - 1);
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let kernel: Vec<f64> = (0..=reach)
        .map(|d| {
            let z = d as f64 * dx / h;
            norm * (-0.5 * z * z).exp()
        })
        .collect();
    let mut density = vec![0.0; m];
    for (i, &c) in counts.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let start = i.saturating_sub(reach);
        let end = (i + reach).min(m - 1);
        for (j, d) in density[start..=end].iter_mut().enumerate() {
            *d += c * kernel[(start + j).abs_diff(i)];
        }
    }
    EmpiricalPdf::from_parts(support, density, h)
}

/// `n` draws through the linearly interpolated inverse CDF.
pub fn sample_pdf(pdf: &EmpiricalPdf, rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| pdf.quantile(rng.uniform())).collect()
}

/// Two-component Gaussian mixture (0.8 N(0, 1) + 0.2 N(0, 9)). This is a
/// synthetic stand-in with heavier tails than a Gaussian, not measured data.
pub fn builtin_samples(n: usize) -> Vec<f64> {
    let mut rng = Rng::new(0x5eed).split("builtin-silhouette-noise");
    (0..n)
        .map(|_| {
            let wide = rng.uniform() < 0.2;
            let z = rng.normal();
            if wide {
                3.0 * z
            } else {
                z
            }
        })
        .collect()
}

/// KDE fit of [`builtin_samples`], computed once.
pub fn builtin_pdf() -> &'static EmpiricalPdf {
    static PDF: OnceLock<EmpiricalPdf> = OnceLock::new();
    PDF.get_or_init(|| fit_kde(&builtin_samples(200_000), None).expect("builtin samples are valid"))
}

/// Where the silhouette-region density comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PdfSource {
    #[default]
    Builtin,
    /// Rank-1 tensor of raw samples in the container format.
    File(std::path::PathBuf),
}

impl PdfSource {
    pub fn load(&self) -> Result<EmpiricalPdf> {
        match self {
            PdfSource::Builtin => Ok(builtin_pdf().clone()),
            PdfSource::File(path) => load_samples_and_fit(path),
        }
    }
}

pub fn load_samples_and_fit(path: &Path) -> Result<EmpiricalPdf> {
    let (tensor, _) = read_tensor(path)?;
    if tensor.dims().len() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "noise sample file must be rank 1, got dims {:?}",
            tensor.dims()
        )));
    }
    fit_kde(&tensor.to_f64(), None)
}

/// Requested SNRs in dB. `f64::INFINITY` disables a regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    pub snr_sound_db: f64,
    pub snr_sil_db: f64,
}

impl NoiseLevels {
    /// Both SNRs drawn independently from `U[lo, hi]`.
    pub fn sample(rng: &mut Rng, range_db: [f64; 2]) -> Self {
        NoiseLevels {
            snr_sound_db: rng.uniform_in(range_db[0], range_db[1]),
            snr_sil_db: rng.uniform_in(range_db[0], range_db[1]),
        }
    }
}

fn db_to_ratio(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Mean `|z|^2` over the pixels of one region (`silhouette` selects mask = 1).
pub fn region_power(img: &SpectralImage, mask: &SilhouetteMask, silhouette: bool) -> Option<f64> {
    let (sum, n) = (0..img.len())
        .filter(|&p| mask.is_silhouette(p) == silhouette)
        .fold((0.0, 0usize), |(s, n), p| (s + img.power(p), n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Realized SNR in dB of `noisy` against `clean` over one region, referenced
/// to the clean sound-region power.
pub fn realized_snr_db(
    clean: &SpectralImage,
    noisy: &SpectralImage,
    mask: &SilhouetteMask,
    silhouette: bool,
) -> Option<f64> {
    let signal = region_power(clean, mask, false)?;
    let (sum, n) = (0..clean.len())
        .filter(|&p| mask.is_silhouette(p) == silhouette)
        .fold((0.0, 0usize), |(s, n), p| {
            let dr = noisy.re[p] - clean.re[p];
            let di = noisy.im[p] - clean.im[p];
            (s + dr * dr + di * di, n + 1)
        });
    (n > 0 && sum > 0.0).then(|| 10.0 * (signal / (sum / n as f64)).log10())
}

pub fn add_noise(
    clean: &SpectralImage,
    mask: &SilhouetteMask,
    levels: NoiseLevels,
    pdf: &EmpiricalPdf,
    rng: &Rng,
) -> Result<SpectralImage> {
    if mask.width() != clean.width() || mask.height() != clean.height() {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs image {}x{}",
            mask.width(),
            mask.height(),
            clean.width(),
            clean.height()
        )));
    }
    if (0..clean.len()).any(|p| mask.is_silhouette(p) && (clean.re[p] != 0.0 || clean.im[p] != 0.0)) {
        return Err(Error::InvalidArgument(
            "clean image must be exactly zero inside the silhouette".into(),
        ));
    }
    let signal = match region_power(clean, mask, false) {
        Some(p) if p > 0.0 => p,
        _ => return Err(Error::UndefinedSnr),
    };
    let mut noisy = clean.clone();

    let sigma = (signal * db_to_ratio(levels.snr_sound_db) / 2.0).sqrt();
    let mut sound_rng = rng.split("sound");
    let mut sil_rng = rng.split("silhouette");
    let sil_target = signal * db_to_ratio(levels.snr_sil_db);
    let sil_scale = (sil_target / (2.0 * pdf.second_moment())).sqrt();
    for p in 0..clean.len() {
        if mask.is_silhouette(p) {
            noisy.re[p] = sil_scale * pdf.quantile(sil_rng.uniform());
            noisy.im[p] = sil_scale * pdf.quantile(sil_rng.uniform());
        } else {
            noisy.re[p] += sigma * sound_rng.normal();
            noisy.im[p] += sigma * sound_rng.normal();
        }
    }
    Ok(noisy)
}
