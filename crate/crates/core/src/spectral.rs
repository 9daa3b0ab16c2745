//! Per-pixel temporal Fourier transforms between [`FieldVideo`] and
//! per-bin [`SpectralImage`] stacks.
//!
//! Convention: `X[k] = sum_t x[t] exp(-2 pi i k t / T)`, unnormalized forward,
//! `1/T` on the inverse. Only the non-negative bins `0..=T/2` are kept.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::field::{meta_f64, FieldVideo, SpectralImage};
use crate::tensor::{Metadata, Tensor};

pub const CONVENTION: &str = "X[k]=sum_t x[t]*exp(-2*pi*i*k*t/T); forward unnormalized; inverse 1/T";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    fn weights(self, n: usize) -> Option<Vec<f64>> {
        match self {
            Window::Rectangular => None,
            Window::Hann => Some(
                (0..n)
                    .map(|t| 0.5 - 0.5 * (std::f64::consts::TAU * t as f64 / n as f64).cos())
                    .collect(),
            ),
        }
    }
}

/// All non-negative frequency bins of a real video.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralVideo {
    pub bins: Vec<SpectralImage>,
    frames: usize,
    pub fs: f64,
    pub dx: f64,
}

impl SpectralVideo {
    pub fn new(bins: Vec<SpectralImage>, frames: usize, fs: f64, dx: f64) -> Result<Self> {
        if bins.len() != frames / 2 + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} bins is inconsistent with a real signal of length {frames}",
                bins.len()
            )));
        }
        let (w, h) = (bins[0].width(), bins[0].height());
        if bins.iter().any(|b| b.width() != w || b.height() != h) {
            return Err(Error::ShapeMismatch("bins differ in image size".into()));
        }
        Ok(SpectralVideo {
            bins,
            frames,
            fs,
            dx,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn width(&self) -> usize {
        self.bins[0].width()
    }

    pub fn height(&self) -> usize {
        self.bins[0].height()
    }

    pub fn bin_freq(&self, k: usize) -> f64 {
        k as f64 * self.fs / self.frames as f64
    }

    /// Rank-4 `[2, W, H, F]` tensor plus metadata carrying the convention.
    pub fn to_tensor(&self) -> (Tensor, Metadata) {
        let (w, h, f) = (self.width(), self.height(), self.bins.len());
        let mut data = vec![0.0; 2 * w * h * f];
        for (k, bin) in self.bins.iter().enumerate() {
            for p in 0..w * h {
                data[p * f + k] = bin.re[p];
                data[(w * h + p) * f + k] = bin.im[p];
            }
        }
        let tensor = Tensor::f64(vec![2, w, h, f], data).expect("validated dims");
        let mut meta = Metadata::new();
        meta.insert("kind".into(), "spectral_video".into());
        meta.insert("convention".into(), CONVENTION.into());
        meta.insert("frames".into(), (self.frames as u64).into());
        meta.insert("fs".into(), self.fs.into());
        meta.insert("dx".into(), self.dx.into());
        (tensor, meta)
    }

    pub fn from_tensor(tensor: &Tensor, meta: &Metadata) -> Result<Self> {
        let dims = tensor.dims();
        if dims.len() != 4 || dims[0] != 2 {
            return Err(Error::ShapeMismatch(format!(
                "spectral video needs a [2, W, H, F] tensor, got {dims:?}"
            )));
        }
        let (w, h, f) = (dims[1], dims[2], dims[3]);
        let frames = meta
            .get("frames")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::Metadata("missing key \"frames\"".into()))?
            as usize;
        let fs = meta_f64(meta, "fs")?;
        let dx = meta_f64(meta, "dx")?;
        let data = tensor.to_f64();
        let bins = (0..f)
            .map(|k| {
                let re = (0..w * h).map(|p| data[p * f + k]).collect();
                let im = (0..w * h).map(|p| data[(w * h + p) * f + k]).collect();
                SpectralImage::new(w, h, re, im, k as f64 * fs / frames as f64, k)
            })
            .collect::<Result<Vec<_>>>()?;
        SpectralVideo::new(bins, frames, fs, dx)
    }
}

pub fn forward_ft(video: &FieldVideo) -> Result<SpectralVideo> {
    forward_ft_windowed(video, Window::Rectangular)
}

pub fn forward_ft_windowed(video: &FieldVideo, window: Window) -> Result<SpectralVideo> {
    let t = video.frames();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "forward_ft needs at least 2 frames, got {t}"
        )));
    }
    let nbins = t / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(t);
    let weights = window.weights(t);
    let spectra: Vec<Vec<Complex64>> = video
        .data()
        .par_chunks_exact(t)
        .map(|series| {
            let mut buf: Vec<Complex64> = match &weights {
                Some(w) => series
                    .iter()
                    .zip(w)
                    .map(|(&x, &w)| Complex64::new(x * w, 0.0))
                    .collect(),
                None => series.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            };
            fft.process(&mut buf);
            buf.truncate(nbins);
            buf
        })
        .collect();
    let (w, h) = (video.width(), video.height());
    let bins = (0..nbins)
        .map(|k| {
            let re = spectra.iter().map(|s| s[k].re).collect();
            let im = spectra.iter().map(|s| s[k].im).collect();
            SpectralImage::new(w, h, re, im, k as f64 * video.fs / t as f64, k)
        })
        .collect::<Result<Vec<_>>>()?;
    SpectralVideo::new(bins, t, video.fs, video.dx)
}

/// Exact inverse of [`forward_ft`]. Imaginary parts of the DC bin (and of the
/// Nyquist bin for even lengths) are ignored.
pub fn inverse_ft(spec: &SpectralVideo) -> Result<FieldVideo> {
    let t = spec.frames();
    if spec.bins.len() != t / 2 + 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} bins is inconsistent with a real signal of length {t}",
            spec.bins.len()
        )));
    }
    let (w, h) = (spec.width(), spec.height());
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(t);
    let scale = 1.0 / t as f64;
    let data: Vec<f64> = (0..w * h)
        .into_par_iter()
        .flat_map_iter(|p| {
            let mut buf = vec![Complex64::new(0.0, 0.0); t];
            for (k, bin) in spec.bins.iter().enumerate() {
                buf[k] = Complex64::new(bin.re[p], bin.im[p]);
            }
            buf[0].im = 0.0;
            if t.is_multiple_of(2) {
                buf[t / 2].im = 0.0;
            }
            for k in 1..t.div_ceil(2) {
                buf[t - k] = buf[k].conj();
            }
            ifft.process(&mut buf);
            buf.into_iter().map(move |c| c.re * scale)
        })
        .collect();
    FieldVideo::new(w, h, t, data, spec.dx, spec.fs)
}

/// Bin with the largest total power, DC excluded; ties go to the lower index.
pub fn dominant_bin(spec: &SpectralVideo) -> Result<usize> {
    if spec.bins.len() < 2 {
        return Err(Error::InvalidArgument(
            "dominant_bin needs at least 2 bins".into(),
        ));
    }
    let mut best = (1, f64::NEG_INFINITY);
    for (k, bin) in spec.bins.iter().enumerate().skip(1) {
        let power: f64 = (0..bin.len()).map(|p| bin.power(p)).sum();
        if power > best.1 {
            best = (k, power);
        }
    }
    Ok(best.0)
}

/// Single-bin DFT of a real series, unnormalized, same sign convention.
pub(crate) fn dft_bin(series: &[f64], k: usize) -> Complex64 {
    let n = series.len() as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for (t, &x) in series.iter().enumerate() {
        // reduce the phase index first so the angle stays small and exact
        let idx = (k * t) % series.len();
        let angle = -std::f64::consts::TAU * idx as f64 / n;
        acc += Complex64::from_polar(x, angle);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_video(w: usize, h: usize, t: usize, seed: u64) -> FieldVideo {
        let mut rng = Rng::new(seed);
        let data = (0..w * h * t).map(|_| rng.normal()).collect();
        FieldVideo::new(w, h, t, data, 0.01, 1000.0).unwrap()
    }

    fn tone_video(t: usize, tones: &[(usize, f64)]) -> FieldVideo {
        let data: Vec<f64> = (0..4)
            .flat_map(|_| {
                (0..t).map(|n| {
                    tones
                        .iter()
                        .map(|&(k, a)| a * (std::f64::consts::TAU * (k * n) as f64 / t as f64).cos())
                        .sum::<f64>()
                })
            })
            .collect();
        FieldVideo::new(2, 2, t, data, 0.01, 1000.0).unwrap()
    }

    #[test]
    fn constant_video_is_pure_dc() {
        let t = 16;
        let v = FieldVideo::new(2, 1, t, vec![3.0; 2 * t], 0.01, 100.0).unwrap();
        let s = forward_ft(&v).unwrap();
        assert_eq!(s.bins.len(), 9);
        assert!((s.bins[0].re[0] - 3.0 * t as f64).abs() < 1e-12);
        for b in &s.bins[1..] {
            assert!(b.re.iter().chain(&b.im).all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn cosine_lands_in_its_bin() {
        let t = 64;
        let s = forward_ft(&tone_video(t, &[(5, 1.0)])).unwrap();
        for (k, b) in s.bins.iter().enumerate() {
            let expect = if k == 5 { t as f64 / 2.0 } else { 0.0 };
            assert!((b.re[0] - expect).abs() < 1e-12 * t as f64, "bin {k}");
            assert!(b.im[0].abs() < 1e-12 * t as f64);
        }
        assert_eq!(s.bin_freq(5), 5.0 * 1000.0 / 64.0);
    }

    #[test]
    fn matches_direct_dft() {
        let v = random_video(2, 3, 15, 11);
        let s = forward_ft(&v).unwrap();
        for k in 0..s.bins.len() {
            let direct = dft_bin(v.series(1, 2), k);
            let p = 3 + 2;
            assert!((s.bins[k].re[p] - direct.re).abs() < 1e-10);
            assert!((s.bins[k].im[p] - direct.im).abs() < 1e-10);
        }
    }

    #[test]
    fn round_trip_even_and_odd() {
        for t in [2, 7, 32] {
            let v = random_video(3, 2, t, t as u64);
            let back = inverse_ft(&forward_ft(&v).unwrap()).unwrap();
            let max = v.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let err = v
                .data()
                .iter()
                .zip(back.data())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-10 * max, "T={t}: {err}");
        }
    }

    #[test]
    fn zero_bins_give_zero_video() {
        let v = FieldVideo::zeros(3, 3, 10, 0.01, 50.0).unwrap();
        let back = inverse_ft(&forward_ft(&v).unwrap()).unwrap();
        assert!(back.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn inconsistent_bin_count_rejected() {
        let mut s = forward_ft(&random_video(2, 2, 8, 1)).unwrap();
        s.bins.pop();
        assert!(inverse_ft(&s).is_err());
    }

    #[test]
    fn parseval_per_pixel() {
        let t = 20;
        let v = random_video(2, 2, t, 4);
        let s = forward_ft(&v).unwrap();
        for p in 0..4 {
            let time: f64 = v.data()[p * t..(p + 1) * t].iter().map(|x| x * x).sum();
            // one-sided spectrum: interior bins count twice
            let freq: f64 = s
                .bins
                .iter()
                .enumerate()
                .map(|(k, b)| {
                    let mult = if k == 0 || (t % 2 == 0 && k == t / 2) { 1.0 } else { 2.0 };
                    mult * b.power(p)
                })
                .sum::<f64>()
                / t as f64;
            assert!((time - freq).abs() < 1e-9 * time);
        }
    }

    #[test]
    fn dominant_bin_rules() {
        let t = 64;
        let s = forward_ft(&tone_video(t, &[(7, 1.0)])).unwrap();
        assert_eq!(dominant_bin(&s).unwrap(), 7);
        let s = forward_ft(&tone_video(t, &[(5, 2.0), (9, 1.0)])).unwrap();
        assert_eq!(dominant_bin(&s).unwrap(), 5);
        // exact tie built directly in the spectral domain
        let mut s = forward_ft(&FieldVideo::zeros(2, 2, t, 0.01, 1000.0).unwrap()).unwrap();
        s.bins[4].re[0] = 3.0;
        s.bins[11].im[2] = -3.0;
        assert_eq!(dominant_bin(&s).unwrap(), 4);
        // DC is excluded even when it dominates
        let mut v = tone_video(t, &[(3, 0.1)]);
        v.data_mut().iter_mut().for_each(|x| *x += 10.0);
        assert_eq!(dominant_bin(&forward_ft(&v).unwrap()).unwrap(), 3);
    }

    #[test]
    fn tensor_round_trip() {
        let s = forward_ft(&random_video(2, 3, 9, 2)).unwrap();
        let (t, m) = s.to_tensor();
        assert_eq!(t.dims(), &[2, 2, 3, 5]);
        assert_eq!(SpectralVideo::from_tensor(&t, &m).unwrap(), s);
    }

    #[test]
    fn hann_window_reduces_leakage() {
        // off-bin tone: far bins leak less with Hann
        let t = 128;
        let data: Vec<f64> = (0..t)
            .map(|n| (std::f64::consts::TAU * 10.5 * n as f64 / t as f64).cos())
            .collect();
        let v = FieldVideo::new(1, 1, t, data, 0.01, 1000.0).unwrap();
        let rect = forward_ft(&v).unwrap();
        let hann = forward_ft_windowed(&v, Window::Hann).unwrap();
        assert!(hann.bins[40].power(0) < 1e-3 * rect.bins[40].power(0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn max_abs(v: &[f64]) -> f64 {
            v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn round_trip_any_shape(w in 1usize..5, h in 1usize..5, t in 2usize..40, seed in any::<u64>()) {
                let v = random_video(w, h, t, seed);
                let back = inverse_ft(&forward_ft(&v).unwrap()).unwrap();
                let err = v.data().iter().zip(back.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                prop_assert!(err <= 1e-10 * max_abs(v.data()));
            }

            #[test]
            fn forward_is_linear(t in 2usize..40, a in -3.0f64..3.0, b in -3.0f64..3.0, seed in any::<u64>()) {
                let x = random_video(2, 3, t, seed);
                let y = random_video(2, 3, t, seed ^ 0x9e37_79b9);
                let mix: Vec<f64> = x.data().iter().zip(y.data()).map(|(p, q)| a * p + b * q).collect();
                let z = FieldVideo::new(2, 3, t, mix, 0.01, 1000.0).unwrap();
                let (fx, fy, fz) = (forward_ft(&x).unwrap(), forward_ft(&y).unwrap(), forward_ft(&z).unwrap());
                let scale = (t as f64) * (a.abs() + b.abs() + 1.0) * (max_abs(x.data()) + max_abs(y.data()));
                for k in 0..fz.bins.len() {
                    for p in 0..6 {
                        let re = a * fx.bins[k].re[p] + b * fy.bins[k].re[p];
                        let im = a * fx.bins[k].im[p] + b * fy.bins[k].im[p];
                        prop_assert!((fz.bins[k].re[p] - re).abs() <= 1e-12 * scale);
                        prop_assert!((fz.bins[k].im[p] - im).abs() <= 1e-12 * scale);
                    }
                }
            }
        }
    }
}
