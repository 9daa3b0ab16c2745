//! Classical baselines: a per-pixel temporal bandpass and a spatio-temporal
//! filter that keeps only wavenumber-frequency bins near the acoustic
//! dispersion cone `|k| = |omega| / c`. Both are ideal spectral masks.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{FieldVideo, SilhouetteMask, SpectralImage};
use crate::metrics::Denoiser;
use crate::spectral::{forward_ft, inverse_ft};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    TimeBandpass,
    SpatioTemporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub center_hz: f64,
    pub bandwidth_hz: f64,
    #[serde(default = "default_c")]
    pub sound_speed: f64,
    /// Cone half-thickness in rad/m; two wavenumber bins when absent.
    #[serde(default)]
    pub delta_k: Option<f64>,
}

fn default_c() -> f64 {
    340.0
}

impl FilterSpec {
    pub fn time_bandpass(center_hz: f64, bandwidth_hz: f64) -> Self {
        FilterSpec {
            kind: FilterKind::TimeBandpass,
            center_hz,
            bandwidth_hz,
            sound_speed: default_c(),
            delta_k: None,
        }
    }

    pub fn spatiotemporal(center_hz: f64, bandwidth_hz: f64) -> Self {
        FilterSpec {
            kind: FilterKind::SpatioTemporal,
            ..Self::time_bandpass(center_hz, bandwidth_hz)
        }
    }

    pub fn band(&self) -> (f64, f64) {
        (
            self.center_hz - 0.5 * self.bandwidth_hz,
            self.center_hz + 0.5 * self.bandwidth_hz,
        )
    }

    fn validate(&self, fs: f64) -> Result<()> {
        let (lo, hi) = self.band();
        let nyquist = 0.5 * fs;
        if !(self.bandwidth_hz > 0.0 && lo > 0.0 && hi < nyquist) {
            return Err(Error::BandOutsideNyquist {
                low_hz: lo,
                high_hz: hi,
                nyquist_hz: nyquist,
            });
        }
        if !(self.sound_speed > 0.0) || self.delta_k.is_some_and(|d| !(d > 0.0)) {
            return Err(Error::InvalidArgument(
                "filter needs sound_speed > 0 and delta_k > 0".into(),
            ));
        }
        Ok(())
    }

    /// Cone half-thickness for a `width` x `height` grid of spacing `dx`.
    pub fn delta_k_for(&self, width: usize, height: usize, dx: f64) -> f64 {
        self.delta_k
            .unwrap_or_else(|| 2.0 * 2.0 * PI / (width.min(height) as f64 * dx))
    }

    fn in_band(&self, f: f64) -> bool {
        let (lo, hi) = self.band();
        f.abs() >= lo && f.abs() <= hi
    }
}

/// Zeros every temporal bin outside the band, per pixel.
pub fn time_bandpass(video: &FieldVideo, spec: &FilterSpec) -> Result<FieldVideo> {
    spec.validate(video.fs)?;
    let mut spectrum = forward_ft(video)?;
    for k in 0..spectrum.bins.len() {
        if !spec.in_band(spectrum.bin_freq(k)) {
            let bin = &mut spectrum.bins[k];
            bin.re.iter_mut().for_each(|v| *v = 0.0);
            bin.im.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    inverse_ft(&spectrum)
}

/// Signed DFT frequency index of bin `k` in an `n`-point transform.
fn signed(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// In-place 1D FFTs along one axis of a row-major 3D array.
fn fft_axis(data: &mut [Complex64], dims: [usize; 3], axis: usize, fft: &Arc<dyn Fft<f64>>) {
    let [a, b, c] = dims;
    match axis {
        2 => data.par_chunks_mut(c).for_each(|line| fft.process(line)),
        1 => data.par_chunks_mut(b * c).for_each(|plane| {
            let mut line = vec![Complex64::default(); b];
            for k in 0..c {
                for j in 0..b {
                    line[j] = plane[j * c + k];
                }
                fft.process(&mut line);
                for j in 0..b {
                    plane[j * c + k] = line[j];
                }
            }
        }),
        _ => {
            let stride = b * c;
            let mut line = vec![Complex64::default(); a];
            for jk in 0..stride {
                for i in 0..a {
                    line[i] = data[i * stride + jk];
                }
                fft.process(&mut line);
                for i in 0..a {
                    data[i * stride + jk] = line[i];
                }
            }
        }
    }
}

fn fft3(data: &mut [Complex64], dims: [usize; 3], inverse: bool) {
    let mut planner = FftPlanner::new();
    for axis in 0..3 {
        let fft = if inverse {
            planner.plan_fft_inverse(dims[axis])
        } else {
            planner.plan_fft_forward(dims[axis])
        };
        fft_axis(data, dims, axis, &fft);
    }
}

/// Keeps `(kx, ky, omega)` bins with `omega` in the band and
/// `| |k| - |omega| / c | <= delta_k`.
pub fn spatiotemporal_filter(video: &FieldVideo, spec: &FilterSpec) -> Result<FieldVideo> {
    spec.validate(video.fs)?;
    let (w, h, t) = (video.width(), video.height(), video.frames());
    let dims = [w, h, t];
    let mut data: Vec<Complex64> = video.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft3(&mut data, dims, false);

    let dk = spec.delta_k_for(w, h, video.dx);
    let (kx_step, ky_step) = (2.0 * PI / (w as f64 * video.dx), 2.0 * PI / (h as f64 * video.dx));
    let keep_t: Vec<Option<f64>> = (0..t)
        .map(|k| {
            let f = signed(k, t) * video.fs / t as f64;
            spec.in_band(f).then(|| 2.0 * PI * f.abs() / spec.sound_speed)
        })
        .collect();
    data.par_chunks_mut(h * t).enumerate().for_each(|(i, plane)| {
        let kx = signed(i, w) * kx_step;
        for j in 0..h {
            let ky = signed(j, h) * ky_step;
            let kr = (kx * kx + ky * ky).sqrt();
            for (k, v) in plane[j * t..(j + 1) * t].iter_mut().enumerate() {
                let keep = keep_t[k].is_some_and(|k0| (kr - k0).abs() <= dk);
                if !keep {
                    *v = Complex64::default();
                }
            }
        }
    });

    fft3(&mut data, dims, true);
    let scale = 1.0 / (w * h * t) as f64;
    let out = data.iter().map(|z| z.re * scale).collect();
    FieldVideo::new(w, h, t, out, video.dx, video.fs)
}

pub fn apply(video: &FieldVideo, spec: &FilterSpec) -> Result<FieldVideo> {
    match spec.kind {
        FilterKind::TimeBandpass => time_bandpass(video, spec),
        FilterKind::SpatioTemporal => spatiotemporal_filter(video, spec),
    }
}

/// Single-bin form of a filter, so it can be evaluated on spectral-image
/// datasets. The temporal band passes or rejects the whole image; the
/// spatio-temporal filter becomes a ring mask at `|k| = 2 pi f / c` in the
/// 2D spatial spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageFilter {
    pub spec: FilterSpec,
    pub dx: f64,
}

impl ImageFilter {
    pub fn apply(&self, img: &SpectralImage) -> Result<SpectralImage> {
        let spec = &self.spec;
        let mut out = img.clone();
        if !spec.in_band(img.freq_hz) {
            out.re.iter_mut().for_each(|v| *v = 0.0);
            out.im.iter_mut().for_each(|v| *v = 0.0);
            return Ok(out);
        }
        if spec.kind == FilterKind::TimeBandpass {
            return Ok(out);
        }
        let (w, h) = (img.width(), img.height());
        let mut data: Vec<Complex64> = img
            .re
            .iter()
            .zip(&img.im)
            .map(|(&r, &i)| Complex64::new(r, i))
            .collect();
        let dims = [w, h, 1];
        fft3(&mut data, dims, false);
        let dk = spec.delta_k_for(w, h, self.dx);
        let k0 = 2.0 * PI * img.freq_hz / spec.sound_speed;
        for i in 0..w {
            let kx = signed(i, w) * 2.0 * PI / (w as f64 * self.dx);
            for j in 0..h {
                let ky = signed(j, h) * 2.0 * PI / (h as f64 * self.dx);
                if ((kx * kx + ky * ky).sqrt() - k0).abs() > dk {
                    data[i * h + j] = Complex64::default();
                }
            }
        }
        fft3(&mut data, dims, true);
        let scale = 1.0 / (w * h) as f64;
        for (p, z) in data.iter().enumerate() {
            out.re[p] = z.re * scale;
            out.im[p] = z.im * scale;
        }
        Ok(out)
    }
}

impl Denoiser for ImageFilter {
    fn denoise(&self, noisy: &SpectralImage) -> Result<(SpectralImage, SilhouetteMask)> {
        Ok((
            self.apply(noisy)?,
            SilhouetteMask::empty(noisy.width(), noisy.height()),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    const FS: f64 = 8000.0;
    const DX: f64 = 0.01;

    fn tone(w: usize, h: usize, t: usize, f: f64) -> FieldVideo {
        let mut v = FieldVideo::zeros(w, h, t, DX, FS).unwrap();
        let data = v.data_mut();
        for p in 0..w * h {
            for s in 0..t {
                data[p * t + s] = (2.0 * PI * f * s as f64 / FS + 0.1 * p as f64).cos();
            }
        }
        v
    }

    fn noise(w: usize, h: usize, t: usize, seed: u64) -> FieldVideo {
        let mut rng = Rng::new(seed);
        let data = (0..w * h * t).map(|_| rng.normal()).collect();
        FieldVideo::new(w, h, t, data, DX, FS).unwrap()
    }

    fn power(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn passband_identity_and_rejection() {
        // 1000 Hz sits exactly on bin 16 of 128 samples
        let v = tone(4, 3, 128, 1000.0);
        let out = time_bandpass(&v, &FilterSpec::time_bandpass(1000.0, 200.0)).unwrap();
        let err = v.data().iter().zip(out.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        let out = time_bandpass(&v, &FilterSpec::time_bandpass(2500.0, 200.0)).unwrap();
        assert!(power(out.data()) < 1e-6 * power(v.data()));
    }

    #[test]
    fn band_outside_nyquist() {
        let v = tone(2, 2, 16, 1000.0);
        for spec in [
            FilterSpec::time_bandpass(3950.0, 200.0),
            FilterSpec::time_bandpass(50.0, 200.0),
            FilterSpec::spatiotemporal(4000.0, 10.0),
        ] {
            assert!(matches!(apply(&v, &spec), Err(Error::BandOutsideNyquist { .. })));
        }
    }

    #[test]
    fn zero_video_stays_zero() {
        let v = FieldVideo::zeros(8, 8, 16, DX, FS).unwrap();
        let out = spatiotemporal_filter(&v, &FilterSpec::spatiotemporal(1000.0, 500.0)).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn plane_wave_passes_cone() {
        // wave along x with an integer number of wavelengths in the box
        let (w, h, t) = (32, 8, 64);
        let f = 1000.0;
        let k = 2.0 * PI * 4.0 / (w as f64 * DX);
        let spec = FilterSpec {
            sound_speed: 2.0 * PI * f / k,
            ..FilterSpec::spatiotemporal(f, 250.0)
        };
        let mut v = FieldVideo::zeros(w, h, t, DX, FS).unwrap();
        for i in 0..w {
            for j in 0..h {
                for s in 0..t {
                    let p = (i * h + j) * t + s;
                    v.data_mut()[p] = (2.0 * PI * f * s as f64 / FS - k * i as f64 * DX).cos();
                }
            }
        }
        let out = spatiotemporal_filter(&v, &spec).unwrap();
        let ratio = (power(out.data()) / power(v.data())).sqrt();
        assert!(ratio >= 0.9, "{ratio}");
    }

    #[test]
    fn linear_and_idempotent() {
        let (w, h, t) = (12, 10, 32);
        let u = noise(w, h, t, 1);
        let v = noise(w, h, t, 2);
        for spec in [
            FilterSpec::time_bandpass(1500.0, 1000.0),
            FilterSpec::spatiotemporal(1500.0, 1000.0),
        ] {
            let (a, b) = (0.7, -1.3);
            let mix: Vec<f64> = u.data().iter().zip(v.data()).map(|(x, y)| a * x + b * y).collect();
            let mix = FieldVideo::new(w, h, t, mix, DX, FS).unwrap();
            let fm = apply(&mix, &spec).unwrap();
            let (fu, fv) = (apply(&u, &spec).unwrap(), apply(&v, &spec).unwrap());
            for p in 0..w * h * t {
                let want = a * fu.data()[p] + b * fv.data()[p];
                assert!((fm.data()[p] - want).abs() < 1e-10);
            }
            let twice = apply(&fu, &spec).unwrap();
            for p in 0..w * h * t {
                assert!((twice.data()[p] - fu.data()[p]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn white_noise_keeps_cone_fraction() {
        let (w, h, t) = (16, 16, 64);
        let spec = FilterSpec::spatiotemporal(2000.0, 1000.0);
        let dk = spec.delta_k_for(w, h, DX);
        // count kept bins with frequencies in (-N/2, N/2]
        let freq = |k: usize, n: usize| if 2 * k > n { k as f64 - n as f64 } else { k as f64 };
        let mut kept = 0usize;
        for i in 0..w {
            for j in 0..h {
                let kx = 2.0 * PI * freq(i, w) / (w as f64 * DX);
                let ky = 2.0 * PI * freq(j, h) / (h as f64 * DX);
                for s in 0..t {
                    let f = (freq(s, t) * FS / t as f64).abs();
                    let in_band = (1500.0..=2500.0).contains(&f);
                    let on_cone = ((kx * kx + ky * ky).sqrt() - 2.0 * PI * f / 340.0).abs() <= dk;
                    kept += usize::from(in_band && on_cone);
                }
            }
        }
        let want = kept as f64 / (w * h * t) as f64;
        let mut got = 0.0;
        for seed in 0..4 {
            let v = noise(w, h, t, 10 + seed);
            got += power(spatiotemporal_filter(&v, &spec).unwrap().data()) / power(v.data()) / 4.0;
        }
        assert!(kept > 400 && (got / want - 1.0).abs() < 0.1, "{got} vs {want} ({kept} bins)");
    }

    #[test]
    fn image_filter_keeps_ring_content() {
        let (w, h) = (32, 32);
        let f = 1062.5;
        let k = 2.0 * PI * 3.0 / (w as f64 * DX);
        let spec = FilterSpec {
            sound_speed: 2.0 * PI * f / k,
            ..FilterSpec::spatiotemporal(f, 200.0)
        };
        let mut re = vec![0.0; w * h];
        let mut im = vec![0.0; w * h];
        for i in 0..w {
            for j in 0..h {
                re[i * h + j] = (k * i as f64 * DX).cos();
                im[i * h + j] = (k * i as f64 * DX).sin();
            }
        }
        let img = SpectralImage::new(w, h, re, im, f, 1).unwrap();
        let out = ImageFilter { spec, dx: DX }.apply(&img).unwrap();
        for p in 0..w * h {
            assert!((out.re[p] - img.re[p]).abs() < 1e-9);
        }
    }
}
