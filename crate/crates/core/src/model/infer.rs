use rayon::prelude::*;

use super::network::{sigmoid, Batch, Network, IN_CHANNELS};
use crate::error::Result;
use crate::field::{FieldVideo, SilhouetteMask, SpectralImage};
use crate::metrics::Denoiser;
use crate::spectral::{dominant_bin, forward_ft, inverse_ft, SpectralVideo};

/// Denoised image and per-pixel silhouette probability.
pub fn infer_image(net: &Network, img: &SpectralImage) -> Result<(SpectralImage, Vec<f64>)> {
    let (w, h) = (img.width(), img.height());
    let raw = net.forward_raw(&Batch::new(1, IN_CHANNELS, w, h, img.to_channels())?)?;
    let hw = w * h;
    let denoised = SpectralImage::from_channels(w, h, &raw.data[..2 * hw], img.freq_hz, img.bin_index)?;
    let prob = raw.data[2 * hw..].iter().map(|&z| sigmoid(z)).collect();
    Ok((denoised, prob))
}

/// Class 1 where `prob > threshold`; a tie goes to class 0.
pub fn threshold_mask(prob: &[f64], w: usize, h: usize, threshold: f64) -> SilhouetteMask {
    let labels = prob.iter().map(|&p| u8::from(p > threshold)).collect();
    SilhouetteMask::new(w, h, labels).expect("prob has w * h entries")
}

pub struct NetworkDenoiser<'a> {
    pub net: &'a Network,
    pub threshold: f64,
}

impl Denoiser for NetworkDenoiser<'_> {
    fn denoise(&self, noisy: &SpectralImage) -> Result<(SpectralImage, SilhouetteMask)> {
        let (den, prob) = infer_image(self.net, noisy)?;
        let mask = threshold_mask(&prob, noisy.width(), noisy.height(), self.threshold);
        Ok((den, mask))
    }
}

/// Amplitude scale that maps bin `k` of a `t`-frame transform to physical
/// units (`2/T`, or `1/T` at DC and Nyquist).
pub fn bin_scale(k: usize, t: usize) -> f64 {
    if k == 0 || 2 * k == t {
        1.0 / t as f64
    } else {
        2.0 / t as f64
    }
}

fn scaled(img: &SpectralImage, s: f64) -> SpectralImage {
    let mut out = img.clone();
    out.re.iter_mut().for_each(|v| *v *= s);
    out.im.iter_mut().for_each(|v| *v *= s);
    out
}

/// Denoises every frequency bin of `video` and takes the silhouette from the
/// dominant bin.
pub fn infer_video(net: &Network, video: &FieldVideo, threshold: f64) -> Result<(FieldVideo, SilhouetteMask)> {
    let spec = forward_ft(video)?;
    let t = video.frames();
    let dominant = dominant_bin(&spec)?;
    let results = spec
        .bins
        .par_iter()
        .enumerate()
        .map(|(k, bin)| {
            let s = bin_scale(k, t);
            let (den, prob) = infer_image(net, &scaled(bin, s))?;
            Ok((scaled(&den, 1.0 / s), prob))
        })
        .collect::<Result<Vec<_>>>()?;
    let mask = threshold_mask(&results[dominant].1, video.width(), video.height(), threshold);
    let bins = results.into_iter().map(|(b, _)| b).collect();
    let out = inverse_ft(&SpectralVideo::new(bins, t, video.fs, video.dx)?)?;
    Ok((out, mask))
}
