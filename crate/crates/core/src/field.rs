//! Shared field containers.
//!
//! Images are stored row-major with the `x` index outermost: pixel `(i, j)`
//! of a `width x height` image lives at `i * height + j`. Videos append time
//! as the fastest axis, so each pixel's time series is contiguous.

use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::{Metadata, Tensor, TensorData};

/// Real-valued pressure (or optical phase) movie, `width x height x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVideo {
    width: usize,
    height: usize,
    frames: usize,
    data: Vec<f64>,
    /// Grid spacing in metres.
    pub dx: f64,
    /// Frame rate in Hz.
    pub fs: f64,
}

impl FieldVideo {
    pub fn new(
        width: usize,
        height: usize,
        frames: usize,
        data: Vec<f64>,
        dx: f64,
        fs: f64,
    ) -> Result<Self> {
        let dims = vec![width, height, frames];
        if width == 0 || height == 0 || frames == 0 {
            return Err(Error::InvalidShape {
                dims,
                reason: "video dims must be >= 1".into(),
            });
        }
        if data.len() != width * height * frames {
            return Err(Error::InvalidShape {
                dims,
                reason: format!("payload holds {} values", data.len()),
            });
        }
        if !(dx > 0.0 && dx.is_finite()) || !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dx and fs must be positive, got dx={dx}, fs={fs}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite video value at index {pos}"
            )));
        }
        Ok(FieldVideo {
            width,
            height,
            frames,
            data,
            dx,
            fs,
        })
    }

    pub fn zeros(width: usize, height: usize, frames: usize, dx: f64, fs: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            frames,
            vec![0.0; width * height * frames],
            dx,
            fs,
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Time series of pixel `(i, j)`.
    pub fn series(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.height + j) * self.frames;
        &self.data[start..start + self.frames]
    }

    pub fn get(&self, i: usize, j: usize, t: usize) -> f64 {
        self.data[(i * self.height + j) * self.frames + t]
    }

    /// Frame `t` as a `width x height` image.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        self.data
            .chunks_exact(self.frames)
            .map(|series| series[t])
            .collect()
    }

    pub fn to_tensor(&self) -> (Tensor, Metadata) {
        let tensor = Tensor::f64(vec![self.width, self.height, self.frames], self.data.clone())
            .expect("video dims validated at construction");
        let mut meta = Metadata::new();
        meta.insert("kind".into(), "field_video".into());
        meta.insert("dx".into(), self.dx.into());
        meta.insert("fs".into(), self.fs.into());
        (tensor, meta)
    }

    pub fn from_tensor(tensor: &Tensor, meta: &Metadata) -> Result<Self> {
        let dims = tensor.dims();
        if dims.len() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "field video needs a rank-3 tensor, got dims {dims:?}"
            )));
        }
        let dx = meta_f64(meta, "dx")?;
        let fs = meta_f64(meta, "fs")?;
        Self::new(dims[0], dims[1], dims[2], tensor.to_f64(), dx, fs)
    }
}

/// Complex amplitude image at one frequency bin, as separate real/imaginary planes.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralImage {
    width: usize,
    height: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub freq_hz: f64,
    pub bin_index: usize,
}

impl SpectralImage {
    pub fn new(
        width: usize,
        height: usize,
        re: Vec<f64>,
        im: Vec<f64>,
        freq_hz: f64,
        bin_index: usize,
    ) -> Result<Self> {
        let n = width * height;
        if width == 0 || height == 0 || re.len() != n || im.len() != n {
            return Err(Error::InvalidShape {
                dims: vec![width, height],
                reason: format!("re has {} and im has {} values", re.len(), im.len()),
            });
        }
        if !(freq_hz >= 0.0 && freq_hz.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "freq_hz must be >= 0, got {freq_hz}"
            )));
        }
        if re.iter().chain(im.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite spectral image value".into(),
            ));
        }
        Ok(SpectralImage {
            width,
            height,
            re,
            im,
            freq_hz,
            bin_index,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        SpectralImage {
            width,
            height,
            re: vec![0.0; n],
            im: vec![0.0; n],
            freq_hz: 0.0,
            bin_index: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Channel-first `[re..., im...]` buffer, the network input layout.
    pub fn to_channels(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.len());
        out.extend_from_slice(&self.re);
        out.extend_from_slice(&self.im);
        out
    }

    pub fn from_channels(
        width: usize,
        height: usize,
        channels: &[f64],
        freq_hz: f64,
        bin_index: usize,
    ) -> Result<Self> {
        let n = width * height;
        if channels.len() != 2 * n {
            return Err(Error::ShapeMismatch(format!(
                "expected {} channel values, got {}",
                2 * n,
                channels.len()
            )));
        }
        Self::new(
            width,
            height,
            channels[..n].to_vec(),
            channels[n..].to_vec(),
            freq_hz,
            bin_index,
        )
    }

    pub fn power(&self, idx: usize) -> f64 {
        self.re[idx] * self.re[idx] + self.im[idx] * self.im[idx]
    }

    /// Rank-3 `[2, width, height]` tensor, stored as f32 or f64.
    pub fn to_tensor(&self, f32_storage: bool) -> (Tensor, Metadata) {
        let dims = vec![2, self.width, self.height];
        let values = self.to_channels();
        let tensor = if f32_storage {
            Tensor::f32(dims, values.iter().map(|&v| v as f32).collect())
        } else {
            Tensor::f64(dims, values)
        }
        .expect("spectral image dims validated at construction");
        let mut meta = Metadata::new();
        meta.insert("kind".into(), "spectral_image".into());
        meta.insert("freq_hz".into(), self.freq_hz.into());
        meta.insert("bin_index".into(), (self.bin_index as u64).into());
        (tensor, meta)
    }

    pub fn from_tensor(tensor: &Tensor, meta: &Metadata) -> Result<Self> {
        let dims = tensor.dims();
        if dims.len() != 3 || dims[0] != 2 {
            return Err(Error::ShapeMismatch(format!(
                "spectral image needs a [2, W, H] tensor, got dims {dims:?}"
            )));
        }
        let freq_hz = meta.get("freq_hz").and_then(Value::as_f64).unwrap_or(0.0);
        let bin_index = meta.get("bin_index").and_then(Value::as_u64).unwrap_or(0) as usize;
        Self::from_channels(dims[1], dims[2], &tensor.to_f64(), freq_hz, bin_index)
    }
}

/// Binary segmentation labels: 0 = sound, 1 = silhouette.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SilhouetteMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl SilhouetteMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::InvalidShape {
                dims: vec![width, height],
                reason: format!("labels hold {} values", labels.len()),
            });
        }
        if let Some(bad) = labels.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "mask labels must be 0 or 1, found {bad}"
            )));
        }
        Ok(SilhouetteMask {
            width,
            height,
            labels,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        SilhouetteMask {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.labels[i * self.height + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.labels[i * self.height + j] = value as u8;
    }

    pub fn is_silhouette(&self, idx: usize) -> bool {
        self.labels[idx] == 1
    }

    pub fn count(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }

    pub fn area_fraction(&self) -> f64 {
        self.count() as f64 / self.labels.len() as f64
    }

    pub fn to_tensor(&self) -> (Tensor, Metadata) {
        let tensor = Tensor::u8(vec![self.width, self.height], self.labels.clone())
            .expect("mask dims validated at construction");
        let mut meta = Metadata::new();
        meta.insert("kind".into(), "silhouette_mask".into());
        (tensor, meta)
    }

    pub fn from_tensor(tensor: &Tensor) -> Result<Self> {
        let dims = tensor.dims();
        if dims.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "mask needs a rank-2 tensor, got dims {dims:?}"
            )));
        }
        let labels = match tensor.data() {
            TensorData::U8(v) => v.clone(),
            _ => tensor.to_f64().iter().map(|&v| (v > 0.5) as u8).collect(),
        };
        Self::new(dims[0], dims[1], labels)
    }
}

pub(crate) fn meta_f64(meta: &Metadata, key: &str) -> Result<f64> {
    meta.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::Metadata(format!("missing numeric key {key:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn video_validation() {
        assert!(FieldVideo::new(1, 1, 1, vec![0.0], 0.01, 100.0).is_ok());
        assert!(FieldVideo::new(1, 1, 1, vec![f64::NAN], 0.01, 100.0).is_err());
        assert!(FieldVideo::new(1, 1, 1, vec![0.0], 0.0, 100.0).is_err());
        assert!(FieldVideo::new(0, 1, 1, vec![], 0.01, 100.0).is_err());
    }

    #[test]
    fn video_layout() {
        let data: Vec<f64> = (0..2 * 3 * 4).map(|v| v as f64).collect();
        let v = FieldVideo::new(2, 3, 4, data, 0.01, 1.0).unwrap();
        assert_eq!(v.series(1, 2), &[20.0, 21.0, 22.0, 23.0]);
        assert_eq!(v.frame(1), vec![1.0, 5.0, 9.0, 13.0, 17.0, 21.0]);
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(SilhouetteMask::new(2, 1, vec![0, 2]).is_err());
        let m = SilhouetteMask::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        assert_eq!(m.area_fraction(), 0.5);
    }

    #[test]
    fn spectral_tensor_round_trip() {
        let img = SpectralImage::new(2, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.5; 4], 440.0, 3)
            .unwrap();
        let (t, m) = img.to_tensor(false);
        assert_eq!(SpectralImage::from_tensor(&t, &m).unwrap(), img);
    }
}
