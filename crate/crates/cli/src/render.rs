//! Grayscale PNG export with a fixed, declared color scale.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sonoseg::tensor::sidecar_path;

use crate::error::{CliError, CliResult};

/// Color scale of a rendering, stored in the PNG text chunks and the sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub min: f64,
    pub max: f64,
}

impl Scale {
    /// Symmetric scale `[-peak, peak]`.
    pub fn symmetric(peak: f64) -> CliResult<Self> {
        if !(peak > 0.0 && peak.is_finite()) {
            return Err(CliError::Usage(format!("color scale peak must be > 0, got {peak}")));
        }
        Ok(Scale { min: -peak, max: peak })
    }

    /// Maps `v` linearly to 0..=255, clamping outside the scale.
    pub fn gray(&self, v: f64) -> u8 {
        let u = (v - self.min) / (self.max - self.min);
        (u.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderInfo {
    pub scale_min: f64,
    pub scale_max: f64,
    pub width: usize,
    pub height: usize,
    /// Value of pixel (row r, column c) is `values[c * height + r]`.
    pub layout: String,
}

/// Converts a `[W][H]` plane to row-major gray pixels, columns along x.
pub fn to_pixels(values: &[f64], width: usize, height: usize, scale: Scale) -> Vec<u8> {
    let mut px = vec![0u8; width * height];
    for i in 0..width {
        for j in 0..height {
            px[j * width + i] = scale.gray(values[i * height + j]);
        }
    }
    px
}

/// Writes an 8-bit grayscale PNG of a `[W][H]` plane plus a JSON sidecar.
pub fn write_png(path: &Path, values: &[f64], width: usize, height: usize, scale: Scale) -> CliResult<()> {
    let png_err = |e: png::EncodingError| CliError::Png(format!("{}: {e}", path.display()));
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk("scale_min".into(), scale.min.to_string()).map_err(png_err)?;
    enc.add_text_chunk("scale_max".into(), scale.max.to_string()).map_err(png_err)?;
    let mut writer = enc.write_header().map_err(png_err)?;
    writer
        .write_image_data(&to_pixels(values, width, height, scale))
        .map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    let info = RenderInfo {
        scale_min: scale.min,
        scale_max: scale.max,
        width,
        height,
        layout: "pixel(row, col) = value[col * height + row]".into(),
    };
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&info).map_err(sonoseg::Error::from)? + "\n";
    std::fs::write(&side, text).map_err(|e| CliError::io(&side, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_endpoints() {
        let s = Scale::symmetric(2.0).unwrap();
        assert_eq!(s.gray(-2.0), 0);
        assert_eq!(s.gray(2.0), 255);
        assert_eq!(s.gray(0.0), 128);
        assert_eq!(s.gray(-9.0), 0);
        assert_eq!(s.gray(9.0), 255);
        assert!(Scale::symmetric(0.0).is_err());
    }

    #[test]
    fn png_carries_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let (w, h) = (3, 2);
        let values = [-1.0, 1.0, 0.0, 0.0, 1.0, -1.0];
        write_png(&path, &values, w, h, Scale::symmetric(1.0).unwrap()).unwrap();

        let dec = png::Decoder::new(std::io::BufReader::new(File::open(&path).unwrap()));
        let mut reader = dec.read_info().unwrap();
        let text: Vec<(String, String)> = reader
            .info()
            .uncompressed_latin1_text
            .iter()
            .map(|c| (c.keyword.clone(), c.text.clone()))
            .collect();
        assert!(text.contains(&("scale_min".into(), "-1".into())));
        assert!(text.contains(&("scale_max".into(), "1".into())));
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let frame = reader.next_frame(&mut buf).unwrap();
        assert_eq!((frame.width, frame.height), (3, 2));
        // row 0 holds j = 0 of each column
        assert_eq!(&buf[..6], &[0, 128, 255, 255, 128, 0]);

        let side: RenderInfo =
            serde_json::from_str(&std::fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!((side.scale_min, side.scale_max), (-1.0, 1.0));
    }
}
