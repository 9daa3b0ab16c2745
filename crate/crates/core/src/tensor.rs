//! Minimal binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes          | content                                  |
//! |----------------|------------------------------------------|
//! | 0..8           | magic `SFTENSR1`                         |
//! | 8              | dtype code (0 = f32, 1 = f64, 2 = u8)    |
//! | 9              | rank                                     |
//! | 10..10+4*rank  | dims as `u32`                            |
//! | rest           | row-major payload                        |
//!
//! Metadata lives in a JSON sidecar at the same path with `.json` appended.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SFTENSR1";

/// Flat key/value metadata stored in the sidecar.
pub type Metadata = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
    U8 = 2,
}

impl DType {
    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            2 => Ok(DType::U8),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dense row-major array with one of the supported element types.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.is_empty() || dims.len() > u8::MAX as usize {
            return Err(Error::InvalidShape {
                dims,
                reason: "rank must be in 1..=255".into(),
            });
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape {
                dims,
                reason: "every dim must be >= 1".into(),
            });
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::DimOverflow(dims.iter().map(|&d| d as u64).collect()));
        }
        let count = element_count(&dims.iter().map(|&d| d as u64).collect::<Vec<_>>())?;
        if count != data.len() {
            return Err(Error::InvalidShape {
                dims,
                reason: format!("payload holds {} elements", data.len()),
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn f64(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Tensor::new(dims, TensorData::F64(data))
    }

    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Tensor::new(dims, TensorData::F32(data))
    }

    pub fn u8(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        Tensor::new(dims, TensorData::U8(data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn into_data(self) -> TensorData {
        self.data
    }

    /// Values widened to f64 regardless of storage type.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let dtype = self.dtype();
        let mut out =
            Vec::with_capacity(10 + 4 * self.dims.len() + self.data.len() * dtype.size());
        out.extend_from_slice(MAGIC);
        out.push(dtype as u8);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        let dtype = DType::from_code(bytes[8])?;
        let rank = bytes[9] as usize;
        let header = 10 + 4 * rank;
        if bytes.len() < header {
            return Err(Error::TruncatedPayload {
                expected: header,
                found: bytes.len(),
            });
        }
        let dims: Vec<u64> = bytes[10..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as u64)
            .collect();
        let count = element_count(&dims)?;
        let payload_len = count
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::DimOverflow(dims.clone()))?;
        let payload = &bytes[header..];
        if payload.len() < payload_len {
            return Err(Error::TruncatedPayload {
                expected: payload_len,
                found: payload.len(),
            });
        }
        let payload = &payload[..payload_len];
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
        };
        Tensor::new(dims.into_iter().map(|d| d as usize).collect(), data)
    }
}

fn element_count(dims: &[u64]) -> Result<usize> {
    let mut count: u64 = 1;
    for &d in dims {
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::DimOverflow(dims.to_vec()))?;
    }
    usize::try_from(count).map_err(|_| Error::DimOverflow(dims.to_vec()))
}

/// Path of the JSON metadata sidecar for a tensor file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor, metadata: &Metadata) -> Result<()> {
    let path = path.as_ref();
    if let Some((key, _)) = metadata
        .iter()
        .find(|(_, v)| matches!(v, Value::Object(_)))
    {
        return Err(Error::Metadata(format!(
            "metadata must be flat, key {key:?} holds an object"
        )));
    }
    fs::write(path, tensor.encode()).map_err(|e| Error::io(path, e))?;
    let sidecar = sidecar_path(path);
    let mut json = serde_json::to_string_pretty(metadata)?;
    json.push('\n');
    fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
    Ok(())
}

/// Reads a tensor and its sidecar. A missing sidecar yields empty metadata.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<(Tensor, Metadata)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensor = Tensor::decode(&bytes)?;
    let sidecar = sidecar_path(path);
    let metadata = match fs::read_to_string(&sidecar) {
        Ok(s) => serde_json::from_str(&s)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Metadata::new(),
        Err(e) => return Err(Error::io(&sidecar, e)),
    };
    Ok((tensor, metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_small_f64() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.sft");
        let t = Tensor::f64(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let mut meta = Metadata::new();
        meta.insert("dx".into(), 0.01.into());
        write_tensor(&path, &t, &meta).unwrap();
        let (back, back_meta) = read_tensor(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back_meta, meta);
    }

    #[test]
    fn spectral_image_file_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.sft");
        let t = Tensor::f64(vec![2, 128, 128], vec![0.5; 2 * 128 * 128]).unwrap();
        write_tensor(&path, &t, &Metadata::new()).unwrap();
        let len = fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(len, 8 + 1 + 1 + 3 * 4 + 2 * 128 * 128 * 8);
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(matches!(
            Tensor::f64(vec![0, 3], vec![]),
            Err(Error::InvalidShape { .. })
        ));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = Tensor::u8(vec![3], vec![1, 2, 3]).unwrap().encode();
        bytes[0] = b'X';
        let err = Tensor::decode(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "bad magic");
    }

    #[test]
    fn truncated() {
        let bytes = Tensor::f64(vec![4], vec![1.0; 4]).unwrap().encode();
        let err = Tensor::decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().starts_with("truncated payload"));
    }

    #[test]
    fn dim_overflow() {
        let mut bytes = Vec::from(&MAGIC[..]);
        bytes.push(1);
        bytes.push(3);
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(Tensor::decode(&bytes), Err(Error::DimOverflow(_))));
    }

    #[test]
    fn unknown_dtype() {
        let mut bytes = Tensor::u8(vec![1], vec![7]).unwrap().encode();
        bytes[8] = 9;
        assert!(matches!(
            Tensor::decode(&bytes),
            Err(Error::UnsupportedDtype(9))
        ));
    }

    #[test]
    fn nested_metadata_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut meta = Metadata::new();
        meta.insert("nested".into(), serde_json::json!({"a": 1}));
        let t = Tensor::u8(vec![1], vec![0]).unwrap();
        assert!(write_tensor(dir.path().join("x.sft"), &t, &meta).is_err());
    }

    fn arb_tensor() -> impl Strategy<Value = Tensor> {
        prop::collection::vec(1usize..5, 1..4).prop_flat_map(|dims| {
            let n: usize = dims.iter().product();
            prop_oneof![
                prop::collection::vec(any::<f64>(), n)
                    .prop_map({
                        let dims = dims.clone();
                        move |v| Tensor::f64(dims.clone(), v).unwrap()
                    }),
                prop::collection::vec(any::<f32>(), n)
                    .prop_map({
                        let dims = dims.clone();
                        move |v| Tensor::f32(dims.clone(), v).unwrap()
                    }),
                prop::collection::vec(any::<u8>(), n)
                    .prop_map(move |v| Tensor::u8(dims.clone(), v).unwrap()),
            ]
        })
    }

    proptest! {
        #[test]
        fn encode_decode_bit_exact(t in arb_tensor()) {
            let back = Tensor::decode(&t.encode()).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            // compare bit patterns so NaN payloads count too
            prop_assert_eq!(back.encode(), t.encode());
        }
    }
}
