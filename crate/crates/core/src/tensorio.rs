//! Tensor file I/O: raw little-endian element arrays plus a JSON sidecar.
//!
//! A tensor on disk is a pair of files: the data file holds the raw element
//! bytes in little-endian order, and `<data file>.json` holds a small
//! sidecar describing them — element dtype, shape, and the accelerator base
//! address the buffer belongs at. The sidecar is what lets a simulation
//! initialize endpoint memory from a dump, and lets quantization studies
//! reload their inputs without guessing at layout.

use crate::error::SimError;
use half::f16;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F16,
    F32,
    I8,
    U8,
}

impl DType {
    pub fn elem_bytes(self) -> u64 {
        match self {
            DType::F16 => 2,
            DType::F32 => 4,
            DType::I8 | DType::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F16 => "f16",
            DType::F32 => "f32",
            DType::I8 => "i8",
            DType::U8 => "u8",
        }
    }
}

/// Sidecar contents: everything needed to interpret the raw data file and
/// place it in accelerator memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub dtype: DType,
    pub shape: Vec<u64>,
    /// Accelerator address the buffer is meant to live at.
    pub base_address: u64,
}

impl TensorMeta {
    pub fn new(dtype: DType, shape: Vec<u64>, base_address: u64) -> TensorMeta {
        TensorMeta {
            dtype,
            shape,
            base_address,
        }
    }

    pub fn num_elements(&self) -> u64 {
        self.shape.iter().product()
    }

    pub fn num_bytes(&self) -> u64 {
        self.num_elements() * self.dtype.elem_bytes()
    }

    fn validate(&self, path: &Path) -> Result<(), SimError> {
        if self.shape.is_empty() || self.shape.contains(&0) {
            return Err(SimError::invalid_input(
                path.display().to_string(),
                format!("sidecar shape {:?} must be non-empty with positive dims", self.shape),
            ));
        }
        Ok(())
    }
}

/// Path of the JSON sidecar belonging to a data file: the data path with
/// `.json` appended, so `x.bin` pairs with `x.bin.json`.
pub fn sidecar_path(data_path: &Path) -> PathBuf {
    let mut name = data_path.as_os_str().to_os_string();
    name.push(".json");
    PathBuf::from(name)
}

/// Write `data` to `path` and its sidecar to [`sidecar_path`]. `data` must
/// be exactly the element bytes the sidecar promises.
pub fn write_tensor(path: &Path, meta: &TensorMeta, data: &[u8]) -> Result<(), SimError> {
    meta.validate(path)?;
    if data.len() as u64 != meta.num_bytes() {
        return Err(SimError::invalid_input(
            path.display().to_string(),
            format!(
                "data is {} bytes but dtype {} with shape {:?} needs {}",
                data.len(),
                meta.dtype.name(),
                meta.shape,
                meta.num_bytes()
            ),
        ));
    }
    fs::write(path, data).map_err(|e| SimError::io(path.display().to_string(), e))?;
    let sidecar = sidecar_path(path);
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| SimError::invalid_input(sidecar.display().to_string(), format!("sidecar encode: {e}")))?;
    fs::write(&sidecar, json).map_err(|e| SimError::io(sidecar.display().to_string(), e))?;
    Ok(())
}

/// Read a tensor's sidecar and data, checking that the data file length
/// matches the sidecar's element count.
pub fn read_tensor(path: &Path) -> Result<(TensorMeta, Vec<u8>), SimError> {
    let sidecar = sidecar_path(path);
    let json = fs::read_to_string(&sidecar).map_err(|e| SimError::io(sidecar.display().to_string(), e))?;
    let meta: TensorMeta = serde_json::from_str(&json)
        .map_err(|e| SimError::invalid_input(sidecar.display().to_string(), format!("sidecar parse: {e}")))?;
    meta.validate(path)?;
    let data = fs::read(path).map_err(|e| SimError::io(path.display().to_string(), e))?;
    if data.len() as u64 != meta.num_bytes() {
        return Err(SimError::invalid_input(
            path.display().to_string(),
            format!(
                "file is {} bytes but sidecar dtype {} with shape {:?} promises {}",
                data.len(),
                meta.dtype.name(),
                meta.shape,
                meta.num_bytes()
            ),
        ));
    }
    Ok((meta, data))
}

/// Write an f32 tensor in little-endian element order.
pub fn write_f32_tensor(
    path: &Path,
    shape: Vec<u64>,
    base_address: u64,
    values: &[f32],
) -> Result<(), SimError> {
    let meta = TensorMeta::new(DType::F32, shape, base_address);
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_tensor(path, &meta, &bytes)
}

/// Read back an f32 tensor written by [`write_f32_tensor`].
pub fn read_f32_tensor(path: &Path) -> Result<(TensorMeta, Vec<f32>), SimError> {
    let (meta, bytes) = read_tensor(path)?;
    if meta.dtype != DType::F32 {
        return Err(SimError::invalid_input(
            path.display().to_string(),
            format!("expected dtype f32, sidecar says {}", meta.dtype.name()),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((meta, values))
}

/// Write an f16 tensor in little-endian element order.
pub fn write_f16_tensor(
    path: &Path,
    shape: Vec<u64>,
    base_address: u64,
    values: &[f16],
) -> Result<(), SimError> {
    let meta = TensorMeta::new(DType::F16, shape, base_address);
    let mut bytes = Vec::with_capacity(values.len() * 2);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_tensor(path, &meta, &bytes)
}

/// Read back an f16 tensor written by [`write_f16_tensor`].
pub fn read_f16_tensor(path: &Path) -> Result<(TensorMeta, Vec<f16>), SimError> {
    let (meta, bytes) = read_tensor(path)?;
    if meta.dtype != DType::F16 {
        return Err(SimError::invalid_input(
            path.display().to_string(),
            format!("expected dtype f16, sidecar says {}", meta.dtype.name()),
        ));
    }
    let values = bytes
        .chunks_exact(2)
        .map(|c| f16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok((meta, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("scin-tensorio-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn f32_tensor_round_trips_with_sidecar() {
        let path = tmp("roundtrip.bin");
        let values = vec![0.0f32, -1.5, 3.25, f32::MIN_POSITIVE];
        write_f32_tensor(&path, vec![2, 2], 0x4000, &values).unwrap();
        let (meta, back) = read_f32_tensor(&path).unwrap();
        assert_eq!(meta.dtype, DType::F32);
        assert_eq!(meta.shape, vec![2, 2]);
        assert_eq!(meta.base_address, 0x4000);
        assert_eq!(back, values);
        fs::remove_file(&path).unwrap();
        fs::remove_file(sidecar_path(&path)).unwrap();
    }

    #[test]
    fn f16_tensor_round_trips_bit_exactly() {
        let path = tmp("half.bin");
        let values: Vec<f16> = [1.0f32, -0.5, 65504.0, 6.1e-5]
            .iter()
            .map(|&v| f16::from_f32(v))
            .collect();
        write_f16_tensor(&path, vec![4], 0, &values).unwrap();
        let (_, back) = read_f16_tensor(&path).unwrap();
        let bits: Vec<u16> = values.iter().map(|v| v.to_bits()).collect();
        let back_bits: Vec<u16> = back.iter().map(|v| v.to_bits()).collect();
        assert_eq!(back_bits, bits);
        fs::remove_file(&path).unwrap();
        fs::remove_file(sidecar_path(&path)).unwrap();
    }

    #[test]
    fn length_mismatches_are_rejected_both_ways() {
        let path = tmp("short.bin");
        let meta = TensorMeta::new(DType::F32, vec![8], 0);
        let err = write_tensor(&path, &meta, &[0u8; 4]).unwrap_err().to_string();
        assert!(err.contains("needs 32"), "{err}");

        // A truncated data file fails the read-side check too.
        write_tensor(&path, &TensorMeta::new(DType::U8, vec![4], 0), &[1, 2, 3, 4]).unwrap();
        let mut meta = TensorMeta::new(DType::U8, vec![5], 0);
        meta.base_address = 0;
        let sidecar = sidecar_path(&path);
        fs::write(&sidecar, serde_json::to_string(&meta).unwrap()).unwrap();
        let err = read_tensor(&path).unwrap_err().to_string();
        assert!(err.contains("promises 5"), "{err}");
        fs::remove_file(&path).unwrap();
        fs::remove_file(&sidecar).unwrap();
    }

    #[test]
    fn empty_and_zero_shapes_are_rejected() {
        let path = tmp("holes.bin");
        let err = write_tensor(&path, &TensorMeta::new(DType::U8, vec![], 0), &[])
            .unwrap_err()
            .to_string();
        assert!(err.contains("shape"), "{err}");
        let err = write_tensor(&path, &TensorMeta::new(DType::U8, vec![3, 0], 0), &[])
            .unwrap_err()
            .to_string();
        assert!(err.contains("positive"), "{err}");
    }

    #[test]
    fn missing_sidecar_is_an_io_error_naming_the_sidecar() {
        let path = tmp("orphan.bin");
        fs::write(&path, [0u8; 2]).unwrap();
        let err = read_tensor(&path).unwrap_err().to_string();
        assert!(err.contains("orphan.bin.json"), "{err}");
        fs::remove_file(&path).unwrap();
    }
}
