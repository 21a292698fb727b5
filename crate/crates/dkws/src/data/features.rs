//! Binary feature files: magic `DKWSFEAT`, version u32, N u32, F u32,
//! framePeriod f64, then N*F little-endian f32 row-major.

use std::fs;
use std::path::Path;

use super::{io_err, DataError};
use crate::numerics::Tensor;

const MAGIC: &[u8; 8] = b"DKWSFEAT";
const VERSION: u32 = 1;

pub fn write_feature_file(
    path: &Path,
    features: &Tensor<f32>,
    frame_period: f64,
) -> Result<(), DataError> {
    let (n, f) = (features.rows(), features.cols());
    let mut buf = Vec::with_capacity(8 + 4 * 3 + 8 + n * f * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(f as u32).to_le_bytes());
    buf.extend_from_slice(&frame_period.to_le_bytes());
    for v in features.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_feature_file(path: &Path) -> Result<(Tensor<f32>, f64), DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let fail = |msg: &str| DataError::Format { path: path.to_path_buf(), msg: msg.to_string() };
    if bytes.len() < 28 || &bytes[..8] != MAGIC {
        return Err(fail("missing DKWSFEAT magic"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if u32_at(8) != VERSION {
        return Err(fail("unsupported version"));
    }
    let n = u32_at(12) as usize;
    let f = u32_at(16) as usize;
    let frame_period = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let want = 28 + n * f * 4;
    if bytes.len() != want {
        return Err(fail(&format!("expected {want} bytes, found {}", bytes.len())));
    }
    let data: Vec<f32> = bytes[28..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let features = Tensor::new(vec![n, f], data)
        .map_err(|e| fail(&e.to_string()))?;
    Ok((features, frame_period))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn feature_file_roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("u.feat");
        let t = Tensor::new(vec![3, 2], vec![0.1f32, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, 9.75])
            .unwrap();
        write_feature_file(&path, &t, 0.01).unwrap();
        let (back, period) = read_feature_file(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(period, 0.01);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("u.feat");
        let t = Tensor::zeros(vec![4, 4]);
        write_feature_file(&path, &t, 0.01).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_feature_file(&path).is_err());
    }
}
