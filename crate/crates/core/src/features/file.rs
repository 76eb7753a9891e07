//! Binary feature-file format.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "SGFT" | u32 version=1 | u32 T | u32 D | f32 frame_shift_seconds |
//! u32 kind (0 = fbank240, 1 = external) | T*D f32, row-major
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};
use crate::nn::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"SGFT";
const FEATURE_VERSION: u32 = 1;

pub fn export_features(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    m.validate()?;
    let (t, d) = (m.num_frames(), m.dim());
    let mut out = Vec::with_capacity(24 + t * d * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(m.frame_shift as f32).to_le_bytes());
    out.extend_from_slice(&m.kind.code().to_le_bytes());
    for v in m.values.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

pub fn import_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let bytes = std::fs::read(path.as_ref())?;
    parse_features(&bytes)
}

pub fn parse_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < 24 {
        return Err(Error::format("feature file too small for header"));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(Error::format("feature file: bad magic"));
    }
    let u32_at = |off: usize| u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
    let version = u32_at(4);
    if version != FEATURE_VERSION {
        return Err(Error::format(format!(
            "feature file: unsupported version {version}"
        )));
    }
    let t = u32_at(8) as usize;
    let d = u32_at(12) as usize;
    let frame_shift = f32::from_le_bytes([bytes[16], bytes[17], bytes[18], bytes[19]]) as f64;
    let kind = FeatureKind::from_code(u32_at(20))?;
    if d != kind.expected_dim() {
        return Err(Error::format(format!(
            "feature file: kind {kind:?} requires D = {}, got {d}",
            kind.expected_dim()
        )));
    }
    let need = t * d * 4;
    let payload = &bytes[24..];
    if payload.len() != need {
        return Err(Error::format(format!(
            "feature file: payload holds {} bytes, header implies {need}",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    FeatureMatrix::new(Tensor::from_vec(&[t, d], data)?, frame_shift, kind)
}

/// Imports precomputed external embeddings (the 768-d, 20 ms configuration).
pub fn import_external_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let m = import_features(path)?;
    if m.kind != FeatureKind::External {
        return Err(Error::format(format!(
            "expected an external feature file, found {:?}",
            m.kind
        )));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn external_matrix(t: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Values constructed from f32 so the f32 payload is lossless.
        let data: Vec<f64> = (0..t * 768)
            .map(|_| f64::from(rng.gen_range(-2.0f32..2.0)))
            .collect();
        FeatureMatrix::new(
            Tensor::from_vec(&[t, 768], data).unwrap(),
            0.020,
            FeatureKind::External,
        )
        .unwrap()
    }

    #[test]
    fn declared_shape_is_respected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.sgft");
        let m = external_matrix(50, 1);
        export_features(&m, &path).unwrap();
        let back = import_external_features(&path).unwrap();
        assert_eq!(back.num_frames(), 50);
        assert_eq!(back.dim(), 768);
        assert_eq!(back.frame_shift, f64::from(0.020f32));
    }

    #[test]
    fn wrong_dim_for_kind_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.sgft");
        let m = external_matrix(4, 2);
        export_features(&m, &path).unwrap();
        // Corrupt the D field: claim 512 dims for an external file.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[12..16].copy_from_slice(&512u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            import_external_features(&path),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn round_trip_preserves_values_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.sgft");
        let m = external_matrix(17, 3);
        export_features(&m, &path).unwrap();
        let back = import_features(&path).unwrap();
        assert_eq!(back.values.data(), m.values.data());
        // And the file bytes themselves round trip.
        let path2 = dir.path().join("rt2.sgft");
        export_features(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn truncated_and_corrupt_headers_error_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sgft");
        let m = external_matrix(3, 4);
        export_features(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(parse_features(&bytes[..10]).is_err());
        assert!(parse_features(&bytes[..bytes.len() - 1]).is_err());
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(parse_features(&bad_magic).is_err());
    }
}
