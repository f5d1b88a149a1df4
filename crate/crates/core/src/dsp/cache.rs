use std::fs;
use std::path::Path;

use super::{FeatureKind, FeatureSequence};
use crate::container::Reader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CACHE_MAGIC: &[u8; 16] = b"SENTIFUSEFEATURE";
pub const CACHE_VERSION: u8 = 1;

/// Layout: magic, version byte, kind tag byte, frame rate f64, rows u64,
/// cols u64, then `rows · cols` little-endian f64 values row-major.
pub fn feature_cache_bytes(f: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(42 + f.data.numel() * 8);
    out.extend_from_slice(CACHE_MAGIC);
    out.push(CACHE_VERSION);
    out.push(f.kind.tag());
    out.extend_from_slice(&f.frame_rate.to_le_bytes());
    out.extend_from_slice(&(f.frames() as u64).to_le_bytes());
    out.extend_from_slice(&(f.dims() as u64).to_le_bytes());
    for v in f.data.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn parse_feature_cache(bytes: &[u8]) -> Result<FeatureSequence> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(16)? != CACHE_MAGIC {
        return Err(Error::format(0, "not a feature cache file"));
    }
    let version = r.u8()?;
    if version != CACHE_VERSION {
        return Err(Error::format(16, format!("unsupported cache version {version}")));
    }
    let tag = r.u8()?;
    let kind = FeatureKind::from_tag(tag).ok_or_else(|| Error::format(17, format!("unknown kind tag {tag}")))?;
    let rate = r.f64()?;
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let Some(n) = rows.checked_mul(cols).filter(|&n| n > 0) else {
        return Err(Error::format(26, format!("bad feature shape {rows}×{cols}")));
    };
    if bytes.len() - r.pos != n * 8 {
        return Err(Error::format(
            r.pos as u64,
            format!("payload holds {} bytes, expected {}", bytes.len() - r.pos, n * 8),
        ));
    }
    let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    FeatureSequence::new(kind, rate, Tensor::matrix(rows, cols, data)?)
}

pub fn save_feature_cache(path: impl AsRef<Path>, f: &FeatureSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, feature_cache_bytes(f)).map_err(|e| Error::io(path, e))
}

pub fn load_feature_cache(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    parse_feature_cache(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip(rows in 1usize..20, cols in 1usize..20, tag in 1u8..=9, seed in any::<u64>()) {
            let data = (0..rows * cols).map(|i| ((i as u64 ^ seed) % 1000) as f64 * 0.37 - 100.0).collect();
            let f = FeatureSequence::new(
                FeatureKind::from_tag(tag).unwrap(),
                43.06640625,
                Tensor::matrix(rows, cols, data).unwrap(),
            ).unwrap();
            prop_assert_eq!(parse_feature_cache(&feature_cache_bytes(&f)).unwrap(), f);
        }
    }

    #[test]
    fn header_layout_and_errors() {
        let f = FeatureSequence::new(FeatureKind::Rmse, 1.0, Tensor::matrix(1, 1, vec![2.0]).unwrap()).unwrap();
        let b = feature_cache_bytes(&f);
        assert_eq!(&b[..16], CACHE_MAGIC);
        assert_eq!(b[16], 1);
        assert_eq!(b.len(), 16 + 2 + 24 + 8);
        let mut bad = b.clone();
        bad[16] = 7;
        assert!(matches!(parse_feature_cache(&bad), Err(Error::Format { offset: 16, .. })));
        assert!(matches!(
            parse_feature_cache(&b[..b.len() - 1]),
            Err(Error::Format { offset: 42, .. })
        ));
    }
}
