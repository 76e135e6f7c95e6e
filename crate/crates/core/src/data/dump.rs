//! Binary feature dumps.
//!
//! Layout (little-endian): magic `CRSF`, version u16, tap count u16; per tap
//! a u16-length UTF-8 name, rank u8, u32 dims and the f32 values; then the
//! sample count u32 and one u32 label per sample. Taps are stored in
//! layer-index order and read back with indices `0, 1, 2, ...`.

use std::path::Path;

use crate::analysis::{FeatureSet, Tap};
use crate::data::bin::{put_f32s, put_shape, put_string, put_u16, put_u32, read_file, write_file, Reader};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DUMP_MAGIC: [u8; 4] = *b"CRSF";
pub const DUMP_VERSION: u16 = 1;

pub fn encode_feature_dump(features: &FeatureSet) -> Result<Vec<u8>> {
    features.validate()?;
    let mut out = Vec::new();
    out.extend_from_slice(&DUMP_MAGIC);
    put_u16(&mut out, DUMP_VERSION);
    put_u16(
        &mut out,
        u16::try_from(features.taps.len()).map_err(|_| Error::invalid("more than 65535 taps"))?,
    );
    for tap in &features.taps {
        put_string(&mut out, &tap.name)?;
        put_shape(&mut out, tap.features.shape())?;
        put_f32s(&mut out, tap.features.data());
    }
    let n = u32::try_from(features.labels.len()).map_err(|_| Error::invalid("too many samples"))?;
    put_u32(&mut out, n);
    for &l in &features.labels {
        put_u32(&mut out, u32::try_from(l).map_err(|_| Error::invalid(format!("label {l} exceeds u32")))?);
    }
    Ok(out)
}

pub fn decode_feature_dump(bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = Reader::new(bytes);
    let magic = r.array::<4>()?;
    if magic != DUMP_MAGIC {
        return Err(Error::BadMagic {
            expected: DUMP_MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != DUMP_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u16()? as usize;
    let mut taps = Vec::with_capacity(count);
    for layer_index in 0..count {
        let name = r.string("feature dump")?;
        let shape = r.shape()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&l| l > 0)
            .ok_or_else(|| Error::DimMismatch(format!("tap {name:?} has invalid dims {shape:?}")))?;
        if shape.len() != 2 && shape.len() != 4 {
            return Err(Error::DimMismatch(format!("tap {name:?} has rank {}", shape.len())));
        }
        let data = r.f32s(len)?;
        taps.push(Tap {
            layer_index,
            name,
            features: Tensor::new(&shape, data)?,
        });
    }
    let n = r.u32()? as usize;
    let labels = (0..n).map(|_| r.u32().map(|l| l as usize)).collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(Error::Format {
            what: "feature dump",
            msg: format!("{} trailing bytes at offset {}", r.remaining(), r.position()),
        });
    }
    FeatureSet::new(taps, labels)
}

pub fn write_feature_dump(features: &FeatureSet, path: &Path) -> Result<()> {
    write_file(path, &encode_feature_dump(features)?)
}

pub fn read_feature_dump(path: &Path) -> Result<FeatureSet> {
    decode_feature_dump(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureSet {
        FeatureSet::new(
            vec![
                Tap {
                    layer_index: 0,
                    name: "input".into(),
                    features: Tensor::from_fn(&[3, 1, 2, 2], |i| i as f32 * 0.5),
                },
                Tap {
                    layer_index: 1,
                    name: "logits".into(),
                    features: Tensor::from_fn(&[3, 2], |i| -(i as f32)),
                },
            ],
            vec![0, 1, 1],
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let fs = sample();
        assert_eq!(decode_feature_dump(&encode_feature_dump(&fs).unwrap()).unwrap(), fs);
    }

    #[test]
    fn empty_dump() {
        let fs = FeatureSet::new(vec![], vec![]).unwrap();
        let back = decode_feature_dump(&encode_feature_dump(&fs).unwrap()).unwrap();
        assert!(back.taps.is_empty());
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode_feature_dump(&sample()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_feature_dump(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_feature_dump(&bad), Err(Error::UnsupportedVersion(9))));
        assert!(matches!(decode_feature_dump(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
        // Label count disagrees with the tap batch size.
        let mut bad = bytes[..bytes.len() - 4].to_vec();
        let n_off = bad.len() - 12;
        bad[n_off..n_off + 4].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_feature_dump(&bad), Err(Error::DimMismatch(_))));
    }
}
