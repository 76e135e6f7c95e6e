//! Model checkpoints: the model description plus every parameter and
//! batch-norm running statistic, keyed by name.
//!
//! Layout (little-endian): magic `CRSC`, version u16, u32-length JSON model
//! description, u32 entry count, then per entry a u16-length name, rank u8,
//! u32 dims and f32 values.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::data::bin::{put_f32s, put_shape, put_string, put_u16, put_u32, read_file, write_file, Reader};
use crate::error::{Error, Result};
use crate::nn::{Model, ModelSpec};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CRSC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

fn named_tensors(model: &Model<f32>) -> Vec<(String, &Tensor<f32>)> {
    let mut out: Vec<(String, &Tensor<f32>)> = model.params().iter().map(|p| (p.name.clone(), &p.value)).collect();
    for rs in model.running_stats() {
        out.push((format!("{}.running_mean", rs.name), &rs.mean));
        out.push((format!("{}.running_var", rs.name), &rs.var));
    }
    out
}

pub fn encode_checkpoint(model: &Model<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    put_u16(&mut out, CHECKPOINT_VERSION);
    let spec = serde_json::to_vec(model.spec())?;
    put_u32(&mut out, spec.len() as u32);
    out.extend_from_slice(&spec);
    let tensors = named_tensors(model);
    put_u32(&mut out, tensors.len() as u32);
    for (name, t) in tensors {
        put_string(&mut out, &name)?;
        put_shape(&mut out, t.shape())?;
        put_f32s(&mut out, t.data());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    let magic = r.array::<4>()?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let spec_len = r.u32()? as usize;
    let spec: ModelSpec = serde_json::from_slice(r.bytes(spec_len)?)?;
    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name = r.string("checkpoint")?;
        let shape = r.shape()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&l| l > 0)
            .ok_or_else(|| Error::DimMismatch(format!("entry {name:?} has invalid dims {shape:?}")))?;
        let t = Tensor::new(&shape, r.f32s(len)?)?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Format {
                what: "checkpoint",
                msg: format!("duplicate entry {name:?}"),
            });
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Format {
            what: "checkpoint",
            msg: format!("{} trailing bytes", r.remaining()),
        });
    }
    Ok(Checkpoint { spec, tensors })
}

/// Copies checkpoint tensors into `model`, which must have exactly the same
/// names and shapes.
pub fn apply_checkpoint(model: &mut Model<f32>, ckpt: &Checkpoint) -> Result<()> {
    let expected: BTreeMap<String, Vec<usize>> = named_tensors(model)
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let have: BTreeSet<&String> = ckpt.tensors.keys().collect();
    let missing: Vec<String> = expected.keys().filter(|k| !have.contains(k)).cloned().collect();
    let unexpected: Vec<String> = ckpt.tensors.keys().filter(|k| !expected.contains_key(*k)).cloned().collect();
    let mismatched: Vec<String> = expected
        .iter()
        .filter_map(|(k, shape)| {
            let t = ckpt.tensors.get(k)?;
            (t.shape() != shape.as_slice()).then(|| format!("{k}: {:?} vs {shape:?}", t.shape()))
        })
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() || !mismatched.is_empty() {
        return Err(Error::CheckpointMismatch {
            missing,
            unexpected,
            mismatched,
        });
    }
    for p in model.params_mut().iter_mut() {
        p.value = ckpt.tensors[&p.name].clone();
    }
    for rs in model.running_stats_mut() {
        rs.mean = ckpt.tensors[&format!("{}.running_mean", rs.name)].clone();
        rs.var = ckpt.tensors[&format!("{}.running_var", rs.name)].clone();
    }
    Ok(())
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    write_file(path, &encode_checkpoint(model)?)
}

/// Rebuilds the stored model.
pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let ckpt = decode_checkpoint(&read_file(path)?)?;
    let mut model = Model::new(ckpt.spec.clone(), 0)?;
    apply_checkpoint(&mut model, &ckpt)?;
    Ok(model)
}

/// Loads weights into an existing model, validating names and shapes.
pub fn load_checkpoint_into(model: &mut Model<f32>, path: &Path) -> Result<()> {
    let ckpt = decode_checkpoint(&read_file(path)?)?;
    apply_checkpoint(model, &ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_model;

    #[test]
    fn round_trip_preserves_logits() {
        let spec = ModelSpec::resnet(&[1, 1], 4, 2, 8, 3);
        let mut model = build_model::<f32>(&spec, 5).unwrap();
        model.running_stats_mut()[0].mean.data_mut()[0] = 0.25;
        let bytes = encode_checkpoint(&model).unwrap();
        let ckpt = decode_checkpoint(&bytes).unwrap();
        let mut other = build_model::<f32>(&spec, 99).unwrap();
        apply_checkpoint(&mut other, &ckpt).unwrap();
        let x = Tensor::from_fn(&[2, 2, 8, 8], |i| (i % 5) as f32 - 2.0);
        assert_eq!(model.predict(&x).unwrap(), other.predict(&x).unwrap());
    }

    #[test]
    fn wrong_spec_lists_offenders() {
        let model = build_model::<f32>(&ModelSpec::resnet(&[1, 1], 4, 2, 8, 3), 5).unwrap();
        let ckpt = decode_checkpoint(&encode_checkpoint(&model).unwrap()).unwrap();
        let mut wider = build_model::<f32>(&ModelSpec::resnet(&[1, 1, 1], 4, 2, 8, 3), 5).unwrap();
        match apply_checkpoint(&mut wider, &ckpt) {
            Err(Error::CheckpointMismatch { missing, mismatched, .. }) => {
                assert!(missing.iter().any(|m| m.starts_with("stage3")));
                assert!(mismatched.iter().any(|m| m.starts_with("fc.weight")));
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }
}
