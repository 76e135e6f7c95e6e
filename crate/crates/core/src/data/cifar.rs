//! CIFAR-10 binary format: each record is one label byte followed by 3072
//! pixel bytes (R, G, B planes, each 32x32 row-major).

use std::path::{Path, PathBuf};

use crate::data::bin::{read_file, write_file};
use crate::data::dataset::{LabeledDataset, Normalization, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_PIXELS;
pub const CIFAR_RECORDS_PER_BATCH: usize = 10_000;
pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILE: &str = "test_batch.bin";

/// Undecoded records of one batch file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CifarBatch {
    pub labels: Vec<u8>,
    /// `labels.len() * 3072` bytes.
    pub pixels: Vec<u8>,
}

impl CifarBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * CIFAR_RECORD_BYTES);
        for (label, px) in self.labels.iter().zip(self.pixels.chunks_exact(CIFAR_PIXELS)) {
            out.push(*label);
            out.extend_from_slice(px);
        }
        out
    }

    /// Pixels scaled to `[0, 1]`, shape `[N, 3, 32, 32]`.
    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        Tensor::new(
            &[self.len(), 3, CIFAR_SIDE, CIFAR_SIDE],
            self.pixels.iter().map(|&p| f32::from(p) / 255.0).collect(),
        )
    }
}

/// Reads a batch file holding exactly `records` records.
pub fn read_cifar_batch(path: &Path, records: usize) -> Result<CifarBatch> {
    let bytes = read_file(path)?;
    let expected = records * CIFAR_RECORD_BYTES;
    if bytes.len() != expected {
        return Err(Error::FileSize {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: bytes.len() as u64,
        });
    }
    let mut labels = Vec::with_capacity(records);
    let mut pixels = Vec::with_capacity(records * CIFAR_PIXELS);
    for rec in bytes.chunks_exact(CIFAR_RECORD_BYTES) {
        if rec[0] > 9 {
            return Err(Error::Format {
                what: "CIFAR-10 batch",
                msg: format!("label byte {} outside 0..=9", rec[0]),
            });
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(CifarBatch { labels, pixels })
}

pub fn write_cifar_batch(path: &Path, batch: &CifarBatch) -> Result<()> {
    write_file(path, &batch.to_bytes())
}

/// Train and test splits standardized with train-split channel statistics.
#[derive(Clone, Debug)]
pub struct Cifar10 {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub normalization: Normalization,
}

fn resolve_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if !dir.join(CIFAR_TEST_FILE).exists() && nested.join(CIFAR_TEST_FILE).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn load_files(dir: &Path, files: &[&str], records: usize) -> Result<(Tensor<f32>, Vec<usize>)> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for f in files {
        let batch = read_cifar_batch(&dir.join(f), records)?;
        labels.extend(batch.labels.iter().map(|&l| l as usize));
        images.push(batch.to_tensor()?);
    }
    Ok((Tensor::concat(&images)?, labels))
}

/// Loads the standard binary distribution from `dir` (or its
/// `cifar-10-batches-bin` subdirectory).
pub fn load_cifar10_binary(dir: &Path) -> Result<Cifar10> {
    load_cifar10_with(dir, CIFAR_RECORDS_PER_BATCH)
}

/// Like [`load_cifar10_binary`] with a custom record count per file.
pub fn load_cifar10_with(dir: &Path, records_per_batch: usize) -> Result<Cifar10> {
    let dir = resolve_dir(dir);
    let (mut train_x, train_y) = load_files(&dir, &CIFAR_TRAIN_FILES, records_per_batch)?;
    let (mut test_x, test_y) = load_files(&dir, &[CIFAR_TEST_FILE], records_per_batch)?;
    let normalization = Normalization::compute(&train_x)?;
    normalization.apply(&mut train_x)?;
    normalization.apply(&mut test_x)?;
    Ok(Cifar10 {
        train: LabeledDataset::new(train_x, train_y, 10, Split::Train, "cifar10")?,
        test: LabeledDataset::new(test_x, test_y, 10, Split::Test, "cifar10")?,
        normalization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_file_size_constant() {
        assert_eq!(CIFAR_RECORDS_PER_BATCH * CIFAR_RECORD_BYTES, 30_730_000);
    }

    #[test]
    fn wrong_size_names_expected_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data_batch_1.bin");
        std::fs::write(&p, vec![0u8; 100]).unwrap();
        let err = read_cifar_batch(&p, CIFAR_RECORDS_PER_BATCH).unwrap_err();
        assert!(err.to_string().contains("30730000"), "{err}");
    }

    #[test]
    fn tensor_layout_is_channel_planar() {
        let mut pixels = vec![0u8; CIFAR_PIXELS];
        pixels[1024] = 255; // first green pixel
        let b = CifarBatch { labels: vec![3], pixels };
        let t = b.to_tensor().unwrap();
        assert_eq!(t.at4(0, 1, 0, 0), 1.0);
        assert_eq!(t.at4(0, 0, 0, 0), 0.0);
    }
}
