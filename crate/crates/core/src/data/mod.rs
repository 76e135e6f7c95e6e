//! Datasets and file formats.

mod bin;
mod checkpoint;
mod cifar;
mod csv;
mod dataset;
mod dump;
mod synth;

pub use checkpoint::{
    apply_checkpoint, decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_into, save_checkpoint,
    Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use cifar::{
    load_cifar10_binary, load_cifar10_with, read_cifar_batch, write_cifar_batch, Cifar10, CifarBatch,
    CIFAR_PIXELS, CIFAR_RECORDS_PER_BATCH, CIFAR_RECORD_BYTES, CIFAR_SIDE, CIFAR_TEST_FILE, CIFAR_TRAIN_FILES,
};
pub use csv::{cs_csv_string, parse_cs_csv, read_cs_csv, write_cs_csv, CS_CSV_HEADER};
pub use dataset::{LabeledDataset, Normalization, Split};
pub use dump::{
    decode_feature_dump, encode_feature_dump, read_feature_dump, write_feature_dump, DUMP_MAGIC, DUMP_VERSION,
};
pub use synth::{synth_blobs, synth_blobs_split, SynthConfig};
