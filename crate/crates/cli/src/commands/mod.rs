pub mod analyze;
pub mod cost;
pub mod sweep;
pub mod toy;
pub mod train;

use std::path::Path;

use anyhow::Context;
use classrepsim::data::{load_cifar10_binary, synth_blobs_split, LabeledDataset, Split, SynthConfig};

use crate::config::{DataSource, RunConfig};
use crate::exit::ConfigError;

pub use sweep::Axis;

/// Resolved invocation state shared by every command.
pub struct Ctx {
    pub cfg: RunConfig,
    pub seeds: Vec<u64>,
    pub quiet: bool,
}

impl Ctx {
    pub fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn out_dir(&self) -> anyhow::Result<&Path> {
        let dir = self.cfg.output.dir.as_path();
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    /// Writes `config.toml` with every default and override filled in.
    pub fn write_resolved_config(&self) -> anyhow::Result<()> {
        let mut cfg = self.cfg.clone();
        if self.seeds.len() == 1 {
            cfg.train.seed = self.seeds[0];
        }
        write(&self.out_dir()?.join("config.toml"), &cfg.to_toml()?)
    }
}

pub fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Train and test splits of the configured image data.
pub fn load_data(cfg: &RunConfig) -> anyhow::Result<(LabeledDataset, LabeledDataset)> {
    match cfg.data.source {
        DataSource::Synth => {
            let train = synth_blobs_split(&cfg.data.synth, Split::Train)?;
            let test_cfg = SynthConfig {
                n_per_class: cfg.data.synth_test_per_class,
                ..cfg.data.synth.clone()
            };
            let test = synth_blobs_split(&test_cfg, Split::Test)?;
            Ok((train, test))
        }
        DataSource::Cifar10 => {
            let path = cfg
                .data
                .path
                .as_ref()
                .ok_or_else(|| ConfigError("data.path is required for source = \"cifar10\"".into()))?;
            if !path.exists() {
                return Err(ConfigError(format!("data path not found: {}", path.display())).into());
            }
            let c = load_cifar10_binary(path)?;
            Ok((c.train, c.test))
        }
        DataSource::Dump => Err(ConfigError("data.source = \"dump\" only works with `analyze`".into()).into()),
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}
