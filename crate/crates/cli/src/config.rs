use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use isorestore::eval::DEFAULT_RL_ITERATIONS;
use isorestore::isonet::{ModelKind, PairConfig, StrategyMode};
use isorestore::nn::TrainConfig;
use isorestore::pipeline::PipelineConfig;
use isorestore::psf::{PsfSource, DEFAULT_SPLIT_EPS};
use isorestore::Error;

use crate::{Global, InputFormat};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {}", .0.display(), .1)]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io(..) => 4,
            CliError::Core(e) => match e {
                Error::Io(_) => 4,
                Error::BadMagic(_)
                | Error::UnsupportedVersion(_)
                | Error::UnsupportedDtype(_)
                | Error::DimensionOverflow { .. }
                | Error::TruncatedPayload { .. }
                | Error::Codec(_) => 5,
                Error::MetadataMismatch(_) => 6,
                Error::NonFiniteLoss { .. }
                | Error::DegenerateHistogram(_)
                | Error::NotBimodal(_) => 7,
                Error::Shape(_)
                | Error::IndexOutOfRange { .. }
                | Error::InvalidParameter(_)
                | Error::KernelTooLarge { .. } => 8,
                Error::Json(_) => 3,
            },
        }
    }
}

/// Reads `--config` (or `{}`) into `T`; unknown fields are rejected by
/// the config types themselves.
pub fn load<T: DeserializeOwned>(g: &Global, fallback: &str) -> Result<T, CliError> {
    let text = match &g.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Io(p.clone(), e))?,
        None => fallback.to_string(),
    };
    serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    Ok(isorestore::pipeline::write_json(path, value)?)
}

/// Resolved-config copy plus provenance next to the outputs.
pub fn record(
    g: &Global,
    command: &str,
    seed: u64,
    resolved: &impl Serialize,
) -> Result<(), CliError> {
    write_json(&g.out.join("resolved_config.json"), resolved)?;
    let mut prov = isorestore::pipeline::Provenance::new(command, seed);
    prov.threads = g.threads.max(1);
    write_json(&g.out.join("provenance.json"), &prov)
}

pub fn read_input(g: &Global, path: &Path) -> Result<isorestore::Volume, CliError> {
    if !path.exists() {
        return Err(CliError::Io(
            path.to_path_buf(),
            std::io::ErrorKind::NotFound.into(),
        ));
    }
    Ok(match g.format {
        InputFormat::Isov => isorestore::io::read_volume(path)?,
        InputFormat::TiffImport => isorestore::io::import_tiff(path)?,
    })
}

fn default_psf() -> PsfSource {
    PsfSource::Gaussian {
        sigma: [1.0, 1.0, 4.0],
        extent: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsfConfig {
    pub psf: PsfSource,
    pub split_eps: f64,
}

impl Default for PsfConfig {
    fn default() -> Self {
        PsfConfig {
            psf: default_psf(),
            split_eps: DEFAULT_SPLIT_EPS,
        }
    }
}

/// Shared by `pairs` and `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub seed: u64,
    pub model: ModelKind,
    pub strategy: StrategyMode,
    pub psf: PsfSource,
    pub subsample: u32,
    pub split_eps: f64,
    pub normalization: (f64, f64),
    pub pairs: PairConfig,
    pub train: TrainConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        TrainRunConfig {
            seed: 0,
            model: ModelKind::Isonet2,
            strategy: StrategyMode::Split,
            psf: default_psf(),
            subsample: p.acquisition.subsample,
            split_eps: p.split_eps,
            normalization: p.normalization,
            pairs: p.pairs,
            train: p.train,
        }
    }
}

impl TrainRunConfig {
    /// The equivalent pipeline configuration, stage seeds resolved.
    pub fn to_pipeline(&self) -> PipelineConfig {
        let mut p = PipelineConfig {
            seed: self.seed,
            ..PipelineConfig::default()
        };
        p.acquisition.psf = self.psf.clone();
        p.acquisition.subsample = self.subsample;
        p.split_eps = self.split_eps;
        p.normalization = self.normalization;
        p.pairs = self.pairs;
        p.train = self.train.clone();
        p.resolved()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub psf: PsfSource,
    pub subsample: u32,
    pub iterations: usize,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            psf: default_psf(),
            subsample: 4,
            iterations: DEFAULT_RL_ITERATIONS,
        }
    }
}
