//! TOML run configuration. Every key is optional; unknown keys are rejected.
//!
//! Precedence for each setting: command-line flag, then this file, then
//! (for the output directory only) `HYPERSEED_OUT`, then the built-in default.

use std::path::{Path, PathBuf};

use hyperseed::features::glcm::GlcmParams;
use hyperseed::features::MaskParams;
use hyperseed::svm::SvmHyper;
use hyperseed::tensornet::{AdamHyper, ArchConfig};
use hyperseed::training::{AugmentParams, EarlyStopping};
use serde::Deserialize;

use crate::UsageError;

pub const OUT_ENV: &str = "HYPERSEED_OUT";
pub const DEFAULT_OUT: &str = "hyperseed-out";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetSection,
    pub features: FeaturesSection,
    pub svm: SvmSection,
    pub cnn: CnnSection,
    pub eval: EvalSection,
    pub ensemble: EnsembleSection,
    pub saliency: SaliencySection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub kind: Option<String>,
    pub per_class: Option<usize>,
    /// `desk` or `paper`.
    pub size: Option<String>,
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesSection {
    pub mode: Option<String>,
    pub glcm: Option<GlcmParams>,
    pub mask: Option<MaskParams>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmSection {
    pub test_fraction: Option<f64>,
    pub cv_iterations: Option<usize>,
    pub grid: Option<Vec<SvmHyper>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CnnSection {
    pub family: Option<String>,
    /// `desk` or `reference`; ignored when `arch` is given.
    pub preset: Option<String>,
    pub arch: Option<ArchConfig>,
    pub adam: Option<AdamHyper>,
    pub epochs: Option<usize>,
    pub augment: Option<AugmentParams>,
    pub augment_factor: Option<usize>,
    pub early_stopping: Option<EarlyStopping>,
    pub fit_on_train_and_val: Option<bool>,
    /// `[train, validation, test]` fractions.
    pub split: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub repetitions: Option<usize>,
    /// `cnn` or `svm`.
    pub model: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub checkpoints: Vec<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaliencySection {
    pub checkpoint: Option<PathBuf>,
    pub cubes: Vec<usize>,
    pub target: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }
}

/// First present value, else the default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
