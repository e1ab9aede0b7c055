//! Hand-engineered seed features for the SVM baselines.
//!
//! Spatial features are six GLCM texture statistics of the whole
//! sum-of-squares image followed by eleven shape descriptors of the seed mask.
//! Spectral features are the mean spectrum over the mask. The spatio-spectral
//! vector is the concatenation `spatial ∥ spectral`.

pub mod ellipse;
pub mod glcm;
pub mod mask;
pub mod morphology;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsdc::{ss_image, Datacube};

pub use ellipse::{fit_ellipse, Ellipse};
pub use glcm::{glcm, texture_features, texture_features_with, GlcmParams, TextureFeatures};
pub use mask::{compute_mask, Mask, MaskParams};
pub use morphology::{morphological_features, MorphFeatures};

pub const SPATIAL_LEN: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    Spatial,
    Spectral,
    SpatioSpectral,
}

impl FeatureMode {
    pub fn name(self) -> &'static str {
        match self {
            FeatureMode::Spatial => "spatial",
            FeatureMode::Spectral => "spectral",
            FeatureMode::SpatioSpectral => "spatio-spectral",
        }
    }

    pub fn len(self, bands: usize) -> usize {
        match self {
            FeatureMode::Spatial => SPATIAL_LEN,
            FeatureMode::Spectral => bands,
            FeatureMode::SpatioSpectral => SPATIAL_LEN + bands,
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(FeatureMode::Spatial),
            "spectral" => Ok(FeatureMode::Spectral),
            "spatio-spectral" => Ok(FeatureMode::SpatioSpectral),
            other => Err(Error::InvalidArgument(format!(
                "unknown feature mode {other:?} (expected spatial, spectral or spatio-spectral)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub mode: FeatureMode,
    pub values: Vec<f64>,
    pub schema: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureParams {
    pub glcm: GlcmParams,
    pub mask: MaskParams,
}

pub fn spatial_schema() -> Vec<String> {
    TextureFeatures::NAMES
        .iter()
        .chain(MorphFeatures::NAMES.iter())
        .map(|s| s.to_string())
        .collect()
}

pub fn spectral_schema(cube: &Datacube) -> Vec<String> {
    cube.wavelengths()
        .iter()
        .enumerate()
        .map(|(b, nm)| format!("band{b:03}_{nm:.1}nm"))
        .collect()
}

/// Mean spectrum over the masked pixels.
pub fn spectral_features(cube: &Datacube, mask: &Mask) -> Result<Vec<f64>> {
    if mask.height() != cube.height() || mask.width() != cube.width() {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match cube {}x{}",
            mask.height(),
            mask.width(),
            cube.height(),
            cube.width()
        )));
    }
    let n = mask.count();
    if n == 0 {
        return Err(Error::Segmentation("empty region of interest".into()));
    }
    let mut sum = vec![0.0; cube.bands()];
    for r in 0..cube.height() {
        for c in 0..cube.width() {
            if mask.get(r, c) {
                for (s, v) in sum.iter_mut().zip(cube.spectrum(r, c)) {
                    *s += v;
                }
            }
        }
    }
    Ok(sum.into_iter().map(|s| s / n as f64).collect())
}

pub fn spatial_values(cube: &Datacube, params: &FeatureParams) -> Result<(Vec<f64>, Mask)> {
    let ss = ss_image(cube);
    let texture = texture_features_with(&ss, &params.glcm)?;
    let mask = compute_mask(&ss, &params.mask)?;
    let morph = morphological_features(&mask)?;
    let mut values = texture.to_array().to_vec();
    values.extend_from_slice(&morph.to_array());
    Ok((values, mask))
}

pub fn extract_with(cube: &Datacube, mode: FeatureMode, params: &FeatureParams) -> Result<FeatureVector> {
    let (values, schema) = match mode {
        FeatureMode::Spatial => (spatial_values(cube, params)?.0, spatial_schema()),
        FeatureMode::Spectral => {
            let mask = compute_mask(&ss_image(cube), &params.mask)?;
            (spectral_features(cube, &mask)?, spectral_schema(cube))
        }
        FeatureMode::SpatioSpectral => {
            let (mut values, mask) = spatial_values(cube, params)?;
            values.extend(spectral_features(cube, &mask)?);
            let mut schema = spatial_schema();
            schema.extend(spectral_schema(cube));
            (values, schema)
        }
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("feature {} is not finite", schema[i])));
    }
    Ok(FeatureVector { mode, values, schema })
}

/// Feature extraction with the default segmentation and co-occurrence settings.
pub fn extract(cube: &Datacube, mode: FeatureMode) -> Result<FeatureVector> {
    extract_with(cube, mode, &FeatureParams::default())
}

/// Per-dimension z-scoring with statistics from a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mode: Option<FeatureMode>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-12;

impl Standardizer {
    /// Fits on raw rows (population standard deviation, floored).
    pub fn fit_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidArgument("standardizer needs at least 2 rows".into()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape("rows have different lengths".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mode: None, mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::Shape(format!(
                "standardizer expects {} values, got {}",
                self.dim(),
                row.len()
            )));
        }
        Ok(row
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| {
                // A dimension that was constant in training carries no information.
                if *s <= STD_FLOOR {
                    0.0
                } else {
                    (v - m) / s
                }
            })
            .collect())
    }

    pub fn apply(&self, v: &FeatureVector) -> Result<FeatureVector> {
        if let Some(mode) = self.mode {
            if mode != v.mode {
                return Err(Error::InvalidArgument(format!(
                    "standardizer fitted on {mode} features, got {}",
                    v.mode
                )));
            }
        }
        Ok(FeatureVector {
            mode: v.mode,
            values: self.transform_row(&v.values)?,
            schema: v.schema.clone(),
        })
    }
}

pub fn fit_standardizer(train: &[FeatureVector]) -> Result<Standardizer> {
    let Some(first) = train.first() else {
        return Err(Error::InvalidArgument("no training vectors".into()));
    };
    if let Some(bad) = train.iter().find(|v| v.mode != first.mode) {
        return Err(Error::InvalidArgument(format!(
            "mixed feature modes: {} and {}",
            first.mode, bad.mode
        )));
    }
    let rows: Vec<Vec<f64>> = train.iter().map(|v| v.values.clone()).collect();
    let mut s = Standardizer::fit_rows(&rows)?;
    s.mode = Some(first.mode);
    Ok(s)
}

/// CSV with the schema as header and a trailing `label` column.
pub fn write_feature_csv<W: Write>(mut out: W, vectors: &[FeatureVector], labels: &[usize]) -> Result<()> {
    if vectors.len() != labels.len() {
        return Err(Error::Shape("one label per feature vector required".into()));
    }
    if let Some(first) = vectors.first() {
        writeln!(out, "{},label", first.schema.join(","))?;
    }
    for (v, l) in vectors.iter().zip(labels) {
        let row: Vec<String> = v.values.iter().map(|x| format!("{x:.17e}")).collect();
        writeln!(out, "{},{l}", row.join(","))?;
    }
    Ok(())
}

pub fn save_feature_csv(path: impl AsRef<Path>, vectors: &[FeatureVector], labels: &[usize]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_feature_csv(std::io::BufWriter::new(file), vectors, labels)
}
