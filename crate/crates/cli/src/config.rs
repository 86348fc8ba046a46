//! Pipeline configuration (JSON, unknown keys rejected).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use survrad_core::pipeline::FusionMode;
use survrad_core::radiomics::ExtractionSettings;

use crate::error::{ErrorKind, KindResult};
use crate::provenance::hash_params;

/// Input sources. Exactly one clinical source must be set: either the full
/// clinical schema CSV, or a prebuilt clinical feature table plus a labels
/// file. Radiomics come either from a volumes directory (masks + CT + PET
/// NIfTI files) or from prebuilt feature-table CSVs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputsConfig {
    pub clinical_csv: Option<PathBuf>,
    pub node_stats_csv: Option<PathBuf>,
    pub labels_csv: Option<PathBuf>,
    pub clinical_features_csv: Option<PathBuf>,
    pub ct_features_csv: Option<PathBuf>,
    pub pet_features_csv: Option<PathBuf>,
    pub volumes_dir: Option<PathBuf>,
    pub reference_masks_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub outer_k: usize,
    pub inner_k: usize,
    pub inner_repeats: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { outer_k: 5, inner_k: 5, inner_repeats: 100, seed: 17 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CapsConfig {
    pub clinical: usize,
    pub radiomics: usize,
}

impl Default for CapsConfig {
    fn default() -> Self {
        Self { clinical: 5, radiomics: 10 }
    }
}

fn default_d_max() -> f64 {
    150.0
}

fn default_resample() -> Option<[f64; 3]> {
    Some([2.0, 2.0, 2.0])
}

fn default_true() -> bool {
    true
}

fn default_fusion() -> FusionMode {
    FusionMode::Standardized
}

fn default_extraction() -> ExtractionSettings {
    ExtractionSettings::default()
}

/// Full pipeline configuration.
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub inputs: InputsConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Lymph-node components farther than this from the primary-tumor
    /// centroid are discarded.
    #[serde(default = "default_d_max")]
    pub d_max_mm: f64,
    /// Target voxel spacing for resampling; `null` keeps native spacing.
    #[serde(default = "default_resample")]
    pub resample_spacing_mm: Option<[f64; 3]>,
    /// z-score images before feature extraction.
    #[serde(default = "default_true")]
    pub normalize_images: bool,
    #[serde(default = "default_extraction")]
    pub extraction: ExtractionSettings,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub caps: CapsConfig,
    #[serde(default = "default_fusion")]
    pub fusion: FusionMode,
    #[serde(default)]
    pub stratification_threshold: f64,
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> KindResult<Self> {
        let raw = std::fs::read_to_string(path)?;
        let config: PipelineConfig =
            serde_json::from_str(&raw).map_err(|e| ErrorKind::Config(e.to_string()))?;
        config.validate_settings()?;
        Ok(config)
    }

    /// Full validation: settings plus input-source rules. Required before
    /// `run_pipeline`; the standalone volume stages need only the settings.
    pub fn validate(&self) -> KindResult<()> {
        self.validate_settings()?;
        self.validate_inputs()
    }

    fn validate_inputs(&self) -> KindResult<()> {
        let schema_mode = self.inputs.clinical_csv.is_some();
        let table_mode =
            self.inputs.labels_csv.is_some() && self.inputs.clinical_features_csv.is_some();
        if schema_mode == table_mode {
            return Err(ErrorKind::Config(
                "set exactly one clinical source: clinical_csv, or labels_csv + clinical_features_csv"
                    .into(),
            ));
        }
        if self.inputs.volumes_dir.is_some()
            && (self.inputs.ct_features_csv.is_some() || self.inputs.pet_features_csv.is_some())
        {
            return Err(ErrorKind::Config(
                "volumes_dir and precomputed radiomics tables are mutually exclusive".into(),
            ));
        }
        if self.inputs.volumes_dir.is_some() && !schema_mode {
            return Err(ErrorKind::Config(
                "volumes_dir requires the clinical_csv input".into(),
            ));
        }
        if self.inputs.reference_masks_dir.is_some() && self.inputs.volumes_dir.is_none() {
            return Err(ErrorKind::Config(
                "reference_masks_dir requires volumes_dir".into(),
            ));
        }
        Ok(())
    }

    /// Numeric and extraction settings only.
    pub fn validate_settings(&self) -> KindResult<()> {
        if !(self.d_max_mm > 0.0) || !self.d_max_mm.is_finite() {
            return Err(ErrorKind::Config(format!("d_max_mm must be > 0, got {}", self.d_max_mm)));
        }
        if let Some(spacing) = self.resample_spacing_mm {
            if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
                return Err(ErrorKind::Config(format!(
                    "resample_spacing_mm must be positive, got {spacing:?}"
                )));
            }
        }
        self.extraction.validate().map_err(|e| ErrorKind::Config(e.to_string()))?;
        if self.cv.outer_k < 2 || self.cv.inner_k < 2 {
            return Err(ErrorKind::Config("fold counts must be at least 2".into()));
        }
        if self.cv.inner_repeats == 0 {
            return Err(ErrorKind::Config("inner_repeats must be at least 1".into()));
        }
        if self.caps.clinical == 0 || self.caps.radiomics == 0 {
            return Err(ErrorKind::Config("feature caps must be at least 1".into()));
        }
        if !self.stratification_threshold.is_finite() {
            return Err(ErrorKind::Config("stratification_threshold must be finite".into()));
        }
        Ok(())
    }

    /// Hash of the effective configuration (after CLI overrides).
    pub fn hash(&self) -> String {
        hash_params(self)
    }
}
