//! Model-building pipeline: clinical encoding, repeated cross-validated
//! feature selection, per-fold Cox training with out-of-fold risk scores,
//! risk fusion across modalities, and threshold stratification.
//!
//! Everything here is a deterministic function of its inputs and the seed;
//! fold membership is keyed on patient ids (not row positions), and rows are
//! processed in id order, so results are invariant to input row permutation.

mod cv;
mod modality;
mod screen;
mod select;

pub use cv::{make_cv_plan, CvPlan};
pub use modality::{fit_modality_model, ModalityFit, ModelSettings, SelectionReport};
pub use screen::{correlation_prune, univariate_screen, CorrelationDrop, PruneReport, ScreenReport, ScreenedFeature};
pub use select::{forward_select, ForwardResult, SelectionStep, DEFAULT_IMPROVEMENT_EPSILON};

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radiomics::Modality;
use crate::volume::NodeStatistics;

/// Patients-by-features matrix for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub modality: Modality,
    patient_ids: Vec<String>,
    feature_names: Vec<String>,
    values: Array2<f64>,
}

impl FeatureTable {
    pub fn new(
        modality: Modality,
        patient_ids: Vec<String>,
        feature_names: Vec<String>,
        values: Array2<f64>,
    ) -> Result<Self> {
        if values.nrows() != patient_ids.len() || values.ncols() != feature_names.len() {
            return Err(Error::ShapeMismatch(format!(
                "matrix {}x{} vs {} ids and {} names",
                values.nrows(),
                values.ncols(),
                patient_ids.len(),
                feature_names.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &patient_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Ingestion(format!("duplicate patient id '{id}'")));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Ingestion(format!("duplicate feature name '{name}'")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature table contains non-finite values".into()));
        }
        Ok(Self { modality, patient_ids, feature_names, values })
    }

    pub fn n_patients(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn patient_ids(&self) -> &[String] {
        &self.patient_ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<ArrayView1<'_, f64>> {
        self.column_index(name).map(|i| self.values.column(i))
    }

    /// New table with the given rows, in the given order.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Self> {
        for &r in rows {
            if r >= self.n_patients() {
                return Err(Error::InvalidArgument(format!("row {r} out of range")));
            }
        }
        let ids = rows.iter().map(|&r| self.patient_ids[r].clone()).collect();
        let mut values = Array2::zeros((rows.len(), self.n_features()));
        for (out_r, &src_r) in rows.iter().enumerate() {
            values.row_mut(out_r).assign(&self.values.row(src_r));
        }
        Self::new(self.modality, ids, self.feature_names.clone(), values)
    }

    /// New table with the given columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let mut indices = Vec::with_capacity(names.len());
        for name in names {
            indices.push(self.column_index(name).ok_or_else(|| {
                Error::Schema(format!("feature '{name}' not in table"))
            })?);
        }
        let mut values = Array2::zeros((self.n_patients(), names.len()));
        for (out_c, &src_c) in indices.iter().enumerate() {
            values.column_mut(out_c).assign(&self.values.column(src_c));
        }
        Self::new(self.modality, self.patient_ids.clone(), names.to_vec(), values)
    }
}

/// Tri-state clinical status as stored in the source file (1 / 0 / blank).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Positive,
    Negative,
    Missing,
}

impl Status {
    /// Encoding used by the models: positive 1, negative -1, missing 0.
    pub fn encoded(self) -> f64 {
        match self {
            Status::Positive => 1.0,
            Status::Negative => -1.0,
            Status::Missing => 0.0,
        }
    }
}

/// One patient's raw clinical fields before encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRecord {
    pub patient_id: String,
    pub gender: Status,
    pub age: Option<f64>,
    pub tobacco: Status,
    pub alcohol: Status,
    pub performance_status: Status,
    pub hpv_status: Status,
    pub surgery: Status,
    pub chemotherapy: Status,
}

/// Column order of the encoded clinical table.
pub const CLINICAL_FEATURE_NAMES: [&str; 12] = [
    "gender",
    "age",
    "tobacco",
    "alcohol",
    "performance_status",
    "hpv_status",
    "surgery",
    "chemotherapy",
    "primary_count",
    "primary_volume_ml",
    "node_count",
    "node_volume_ml",
];

/// Encode raw clinical records into a feature table.
///
/// Status fields map to +1/-1/0 (positive/negative/missing); age stays
/// numeric with missing treated as 0. Node-geometry counts and volumes from
/// the segmentation are appended as four extra features.
pub fn encode_clinical(
    records: &[ClinicalRecord],
    node_stats: &[NodeStatistics],
) -> Result<FeatureTable> {
    if records.len() != node_stats.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} clinical records vs {} node statistics",
            records.len(),
            node_stats.len()
        )));
    }
    if records.is_empty() {
        return Err(Error::InvalidArgument("no clinical records".into()));
    }
    let mut values = Array2::zeros((records.len(), CLINICAL_FEATURE_NAMES.len()));
    let mut ids = Vec::with_capacity(records.len());
    for (row, (rec, stats)) in records.iter().zip(node_stats.iter()).enumerate() {
        ids.push(rec.patient_id.clone());
        let encoded = [
            rec.gender.encoded(),
            rec.age.unwrap_or(0.0),
            rec.tobacco.encoded(),
            rec.alcohol.encoded(),
            rec.performance_status.encoded(),
            rec.hpv_status.encoded(),
            rec.surgery.encoded(),
            rec.chemotherapy.encoded(),
            stats.primary_count as f64,
            stats.primary_volume_ml,
            stats.node_count as f64,
            stats.node_total_volume_ml,
        ];
        for (col, v) in encoded.iter().enumerate() {
            values[[row, col]] = *v;
        }
    }
    FeatureTable::new(
        Modality::Clinical,
        ids,
        CLINICAL_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        values,
    )
}

/// How per-modality risk scores are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// z-standardize each modality's scores over its scored cohort, then
    /// average. Cox linear predictors from different feature sets live on
    /// incommensurate scales.
    Standardized,
    /// Average the raw linear predictors.
    Raw,
}

/// Per-patient risk scores across modalities plus the fused score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientRisk {
    pub patient_id: String,
    pub clinical: Option<f64>,
    pub ct: Option<f64>,
    pub pet: Option<f64>,
    pub fused: f64,
    pub has_primary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskScores {
    pub patients: Vec<PatientRisk>,
}

/// z-scores over the present entries; all zeros when fewer than two scores
/// exist or the variance vanishes.
fn standardize_present(scores: &[Option<f64>]) -> Vec<Option<f64>> {
    let present: Vec<f64> = scores.iter().filter_map(|s| *s).collect();
    if present.len() < 2 {
        return scores.iter().map(|s| s.map(|_| 0.0)).collect();
    }
    let n = present.len() as f64;
    let mean = present.iter().sum::<f64>() / n;
    let var = present.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return scores.iter().map(|s| s.map(|_| 0.0)).collect();
    }
    let sd = var.sqrt();
    scores.iter().map(|s| s.map(|v| (v - mean) / sd)).collect()
}

/// Combine per-modality risk scores into one fused score per patient.
///
/// A clinical score is required for every patient. Patients without a
/// segmented primary tumor have no radiomics scores and fall back to the
/// clinical score alone; modalities that were not run at all contribute
/// nothing.
pub fn fuse_risk(
    patient_ids: &[String],
    clinical: &[Option<f64>],
    ct: &[Option<f64>],
    pet: &[Option<f64>],
    has_primary: &[bool],
    mode: FusionMode,
) -> Result<RiskScores> {
    let n = patient_ids.len();
    if clinical.len() != n || ct.len() != n || pet.len() != n || has_primary.len() != n {
        return Err(Error::ShapeMismatch("risk score arrays must share one length".into()));
    }
    for (i, c) in clinical.iter().enumerate() {
        if c.is_none() {
            return Err(Error::Schema(format!(
                "clinical risk score missing for patient '{}'",
                patient_ids[i]
            )));
        }
    }
    for i in 0..n {
        if !has_primary[i] && (ct[i].is_some() || pet[i].is_some()) {
            return Err(Error::InvalidArgument(format!(
                "patient '{}' has radiomics scores but no primary tumor",
                patient_ids[i]
            )));
        }
    }

    let (c_use, ct_use, pet_use) = match mode {
        FusionMode::Standardized => (
            standardize_present(clinical),
            standardize_present(ct),
            standardize_present(pet),
        ),
        FusionMode::Raw => (clinical.to_vec(), ct.to_vec(), pet.to_vec()),
    };

    let patients = (0..n)
        .map(|i| {
            let mut sum = 0.0;
            let mut count = 0.0;
            for score in [c_use[i], ct_use[i], pet_use[i]].iter().flatten() {
                sum += score;
                count += 1.0;
            }
            PatientRisk {
                patient_id: patient_ids[i].clone(),
                clinical: c_use[i],
                ct: ct_use[i],
                pet: pet_use[i],
                fused: sum / count,
                has_primary: has_primary[i],
            }
        })
        .collect();
    Ok(RiskScores { patients })
}

/// Risk-group assignment from the fused score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RiskGroup {
    Low,
    High,
}

impl std::fmt::Display for RiskGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RiskGroup::Low => "low",
            RiskGroup::High => "high",
        })
    }
}

/// Threshold the fused score: strictly above goes high-risk, at or below
/// (including exactly the threshold) goes low-risk.
pub fn stratify(scores: &RiskScores, threshold: f64) -> Vec<RiskGroup> {
    scores
        .patients
        .iter()
        .map(|p| if p.fused > threshold { RiskGroup::High } else { RiskGroup::Low })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:03}")).collect()
    }

    fn status_record(id: &str) -> ClinicalRecord {
        ClinicalRecord {
            patient_id: id.to_string(),
            gender: Status::Positive,
            age: Some(61.0),
            tobacco: Status::Negative,
            alcohol: Status::Missing,
            performance_status: Status::Positive,
            hpv_status: Status::Missing,
            surgery: Status::Negative,
            chemotherapy: Status::Positive,
        }
    }

    fn stats(primary: usize, nodes: usize) -> NodeStatistics {
        NodeStatistics {
            primary_count: primary,
            primary_volume_ml: primary as f64 * 1.5,
            node_count: nodes,
            node_total_volume_ml: nodes as f64 * 0.4,
            smallest_node_volume_ml: if nodes > 0 { Some(0.4) } else { None },
            node_distances_mm: vec![0.0; nodes],
        }
    }

    #[test]
    fn feature_table_validates() {
        let v = Array2::zeros((2, 2));
        assert!(FeatureTable::new(
            Modality::Clinical,
            vec!["a".into(), "a".into()],
            vec!["x".into(), "y".into()],
            v.clone()
        )
        .is_err());
        assert!(FeatureTable::new(
            Modality::Clinical,
            vec!["a".into(), "b".into()],
            vec!["x".into(), "x".into()],
            v.clone()
        )
        .is_err());
        assert!(FeatureTable::new(
            Modality::Clinical,
            vec!["a".into()],
            vec!["x".into(), "y".into()],
            v
        )
        .is_err());
    }

    #[test]
    fn encode_clinical_mapping() {
        let records = vec![status_record("a"), ClinicalRecord {
            patient_id: "b".into(),
            age: None,
            ..status_record("b")
        }];
        let table = encode_clinical(&records, &[stats(1, 2), stats(0, 0)]).unwrap();
        assert_eq!(table.feature_names().len(), 12);
        let row0 = table.values().row(0).to_owned();
        assert_eq!(row0[0], 1.0); // gender positive
        assert_eq!(row0[1], 61.0);
        assert_eq!(row0[2], -1.0); // tobacco negative
        assert_eq!(row0[3], 0.0); // alcohol missing
        assert_eq!(row0[5], 0.0); // hpv missing
        assert_eq!(row0[8], 1.0); // primary count
        assert_eq!(row0[10], 2.0); // node count

        // patient without nodes/primary gets zeros, missing age encodes 0
        let row1 = table.values().row(1).to_owned();
        assert_eq!(row1[1], 0.0);
        assert_eq!(row1[8], 0.0);
        assert_eq!(row1[10], 0.0);
        assert_eq!(row1[11], 0.0);
    }

    #[test]
    fn encode_clinical_rejects_duplicates() {
        let records = vec![status_record("same"), status_record("same")];
        assert!(matches!(
            encode_clinical(&records, &[stats(1, 0), stats(1, 0)]),
            Err(Error::Ingestion(_))
        ));
    }

    #[test]
    fn fuse_raw_mean_and_missing_clinical() {
        let pid = ids(1);
        let fused = fuse_risk(
            &pid,
            &[Some(0.1)],
            &[Some(0.2)],
            &[Some(0.3)],
            &[true],
            FusionMode::Raw,
        )
        .unwrap();
        assert!((fused.patients[0].fused - 0.2).abs() < 1e-15);

        assert!(matches!(
            fuse_risk(&pid, &[None], &[Some(0.2)], &[Some(0.3)], &[true], FusionMode::Raw),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn fuse_identical_modalities_is_idempotent() {
        let pid = ids(3);
        let s = vec![Some(0.4), Some(-1.0), Some(2.0)];
        let fused = fuse_risk(&pid, &s, &s, &s, &[true, true, true], FusionMode::Raw).unwrap();
        for (p, expect) in fused.patients.iter().zip(s.iter()) {
            assert!((p.fused - expect.unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn fuse_without_primary_falls_back_to_clinical() {
        let pid = ids(3);
        let clinical = vec![Some(1.0), Some(2.0), Some(3.0)];
        let ct = vec![Some(10.0), None, Some(30.0)];
        let pet = vec![Some(5.0), None, Some(15.0)];
        let has_primary = vec![true, false, true];
        let fused = fuse_risk(&pid, &clinical, &ct, &pet, &has_primary, FusionMode::Raw).unwrap();
        assert_eq!(fused.patients[1].fused, 2.0);
        assert!(fused.patients[1].ct.is_none());

        // standardized mode: fallback is the standardized clinical score
        let fused = fuse_risk(
            &pid,
            &clinical,
            &ct,
            &pet,
            &has_primary,
            FusionMode::Standardized,
        )
        .unwrap();
        assert_eq!(fused.patients[1].fused, fused.patients[1].clinical.unwrap());
        assert_eq!(fused.patients.len(), 3);
    }

    #[test]
    fn fuse_standardized_uses_zscores() {
        let pid = ids(2);
        let clinical = vec![Some(0.0), Some(2.0)];
        let ct = vec![Some(100.0), Some(300.0)];
        let pet = vec![None, None];
        let fused = fuse_risk(
            &pid,
            &clinical,
            &ct,
            &pet,
            &[true, true],
            FusionMode::Standardized,
        )
        .unwrap();
        // both modalities standardize to [-1, 1], so the fused scores match
        assert!((fused.patients[0].fused + 1.0).abs() < 1e-12);
        assert!((fused.patients[1].fused - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fuse_rejects_radiomics_without_primary() {
        let pid = ids(1);
        assert!(matches!(
            fuse_risk(&pid, &[Some(0.0)], &[Some(1.0)], &[None], &[false], FusionMode::Raw),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn stratify_threshold_rule() {
        let scores = RiskScores {
            patients: vec![
                PatientRisk {
                    patient_id: "a".into(),
                    clinical: Some(0.0),
                    ct: None,
                    pet: None,
                    fused: -0.5,
                    has_primary: false,
                },
                PatientRisk {
                    patient_id: "b".into(),
                    clinical: Some(0.0),
                    ct: None,
                    pet: None,
                    fused: 0.3,
                    has_primary: false,
                },
                PatientRisk {
                    patient_id: "c".into(),
                    clinical: Some(0.0),
                    ct: None,
                    pet: None,
                    fused: 0.0,
                    has_primary: false,
                },
            ],
        };
        let groups = stratify(&scores, 0.0);
        assert_eq!(groups, vec![RiskGroup::Low, RiskGroup::High, RiskGroup::Low]);
    }
}
