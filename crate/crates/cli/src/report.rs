//! Run-report structures serialized to JSON.

use serde::Serialize;

use survrad_core::pipeline::SelectionReport;
use survrad_core::radiomics::Modality;
use survrad_core::survstat::{KmCurve, LogRankResult};

use crate::provenance::Provenance;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModalityOutcome {
    pub modality: Modality,
    pub n_patients: usize,
    /// Concordance of the concatenated out-of-fold scores on the cohort.
    pub oof_c_index: Option<f64>,
    pub skipped_folds: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRankSummary {
    pub chi_square: f64,
    pub p_value: f64,
    pub neg_log2_p: f64,
}

impl From<LogRankResult> for LogRankSummary {
    fn from(r: LogRankResult) -> Self {
        Self { chi_square: r.chi_square, p_value: r.p_value, neg_log2_p: r.neg_log2_p }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskGroupsReport {
    pub threshold: f64,
    pub high_n: usize,
    pub low_n: usize,
    /// `None` when a group is empty or shares no comparable events; the
    /// `degenerate` flag says so explicitly.
    pub logrank: Option<LogRankSummary>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmCurveReport {
    pub group: String,
    pub event_times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub std_err: Vec<f64>,
}

impl KmCurveReport {
    pub fn new(group: &str, curve: &KmCurve) -> Self {
        Self {
            group: group.to_string(),
            event_times: curve.event_times.clone(),
            survival: curve.survival.clone(),
            at_risk: curve.at_risk.clone(),
            std_err: curve.std_err.clone(),
        }
    }
}

/// Mean Dice per class over the cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiceSummary {
    pub node: f64,
    pub primary: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DicePatient {
    pub patient_id: String,
    pub node_before: f64,
    pub node_after: f64,
    pub primary_before: f64,
    pub primary_after: f64,
}

/// Before/after node filtering, against the reference masks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiceReport {
    pub original: DiceSummary,
    pub postprocessed: DiceSummary,
    pub per_patient: Vec<DicePatient>,
}

/// Compact per-patient view of the distance filter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeFilterSummary {
    pub patient_id: String,
    pub kept_nodes: usize,
    pub removed_nodes: usize,
    /// Centroid distances (mm) of the removed components.
    pub removed_distances_mm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModalitySelection {
    pub modality: Modality,
    pub folds: Vec<SelectionReport>,
}

/// Everything one pipeline run reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub modalities: Vec<ModalityOutcome>,
    pub fused_c_index: Option<f64>,
    pub risk_groups: RiskGroupsReport,
    pub km_curves: Vec<KmCurveReport>,
    pub dice: Option<DiceReport>,
    pub node_filter: Vec<NodeFilterSummary>,
    pub selection: Vec<ModalitySelection>,
}
