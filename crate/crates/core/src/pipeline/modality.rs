//! Per-modality model building over an outer fold assignment.

use serde::Serialize;

use crate::coxph::{fit_cox, CoxModel, FitOptions};
use crate::error::{Error, Result};
use crate::pipeline::screen::{correlation_prune, univariate_screen, CorrelationDrop, ScreenedFeature};
use crate::pipeline::select::{forward_select, SelectionStep};
use crate::pipeline::{make_cv_plan, FeatureTable};
use crate::radiomics::Modality;
use crate::survstat::{concordance_index, SurvivalRecord};

/// Screening, pruning, and selection controls for one modality fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelSettings {
    pub inner_k: usize,
    pub inner_repeats: usize,
    pub seed: u64,
    pub max_features: usize,
    pub improvement_epsilon: f64,
    pub correlation_threshold: f64,
}

impl ModelSettings {
    pub fn new(inner_k: usize, inner_repeats: usize, seed: u64, max_features: usize) -> Self {
        Self {
            inner_k,
            inner_repeats,
            seed,
            max_features,
            improvement_epsilon: crate::pipeline::DEFAULT_IMPROVEMENT_EPSILON,
            correlation_threshold: 0.9,
        }
    }
}

/// Feature-selection trace for one outer fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionReport {
    pub fold: usize,
    pub ranked: Vec<ScreenedFeature>,
    pub dropped_low_signal: Vec<ScreenedFeature>,
    pub dropped_correlated: Vec<CorrelationDrop>,
    pub selected: Vec<String>,
    pub steps: Vec<SelectionStep>,
}

impl SelectionReport {
    fn empty(fold: usize) -> Self {
        Self {
            fold,
            ranked: Vec::new(),
            dropped_low_signal: Vec::new(),
            dropped_correlated: Vec::new(),
            selected: Vec::new(),
            steps: Vec::new(),
        }
    }
}

/// Result of training one modality across the outer folds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModalityFit {
    pub modality: Modality,
    /// Outer fold of each table row, as supplied.
    pub outer_assignment: Vec<u32>,
    /// Final per-fold models; `None` for skipped folds and empty selections.
    pub fold_models: Vec<Option<CoxModel>>,
    pub fold_reports: Vec<SelectionReport>,
    /// Folds whose training portion held no event; their held-out patients
    /// score 0.
    pub skipped_folds: Vec<usize>,
    /// Out-of-fold risk score per table row: every patient is scored by the
    /// model of the one fold that held it out.
    pub oof_scores: Vec<f64>,
    /// Concordance of the concatenated out-of-fold scores; `None` when the
    /// metric is degenerate.
    pub oof_c_index: Option<f64>,
}

/// Train one modality: per outer fold, run screening, correlation pruning,
/// and forward selection on the training portion only, fit the final Cox
/// model there, and score the held-out fold.
///
/// Training rows are processed in patient-id order and inner folds key on
/// patient ids, so the result is invariant to input row permutation.
pub fn fit_modality_model(
    table: &FeatureTable,
    records: &[SurvivalRecord],
    outer_assignment: &[u32],
    settings: &ModelSettings,
) -> Result<ModalityFit> {
    let n = table.n_patients();
    if records.len() != n || outer_assignment.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} patients, {} records, {} fold assignments",
            n,
            records.len(),
            outer_assignment.len()
        )));
    }
    let n_folds = match outer_assignment.iter().max() {
        Some(&m) => m as usize + 1,
        None => return Err(Error::InvalidArgument("empty cohort".into())),
    };
    if n_folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 outer folds".into()));
    }

    let mut fold_models = Vec::with_capacity(n_folds);
    let mut fold_reports = Vec::with_capacity(n_folds);
    let mut skipped_folds = Vec::new();
    let mut oof_scores = vec![0.0_f64; n];

    for fold in 0..n_folds {
        let fold_u32 = fold as u32;
        let mut train_rows: Vec<usize> = Vec::new();
        let mut test_rows: Vec<usize> = Vec::new();
        for (row, &f) in outer_assignment.iter().enumerate() {
            if f == fold_u32 {
                test_rows.push(row);
            } else {
                train_rows.push(row);
            }
        }
        // canonical order: results must not depend on input row order
        train_rows.sort_by(|&a, &b| table.patient_ids()[a].cmp(&table.patient_ids()[b]));

        let train_records: Vec<SurvivalRecord> = train_rows.iter().map(|&r| records[r]).collect();
        if !train_records.iter().any(|r| r.event) {
            skipped_folds.push(fold);
            fold_models.push(None);
            fold_reports.push(SelectionReport::empty(fold));
            continue;
        }

        let train_table = table.subset_rows(&train_rows)?;
        let inner_plan = make_cv_plan(
            train_table.patient_ids(),
            settings.inner_k,
            settings.inner_repeats,
            settings.seed,
        )?;

        let screen = univariate_screen(&train_table, &train_records, &inner_plan)?;
        let survivors = screen.survivors();
        let prune = correlation_prune(&train_table, &survivors, settings.correlation_threshold)?;
        let forward = forward_select(
            &train_table,
            &train_records,
            &inner_plan,
            &prune.kept,
            settings.max_features,
            settings.improvement_epsilon,
        )?;

        fold_reports.push(SelectionReport {
            fold,
            ranked: screen.ranked,
            dropped_low_signal: screen.dropped_low_signal,
            dropped_correlated: prune.dropped,
            selected: forward.selected.clone(),
            steps: forward.steps,
        });

        if forward.selected.is_empty() {
            fold_models.push(None);
            continue; // held-out patients keep the neutral score 0
        }

        let design = train_table.select_columns(&forward.selected)?;
        let model = fit_cox(
            design.values(),
            &train_records,
            &forward.selected,
            &FitOptions::default(),
        )?;
        let test_table = table.subset_rows(&test_rows)?.select_columns(&forward.selected)?;
        let scores = model.predict_risk(test_table.values(), &forward.selected)?;
        for (&row, score) in test_rows.iter().zip(scores.iter()) {
            oof_scores[row] = *score;
        }
        fold_models.push(Some(model));
    }

    let oof_c_index = concordance_index(records, &oof_scores).ok();
    Ok(ModalityFit {
        modality: table.modality,
        outer_assignment: outer_assignment.to_vec(),
        fold_models,
        fold_reports,
        skipped_folds,
        oof_scores,
        oof_c_index,
    })
}
