//! Univariate screening and correlation pruning.

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::coxph::{fit_cox, FitOptions};
use crate::error::{Error, Result};
use crate::pipeline::{CvPlan, FeatureTable};
use crate::survstat::{concordance_index, SurvivalRecord};

/// Screening outcome for one feature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenedFeature {
    pub name: String,
    /// Validation C-index averaged over every (repeat, fold) cell.
    pub mean_c_index: f64,
    /// Cells where the fit or the metric failed and 0.5 was imputed.
    pub failed_cells: usize,
}

/// All features ranked by mean validation C-index, plus the low-signal drops.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenReport {
    pub ranked: Vec<ScreenedFeature>,
    pub dropped_low_signal: Vec<ScreenedFeature>,
}

impl ScreenReport {
    /// Ranked feature names that survived the low-signal cut.
    pub fn survivors(&self) -> Vec<String> {
        self.ranked
            .iter()
            .filter(|f| !self.dropped_low_signal.iter().any(|d| d.name == f.name))
            .map(|f| f.name.clone())
            .collect()
    }
}

/// Materialized (train, validation) row lists for every (repeat, fold) cell,
/// in repeat-major order.
pub(super) struct PlanCells {
    pub cells: Vec<(Vec<usize>, Vec<usize>)>,
}

pub(super) fn plan_cells(plan: &CvPlan) -> PlanCells {
    let mut cells = Vec::with_capacity(plan.repeats * plan.k);
    for repeat in 0..plan.repeats {
        let assignment = plan.fold_assignment(repeat);
        for fold in 0..plan.k as u32 {
            let mut train = Vec::new();
            let mut val = Vec::new();
            for (row, &f) in assignment.iter().enumerate() {
                if f == fold {
                    val.push(row);
                } else {
                    train.push(row);
                }
            }
            cells.push((train, val));
        }
    }
    PlanCells { cells }
}

/// Mean validation C-index of a Cox model on the given columns across all
/// plan cells. A cell whose fit or metric fails contributes the neutral 0.5
/// so one pathological fold cannot veto a feature set.
pub(super) fn cv_mean_c_index(
    table: &FeatureTable,
    records: &[SurvivalRecord],
    cells: &PlanCells,
    names: &[String],
    cols: &[usize],
) -> (f64, usize) {
    let values = table.values();
    let options = FitOptions::default();
    let mut sum = 0.0;
    let mut failures = 0usize;
    for (train, val) in &cells.cells {
        let mut x_train = Array2::zeros((train.len(), cols.len()));
        for (r, &row) in train.iter().enumerate() {
            for (c, &col) in cols.iter().enumerate() {
                x_train[[r, c]] = values[[row, col]];
            }
        }
        let train_records: Vec<SurvivalRecord> = train.iter().map(|&r| records[r]).collect();
        let cell_value = fit_cox(x_train.view(), &train_records, names, &options)
            .ok()
            .and_then(|model| {
                let mut x_val = Array2::zeros((val.len(), cols.len()));
                for (r, &row) in val.iter().enumerate() {
                    for (c, &col) in cols.iter().enumerate() {
                        x_val[[r, c]] = values[[row, col]];
                    }
                }
                let val_records: Vec<SurvivalRecord> = val.iter().map(|&r| records[r]).collect();
                let risk = model.predict_risk(x_val.view(), names).ok()?;
                concordance_index(&val_records, &risk).ok()
            });
        match cell_value {
            Some(c) => sum += c,
            None => {
                sum += 0.5;
                failures += 1;
            }
        }
    }
    (sum / cells.cells.len() as f64, failures)
}

/// Screening score of one feature: fit the univariate Cox model on each
/// training fold to confirm the feature supports a fit at all, then score
/// the validation fold with the raw feature values.
fn univariate_cell_scores(
    table: &FeatureTable,
    records: &[SurvivalRecord],
    cells: &PlanCells,
    name: &String,
    col: usize,
) -> (f64, usize) {
    let values = table.values();
    let options = FitOptions::default();
    let names = std::slice::from_ref(name);
    let mut sum = 0.0;
    let mut failures = 0usize;
    for (train, val) in &cells.cells {
        let mut x_train = Array2::zeros((train.len(), 1));
        for (r, &row) in train.iter().enumerate() {
            x_train[[r, 0]] = values[[row, col]];
        }
        let train_records: Vec<SurvivalRecord> = train.iter().map(|&r| records[r]).collect();
        let cell_value = fit_cox(x_train.view(), &train_records, names, &options)
            .ok()
            .and_then(|_| {
                let risk: Vec<f64> = val.iter().map(|&row| values[[row, col]]).collect();
                let val_records: Vec<SurvivalRecord> = val.iter().map(|&r| records[r]).collect();
                concordance_index(&val_records, &risk).ok()
            });
        match cell_value {
            Some(c) => sum += c,
            None => {
                sum += 0.5;
                failures += 1;
            }
        }
    }
    (sum / cells.cells.len() as f64, failures)
}

fn check_alignment(table: &FeatureTable, records: &[SurvivalRecord], plan: &CvPlan) -> Result<()> {
    if plan.patient_ids() != table.patient_ids() {
        return Err(Error::Schema(
            "cross-validation plan was built over different patients".into(),
        ));
    }
    if records.len() != table.n_patients() {
        return Err(Error::ShapeMismatch(format!(
            "{} records for {} patients",
            records.len(),
            table.n_patients()
        )));
    }
    Ok(())
}

/// Rank every feature by its mean validation C-index over the plan and drop
/// features averaging below 0.5.
///
/// The screen is direction-sensitive: the validation C-index is computed on
/// the feature values themselves, so a feature anti-associated with risk
/// falls below 0.5 and is removed rather than sign-corrected. The univariate
/// Cox fit on the training fold acts as a viability filter; cells where it
/// (or the metric) fails contribute the neutral 0.5. Ties rank by feature
/// name so the result is independent of column order.
pub fn univariate_screen(
    table: &FeatureTable,
    records: &[SurvivalRecord],
    plan: &CvPlan,
) -> Result<ScreenReport> {
    check_alignment(table, records, plan)?;
    let cells = plan_cells(plan);

    let mut ranked: Vec<ScreenedFeature> = table
        .feature_names()
        .par_iter()
        .enumerate()
        .map(|(col, name)| {
            let (mean_c_index, failed_cells) =
                univariate_cell_scores(table, records, &cells, name, col);
            ScreenedFeature {
                name: name.clone(),
                mean_c_index,
                failed_cells,
            }
        })
        .collect();

    ranked.sort_by(|a, b| {
        b.mean_c_index
            .partial_cmp(&a.mean_c_index)
            .unwrap()
            .then_with(|| a.name.cmp(&b.name))
    });
    let dropped_low_signal: Vec<ScreenedFeature> = ranked
        .iter()
        .filter(|f| f.mean_c_index < 0.5)
        .cloned()
        .collect();
    Ok(ScreenReport { ranked, dropped_low_signal })
}

/// A feature removed for correlating with a retained higher-ranked feature.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationDrop {
    pub removed: String,
    pub kept: String,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneReport {
    pub kept: Vec<String>,
    pub dropped: Vec<CorrelationDrop>,
}

struct CenteredColumn {
    centered: Vec<f64>,
    norm: f64, // sqrt(sum of squared deviations); 0 marks undefined correlation
}

/// Scan `ranked` from the top and drop each feature whose absolute Pearson
/// correlation with any retained higher-ranked feature exceeds `threshold`.
///
/// Zero-variance columns have undefined correlation and are never pruned.
/// Decisions depend only on retained higher-ranked features, so the outcome
/// for a prefix never changes when lower-ranked features are added.
pub fn correlation_prune(
    table: &FeatureTable,
    ranked: &[String],
    threshold: f64,
) -> Result<PruneReport> {
    if !(threshold > 0.0) || !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "correlation threshold must be positive, got {threshold}"
        )));
    }
    let n = table.n_patients() as f64;
    let mut columns = Vec::with_capacity(ranked.len());
    for name in ranked {
        let col = table
            .column(name)
            .ok_or_else(|| Error::Schema(format!("feature '{name}' not in table")))?;
        let mean = col.sum() / n;
        let centered: Vec<f64> = col.iter().map(|v| v - mean).collect();
        let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
        columns.push(CenteredColumn { centered, norm });
    }

    let mut kept: Vec<usize> = Vec::new();
    let mut dropped = Vec::new();
    'candidates: for (idx, name) in ranked.iter().enumerate() {
        let cand = &columns[idx];
        if cand.norm > 0.0 {
            for &kept_idx in &kept {
                let prior = &columns[kept_idx];
                if prior.norm == 0.0 {
                    continue;
                }
                let dot: f64 = cand
                    .centered
                    .iter()
                    .zip(prior.centered.iter())
                    .map(|(a, b)| a * b)
                    .sum();
                let r = dot / (cand.norm * prior.norm);
                if r.abs() > threshold {
                    dropped.push(CorrelationDrop {
                        removed: name.clone(),
                        kept: ranked[kept_idx].clone(),
                        r,
                    });
                    continue 'candidates;
                }
            }
        }
        kept.push(idx);
    }

    Ok(PruneReport {
        kept: kept.into_iter().map(|i| ranked[i].clone()).collect(),
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::make_cv_plan;
    use crate::radiomics::Modality;

    fn table_from(columns: &[(&str, Vec<f64>)]) -> FeatureTable {
        let n = columns[0].1.len();
        let mut values = Array2::zeros((n, columns.len()));
        for (c, (_, col)) in columns.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                values[[r, c]] = *v;
            }
        }
        FeatureTable::new(
            Modality::Clinical,
            (0..n).map(|i| format!("p{i:03}")).collect(),
            columns.iter().map(|(name, _)| name.to_string()).collect(),
            values,
        )
        .unwrap()
    }

    fn linear_records(n: usize, risk: impl Fn(usize) -> f64) -> Vec<SurvivalRecord> {
        // deterministic exponential-like times decreasing in risk
        (0..n)
            .map(|i| SurvivalRecord {
                time: 20.0 / (1.0 + risk(i).exp()) + 0.37 * ((i * 7 % 5) as f64),
                event: i % 4 != 3,
            })
            .collect()
    }

    #[test]
    fn screen_ranks_signal_above_noise() {
        let n = 60;
        let signal: Vec<f64> = (0..n).map(|i| (i as f64 / 10.0).sin() * 2.0).collect();
        let noise: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let table = table_from(&[("signal", signal.clone()), ("noise", noise)]);
        let records = linear_records(n, |i| signal[i]);
        let plan = make_cv_plan(table.patient_ids(), 5, 4, 3).unwrap();
        let report = univariate_screen(&table, &records, &plan).unwrap();
        assert_eq!(report.ranked[0].name, "signal");
        assert!(report.ranked[0].mean_c_index > 0.6, "{}", report.ranked[0].mean_c_index);
    }

    #[test]
    fn screen_is_invariant_to_column_order() {
        let n = 40;
        let a: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let records = linear_records(n, |i| a[i] - b[i]);
        let plan = make_cv_plan(&(0..n).map(|i| format!("p{i:03}")).collect::<Vec<_>>(), 4, 3, 9).unwrap();

        let t1 = table_from(&[("a", a.clone()), ("b", b.clone())]);
        let t2 = table_from(&[("b", b), ("a", a)]);
        let r1 = univariate_screen(&t1, &records, &plan).unwrap();
        let r2 = univariate_screen(&t2, &records, &plan).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn screen_imputes_neutral_on_constant_column() {
        let n = 20;
        let table = table_from(&[("flat", vec![3.0; n])]);
        let records = linear_records(n, |_| 0.0);
        let plan = make_cv_plan(table.patient_ids(), 4, 2, 1).unwrap();
        let report = univariate_screen(&table, &records, &plan).unwrap();
        assert_eq!(report.ranked[0].mean_c_index, 0.5);
        assert_eq!(report.ranked[0].failed_cells, 8);
        // exactly 0.5 is kept: the cut is strictly below 0.5
        assert!(report.dropped_low_signal.is_empty());
    }

    #[test]
    fn prune_drops_duplicates_and_affine_copies() {
        let base: Vec<f64> = (0..30).map(|i| (i as f64 * 1.3).sin()).collect();
        let affine: Vec<f64> = base.iter().map(|v| 2.0 * v + 3.0).collect();
        let other: Vec<f64> = (0..30).map(|i| ((i * 17 % 13) as f64) / 13.0).collect();
        let table = table_from(&[("top", base.clone()), ("copy", base), ("affine", affine), ("other", other)]);
        let ranked: Vec<String> = ["top", "copy", "affine", "other"].iter().map(|s| s.to_string()).collect();
        let report = correlation_prune(&table, &ranked, 0.9).unwrap();
        assert_eq!(report.kept, vec!["top".to_string(), "other".to_string()]);
        assert_eq!(report.dropped.len(), 2);
        assert_eq!(report.dropped[0].removed, "copy");
        assert_eq!(report.dropped[0].kept, "top");
        assert!((report.dropped[0].r - 1.0).abs() < 1e-12);
        assert!((report.dropped[1].r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prune_never_touches_zero_variance() {
        let base: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let table = table_from(&[("top", base), ("flat", vec![1.0; 20])]);
        let ranked: Vec<String> = ["top", "flat"].iter().map(|s| s.to_string()).collect();
        let report = correlation_prune(&table, &ranked, 0.9).unwrap();
        assert_eq!(report.kept.len(), 2);
        assert!(report.dropped.is_empty());
    }

    #[test]
    fn prune_keeps_independent_columns() {
        // 500 rows of decorrelated deterministic pseudo-noise
        let mut state = 0xDEADBEEFu64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let cols: Vec<(String, Vec<f64>)> = (0..6)
            .map(|c| (format!("n{c}"), (0..500).map(|_| next()).collect()))
            .collect();
        let named: Vec<(&str, Vec<f64>)> =
            cols.iter().map(|(n, v)| (n.as_str(), v.clone())).collect();
        let table = table_from(&named);
        let ranked: Vec<String> = cols.iter().map(|(n, _)| n.clone()).collect();
        let report = correlation_prune(&table, &ranked, 0.9).unwrap();
        assert_eq!(report.kept.len(), 6);
    }

    #[test]
    fn prune_decisions_are_prefix_stable() {
        let base: Vec<f64> = (0..40).map(|i| (i as f64 * 0.61).sin()).collect();
        let near: Vec<f64> = base.iter().enumerate().map(|(i, v)| v + 1e-3 * (i as f64).cos()).collect();
        let tail: Vec<f64> = (0..40).map(|i| (i * 29 % 7) as f64).collect();
        let table = table_from(&[("a", base), ("b", near), ("c", tail)]);

        let full: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let prefix: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let r_full = correlation_prune(&table, &full, 0.9).unwrap();
        let r_prefix = correlation_prune(&table, &prefix, 0.9).unwrap();
        // the decision on `b` does not depend on the later feature
        assert_eq!(r_full.dropped[0], r_prefix.dropped[0]);
        assert_eq!(r_full.kept[..1], r_prefix.kept[..1]);
    }
}
