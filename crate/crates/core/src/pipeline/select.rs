//! Greedy step-forward feature selection under cross-validated C-index.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::screen::{cv_mean_c_index, plan_cells};
use crate::pipeline::{CvPlan, FeatureTable};
use crate::survstat::SurvivalRecord;

/// Minimum mean C-index gain required to accept another feature; blocks
/// noise-driven growth while staying far below real effect sizes.
pub const DEFAULT_IMPROVEMENT_EPSILON: f64 = 1e-4;

/// One accepted step of the forward search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionStep {
    pub added: String,
    /// Mean validation C-index of the model after adding the feature.
    pub mean_c_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForwardResult {
    pub selected: Vec<String>,
    pub steps: Vec<SelectionStep>,
}

/// Greedy forward selection.
///
/// Starting from the neutral baseline 0.5, each step refits a Cox model on
/// `selected + candidate` over every plan cell and adds the candidate with
/// the best mean validation C-index, provided it beats the incumbent by more
/// than `epsilon`. Ties resolve to the earlier candidate, i.e. the better
/// screening rank. Stops at `max_features` or when no candidate improves.
pub fn forward_select(
    table: &FeatureTable,
    records: &[SurvivalRecord],
    plan: &CvPlan,
    candidates: &[String],
    max_features: usize,
    epsilon: f64,
) -> Result<ForwardResult> {
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
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
    }
    let mut candidate_cols = Vec::with_capacity(candidates.len());
    for name in candidates {
        candidate_cols.push(table.column_index(name).ok_or_else(|| {
            Error::Schema(format!("candidate '{name}' not in table"))
        })?);
    }

    let cells = plan_cells(plan);
    let mut selected: Vec<String> = Vec::new();
    let mut selected_cols: Vec<usize> = Vec::new();
    let mut steps: Vec<SelectionStep> = Vec::new();
    let mut incumbent = 0.5_f64;

    while selected.len() < max_features {
        let remaining: Vec<(usize, &String)> = candidates
            .iter()
            .enumerate()
            .filter(|(_, name)| !selected.contains(name))
            .map(|(i, name)| (candidate_cols[i], name))
            .collect();
        if remaining.is_empty() {
            break;
        }

        let scores: Vec<f64> = remaining
            .par_iter()
            .map(|(col, name)| {
                let mut names: Vec<String> = selected.clone();
                names.push((*name).clone());
                let mut cols = selected_cols.clone();
                cols.push(*col);
                cv_mean_c_index(table, records, &cells, &names, &cols).0
            })
            .collect();

        // first strict maximum wins, so ties keep the screening order
        let mut best = 0usize;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        if scores[best] > incumbent + epsilon {
            let (col, name) = remaining[best];
            selected.push(name.clone());
            selected_cols.push(col);
            incumbent = scores[best];
            steps.push(SelectionStep {
                added: name.clone(),
                mean_c_index: incumbent,
            });
        } else {
            break;
        }
    }

    Ok(ForwardResult { selected, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::make_cv_plan;
    use crate::radiomics::Modality;
    use ndarray::Array2;

    fn table_from(columns: &[(&str, Vec<f64>)]) -> FeatureTable {
        let n = columns[0].1.len();
        let mut values = Array2::zeros((n, columns.len()));
        for (c, (_, col)) in columns.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                values[[r, c]] = *v;
            }
        }
        FeatureTable::new(
            Modality::Ct,
            (0..n).map(|i| format!("p{i:03}")).collect(),
            columns.iter().map(|(name, _)| name.to_string()).collect(),
            values,
        )
        .unwrap()
    }

    fn records_driven_by(risk: &[f64]) -> Vec<SurvivalRecord> {
        risk.iter()
            .enumerate()
            .map(|(i, r)| SurvivalRecord {
                time: 30.0 * (-r).exp() / (1.0 + (i % 7) as f64 * 0.01) + 0.1,
                event: i % 5 != 4,
            })
            .collect()
    }

    #[test]
    fn selects_the_informative_feature() {
        let n = 50;
        let signal: Vec<f64> = (0..n).map(|i| ((i * 13 % 17) as f64 - 8.0) / 4.0).collect();
        let noise1: Vec<f64> = (0..n).map(|i| ((i * 7 % 23) as f64 - 11.0) / 11.0).collect();
        let noise2: Vec<f64> = (0..n).map(|i| ((i * 3 % 29) as f64 - 14.0) / 14.0).collect();
        let table = table_from(&[("noise1", noise1), ("signal", signal.clone()), ("noise2", noise2)]);
        let records = records_driven_by(&signal);
        let plan = make_cv_plan(table.patient_ids(), 5, 4, 21).unwrap();
        let candidates: Vec<String> =
            ["signal", "noise1", "noise2"].iter().map(|s| s.to_string()).collect();
        let result = forward_select(&table, &records, &plan, &candidates, 2, 1e-4).unwrap();
        assert!(result.selected.contains(&"signal".to_string()), "{:?}", result.selected);
        assert_eq!(result.selected[0], "signal");
    }

    #[test]
    fn cap_limits_selection_size() {
        let n = 40;
        let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.33).sin()).collect();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.71).cos()).collect();
        let driver: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x + y).collect();
        let table = table_from(&[("a", a), ("b", b)]);
        let records = records_driven_by(&driver);
        let plan = make_cv_plan(table.patient_ids(), 4, 3, 5).unwrap();
        let candidates: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let result = forward_select(&table, &records, &plan, &candidates, 1, 1e-4).unwrap();
        assert!(result.selected.len() <= 1);
    }

    #[test]
    fn duplicate_of_selected_feature_is_never_added() {
        let n = 50;
        let signal: Vec<f64> = (0..n).map(|i| ((i * 13 % 17) as f64 - 8.0) / 4.0).collect();
        let table = table_from(&[("signal", signal.clone()), ("twin", signal.clone())]);
        let records = records_driven_by(&signal);
        let plan = make_cv_plan(table.patient_ids(), 5, 4, 8).unwrap();
        let candidates: Vec<String> = ["signal", "twin"].iter().map(|s| s.to_string()).collect();
        let result = forward_select(&table, &records, &plan, &candidates, 5, 1e-4).unwrap();
        assert_eq!(result.selected, vec!["signal".to_string()]);
    }

    #[test]
    fn empty_candidate_list_is_valid() {
        let n = 20;
        let a: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let table = table_from(&[("a", a.clone())]);
        let records = records_driven_by(&a);
        let plan = make_cv_plan(table.patient_ids(), 4, 2, 2).unwrap();
        let result = forward_select(&table, &records, &plan, &[], 5, 1e-4).unwrap();
        assert!(result.selected.is_empty());
        assert!(result.steps.is_empty());
    }
}
