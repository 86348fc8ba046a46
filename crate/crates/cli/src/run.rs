//! Pipeline orchestration and the standalone stage entry points.
//!
//! `run_pipeline` executes the whole chain in one process: volume
//! post-processing, feature extraction, clinical encoding, per-modality
//! cross-validated model building, risk fusion, stratification, and survival
//! evaluation. Each stage is also exposed on its own (`postprocess`,
//! `features`, `simulate`, `evaluate`, `km`) consuming and producing the
//! same file formats, so staged composition reproduces the monolithic run.
//! On error, files already written for the failing run are removed.

use std::path::{Path, PathBuf};

use serde::Serialize;

use survrad_core::pipeline::{
    encode_clinical, fit_modality_model, fuse_risk, make_cv_plan, stratify, FeatureTable,
    ModalityFit, ModelSettings, RiskGroup, RiskScores,
};
use survrad_core::radiomics::{extract_all, FeatureVector, Modality};
use survrad_core::survstat::{concordance_index, km_estimate, logrank_test, KmCurve, SurvivalRecord};
use survrad_core::synth::{generate_multimodal, ModalityPlan};
use survrad_core::volume::{
    dice, filter_distant_nodes, node_statistics, resample_nearest, resample_trilinear,
    zscore_normalize, FilterReport, LabelVolume, NodeStatistics, ScalarVolume, LABEL_NODE,
    LABEL_PRIMARY,
};

use crate::clinical::{read_clinical_csv, read_labels_csv, write_labels_csv};
use crate::config::PipelineConfig;
use crate::error::{ErrorKind, Result, StageContext};
use crate::nifti::{read_labels, read_scalar, write_labels};
use crate::provenance::{hash_params, Provenance};
use crate::report::{
    DicePatient, DiceReport, DiceSummary, KmCurveReport, LogRankSummary, ModalityOutcome,
    ModalitySelection, NodeFilterSummary, RiskGroupsReport, RunReport,
};
use crate::tables::{
    read_feature_table_csv, read_node_stats_csv, read_risk_csv, write_feature_table_csv,
    write_km_csv, write_node_stats_csv, write_risk_csv,
};

/// Registers written files and removes them unless the run completes.
struct OutputGuard {
    written: Vec<PathBuf>,
    armed: bool,
}

impl OutputGuard {
    fn new() -> Self {
        Self { written: Vec::new(), armed: true }
    }

    fn write_json<T: Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).stage("write-outputs")?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)
            .map_err(ErrorKind::from)
            .stage("write-outputs")?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    fn register(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    fn disarm(mut self) {
        self.armed = false;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.armed {
            for path in &self.written {
                let _ = std::fs::remove_file(path);
            }
        }
    }
}

fn ensure_dir(dir: &Path, stage: &'static str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(ErrorKind::from).stage(stage)
}

/// Patient ids discovered from `<id>_mask.nii` files, sorted.
fn discover_mask_patients(dir: &Path) -> std::result::Result<Vec<String>, ErrorKind> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(id) = name.strip_suffix("_mask.nii") {
            ids.push(id.to_string());
        }
    }
    if ids.is_empty() {
        return Err(ErrorKind::Validation(format!(
            "no *_mask.nii files found in {}",
            dir.display()
        )));
    }
    ids.sort();
    Ok(ids)
}

fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_mask.nii"))
}

fn scan_path(dir: &Path, id: &str, modality: &str) -> PathBuf {
    dir.join(format!("{id}_{modality}.nii"))
}

/// Per-patient result of the volume chain.
struct PatientVolumes {
    stats: NodeStatistics,
    filter: FilterReport,
    filtered_mask: LabelVolume,
    features: Option<(FeatureVector, FeatureVector)>,
    dice_row: Option<DicePatient>,
}

fn resampled_mask(config: &PipelineConfig, mask: LabelVolume) -> std::result::Result<LabelVolume, ErrorKind> {
    match config.resample_spacing_mm {
        Some(target) => Ok(resample_nearest(&mask, target)?),
        None => Ok(mask),
    }
}

fn prepared_scan(config: &PipelineConfig, scan: ScalarVolume) -> std::result::Result<ScalarVolume, ErrorKind> {
    let scan = match config.resample_spacing_mm {
        Some(target) => resample_trilinear(&scan, target)?,
        None => scan,
    };
    if config.normalize_images {
        Ok(zscore_normalize(&scan)?)
    } else {
        Ok(scan)
    }
}

fn filter_summary(id: &str, report: &FilterReport) -> NodeFilterSummary {
    NodeFilterSummary {
        patient_id: id.to_string(),
        kept_nodes: report.entries.iter().filter(|e| !e.removed).count(),
        removed_nodes: report.removed().count(),
        removed_distances_mm: report.removed().map(|e| e.distance_mm).collect(),
    }
}

/// Post-process one patient's mask and, when requested, extract features
/// and score Dice against the reference mask.
fn process_patient(
    config: &PipelineConfig,
    volumes_dir: &Path,
    id: &str,
    with_features: bool,
) -> Result<PatientVolumes> {
    let mask = read_labels(&mask_path(volumes_dir, id)).stage_patient("read-volumes", id)?;
    let mask = resampled_mask(config, mask).stage_patient("postprocess", id)?;
    let (filtered, filter) =
        filter_distant_nodes(&mask, config.d_max_mm).stage_patient("postprocess", id)?;
    let stats = node_statistics(&filtered);

    let features = if with_features {
        let ct = read_scalar(&scan_path(volumes_dir, id, "ct")).stage_patient("read-volumes", id)?;
        let pet = read_scalar(&scan_path(volumes_dir, id, "pet")).stage_patient("read-volumes", id)?;
        let ct = prepared_scan(config, ct).stage_patient("features", id)?;
        let pet = prepared_scan(config, pet).stage_patient("features", id)?;
        match extract_all(&ct, &pet, &filtered, &config.extraction) {
            Ok(pair) => Some(pair),
            Err(survrad_core::Error::NoTumor) => None,
            Err(e) => return Err(e).stage_patient("features", id),
        }
    } else {
        None
    };

    let dice_row = match &config.inputs.reference_masks_dir {
        Some(ref_dir) => {
            let reference =
                read_labels(&mask_path(ref_dir, id)).stage_patient("read-volumes", id)?;
            let reference = resampled_mask(config, reference).stage_patient("postprocess", id)?;
            let row = (|| -> std::result::Result<DicePatient, ErrorKind> {
                Ok(DicePatient {
                    patient_id: id.to_string(),
                    node_before: dice(&mask, &reference, LABEL_NODE)?,
                    node_after: dice(&filtered, &reference, LABEL_NODE)?,
                    primary_before: dice(&mask, &reference, LABEL_PRIMARY)?,
                    primary_after: dice(&filtered, &reference, LABEL_PRIMARY)?,
                })
            })()
            .stage_patient("postprocess", id)?;
            Some(row)
        }
        None => None,
    };

    Ok(PatientVolumes { stats, filter, filtered_mask: filtered, features, dice_row })
}

fn dice_report(rows: Vec<DicePatient>) -> Option<DiceReport> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let mean =
        |pick: fn(&DicePatient) -> f64| rows.iter().map(pick).sum::<f64>() / n;
    let original = DiceSummary {
        node: mean(|r| r.node_before),
        primary: mean(|r| r.primary_before),
        mean: mean(|r| (r.node_before + r.primary_before) / 2.0),
    };
    let postprocessed = DiceSummary {
        node: mean(|r| r.node_after),
        primary: mean(|r| r.primary_after),
        mean: mean(|r| (r.node_after + r.primary_after) / 2.0),
    };
    Some(DiceReport { original, postprocessed, per_patient: rows })
}

/// Reorder `table` rows to exactly `ids` (same set required).
fn align_table(table: FeatureTable, ids: &[String]) -> std::result::Result<FeatureTable, ErrorKind> {
    if table.patient_ids() == ids {
        return Ok(table);
    }
    let mut rows = Vec::with_capacity(ids.len());
    for id in ids {
        match table.patient_ids().iter().position(|t| t == id) {
            Some(row) => rows.push(row),
            None => {
                return Err(ErrorKind::Schema(format!(
                    "patient '{id}' missing from feature table"
                )))
            }
        }
    }
    if table.n_patients() != ids.len() {
        let extra: Vec<&String> = table
            .patient_ids()
            .iter()
            .filter(|t| !ids.contains(t))
            .collect();
        return Err(ErrorKind::Schema(format!(
            "feature table has patients outside the cohort: {extra:?}"
        )));
    }
    Ok(table.subset_rows(&rows)?)
}

/// Keep only the table rows whose ids belong to the cohort, in cohort
/// order; ids outside the cohort are an error.
fn subset_table(
    table: FeatureTable,
    cohort_ids: &[String],
) -> std::result::Result<(FeatureTable, Vec<bool>), ErrorKind> {
    for id in table.patient_ids() {
        if !cohort_ids.contains(id) {
            return Err(ErrorKind::Schema(format!(
                "feature table has patient '{id}' outside the cohort"
            )));
        }
    }
    let mut member = vec![false; cohort_ids.len()];
    let mut rows = Vec::new();
    for (i, id) in cohort_ids.iter().enumerate() {
        if let Some(row) = table.patient_ids().iter().position(|t| t == id) {
            member[i] = true;
            rows.push(row);
        }
    }
    Ok((table.subset_rows(&rows)?, member))
}

struct Cohort {
    ids: Vec<String>,
    survival: Vec<SurvivalRecord>,
    clinical_table: FeatureTable,
    ct_table: Option<FeatureTable>,
    pet_table: Option<FeatureTable>,
    has_primary: Vec<bool>,
    node_filter: Vec<NodeFilterSummary>,
    dice: Option<DiceReport>,
}

fn feature_table_from_vectors(
    modality: Modality,
    entries: &[(String, FeatureVector)],
) -> std::result::Result<Option<FeatureTable>, ErrorKind> {
    if entries.is_empty() {
        return Ok(None);
    }
    let names = entries[0].1.names().to_vec();
    let mut values = ndarray::Array2::zeros((entries.len(), names.len()));
    for (row, (_, fv)) in entries.iter().enumerate() {
        for (col, v) in fv.values().iter().enumerate() {
            values[[row, col]] = *v;
        }
    }
    let ids = entries.iter().map(|(id, _)| id.clone()).collect();
    Ok(Some(FeatureTable::new(modality, ids, names, values)?))
}

fn load_cohort(config: &PipelineConfig) -> Result<Cohort> {
    if let Some(clinical_csv) = &config.inputs.clinical_csv {
        let (records, survival) = read_clinical_csv(clinical_csv).stage("read-clinical")?;
        let ids: Vec<String> = records.iter().map(|r| r.patient_id.clone()).collect();

        let mut node_filter = Vec::new();
        let mut dice_rows = Vec::new();
        let mut stats: Vec<NodeStatistics>;
        let mut ct_entries: Vec<(String, FeatureVector)> = Vec::new();
        let mut pet_entries: Vec<(String, FeatureVector)> = Vec::new();
        let mut has_primary = vec![false; ids.len()];

        if let Some(volumes_dir) = &config.inputs.volumes_dir {
            stats = Vec::with_capacity(ids.len());
            for (i, id) in ids.iter().enumerate() {
                let outcome = process_patient(config, volumes_dir, id, true)?;
                node_filter.push(filter_summary(id, &outcome.filter));
                if let Some(row) = outcome.dice_row {
                    dice_rows.push(row);
                }
                if let Some((ct_fv, pet_fv)) = outcome.features {
                    has_primary[i] = true;
                    ct_entries.push((id.clone(), ct_fv));
                    pet_entries.push((id.clone(), pet_fv));
                }
                stats.push(outcome.stats);
            }
        } else {
            stats = match &config.inputs.node_stats_csv {
                Some(path) => {
                    let by_id = read_node_stats_csv(path).stage("read-node-stats")?;
                    let mut aligned = Vec::with_capacity(ids.len());
                    for id in &ids {
                        let found = by_id.iter().find(|(sid, _)| sid == id).ok_or_else(|| {
                            ErrorKind::Schema(format!("patient '{id}' missing from node stats"))
                        });
                        aligned.push(found.stage("read-node-stats")?.1.clone());
                    }
                    aligned
                }
                None => ids
                    .iter()
                    .map(|_| NodeStatistics {
                        primary_count: 0,
                        primary_volume_ml: 0.0,
                        node_count: 0,
                        node_total_volume_ml: 0.0,
                        smallest_node_volume_ml: None,
                        node_distances_mm: Vec::new(),
                    })
                    .collect(),
            };
        }

        let clinical_table = encode_clinical(&records, &stats).stage("encode-clinical")?;

        let (ct_table, pet_table) = if config.inputs.volumes_dir.is_some() {
            (
                feature_table_from_vectors(Modality::Ct, &ct_entries).stage("features")?,
                feature_table_from_vectors(Modality::Pet, &pet_entries).stage("features")?,
            )
        } else {
            let mut ct_table = None;
            let mut pet_table = None;
            if let Some(path) = &config.inputs.ct_features_csv {
                let raw = read_feature_table_csv(path, Modality::Ct).stage("read-features")?;
                let (table, member) = subset_table(raw, &ids).stage("read-features")?;
                for (flag, m) in has_primary.iter_mut().zip(member.iter()) {
                    *flag |= m;
                }
                ct_table = Some(table);
            }
            if let Some(path) = &config.inputs.pet_features_csv {
                let raw = read_feature_table_csv(path, Modality::Pet).stage("read-features")?;
                let (table, member) = subset_table(raw, &ids).stage("read-features")?;
                for (flag, m) in has_primary.iter_mut().zip(member.iter()) {
                    *flag |= m;
                }
                pet_table = Some(table);
            }
            (ct_table, pet_table)
        };

        Ok(Cohort {
            ids,
            survival,
            clinical_table,
            ct_table,
            pet_table,
            has_primary,
            node_filter,
            dice: dice_report(dice_rows),
        })
    } else {
        // table mode: bare labels plus prebuilt feature tables
        let labels_csv = config.inputs.labels_csv.as_ref().expect("validated");
        let features_csv = config.inputs.clinical_features_csv.as_ref().expect("validated");
        let (ids, survival) = read_labels_csv(labels_csv).stage("read-labels")?;
        let clinical_table = read_feature_table_csv(features_csv, Modality::Clinical)
            .and_then(|t| align_table(t, &ids))
            .stage("read-features")?;

        let mut has_primary = vec![false; ids.len()];
        let mut load = |path: &Option<PathBuf>, modality| -> Result<Option<FeatureTable>> {
            match path {
                Some(p) => {
                    let raw = read_feature_table_csv(p, modality).stage("read-features")?;
                    let (table, member) = subset_table(raw, &ids).stage("read-features")?;
                    for (flag, m) in has_primary.iter_mut().zip(member.iter()) {
                        *flag |= m;
                    }
                    Ok(Some(table))
                }
                None => Ok(None),
            }
        };
        let ct_table = load(&config.inputs.ct_features_csv, Modality::Ct)?;
        let pet_table = load(&config.inputs.pet_features_csv, Modality::Pet)?;

        Ok(Cohort {
            ids,
            survival,
            clinical_table,
            ct_table,
            pet_table,
            has_primary,
            node_filter: Vec::new(),
            dice: None,
        })
    }
}

struct ModelPhase {
    fits: Vec<ModalityFit>,
    scores: RiskScores,
    groups: Vec<RiskGroup>,
    km_curves: Vec<(String, KmCurve)>,
    logrank: Option<LogRankSummary>,
    degenerate: bool,
}

/// Out-of-fold scores of a sub-cohort fit, spread back over the full cohort.
fn spread_scores(
    cohort_ids: &[String],
    table: &FeatureTable,
    fit: &ModalityFit,
) -> Vec<Option<f64>> {
    let mut out = vec![None; cohort_ids.len()];
    for (row, id) in table.patient_ids().iter().enumerate() {
        let at = cohort_ids.iter().position(|c| c == id).expect("subset of cohort");
        out[at] = Some(fit.oof_scores[row]);
    }
    out
}

fn model_phase(config: &PipelineConfig, cohort: &Cohort) -> Result<ModelPhase> {
    let outer = make_cv_plan(&cohort.ids, config.cv.outer_k, 1, config.cv.seed).stage("fit")?;
    let assignment = outer.fold_assignment(0);

    let clinical_settings = ModelSettings::new(
        config.cv.inner_k,
        config.cv.inner_repeats,
        config.cv.seed,
        config.caps.clinical,
    );
    let radiomics_settings = ModelSettings { max_features: config.caps.radiomics, ..clinical_settings };

    let mut fits = Vec::new();
    let clinical_fit =
        fit_modality_model(&cohort.clinical_table, &cohort.survival, assignment, &clinical_settings)
            .stage("fit")?;
    let clinical_scores: Vec<Option<f64>> =
        clinical_fit.oof_scores.iter().map(|&s| Some(s)).collect();
    fits.push(clinical_fit);

    let mut radiomics_scores = |table: &Option<FeatureTable>| -> Result<Vec<Option<f64>>> {
        match table {
            Some(table) => {
                let mut sub_records = Vec::with_capacity(table.n_patients());
                let mut sub_assignment = Vec::with_capacity(table.n_patients());
                for id in table.patient_ids() {
                    let at = cohort
                        .ids
                        .iter()
                        .position(|c| c == id)
                        .expect("subset of cohort");
                    sub_records.push(cohort.survival[at]);
                    sub_assignment.push(assignment[at]);
                }
                let fit =
                    fit_modality_model(table, &sub_records, &sub_assignment, &radiomics_settings)
                        .stage("fit")?;
                let spread = spread_scores(&cohort.ids, table, &fit);
                fits.push(fit);
                Ok(spread)
            }
            None => Ok(vec![None; cohort.ids.len()]),
        }
    };
    let ct_scores = radiomics_scores(&cohort.ct_table)?;
    let pet_scores = radiomics_scores(&cohort.pet_table)?;

    let scores = fuse_risk(
        &cohort.ids,
        &clinical_scores,
        &ct_scores,
        &pet_scores,
        &cohort.has_primary,
        config.fusion,
    )
    .stage("fuse")?;
    let groups = stratify(&scores, config.stratification_threshold);

    let mut high = Vec::new();
    let mut low = Vec::new();
    for (record, group) in cohort.survival.iter().zip(groups.iter()) {
        match group {
            RiskGroup::High => high.push(*record),
            RiskGroup::Low => low.push(*record),
        }
    }
    let mut km_curves = Vec::new();
    if !high.is_empty() {
        km_curves.push(("high".to_string(), km_estimate(&high).stage("evaluate")?));
    }
    if !low.is_empty() {
        km_curves.push(("low".to_string(), km_estimate(&low).stage("evaluate")?));
    }
    let (logrank, degenerate) = if high.is_empty() || low.is_empty() {
        (None, true)
    } else {
        match logrank_test(&high, &low) {
            Ok(r) => (Some(LogRankSummary::from(r)), false),
            Err(survrad_core::Error::DegenerateTest(_)) => (None, true),
            Err(e) => return Err(e).stage("evaluate"),
        }
    };

    Ok(ModelPhase { fits, scores, groups, km_curves, logrank, degenerate })
}

/// Execute the full pipeline for `config` and write the report, risk-score
/// CSV, KM-curve CSV, and selection JSON into the output directory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    config.validate().stage("config")?;
    let provenance = Provenance::new(config.hash(), config.cv.seed);
    let cohort = load_cohort(config)?;
    let phase = model_phase(config, &cohort)?;

    let modalities = phase
        .fits
        .iter()
        .map(|fit| ModalityOutcome {
            modality: fit.modality,
            n_patients: fit.oof_scores.len(),
            oof_c_index: fit.oof_c_index,
            skipped_folds: fit.skipped_folds.clone(),
        })
        .collect();
    let fused: Vec<f64> = phase.scores.patients.iter().map(|p| p.fused).collect();
    let fused_c_index = concordance_index(&cohort.survival, &fused).ok();
    let selection: Vec<ModalitySelection> = phase
        .fits
        .iter()
        .map(|fit| ModalitySelection {
            modality: fit.modality,
            folds: fit.fold_reports.clone(),
        })
        .collect();

    let report = RunReport {
        provenance: provenance.clone(),
        modalities,
        fused_c_index,
        risk_groups: RiskGroupsReport {
            threshold: config.stratification_threshold,
            high_n: phase.groups.iter().filter(|g| **g == RiskGroup::High).count(),
            low_n: phase.groups.iter().filter(|g| **g == RiskGroup::Low).count(),
            logrank: phase.logrank,
            degenerate: phase.degenerate,
        },
        km_curves: phase
            .km_curves
            .iter()
            .map(|(g, c)| KmCurveReport::new(g, c))
            .collect(),
        dice: cohort.dice.clone(),
        node_filter: cohort.node_filter.clone(),
        selection,
    };

    ensure_dir(&config.output_dir, "write-outputs")?;
    let mut guard = OutputGuard::new();
    guard.write_json(&config.output_dir.join("report.json"), &report)?;

    let risk_path = config.output_dir.join("risk_scores.csv");
    write_risk_csv(&risk_path, &phase.scores, &phase.groups, &provenance).stage("write-outputs")?;
    guard.register(risk_path);

    let km_path = config.output_dir.join("km_curves.csv");
    write_km_csv(&km_path, &phase.km_curves, &provenance).stage("write-outputs")?;
    guard.register(km_path);

    #[derive(Serialize)]
    struct SelectionFile<'a> {
        provenance: &'a Provenance,
        selection: &'a [ModalitySelection],
    }
    guard.write_json(
        &config.output_dir.join("selection.json"),
        &SelectionFile { provenance: &provenance, selection: &report.selection },
    )?;

    guard.disarm();
    Ok(report)
}

// ── simulate ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct SimulateParams {
    pub patients: usize,
    pub betas: Vec<f64>,
    pub noise_features: usize,
    pub censoring_rate: f64,
    pub baseline_rate: f64,
    pub seed: u64,
    pub modalities: Vec<Modality>,
}

/// Generate a multi-modality cohort and write it in the pipeline's file
/// formats: `labels.csv` plus one `features_<modality>.csv` per modality.
pub fn simulate_stage(params: &SimulateParams, output_dir: &Path) -> Result<Vec<PathBuf>> {
    if params.modalities.is_empty() {
        return Err(ErrorKind::Config("at least one modality required".into())).stage("simulate");
    }
    let plans: Vec<ModalityPlan> = params
        .modalities
        .iter()
        .map(|&modality| ModalityPlan {
            modality,
            betas: params.betas.clone(),
            n_noise_features: params.noise_features,
        })
        .collect();
    let (tables, records) = generate_multimodal(
        params.patients,
        &plans,
        params.censoring_rate,
        params.baseline_rate,
        params.seed,
    )
    .stage("simulate")?;

    ensure_dir(output_dir, "simulate")?;
    let provenance = Provenance::new(hash_params(params), params.seed);
    let mut guard = OutputGuard::new();

    let labels_path = output_dir.join("labels.csv");
    let ids: Vec<String> = tables[0].patient_ids().to_vec();
    write_labels_csv(&labels_path, &ids, &records, &provenance).stage("simulate")?;
    guard.register(labels_path.clone());

    let mut written = vec![labels_path];
    for table in &tables {
        let name = format!("features_{}.csv", table.modality.to_string().to_lowercase());
        let path = output_dir.join(name);
        write_feature_table_csv(table, &path, &provenance).stage("simulate")?;
        guard.register(path.clone());
        written.push(path);
    }
    guard.disarm();
    Ok(written)
}

// ── postprocess ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct PostprocessPatient {
    pub patient_id: String,
    pub filter: FilterReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct PostprocessReport {
    pub provenance: Provenance,
    pub d_max_mm: f64,
    pub patients: Vec<PostprocessPatient>,
    pub dice: Option<DiceReport>,
}

/// Filter distant nodes in every mask of `volumes_dir`, writing filtered
/// masks, the removal report, and per-patient node statistics.
pub fn postprocess_stage(
    config: &PipelineConfig,
    volumes_dir: &Path,
    output_dir: &Path,
) -> Result<PostprocessReport> {
    let ids = discover_mask_patients(volumes_dir).stage("postprocess")?;
    ensure_dir(output_dir, "postprocess")?;
    let provenance = Provenance::new(config.hash(), config.cv.seed);
    let mut guard = OutputGuard::new();

    let mut patients = Vec::new();
    let mut stats_entries = Vec::new();
    let mut dice_rows = Vec::new();
    for id in &ids {
        let outcome = process_patient(config, volumes_dir, id, false)?;
        let out_path = mask_path(output_dir, id);
        write_labels(&outcome.filtered_mask, &out_path).stage_patient("postprocess", id)?;
        guard.register(out_path);
        stats_entries.push((id.clone(), outcome.stats));
        patients.push(PostprocessPatient { patient_id: id.clone(), filter: outcome.filter });
        if let Some(row) = outcome.dice_row {
            dice_rows.push(row);
        }
    }

    let report = PostprocessReport {
        provenance: provenance.clone(),
        d_max_mm: config.d_max_mm,
        patients,
        dice: dice_report(dice_rows),
    };
    guard.write_json(&output_dir.join("postprocess_report.json"), &report)?;
    let stats_path = output_dir.join("node_stats.csv");
    write_node_stats_csv(&stats_path, &stats_entries, &provenance).stage("postprocess")?;
    guard.register(stats_path);

    guard.disarm();
    Ok(report)
}

// ── features ─────────────────────────────────────────────────────────────

/// Extract CT and PET feature tables using masks from `masks_dir` (normally
/// the postprocess output) and scans from `volumes_dir`. Patients without a
/// primary-tumor region are left out of the tables.
pub fn features_stage(
    config: &PipelineConfig,
    volumes_dir: &Path,
    masks_dir: &Path,
    output_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let ids = discover_mask_patients(masks_dir).stage("features")?;
    ensure_dir(output_dir, "features")?;
    let provenance = Provenance::new(config.hash(), config.cv.seed);

    let mut ct_entries = Vec::new();
    let mut pet_entries = Vec::new();
    for id in &ids {
        let mask = read_labels(&mask_path(masks_dir, id)).stage_patient("features", id)?;
        let mask = resampled_mask(config, mask).stage_patient("features", id)?;
        let ct = read_scalar(&scan_path(volumes_dir, id, "ct")).stage_patient("features", id)?;
        let pet = read_scalar(&scan_path(volumes_dir, id, "pet")).stage_patient("features", id)?;
        let ct = prepared_scan(config, ct).stage_patient("features", id)?;
        let pet = prepared_scan(config, pet).stage_patient("features", id)?;
        match extract_all(&ct, &pet, &mask, &config.extraction) {
            Ok((ct_fv, pet_fv)) => {
                ct_entries.push((id.clone(), ct_fv));
                pet_entries.push((id.clone(), pet_fv));
            }
            Err(survrad_core::Error::NoTumor) => {}
            Err(e) => return Err(e).stage_patient("features", id),
        }
    }

    let mut guard = OutputGuard::new();
    let mut written = Vec::new();
    for (modality, entries) in [(Modality::Ct, &ct_entries), (Modality::Pet, &pet_entries)] {
        if let Some(table) = feature_table_from_vectors(modality, entries).stage("features")? {
            let path = output_dir
                .join(format!("features_{}.csv", modality.to_string().to_lowercase()));
            write_feature_table_csv(&table, &path, &provenance).stage("features")?;
            guard.register(path.clone());
            written.push(path);
        }
    }
    guard.disarm();
    Ok(written)
}

// ── evaluate ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct EvaluateReport {
    pub provenance: Provenance,
    pub column: String,
    /// Patients in the labels file.
    pub n: usize,
    /// Patients that carried a score in the chosen column.
    pub n_scored: usize,
    pub c_index: f64,
}

/// Concordance of one risk-CSV column against a labels file.
pub fn evaluate_stage(
    risk_csv: &Path,
    labels_csv: &Path,
    column: &str,
    output: Option<&Path>,
) -> Result<EvaluateReport> {
    let rows = read_risk_csv(risk_csv).stage("evaluate")?;
    let (ids, survival) = read_labels_csv(labels_csv).stage("evaluate")?;

    let mut records = Vec::new();
    let mut scores = Vec::new();
    for (id, record) in ids.iter().zip(survival.iter()) {
        let row = rows
            .iter()
            .find(|r| &r.patient_id == id)
            .ok_or_else(|| ErrorKind::Schema(format!("patient '{id}' missing from risk file")))
            .stage("evaluate")?;
        let score = match column {
            "fused" => Some(row.fused),
            "clinical" => row.clinical,
            "ct" => row.ct,
            "pet" => row.pet,
            other => {
                return Err(ErrorKind::Config(format!(
                    "unknown risk column '{other}' (expected clinical, ct, pet, or fused)"
                )))
                .stage("evaluate")
            }
        };
        if let Some(score) = score {
            records.push(*record);
            scores.push(score);
        }
    }
    let c_index = concordance_index(&records, &scores).stage("evaluate")?;

    #[derive(Serialize)]
    struct Params<'a> {
        risk: &'a Path,
        labels: &'a Path,
        column: &'a str,
    }
    let report = EvaluateReport {
        provenance: Provenance::new(
            hash_params(&Params { risk: risk_csv, labels: labels_csv, column }),
            0,
        ),
        column: column.to_string(),
        n: ids.len(),
        n_scored: scores.len(),
        c_index,
    };
    if let Some(path) = output {
        let mut guard = OutputGuard::new();
        guard.write_json(path, &report)?;
        guard.disarm();
    }
    Ok(report)
}

// ── km ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct KmStageReport {
    pub provenance: Provenance,
    pub groups: Vec<KmCurveReport>,
    pub logrank: Option<LogRankSummary>,
    pub degenerate: bool,
}

/// Kaplan–Meier curves plus the log-rank test for two labeled group files.
pub fn km_stage(group_a: &Path, group_b: &Path, output: Option<&Path>) -> Result<KmStageReport> {
    let (_, records_a) = read_labels_csv(group_a).stage("km")?;
    let (_, records_b) = read_labels_csv(group_b).stage("km")?;
    let curve_a = km_estimate(&records_a).stage("km")?;
    let curve_b = km_estimate(&records_b).stage("km")?;
    let (logrank, degenerate) = match logrank_test(&records_a, &records_b) {
        Ok(r) => (Some(LogRankSummary::from(r)), false),
        Err(survrad_core::Error::DegenerateTest(_)) => (None, true),
        Err(e) => return Err(e).stage("km"),
    };

    #[derive(Serialize)]
    struct Params<'a> {
        group_a: &'a Path,
        group_b: &'a Path,
    }
    let report = KmStageReport {
        provenance: Provenance::new(hash_params(&Params { group_a, group_b }), 0),
        groups: vec![
            KmCurveReport::new("a", &curve_a),
            KmCurveReport::new("b", &curve_b),
        ],
        logrank,
        degenerate,
    };
    if let Some(path) = output {
        let mut guard = OutputGuard::new();
        guard.write_json(path, &report)?;
        guard.disarm();
    }
    Ok(report)
}
