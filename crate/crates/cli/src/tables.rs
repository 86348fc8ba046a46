//! Feature-table, node-statistics, risk-score, and KM-curve CSV formats.
//!
//! All files start with a `#` provenance comment. Floats are written with
//! Rust's shortest round-trip formatting, so a write/read cycle is
//! bit-exact.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use survrad_core::pipeline::{FeatureTable, RiskGroup, RiskScores};
use survrad_core::radiomics::Modality;
use survrad_core::survstat::KmCurve;
use survrad_core::volume::NodeStatistics;

use crate::error::{ErrorKind, KindResult};
use crate::provenance::Provenance;

fn open_with_provenance(path: &Path, provenance: &Provenance) -> KindResult<csv::Writer<std::fs::File>> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(provenance.comment_line().as_bytes())?;
    Ok(csv::Writer::from_writer(file))
}

fn reader(path: &Path) -> KindResult<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(ErrorKind::from)?)
}

fn record_line(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn parse_f64(cell: &str, line: usize, what: &str) -> KindResult<f64> {
    cell.parse().map_err(|_| ErrorKind::Parse {
        line,
        message: format!("non-numeric {what} '{cell}'"),
    })
}

/// `patient_id,<feature>,...` with one row per patient.
pub fn write_feature_table_csv(
    table: &FeatureTable,
    path: &Path,
    provenance: &Provenance,
) -> KindResult<()> {
    let mut wtr = open_with_provenance(path, provenance)?;
    let mut header = vec!["patient_id".to_string()];
    header.extend(table.feature_names().iter().cloned());
    wtr.write_record(&header).map_err(ErrorKind::from)?;
    for (row, id) in table.patient_ids().iter().enumerate() {
        let mut cells = vec![id.clone()];
        for col in 0..table.n_features() {
            cells.push(format!("{}", table.values()[[row, col]]));
        }
        wtr.write_record(&cells).map_err(ErrorKind::from)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_feature_table_csv(path: &Path, modality: Modality) -> KindResult<FeatureTable> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(ErrorKind::from)?.clone();
    if headers.get(0) != Some("patient_id") {
        return Err(ErrorKind::Schema(format!(
            "feature table must start with a patient_id column, got {:?}",
            headers.get(0)
        )));
    }
    let feature_names: Vec<String> = headers.iter().skip(1).map(|s| s.to_string()).collect();
    if feature_names.is_empty() {
        return Err(ErrorKind::Schema("feature table has no feature columns".into()));
    }
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(ErrorKind::from)?;
        let line = record_line(&row);
        if row.len() != feature_names.len() + 1 {
            return Err(ErrorKind::Parse {
                line,
                message: format!("expected {} cells, got {}", feature_names.len() + 1, row.len()),
            });
        }
        ids.push(row.get(0).unwrap_or("").to_string());
        let mut values = Vec::with_capacity(feature_names.len());
        for (i, name) in feature_names.iter().enumerate() {
            values.push(parse_f64(row.get(i + 1).unwrap_or(""), line, name)?);
        }
        rows.push(values);
    }
    if ids.is_empty() {
        return Err(ErrorKind::Schema("feature table holds no data rows".into()));
    }
    let mut values = Array2::zeros((ids.len(), feature_names.len()));
    for (r, row) in rows.into_iter().enumerate() {
        for (c, v) in row.into_iter().enumerate() {
            values[[r, c]] = v;
        }
    }
    FeatureTable::new(modality, ids, feature_names, values).map_err(ErrorKind::from)
}

const NODE_STATS_COLUMNS: [&str; 7] = [
    "patient_id",
    "primary_count",
    "primary_volume_ml",
    "node_count",
    "node_total_volume_ml",
    "smallest_node_volume_ml",
    "node_distances_mm",
];

/// Per-patient node geometry; the distance list is `;`-separated, the
/// smallest-node column is empty when the patient has no nodes.
pub fn write_node_stats_csv(
    path: &Path,
    entries: &[(String, NodeStatistics)],
    provenance: &Provenance,
) -> KindResult<()> {
    let mut wtr = open_with_provenance(path, provenance)?;
    wtr.write_record(NODE_STATS_COLUMNS).map_err(ErrorKind::from)?;
    for (id, stats) in entries {
        let distances = stats
            .node_distances_mm
            .iter()
            .map(|d| format!("{d}"))
            .collect::<Vec<_>>()
            .join(";");
        wtr.write_record([
            id.as_str(),
            &format!("{}", stats.primary_count),
            &format!("{}", stats.primary_volume_ml),
            &format!("{}", stats.node_count),
            &format!("{}", stats.node_total_volume_ml),
            &stats
                .smallest_node_volume_ml
                .map_or(String::new(), |v| format!("{v}")),
            &distances,
        ])
        .map_err(ErrorKind::from)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_node_stats_csv(path: &Path) -> KindResult<Vec<(String, NodeStatistics)>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(ErrorKind::from)?.clone();
    let mut idx = Vec::new();
    let mut missing = Vec::new();
    for name in NODE_STATS_COLUMNS {
        match headers.iter().position(|h| h == name) {
            Some(i) => idx.push(i),
            None => missing.push(name),
        }
    }
    if !missing.is_empty() {
        return Err(ErrorKind::Schema(format!(
            "missing required columns: {}",
            missing.join(", ")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(ErrorKind::from)?;
        let line = record_line(&row);
        let cell = |i: usize| row.get(idx[i]).unwrap_or("");
        let smallest = match cell(5) {
            "" => None,
            raw => Some(parse_f64(raw, line, "smallest_node_volume_ml")?),
        };
        let distances = match cell(6) {
            "" => Vec::new(),
            raw => raw
                .split(';')
                .map(|d| parse_f64(d, line, "node distance"))
                .collect::<KindResult<Vec<f64>>>()?,
        };
        out.push((
            cell(0).to_string(),
            NodeStatistics {
                primary_count: parse_f64(cell(1), line, "primary_count")? as usize,
                primary_volume_ml: parse_f64(cell(2), line, "primary_volume_ml")?,
                node_count: parse_f64(cell(3), line, "node_count")? as usize,
                node_total_volume_ml: parse_f64(cell(4), line, "node_total_volume_ml")?,
                smallest_node_volume_ml: smallest,
                node_distances_mm: distances,
            },
        ));
    }
    Ok(out)
}

/// `patient_id,clinical,ct,pet,fused,has_primary,risk_group`; absent
/// modality scores are empty cells.
pub fn write_risk_csv(
    path: &Path,
    scores: &RiskScores,
    groups: &[RiskGroup],
    provenance: &Provenance,
) -> KindResult<()> {
    let mut wtr = open_with_provenance(path, provenance)?;
    wtr.write_record(["patient_id", "clinical", "ct", "pet", "fused", "has_primary", "risk_group"])
        .map_err(ErrorKind::from)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    for (p, group) in scores.patients.iter().zip(groups.iter()) {
        wtr.write_record([
            p.patient_id.as_str(),
            &opt(p.clinical),
            &opt(p.ct),
            &opt(p.pet),
            &format!("{}", p.fused),
            if p.has_primary { "1" } else { "0" },
            &group.to_string(),
        ])
        .map_err(ErrorKind::from)?;
    }
    wtr.flush()?;
    Ok(())
}

/// One parsed row of the risk CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskRow {
    pub patient_id: String,
    pub clinical: Option<f64>,
    pub ct: Option<f64>,
    pub pet: Option<f64>,
    pub fused: f64,
    pub has_primary: bool,
    pub risk_group: String,
}

pub fn read_risk_csv(path: &Path) -> KindResult<Vec<RiskRow>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(ErrorKind::from)?.clone();
    let required = ["patient_id", "clinical", "ct", "pet", "fused", "has_primary", "risk_group"];
    let mut idx = Vec::new();
    let mut missing = Vec::new();
    for name in required {
        match headers.iter().position(|h| h == name) {
            Some(i) => idx.push(i),
            None => missing.push(name),
        }
    }
    if !missing.is_empty() {
        return Err(ErrorKind::Schema(format!(
            "missing required columns: {}",
            missing.join(", ")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(ErrorKind::from)?;
        let line = record_line(&row);
        let cell = |i: usize| row.get(idx[i]).unwrap_or("");
        let optional = |raw: &str, what: &str| -> KindResult<Option<f64>> {
            match raw {
                "" => Ok(None),
                v => Ok(Some(parse_f64(v, line, what)?)),
            }
        };
        out.push(RiskRow {
            patient_id: cell(0).to_string(),
            clinical: optional(cell(1), "clinical")?,
            ct: optional(cell(2), "ct")?,
            pet: optional(cell(3), "pet")?,
            fused: parse_f64(cell(4), line, "fused")?,
            has_primary: cell(5) == "1",
            risk_group: cell(6).to_string(),
        });
    }
    Ok(out)
}

/// `group,time,survival,at_risk,std_err`, one row per KM step.
pub fn write_km_csv(
    path: &Path,
    curves: &[(String, KmCurve)],
    provenance: &Provenance,
) -> KindResult<()> {
    let mut wtr = open_with_provenance(path, provenance)?;
    wtr.write_record(["group", "time", "survival", "at_risk", "std_err"])
        .map_err(ErrorKind::from)?;
    for (group, curve) in curves {
        for i in 0..curve.event_times.len() {
            wtr.write_record([
                group.as_str(),
                &format!("{}", curve.event_times[i]),
                &format!("{}", curve.survival[i]),
                &format!("{}", curve.at_risk[i]),
                &format!("{}", curve.std_err[i]),
            ])
            .map_err(ErrorKind::from)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use survrad_core::pipeline::PatientRisk;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("survrad-tables-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn prov() -> Provenance {
        Provenance::new("cafe".into(), 3)
    }

    #[test]
    fn feature_table_round_trip_is_bit_exact() {
        let values = Array2::from_shape_vec(
            (2, 3),
            vec![0.1 + 0.2, -7.25, 1e-17, std::f64::consts::PI, 0.0, -0.0],
        )
        .unwrap();
        let table = FeatureTable::new(
            Modality::Ct,
            vec!["a".into(), "b".into()],
            vec!["f1".into(), "f2".into(), "f3".into()],
            values,
        )
        .unwrap();
        let path = tmpdir().join("features.csv");
        write_feature_table_csv(&table, &path, &prov()).unwrap();
        let back = read_feature_table_csv(&path, Modality::Ct).unwrap();
        assert_eq!(back.patient_ids(), table.patient_ids());
        assert_eq!(back.feature_names(), table.feature_names());
        for (a, b) in table.values().iter().zip(back.values().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn node_stats_round_trip() {
        let entries = vec![
            (
                "a".to_string(),
                NodeStatistics {
                    primary_count: 1,
                    primary_volume_ml: 12.5,
                    node_count: 2,
                    node_total_volume_ml: 3.75,
                    smallest_node_volume_ml: Some(1.25),
                    node_distances_mm: vec![40.0, 81.5],
                },
            ),
            (
                "b".to_string(),
                NodeStatistics {
                    primary_count: 0,
                    primary_volume_ml: 0.0,
                    node_count: 0,
                    node_total_volume_ml: 0.0,
                    smallest_node_volume_ml: None,
                    node_distances_mm: vec![],
                },
            ),
        ];
        let path = tmpdir().join("node_stats.csv");
        write_node_stats_csv(&path, &entries, &prov()).unwrap();
        let back = read_node_stats_csv(&path).unwrap();
        assert_eq!(back, entries);
    }

    #[test]
    fn risk_csv_round_trip() {
        let scores = RiskScores {
            patients: vec![
                PatientRisk {
                    patient_id: "a".into(),
                    clinical: Some(0.5),
                    ct: Some(-0.25),
                    pet: None,
                    fused: 0.125,
                    has_primary: true,
                },
                PatientRisk {
                    patient_id: "b".into(),
                    clinical: Some(-1.5),
                    ct: None,
                    pet: None,
                    fused: -1.5,
                    has_primary: false,
                },
            ],
        };
        let groups = vec![RiskGroup::High, RiskGroup::Low];
        let path = tmpdir().join("risk.csv");
        write_risk_csv(&path, &scores, &groups, &prov()).unwrap();
        let rows = read_risk_csv(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].fused, 0.125);
        assert_eq!(rows[0].pet, None);
        assert_eq!(rows[0].risk_group, "high");
        assert!(!rows[1].has_primary);
    }
}
