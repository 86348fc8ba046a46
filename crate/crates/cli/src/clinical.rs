//! Clinical and label CSV ingestion.
//!
//! Clinical schema (header required, extra columns tolerated):
//! `patient_id,gender,age,tobacco,alcohol,performance_status,hpv_status,surgery,chemotherapy,rfs_months,event`
//! Status cells hold `1` (positive), `0` (negative), or are empty (missing).
//! The labels schema is `patient_id,rfs_months,event`. Lines starting with
//! `#` are provenance comments and are skipped.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use survrad_core::pipeline::{ClinicalRecord, Status};
use survrad_core::survstat::SurvivalRecord;

use crate::error::{ErrorKind, KindResult};
use crate::provenance::Provenance;

const CLINICAL_COLUMNS: [&str; 11] = [
    "patient_id",
    "gender",
    "age",
    "tobacco",
    "alcohol",
    "performance_status",
    "hpv_status",
    "surgery",
    "chemotherapy",
    "rfs_months",
    "event",
];

fn reader(path: &Path) -> KindResult<csv::Reader<std::fs::File>> {
    let rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(ErrorKind::from)?;
    Ok(rdr)
}

fn column_map(headers: &csv::StringRecord, required: &[&str]) -> KindResult<Vec<usize>> {
    let mut indices = Vec::with_capacity(required.len());
    let mut missing = Vec::new();
    for name in required {
        match headers.iter().position(|h| h == *name) {
            Some(i) => indices.push(i),
            None => missing.push(*name),
        }
    }
    if !missing.is_empty() {
        return Err(ErrorKind::Schema(format!(
            "missing required columns: {}",
            missing.join(", ")
        )));
    }
    Ok(indices)
}

fn record_line(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn parse_status(cell: &str, column: &str, line: usize) -> KindResult<Status> {
    match cell {
        "" => Ok(Status::Missing),
        "1" => Ok(Status::Positive),
        "0" => Ok(Status::Negative),
        other => Err(ErrorKind::Parse {
            line,
            message: format!("{column} must be 0, 1, or empty; got '{other}'"),
        }),
    }
}

fn parse_time(cell: &str, line: usize) -> KindResult<f64> {
    let time: f64 = cell.parse().map_err(|_| ErrorKind::Parse {
        line,
        message: format!("non-numeric rfs_months '{cell}'"),
    })?;
    if !time.is_finite() || time <= 0.0 {
        return Err(ErrorKind::Validation(format!(
            "line {line}: rfs_months must be > 0, got {time}"
        )));
    }
    Ok(time)
}

fn parse_event(cell: &str, line: usize) -> KindResult<bool> {
    match cell {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(ErrorKind::Parse {
            line,
            message: format!("event must be 0 or 1; got '{other}'"),
        }),
    }
}

/// Read the full clinical schema with survival outcome columns.
pub fn read_clinical_csv(path: &Path) -> KindResult<(Vec<ClinicalRecord>, Vec<SurvivalRecord>)> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(ErrorKind::from)?.clone();
    let idx = column_map(&headers, &CLINICAL_COLUMNS)?;

    let mut seen = BTreeSet::new();
    let mut clinical = Vec::new();
    let mut survival = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(ErrorKind::from)?;
        let line = record_line(&row);
        let cell = |i: usize| row.get(idx[i]).unwrap_or("");

        let patient_id = cell(0).to_string();
        if patient_id.is_empty() {
            return Err(ErrorKind::Parse { line, message: "empty patient_id".into() });
        }
        if !seen.insert(patient_id.clone()) {
            return Err(ErrorKind::Validation(format!(
                "duplicate patient id '{patient_id}' at line {line}"
            )));
        }

        let age = match cell(2) {
            "" => None,
            raw => Some(raw.parse::<f64>().map_err(|_| ErrorKind::Parse {
                line,
                message: format!("non-numeric age '{raw}'"),
            })?),
        };

        clinical.push(ClinicalRecord {
            patient_id,
            gender: parse_status(cell(1), "gender", line)?,
            age,
            tobacco: parse_status(cell(3), "tobacco", line)?,
            alcohol: parse_status(cell(4), "alcohol", line)?,
            performance_status: parse_status(cell(5), "performance_status", line)?,
            hpv_status: parse_status(cell(6), "hpv_status", line)?,
            surgery: parse_status(cell(7), "surgery", line)?,
            chemotherapy: parse_status(cell(8), "chemotherapy", line)?,
        });
        survival.push(SurvivalRecord {
            time: parse_time(cell(9), line)?,
            event: parse_event(cell(10), line)?,
        });
    }
    if clinical.is_empty() {
        return Err(ErrorKind::Schema("clinical file holds no data rows".into()));
    }
    Ok((clinical, survival))
}

/// Read the bare outcome schema `patient_id,rfs_months,event`.
pub fn read_labels_csv(path: &Path) -> KindResult<(Vec<String>, Vec<SurvivalRecord>)> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(ErrorKind::from)?.clone();
    let idx = column_map(&headers, &["patient_id", "rfs_months", "event"])?;

    let mut seen = BTreeSet::new();
    let mut ids = Vec::new();
    let mut survival = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(ErrorKind::from)?;
        let line = record_line(&row);
        let cell = |i: usize| row.get(idx[i]).unwrap_or("");
        let patient_id = cell(0).to_string();
        if !seen.insert(patient_id.clone()) {
            return Err(ErrorKind::Validation(format!(
                "duplicate patient id '{patient_id}' at line {line}"
            )));
        }
        ids.push(patient_id);
        survival.push(SurvivalRecord {
            time: parse_time(cell(1), line)?,
            event: parse_event(cell(2), line)?,
        });
    }
    if ids.is_empty() {
        return Err(ErrorKind::Schema("labels file holds no data rows".into()));
    }
    Ok((ids, survival))
}

/// Write the outcome schema with a provenance comment.
pub fn write_labels_csv(
    path: &Path,
    ids: &[String],
    records: &[SurvivalRecord],
    provenance: &Provenance,
) -> KindResult<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(provenance.comment_line().as_bytes())?;
    let mut wtr = csv::Writer::from_writer(file);
    wtr.write_record(["patient_id", "rfs_months", "event"])
        .map_err(ErrorKind::from)?;
    for (id, r) in ids.iter().zip(records.iter()) {
        wtr.write_record([
            id.as_str(),
            &format!("{}", r.time),
            if r.event { "1" } else { "0" },
        ])
        .map_err(ErrorKind::from)?;
    }
    wtr.flush()?;
    Ok(())
}
