//! Seeded cross-validation plans.
//!
//! Fold membership is a pure function of (seed, repeat, patient id): each
//! repeat sorts patients by a stable 64-bit hash of those three and deals
//! them into folds round-robin. Plans built from the same ids under any row
//! permutation therefore assign every patient to the same fold.

use serde::Serialize;

use crate::error::{Error, Result};

/// Partition of the cohort into `k` folds, repeated `repeats` times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvPlan {
    pub k: usize,
    pub repeats: usize,
    pub seed: u64,
    patient_ids: Vec<String>,
    /// `fold_of[repeat][row] = fold index` for the row order of `patient_ids`.
    fold_of: Vec<Vec<u32>>,
}

impl CvPlan {
    pub fn patient_ids(&self) -> &[String] {
        &self.patient_ids
    }

    /// Fold index per patient row for one repeat.
    pub fn fold_assignment(&self, repeat: usize) -> &[u32] {
        &self.fold_of[repeat]
    }

    /// Member rows of each fold for one repeat.
    pub fn folds(&self, repeat: usize) -> Vec<Vec<usize>> {
        let mut folds = vec![Vec::new(); self.k];
        for (row, &f) in self.fold_of[repeat].iter().enumerate() {
            folds[f as usize].push(row);
        }
        folds
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

fn assignment_key(seed: u64, repeat: u64, id: &str) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(repeat.wrapping_add(1))) ^ fnv1a64(id.as_bytes()))
}

/// Build a seeded `repeats x k`-fold plan over the given patients.
///
/// Fold sizes differ by at most one. Identical `(ids, k, repeats, seed)`
/// always produce the identical plan.
pub fn make_cv_plan(patient_ids: &[String], k: usize, repeats: usize, seed: u64) -> Result<CvPlan> {
    let n = patient_ids.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "need at least k = {k} patients, got {n}"
        )));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for id in patient_ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Ingestion(format!("duplicate patient id '{id}'")));
        }
    }

    let mut fold_of = Vec::with_capacity(repeats);
    for repeat in 0..repeats {
        let mut keyed: Vec<(u64, usize)> = patient_ids
            .iter()
            .enumerate()
            .map(|(row, id)| (assignment_key(seed, repeat as u64, id), row))
            .collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| patient_ids[a.1].cmp(&patient_ids[b.1])));
        let mut assignment = vec![0u32; n];
        for (position, (_, row)) in keyed.into_iter().enumerate() {
            assignment[row] = (position % k) as u32;
        }
        fold_of.push(assignment);
    }

    Ok(CvPlan {
        k,
        repeats,
        seed,
        patient_ids: patient_ids.to_vec(),
        fold_of,
    })
}
