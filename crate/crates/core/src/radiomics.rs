//! Radiomics feature extraction over a labeled region.
//!
//! First-order intensity statistics, exposed-face shape descriptors, and
//! gray-level co-occurrence (GLCM) texture features, computed on the
//! primary-tumor region of CT and PET volumes. Intensities are discretized
//! into fixed-width bins anchored at the region minimum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, ScalarVolume, LABEL_PRIMARY};

/// Which image (or table) a feature vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "clinical")]
    Clinical,
    #[serde(rename = "CT")]
    Ct,
    #[serde(rename = "PET")]
    Pet,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Clinical => "clinical",
            Modality::Ct => "CT",
            Modality::Pet => "PET",
        })
    }
}

/// Extraction controls. Defaults: bin width 25 intensity units, distance-1
/// symmetric GLCM over the 13 unique 3D offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSettings {
    pub bin_width: f64,
    pub glcm_distance: usize,
    pub symmetric_glcm: bool,
}

impl Default for ExtractionSettings {
    fn default() -> Self {
        Self {
            bin_width: 25.0,
            glcm_distance: 1,
            symmetric_glcm: true,
        }
    }
}

impl ExtractionSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0) || !self.bin_width.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bin_width must be positive, got {}",
                self.bin_width
            )));
        }
        if self.glcm_distance == 0 {
            return Err(Error::InvalidArgument("glcm_distance must be >= 1".into()));
        }
        Ok(())
    }
}

/// The 13 unique 3D offsets (one per direction pair).
pub const GLCM_OFFSETS: [[i64; 3]; 13] = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 0],
    [1, -1, 0],
    [1, 0, 1],
    [1, 0, -1],
    [0, 1, 1],
    [0, 1, -1],
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
];

/// Ordered (name, value) pairs for one modality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureVector {
    pub modality: Modality,
    names: Vec<String>,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(modality: Modality) -> Self {
        Self {
            modality,
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "feature '{name}' is non-finite ({value})"
            )));
        }
        if self.names.iter().any(|n| n == name) {
            return Err(Error::InvalidArgument(format!("duplicate feature name '{name}'")));
        }
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Append all features of `other` (same modality, disjoint names).
    pub fn extend(&mut self, other: &FeatureVector) -> Result<()> {
        if other.modality != self.modality {
            return Err(Error::InvalidArgument("modality mismatch in feature concat".into()));
        }
        for (n, v) in other.names.iter().zip(other.values.iter()) {
            self.push(n, *v)?;
        }
        Ok(())
    }
}

/// 1-based bin index per value: `floor((v - min) / bin_width) + 1`.
/// Bins are anchored at the minimum, so a constant intensity shift leaves
/// the result unchanged.
pub fn discretize(values: &[f64], bin_width: f64) -> Result<Vec<u32>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("cannot discretize an empty list".into()));
    }
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bin_width must be positive, got {bin_width}"
        )));
    }
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(values
        .iter()
        .map(|v| ((v - min) / bin_width).floor() as u32 + 1)
        .collect())
}

fn masked_values(vol: &ScalarVolume, mask: &LabelVolume, class_label: u8) -> Result<Vec<f64>> {
    if vol.dims() != mask.dims() {
        return Err(Error::ShapeMismatch(format!(
            "volume dims {:?} vs mask dims {:?}",
            vol.dims(),
            mask.dims()
        )));
    }
    let values: Vec<f64> = vol
        .values()
        .iter()
        .zip(mask.labels().iter())
        .filter(|(_, &l)| l == class_label)
        .map(|(&v, _)| v)
        .collect();
    if values.is_empty() {
        return Err(Error::EmptyRegion(format!("mask class {class_label} is empty")));
    }
    Ok(values)
}

/// Percentile by linear interpolation between closest ranks of the sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = p / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac
    }
}

/// Intensity statistics over the masked region.
///
/// Variance and the higher moments use population normalization; skewness
/// and excess kurtosis of a zero-variance region are reported as 0. Entropy
/// is computed over the discretized bins in log base 2.
pub fn first_order_features(
    vol: &ScalarVolume,
    mask: &LabelVolume,
    class_label: u8,
    settings: &ExtractionSettings,
    modality: Modality,
) -> Result<FeatureVector> {
    settings.validate()?;
    let values = masked_values(vol, mask, class_label)?;
    let n = values.len() as f64;

    let mean = values.iter().sum::<f64>() / n;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    let mut mad = 0.0;
    for v in &values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        mad += d.abs();
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    mad /= n;
    let std = m2.sqrt();
    let skewness = if m2 > 0.0 { m3 / (m2 * std) } else { 0.0 };
    let kurtosis = if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 };

    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let minimum = sorted[0];
    let maximum = sorted[sorted.len() - 1];
    let median = percentile(&sorted, 50.0);
    let p10 = percentile(&sorted, 10.0);
    let p90 = percentile(&sorted, 90.0);
    let iqr = percentile(&sorted, 75.0) - percentile(&sorted, 25.0);

    let energy: f64 = values.iter().map(|v| v * v).sum();
    let rms = (energy / n).sqrt();

    let bins = discretize(&values, settings.bin_width)?;
    let max_bin = *bins.iter().max().unwrap() as usize;
    let mut counts = vec![0usize; max_bin];
    for b in &bins {
        counts[(*b - 1) as usize] += 1;
    }
    let entropy: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();

    let mut out = FeatureVector::new(modality);
    out.push("firstorder_mean", mean)?;
    out.push("firstorder_median", median)?;
    out.push("firstorder_minimum", minimum)?;
    out.push("firstorder_maximum", maximum)?;
    out.push("firstorder_range", maximum - minimum)?;
    out.push("firstorder_variance", m2)?;
    out.push("firstorder_std", std)?;
    out.push("firstorder_skewness", skewness)?;
    out.push("firstorder_kurtosis", kurtosis)?;
    out.push("firstorder_energy", energy)?;
    out.push("firstorder_rms", rms)?;
    out.push("firstorder_mad", mad)?;
    out.push("firstorder_p10", p10)?;
    out.push("firstorder_p90", p90)?;
    out.push("firstorder_iqr", iqr)?;
    out.push("firstorder_entropy", entropy)?;
    Ok(out)
}

/// Volume, exposed-face surface area, their ratio, and sphericity.
///
/// The surface estimator counts voxel faces adjacent to background or the
/// volume boundary; it is exact for digital shapes and overestimates smooth
/// surfaces.
pub fn shape_features(
    mask: &LabelVolume,
    class_label: u8,
    modality: Modality,
) -> Result<FeatureVector> {
    let [nx, ny, nz] = mask.dims();
    let [sx, sy, sz] = mask.spacing();
    let mut count = 0usize;
    let mut surface = 0.0_f64;
    let face_area = [sy * sz, sx * sz, sx * sy];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if mask.label(i, j, k) != class_label {
                    continue;
                }
                count += 1;
                let pos = [i as i64, j as i64, k as i64];
                let nd = [nx as i64, ny as i64, nz as i64];
                for axis in 0..3 {
                    for step in [-1i64, 1] {
                        let mut nb = pos;
                        nb[axis] += step;
                        let exposed = nb[axis] < 0
                            || nb[axis] >= nd[axis]
                            || mask.label(nb[0] as usize, nb[1] as usize, nb[2] as usize)
                                != class_label;
                        if exposed {
                            surface += face_area[axis];
                        }
                    }
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyRegion(format!("mask class {class_label} is empty")));
    }
    let volume_mm3 = count as f64 * mask.voxel_volume_mm3();
    let sphericity =
        std::f64::consts::PI.powf(1.0 / 3.0) * (6.0 * volume_mm3).powf(2.0 / 3.0) / surface;

    let mut out = FeatureVector::new(modality);
    out.push("shape_volume_ml", volume_mm3 / 1000.0)?;
    out.push("shape_surface_mm2", surface)?;
    out.push("shape_surface_to_volume", surface / volume_mm3)?;
    out.push("shape_sphericity", sphericity)?;
    Ok(out)
}

/// Normalized co-occurrence matrix for one offset.
#[derive(Debug, Clone, PartialEq)]
pub struct GlcmMatrix {
    pub offset: [i64; 3],
    /// Number of gray levels (largest bin index in the region).
    pub levels: usize,
    /// Ordered pair count before normalization.
    pub pairs: usize,
    /// Joint probabilities, row-major `levels x levels`; empty when no pair
    /// exists at this offset.
    pub p: Vec<f64>,
}

impl GlcmMatrix {
    #[inline]
    pub fn prob(&self, a: usize, b: usize) -> f64 {
        self.p[a * self.levels + b]
    }
}

/// Co-occurrence matrices at the 13 offsets scaled by the configured
/// distance. Pairs are counted in both directions when `symmetric_glcm` is
/// set; each matrix is normalized to total probability 1.
pub fn glcm_matrices(
    vol: &ScalarVolume,
    mask: &LabelVolume,
    class_label: u8,
    settings: &ExtractionSettings,
) -> Result<Vec<GlcmMatrix>> {
    settings.validate()?;
    let region = masked_values(vol, mask, class_label)?;
    let region_bins = discretize(&region, settings.bin_width)?;
    let levels = *region_bins.iter().max().unwrap() as usize;

    // bin per voxel, 0 outside the region
    let mut bin_of = vec![0u32; vol.voxel_count()];
    let mut cursor = 0usize;
    for (idx, &l) in mask.labels().iter().enumerate() {
        if l == class_label {
            bin_of[idx] = region_bins[cursor];
            cursor += 1;
        }
    }

    let [nx, ny, nz] = vol.dims();
    let nd = [nx as i64, ny as i64, nz as i64];
    let dist = settings.glcm_distance as i64;
    let mut out = Vec::with_capacity(GLCM_OFFSETS.len());
    for base in GLCM_OFFSETS {
        let offset = [base[0] * dist, base[1] * dist, base[2] * dist];
        let mut counts = vec![0u64; levels * levels];
        let mut pairs = 0usize;
        for k in 0..nz {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = i + nx * (j + ny * k);
                    let a = bin_of[idx];
                    if a == 0 {
                        continue;
                    }
                    let q = [i as i64 + offset[0], j as i64 + offset[1], k as i64 + offset[2]];
                    if q.iter().zip(nd.iter()).any(|(&c, &n)| c < 0 || c >= n) {
                        continue;
                    }
                    let qidx = q[0] as usize + nx * (q[1] as usize + ny * q[2] as usize);
                    let b = bin_of[qidx];
                    if b == 0 {
                        continue;
                    }
                    let (a, b) = ((a - 1) as usize, (b - 1) as usize);
                    counts[a * levels + b] += 1;
                    pairs += 1;
                    if settings.symmetric_glcm {
                        counts[b * levels + a] += 1;
                        pairs += 1;
                    }
                }
            }
        }
        let p = if pairs > 0 {
            counts.iter().map(|&c| c as f64 / pairs as f64).collect()
        } else {
            Vec::new()
        };
        out.push(GlcmMatrix { offset, levels, pairs, p });
    }
    Ok(out)
}

struct GlcmStats {
    joint_energy: f64,
    joint_entropy: f64,
    contrast: f64,
    correlation: f64,
    inverse_difference_moment: f64,
    autocorrelation: f64,
    cluster_shade: f64,
    cluster_prominence: f64,
}

fn glcm_stats(m: &GlcmMatrix) -> GlcmStats {
    let levels = m.levels;
    let mut mu_a = 0.0;
    let mut mu_b = 0.0;
    for a in 0..levels {
        for b in 0..levels {
            let p = m.prob(a, b);
            mu_a += p * (a + 1) as f64;
            mu_b += p * (b + 1) as f64;
        }
    }
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    let mut joint_energy = 0.0;
    let mut joint_entropy = 0.0;
    let mut contrast = 0.0;
    let mut covariance = 0.0;
    let mut idm = 0.0;
    let mut autocorrelation = 0.0;
    let mut cluster_shade = 0.0;
    let mut cluster_prominence = 0.0;
    for a in 0..levels {
        for b in 0..levels {
            let p = m.prob(a, b);
            if p == 0.0 {
                continue;
            }
            let (ga, gb) = ((a + 1) as f64, (b + 1) as f64);
            let diff = ga - gb;
            joint_energy += p * p;
            joint_entropy -= p * p.log2();
            contrast += p * diff * diff;
            covariance += p * (ga - mu_a) * (gb - mu_b);
            var_a += p * (ga - mu_a) * (ga - mu_a);
            var_b += p * (gb - mu_b) * (gb - mu_b);
            idm += p / (1.0 + diff * diff);
            autocorrelation += p * ga * gb;
            let spread = ga + gb - mu_a - mu_b;
            cluster_shade += p * spread * spread * spread;
            cluster_prominence += p * spread * spread * spread * spread;
        }
    }
    // flat-region convention: zero-variance marginals correlate perfectly
    let correlation = if var_a <= 0.0 || var_b <= 0.0 {
        1.0
    } else {
        covariance / (var_a.sqrt() * var_b.sqrt())
    };
    GlcmStats {
        joint_energy,
        joint_entropy,
        contrast,
        correlation,
        inverse_difference_moment: idm,
        autocorrelation,
        cluster_shade,
        cluster_prominence,
    }
}

const GLCM_FEATURE_NAMES: [&str; 8] = [
    "glcm_joint_energy",
    "glcm_joint_entropy",
    "glcm_contrast",
    "glcm_correlation",
    "glcm_inverse_difference_moment",
    "glcm_autocorrelation",
    "glcm_cluster_shade",
    "glcm_cluster_prominence",
];

/// GLCM texture features, averaged over the offsets that produced at least
/// one in-mask pair.
pub fn glcm_features(
    vol: &ScalarVolume,
    mask: &LabelVolume,
    class_label: u8,
    settings: &ExtractionSettings,
    modality: Modality,
) -> Result<FeatureVector> {
    let matrices = glcm_matrices(vol, mask, class_label, settings)?;
    let active: Vec<&GlcmMatrix> = matrices.iter().filter(|m| m.pairs > 0).collect();
    if active.is_empty() {
        return Err(Error::DegenerateTexture(
            "no in-mask voxel pairs at any offset".into(),
        ));
    }
    let mut sums = [0.0_f64; 8];
    for m in &active {
        let s = glcm_stats(m);
        for (slot, value) in sums.iter_mut().zip(
            [
                s.joint_energy,
                s.joint_entropy,
                s.contrast,
                s.correlation,
                s.inverse_difference_moment,
                s.autocorrelation,
                s.cluster_shade,
                s.cluster_prominence,
            ]
            .iter(),
        ) {
            *slot += value;
        }
    }
    let k = active.len() as f64;
    let mut out = FeatureVector::new(modality);
    for (name, sum) in GLCM_FEATURE_NAMES.iter().zip(sums.iter()) {
        out.push(name, sum / k)?;
    }
    Ok(out)
}

/// Feature values a single-level region takes when no voxel pair exists.
fn glcm_single_level_conventions(modality: Modality) -> FeatureVector {
    let values = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0];
    let mut out = FeatureVector::new(modality);
    for (name, v) in GLCM_FEATURE_NAMES.iter().zip(values.iter()) {
        out.push(name, *v).expect("static names");
    }
    out
}

/// Concatenated first-order + shape + GLCM vectors for CT and PET over the
/// primary-tumor region.
///
/// The two vectors carry identical feature names and differ only in the
/// modality tag. Regions too small for any co-occurrence pair take the
/// single-level texture conventions.
pub fn extract_all(
    ct: &ScalarVolume,
    pet: &ScalarVolume,
    mask: &LabelVolume,
    settings: &ExtractionSettings,
) -> Result<(FeatureVector, FeatureVector)> {
    settings.validate()?;
    if ct.dims() != pet.dims() || ct.dims() != mask.dims() {
        return Err(Error::ShapeMismatch(format!(
            "dims differ: ct {:?}, pet {:?}, mask {:?}",
            ct.dims(),
            pet.dims(),
            mask.dims()
        )));
    }
    if ct.spacing() != pet.spacing() || ct.spacing() != mask.spacing() {
        return Err(Error::ShapeMismatch("volume spacings differ".into()));
    }
    if mask.count_label(LABEL_PRIMARY) == 0 {
        return Err(Error::NoTumor);
    }

    let extract_one = |vol: &ScalarVolume, modality: Modality| -> Result<FeatureVector> {
        let mut fv = first_order_features(vol, mask, LABEL_PRIMARY, settings, modality)?;
        fv.extend(&shape_features(mask, LABEL_PRIMARY, modality)?)?;
        let texture = match glcm_features(vol, mask, LABEL_PRIMARY, settings, modality) {
            Ok(t) => t,
            Err(Error::DegenerateTexture(_)) => glcm_single_level_conventions(modality),
            Err(e) => return Err(e),
        };
        fv.extend(&texture)?;
        Ok(fv)
    };

    Ok((extract_one(ct, Modality::Ct)?, extract_one(pet, Modality::Pet)?))
}
