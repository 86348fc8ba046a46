//! 3D voxel grids and segmentation post-processing.
//!
//! Volumes store values in x-fastest order; the physical coordinate of voxel
//! `(i, j, k)` is `origin + spacing * (i, j, k)` (voxel centers). Label
//! volumes carry `{0, 1, 2}` = background / primary tumor / lymph node.

use serde::Serialize;

use crate::error::{Error, Result};

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_PRIMARY: u8 = 1;
pub const LABEL_NODE: u8 = 2;

/// Scalar intensity grid (CT or PET).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    values: Vec<f64>,
}

/// Segmentation mask over the same grid model.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    labels: Vec<u8>,
}

fn validate_geometry(dims: [usize; 3], spacing: [f64; 3], len: usize) -> Result<()> {
    let expected = dims[0] * dims[1] * dims[2];
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!("dims {dims:?} contain zero")));
    }
    if expected != len {
        return Err(Error::ShapeMismatch(format!(
            "dims {dims:?} imply {expected} voxels, got {len}"
        )));
    }
    if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "spacing {spacing:?} must be positive and finite"
        )));
    }
    Ok(())
}

macro_rules! grid_accessors {
    () => {
        pub fn dims(&self) -> [usize; 3] {
            self.dims
        }
        pub fn spacing(&self) -> [f64; 3] {
            self.spacing
        }
        pub fn origin(&self) -> [f64; 3] {
            self.origin
        }
        pub fn voxel_count(&self) -> usize {
            self.dims[0] * self.dims[1] * self.dims[2]
        }
        /// Volume of one voxel in cubic millimeters.
        pub fn voxel_volume_mm3(&self) -> f64 {
            self.spacing[0] * self.spacing[1] * self.spacing[2]
        }
        #[inline]
        pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
            i + self.dims[0] * (j + self.dims[1] * k)
        }
        /// Physical coordinate of the voxel center.
        #[inline]
        pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
            [
                self.origin[0] + self.spacing[0] * i as f64,
                self.origin[1] + self.spacing[1] * j as f64,
                self.origin[2] + self.spacing[2] * k as f64,
            ]
        }
    };
}

impl ScalarVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], values: Vec<f64>) -> Result<Self> {
        validate_geometry(dims, spacing, values.len())?;
        Ok(Self { dims, spacing, origin, values })
    }

    grid_accessors!();

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.linear_index(i, j, k)]
    }
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], labels: Vec<u8>) -> Result<Self> {
        validate_geometry(dims, spacing, labels.len())?;
        if let Some(bad) = labels.iter().find(|&&l| l > 2) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside {{0, 1, 2}}"
            )));
        }
        Ok(Self { dims, spacing, origin, labels })
    }

    grid_accessors!();

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, i: usize, j: usize, k: usize) -> u8 {
        self.labels[self.linear_index(i, j, k)]
    }

    pub fn count_label(&self, class_label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class_label).count()
    }
}

/// One connected component of a label class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeComponent {
    pub class_label: u8,
    pub voxel_count: usize,
    pub volume_ml: f64,
    /// Unweighted mean of member voxel centers, in physical millimeters.
    pub centroid: [f64; 3],
}

/// 26-connected components of `class_label`, sorted by descending voxel
/// count (ties by first voxel in scan order). An absent class gives an
/// empty list.
pub fn connected_components(vol: &LabelVolume, class_label: u8) -> Vec<NodeComponent> {
    components_with_voxels(vol, class_label)
        .into_iter()
        .map(|(c, _)| c)
        .collect()
}

pub(crate) fn components_with_voxels(
    vol: &LabelVolume,
    class_label: u8,
) -> Vec<(NodeComponent, Vec<usize>)> {
    let [nx, ny, nz] = vol.dims;
    let mut visited = vec![false; vol.labels.len()];
    let mut components: Vec<(NodeComponent, Vec<usize>)> = Vec::new();
    let voxel_ml = vol.voxel_volume_mm3() / 1000.0;

    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let seed = vol.linear_index(i, j, k);
                if visited[seed] || vol.labels[seed] != class_label {
                    continue;
                }
                // flood fill over the 26-neighborhood
                let mut stack = vec![(i, j, k)];
                visited[seed] = true;
                let mut voxels = Vec::new();
                let mut centroid = [0.0_f64; 3];
                while let Some((ci, cj, ck)) = stack.pop() {
                    let idx = vol.linear_index(ci, cj, ck);
                    voxels.push(idx);
                    let center = vol.voxel_center(ci, cj, ck);
                    for d in 0..3 {
                        centroid[d] += center[d];
                    }
                    for dk in -1i64..=1 {
                        for dj in -1i64..=1 {
                            for di in -1i64..=1 {
                                if di == 0 && dj == 0 && dk == 0 {
                                    continue;
                                }
                                let (ni, nj, nk) =
                                    (ci as i64 + di, cj as i64 + dj, ck as i64 + dk);
                                if ni < 0 || nj < 0 || nk < 0 {
                                    continue;
                                }
                                let (ni, nj, nk) = (ni as usize, nj as usize, nk as usize);
                                if ni >= nx || nj >= ny || nk >= nz {
                                    continue;
                                }
                                let nidx = vol.linear_index(ni, nj, nk);
                                if !visited[nidx] && vol.labels[nidx] == class_label {
                                    visited[nidx] = true;
                                    stack.push((ni, nj, nk));
                                }
                            }
                        }
                    }
                }
                let count = voxels.len();
                for d in 0..3 {
                    centroid[d] /= count as f64;
                }
                voxels.sort_unstable();
                components.push((
                    NodeComponent {
                        class_label,
                        voxel_count: count,
                        volume_ml: count as f64 * voxel_ml,
                        centroid,
                    },
                    voxels,
                ));
            }
        }
    }
    components.sort_by(|a, b| b.0.voxel_count.cmp(&a.0.voxel_count).then(a.1[0].cmp(&b.1[0])));
    components
}

/// Euclidean distance between two physical points, in millimeters.
pub fn centroid_distance(p: [f64; 3], n: [f64; 3]) -> f64 {
    let dx = p[0] - n[0];
    let dy = p[1] - n[1];
    let dz = p[2] - n[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// One lymph-node component's centroid distance to the primary-tumor
/// reference and whether the distance filter removed it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeFilterEntry {
    pub voxel_count: usize,
    pub volume_ml: f64,
    pub centroid: [f64; 3],
    pub distance_mm: f64,
    pub removed: bool,
}

/// Outcome of [`filter_distant_nodes`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterReport {
    /// Voxel-mean centroid of all primary-tumor voxels; `None` when the
    /// volume holds no primary tumor and the filter was skipped.
    pub reference_centroid: Option<[f64; 3]>,
    pub d_max_mm: f64,
    pub entries: Vec<NodeFilterEntry>,
}

impl FilterReport {
    pub fn removed(&self) -> impl Iterator<Item = &NodeFilterEntry> {
        self.entries.iter().filter(|e| e.removed)
    }
}

/// Relabel to background every lymph-node component whose centroid lies
/// farther than `d_max_mm` from the primary-tumor reference centroid.
///
/// The reference is the mean over all primary-tumor voxels (volume-weighted
/// across components). Primary-tumor voxels are never modified; with no
/// primary tumor present the input passes through unchanged.
pub fn filter_distant_nodes(vol: &LabelVolume, d_max_mm: f64) -> Result<(LabelVolume, FilterReport)> {
    if !(d_max_mm > 0.0) || !d_max_mm.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "d_max must be positive and finite, got {d_max_mm}"
        )));
    }

    let reference = primary_reference_centroid(vol);
    let mut out = vol.clone();
    let mut entries = Vec::new();
    if let Some(reference) = reference {
        for (component, voxels) in components_with_voxels(vol, LABEL_NODE) {
            let distance = centroid_distance(component.centroid, reference);
            let removed = distance > d_max_mm;
            if removed {
                for idx in &voxels {
                    out.labels[*idx] = LABEL_BACKGROUND;
                }
            }
            entries.push(NodeFilterEntry {
                voxel_count: component.voxel_count,
                volume_ml: component.volume_ml,
                centroid: component.centroid,
                distance_mm: distance,
                removed,
            });
        }
    }
    Ok((
        out,
        FilterReport {
            reference_centroid: reference,
            d_max_mm,
            entries,
        },
    ))
}

fn primary_reference_centroid(vol: &LabelVolume) -> Option<[f64; 3]> {
    let [nx, ny, nz] = vol.dims;
    let mut sum = [0.0_f64; 3];
    let mut count = 0usize;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if vol.label(i, j, k) == LABEL_PRIMARY {
                    let c = vol.voxel_center(i, j, k);
                    for d in 0..3 {
                        sum[d] += c[d];
                    }
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        None
    } else {
        Some([sum[0] / count as f64, sum[1] / count as f64, sum[2] / count as f64])
    }
}

/// Dice similarity of one label class between two same-shaped masks.
/// Both masks empty for the class gives 1.0; exactly one empty gives 0.0.
pub fn dice(a: &LabelVolume, b: &LabelVolume, class_label: u8) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::ShapeMismatch(format!(
            "dims {:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    let mut na = 0usize;
    let mut nb = 0usize;
    let mut overlap = 0usize;
    for (la, lb) in a.labels.iter().zip(b.labels.iter()) {
        let in_a = *la == class_label;
        let in_b = *lb == class_label;
        na += in_a as usize;
        nb += in_b as usize;
        overlap += (in_a && in_b) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * overlap as f64 / (na + nb) as f64)
}

fn resampled_dims(dims: [usize; 3], spacing: [f64; 3], target: [f64; 3]) -> Result<[usize; 3]> {
    if target.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "target spacing {target:?} must be positive and finite"
        )));
    }
    let mut out = [0usize; 3];
    for d in 0..3 {
        out[d] = ((dims[d] as f64 * spacing[d] / target[d]).round() as usize).max(1);
    }
    Ok(out)
}

/// Trilinear resampling onto a grid with the requested spacing covering the
/// same physical extent. Samples outside the source grid clamp to the edge.
pub fn resample_trilinear(vol: &ScalarVolume, target_spacing: [f64; 3]) -> Result<ScalarVolume> {
    let new_dims = resampled_dims(vol.dims, vol.spacing, target_spacing)?;
    let [nx, ny, nz] = new_dims;
    let mut values = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                // continuous source index of the output voxel center
                let u = [
                    i as f64 * target_spacing[0] / vol.spacing[0],
                    j as f64 * target_spacing[1] / vol.spacing[1],
                    k as f64 * target_spacing[2] / vol.spacing[2],
                ];
                values.push(trilinear_sample(vol, u));
            }
        }
    }
    ScalarVolume::new(new_dims, target_spacing, vol.origin, values)
}

fn trilinear_sample(vol: &ScalarVolume, u: [f64; 3]) -> f64 {
    let mut lo = [0usize; 3];
    let mut frac = [0.0_f64; 3];
    for d in 0..3 {
        let n = vol.dims[d];
        if n == 1 {
            continue;
        }
        let clamped = u[d].clamp(0.0, (n - 1) as f64);
        let base = (clamped.floor() as usize).min(n - 2);
        lo[d] = base;
        frac[d] = clamped - base as f64;
    }
    let mut acc = 0.0;
    for corner in 0..8 {
        let mut weight = 1.0;
        let mut idx = [0usize; 3];
        for d in 0..3 {
            let hi = (corner >> d) & 1 == 1;
            if vol.dims[d] == 1 {
                if hi {
                    weight = 0.0;
                }
                idx[d] = 0;
            } else {
                weight *= if hi { frac[d] } else { 1.0 - frac[d] };
                idx[d] = lo[d] + hi as usize;
            }
        }
        if weight != 0.0 {
            acc += weight * vol.value(idx[0], idx[1], idx[2]);
        }
    }
    acc
}

/// Nearest-neighbor resampling for label volumes; never introduces labels
/// absent from the input.
pub fn resample_nearest(vol: &LabelVolume, target_spacing: [f64; 3]) -> Result<LabelVolume> {
    let new_dims = resampled_dims(vol.dims, vol.spacing, target_spacing)?;
    let [nx, ny, nz] = new_dims;
    let mut labels = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let mut src = [0usize; 3];
                let u = [
                    i as f64 * target_spacing[0] / vol.spacing[0],
                    j as f64 * target_spacing[1] / vol.spacing[1],
                    k as f64 * target_spacing[2] / vol.spacing[2],
                ];
                for d in 0..3 {
                    src[d] = (u[d].round().max(0.0) as usize).min(vol.dims[d] - 1);
                }
                labels.push(vol.label(src[0], src[1], src[2]));
            }
        }
    }
    LabelVolume::new(new_dims, target_spacing, vol.origin, labels)
}

/// Standardize all voxels to zero mean and unit (population) standard
/// deviation.
pub fn zscore_normalize(vol: &ScalarVolume) -> Result<ScalarVolume> {
    let n = vol.values.len();
    if n < 2 {
        return Err(Error::DegenerateInput("need at least 2 voxels to standardize".into()));
    }
    let mean = vol.values.iter().sum::<f64>() / n as f64;
    let var = vol.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return Err(Error::DegenerateInput("zero intensity variance".into()));
    }
    let sd = var.sqrt();
    let values = vol.values.iter().map(|v| (v - mean) / sd).collect();
    ScalarVolume::new(vol.dims, vol.spacing, vol.origin, values)
}

/// Per-patient node geometry summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeStatistics {
    pub primary_count: usize,
    pub primary_volume_ml: f64,
    pub node_count: usize,
    pub node_total_volume_ml: f64,
    pub smallest_node_volume_ml: Option<f64>,
    /// Centroid distance of each node component to the primary reference,
    /// in component order; empty when no primary tumor is present.
    pub node_distances_mm: Vec<f64>,
}

/// Component counts, volumes, and node-to-primary distances for one mask.
pub fn node_statistics(vol: &LabelVolume) -> NodeStatistics {
    let primaries = connected_components(vol, LABEL_PRIMARY);
    let nodes = connected_components(vol, LABEL_NODE);
    let reference = primary_reference_centroid(vol);

    let node_distances_mm = match reference {
        Some(r) => nodes.iter().map(|c| centroid_distance(c.centroid, r)).collect(),
        None => Vec::new(),
    };
    let smallest = nodes
        .iter()
        .map(|c| c.volume_ml)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));

    NodeStatistics {
        primary_count: primaries.len(),
        primary_volume_ml: primaries.iter().map(|c| c.volume_ml).sum(),
        node_count: nodes.len(),
        node_total_volume_ml: nodes.iter().map(|c| c.volume_ml).sum(),
        smallest_node_volume_ml: smallest,
        node_distances_mm,
    }
}
