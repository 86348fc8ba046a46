//! Synthetic oracles: survival cohorts with known hazard structure and
//! geometric volume phantoms.
//!
//! Event times follow an exponential proportional-hazards model
//! `T = -ln(U) / (lambda * exp(x beta))`; censoring times are exponential
//! with a rate calibrated so the expected censored fraction hits the target.
//! All randomness comes from ChaCha8 streams derived per patient from the
//! master seed, so generation is deterministic and order-independent.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::pipeline::FeatureTable;
use crate::radiomics::Modality;
use crate::survstat::SurvivalRecord;
use crate::volume::{LabelVolume, ScalarVolume, LABEL_NODE, LABEL_PRIMARY};

/// Name of the generator recorded in provenance blocks.
pub const RNG_NAME: &str = "chacha8";

/// Cohort generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    /// True coefficients of the informative features.
    pub betas: Vec<f64>,
    /// Target fraction of censored records, in [0, 1).
    pub censoring_rate: f64,
    /// Baseline events per month.
    pub baseline_rate: f64,
    pub seed: u64,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidArgument("need at least 2 patients".into()));
        }
        if !(self.baseline_rate > 0.0) || !self.baseline_rate.is_finite() {
            return Err(Error::InvalidArgument("baseline_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.censoring_rate) {
            return Err(Error::InvalidArgument("censoring_rate must be in [0, 1)".into()));
        }
        if self.betas.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("betas must be finite".into()));
        }
        Ok(())
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn patient_rng(seed: u64, patient: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(patient.wrapping_add(1))))
}

/// Uniform draw restricted to (0, 1) so `-ln(u)` stays finite and positive.
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}

/// Censoring rate of an exponential race: an independent exponential censor
/// with rate `c` beats the event with probability `c / (c + lambda_i)`.
fn expected_censored_fraction(censor_rate: f64, hazards: &[f64]) -> f64 {
    hazards.iter().map(|&l| censor_rate / (censor_rate + l)).sum::<f64>() / hazards.len() as f64
}

/// Censor rate whose expected censored fraction equals `target`, by
/// bisection (the fraction is monotone increasing in the rate).
fn calibrate_censor_rate(target: f64, hazards: &[f64]) -> f64 {
    let mean_hazard = hazards.iter().sum::<f64>() / hazards.len() as f64;
    let mut lo = mean_hazard * 1e-12;
    let mut hi = mean_hazard * 1e12;
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if expected_censored_fraction(mid, hazards) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

/// Generate a cohort with standard-normal covariates.
///
/// The informative features (`spec.betas.len()` of them) come first,
/// followed by `n_noise_features` with zero true coefficient; columns are
/// named `x000`, `x001`, ... in that order.
pub fn generate_survival(
    spec: &SynthSpec,
    n_noise_features: usize,
    modality: Modality,
) -> Result<(FeatureTable, Vec<SurvivalRecord>)> {
    spec.validate()?;
    let p = spec.betas.len() + n_noise_features;
    if p == 0 {
        return Err(Error::InvalidArgument("need at least one feature".into()));
    }

    let mut values = Array2::<f64>::zeros((spec.n, p));
    let mut hazards = Vec::with_capacity(spec.n);
    let mut event_times = Vec::with_capacity(spec.n);
    let mut censor_draws = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let mut rng = patient_rng(spec.seed, i as u64);
        let mut linear = 0.0;
        for j in 0..p {
            let x: f64 = rng.sample(StandardNormal);
            values[[i, j]] = x;
            if j < spec.betas.len() {
                linear += spec.betas[j] * x;
            }
        }
        let hazard = spec.baseline_rate * linear.exp();
        hazards.push(hazard);
        event_times.push(-open_unit(&mut rng).ln() / hazard);
        censor_draws.push(open_unit(&mut rng));
    }

    let records: Vec<SurvivalRecord> = if spec.censoring_rate == 0.0 {
        event_times
            .iter()
            .map(|&t| SurvivalRecord { time: t, event: true })
            .collect()
    } else {
        let censor_rate = calibrate_censor_rate(spec.censoring_rate, &hazards);
        event_times
            .iter()
            .zip(censor_draws.iter())
            .map(|(&t, &u)| {
                let c = -u.ln() / censor_rate;
                SurvivalRecord {
                    time: t.min(c),
                    event: t <= c,
                }
            })
            .collect()
    };

    let ids = (0..spec.n).map(|i| format!("p{i:05}")).collect();
    let names = (0..p).map(|j| format!("x{j:03}")).collect();
    let table = FeatureTable::new(modality, ids, names, values)?;
    Ok((table, records))
}

/// One modality's slice of a multi-modality cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityPlan {
    pub modality: Modality,
    /// True coefficients of this modality's informative features.
    pub betas: Vec<f64>,
    pub n_noise_features: usize,
}

/// Generate aligned feature tables for several modalities that jointly drive
/// one shared outcome.
///
/// All features are independent standard normals; the hazard of patient `i`
/// is `baseline * exp(sum over modalities of x_m beta_m)`, so each
/// modality's planted features carry part of the signal and fusing the
/// modalities genuinely helps.
pub fn generate_multimodal(
    n: usize,
    plans: &[ModalityPlan],
    censoring_rate: f64,
    baseline_rate: f64,
    seed: u64,
) -> Result<(Vec<FeatureTable>, Vec<SurvivalRecord>)> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 patients".into()));
    }
    if plans.is_empty() {
        return Err(Error::InvalidArgument("need at least one modality".into()));
    }
    if !(baseline_rate > 0.0) || !(0.0..1.0).contains(&censoring_rate) {
        return Err(Error::InvalidArgument(
            "baseline_rate must be > 0 and censoring_rate in [0, 1)".into(),
        ));
    }

    let widths: Vec<usize> = plans
        .iter()
        .map(|p| p.betas.len() + p.n_noise_features)
        .collect();
    let mut matrices: Vec<Array2<f64>> = widths.iter().map(|&w| Array2::zeros((n, w))).collect();
    let mut hazards = Vec::with_capacity(n);
    let mut event_times = Vec::with_capacity(n);
    let mut censor_draws = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = patient_rng(seed, i as u64);
        let mut linear = 0.0;
        for (m, plan) in plans.iter().enumerate() {
            for j in 0..widths[m] {
                let x: f64 = rng.sample(StandardNormal);
                matrices[m][[i, j]] = x;
                if j < plan.betas.len() {
                    linear += plan.betas[j] * x;
                }
            }
        }
        let hazard = baseline_rate * linear.exp();
        hazards.push(hazard);
        event_times.push(-open_unit(&mut rng).ln() / hazard);
        censor_draws.push(open_unit(&mut rng));
    }

    let records: Vec<SurvivalRecord> = if censoring_rate == 0.0 {
        event_times
            .iter()
            .map(|&t| SurvivalRecord { time: t, event: true })
            .collect()
    } else {
        let censor_rate = calibrate_censor_rate(censoring_rate, &hazards);
        event_times
            .iter()
            .zip(censor_draws.iter())
            .map(|(&t, &u)| {
                let c = -u.ln() / censor_rate;
                SurvivalRecord { time: t.min(c), event: t <= c }
            })
            .collect()
    };

    let ids: Vec<String> = (0..n).map(|i| format!("p{i:05}")).collect();
    let mut tables = Vec::with_capacity(plans.len());
    for (m, plan) in plans.iter().enumerate() {
        let names = (0..widths[m]).map(|j| format!("x{j:03}")).collect();
        tables.push(FeatureTable::new(
            plan.modality,
            ids.clone(),
            names,
            std::mem::take(&mut matrices[m]),
        )?);
    }
    Ok((tables, records))
}

/// Two-group exponential cohort: a single binary covariate whose second
/// group carries `hazard_ratio` times the baseline hazard. Rows alternate
/// between groups.
pub fn generate_two_group(
    n: usize,
    hazard_ratio: f64,
    baseline_rate: f64,
    censoring_rate: f64,
    seed: u64,
) -> Result<(Array2<f64>, Vec<SurvivalRecord>)> {
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 patients".into()));
    }
    if !(hazard_ratio > 0.0) || !(baseline_rate > 0.0) {
        return Err(Error::InvalidArgument("hazard_ratio and baseline_rate must be > 0".into()));
    }
    if !(0.0..1.0).contains(&censoring_rate) {
        return Err(Error::InvalidArgument("censoring_rate must be in [0, 1)".into()));
    }
    let mut x = Array2::<f64>::zeros((n, 1));
    let mut hazards = Vec::with_capacity(n);
    let mut event_times = Vec::with_capacity(n);
    let mut censor_draws = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = patient_rng(seed, i as u64);
        let group = (i % 2) as f64;
        x[[i, 0]] = group;
        let hazard = baseline_rate * hazard_ratio.powf(group);
        hazards.push(hazard);
        event_times.push(-open_unit(&mut rng).ln() / hazard);
        censor_draws.push(open_unit(&mut rng));
    }
    let records = if censoring_rate == 0.0 {
        event_times
            .iter()
            .map(|&t| SurvivalRecord { time: t, event: true })
            .collect()
    } else {
        let censor_rate = calibrate_censor_rate(censoring_rate, &hazards);
        event_times
            .iter()
            .zip(censor_draws.iter())
            .map(|(&t, &u)| {
                let c = -u.ln() / censor_rate;
                SurvivalRecord { time: t.min(c), event: t <= c }
            })
            .collect()
    };
    Ok((x, records))
}

/// Sphere in physical millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    pub center_mm: [f64; 3],
    pub radius_mm: f64,
}

/// Constant intensity per label region of one modality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionIntensities {
    pub background: f64,
    pub primary: f64,
    pub node: f64,
}

/// Geometric phantom description.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub primary: Option<Sphere>,
    pub nodes: Vec<Sphere>,
    pub ct: RegionIntensities,
    pub pet: RegionIntensities,
    /// Standard deviation of seeded Gaussian noise added to both images;
    /// zero gives exact per-region constants.
    pub noise_sd: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn plain(dims: [usize; 3], spacing: [f64; 3], primary: Option<Sphere>, nodes: Vec<Sphere>) -> Self {
        Self {
            dims,
            spacing,
            origin: [0.0; 3],
            primary,
            nodes,
            ct: RegionIntensities { background: -50.0, primary: 60.0, node: 30.0 },
            pet: RegionIntensities { background: 0.5, primary: 8.0, node: 5.0 },
            noise_sd: 0.0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        let min_spacing = self.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
        for (what, sphere) in self
            .primary
            .iter()
            .map(|s| ("primary", s))
            .chain(self.nodes.iter().map(|s| ("node", s)))
        {
            if !(sphere.radius_mm >= min_spacing) {
                return Err(Error::InvalidArgument(format!(
                    "{what} sphere radius {} mm is below one voxel ({min_spacing} mm)",
                    sphere.radius_mm
                )));
            }
            for d in 0..3 {
                let lo = self.origin[d];
                let hi = self.origin[d] + self.spacing[d] * (self.dims[d] - 1) as f64;
                if sphere.center_mm[d] - sphere.radius_mm < lo
                    || sphere.center_mm[d] + sphere.radius_mm > hi
                {
                    return Err(Error::InvalidArgument(format!(
                        "{what} sphere at {:?} (r = {}) leaves the volume on axis {d}",
                        sphere.center_mm, sphere.radius_mm
                    )));
                }
            }
        }
        Ok(())
    }
}

fn inside(sphere: &Sphere, point: [f64; 3]) -> bool {
    let dx = point[0] - sphere.center_mm[0];
    let dy = point[1] - sphere.center_mm[1];
    let dz = point[2] - sphere.center_mm[2];
    dx * dx + dy * dy + dz * dz <= sphere.radius_mm * sphere.radius_mm
}

/// Build (labels, CT, PET) volumes from sphere memberships; the primary
/// sphere wins where it overlaps a node sphere.
pub fn generate_volume_phantom(
    spec: &PhantomSpec,
) -> Result<(LabelVolume, ScalarVolume, ScalarVolume)> {
    spec.validate()?;
    let [nx, ny, nz] = spec.dims;
    let n = nx * ny * nz;
    let mut labels = vec![0u8; n];
    let mut ct = vec![0.0_f64; n];
    let mut pet = vec![0.0_f64; n];

    let mut ct_rng = patient_rng(spec.seed, 0xC7);
    let mut pet_rng = patient_rng(spec.seed, 0x9E7);

    let mut idx = 0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let point = [
                    spec.origin[0] + spec.spacing[0] * i as f64,
                    spec.origin[1] + spec.spacing[1] * j as f64,
                    spec.origin[2] + spec.spacing[2] * k as f64,
                ];
                let label = if spec.primary.as_ref().is_some_and(|s| inside(s, point)) {
                    LABEL_PRIMARY
                } else if spec.nodes.iter().any(|s| inside(s, point)) {
                    LABEL_NODE
                } else {
                    0
                };
                labels[idx] = label;
                let (ct_base, pet_base) = match label {
                    LABEL_PRIMARY => (spec.ct.primary, spec.pet.primary),
                    LABEL_NODE => (spec.ct.node, spec.pet.node),
                    _ => (spec.ct.background, spec.pet.background),
                };
                let (ct_noise, pet_noise): (f64, f64) = if spec.noise_sd > 0.0 {
                    (
                        spec.noise_sd * ct_rng.sample::<f64, _>(StandardNormal),
                        spec.noise_sd * pet_rng.sample::<f64, _>(StandardNormal),
                    )
                } else {
                    (0.0, 0.0)
                };
                ct[idx] = ct_base + ct_noise;
                pet[idx] = pet_base + pet_noise;
                idx += 1;
            }
        }
    }

    Ok((
        LabelVolume::new(spec.dims, spec.spacing, spec.origin, labels)?,
        ScalarVolume::new(spec.dims, spec.spacing, spec.origin, ct)?,
        ScalarVolume::new(spec.dims, spec.spacing, spec.origin, pet)?,
    ))
}
