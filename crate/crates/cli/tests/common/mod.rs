//! Shared fixtures: an on-disk phantom cohort and a NIfTI byte-swapper.
#![allow(dead_code)] // each test target uses a different subset

use std::path::{Path, PathBuf};

use survrad_cli::nifti::{write_labels, write_scalar};
use survrad_core::synth::{generate_volume_phantom, PhantomSpec, RegionIntensities, Sphere};

/// Swap the byte order of every multi-byte field of a single-file NIfTI-1
/// image, header and voxel data alike. `elem_size` is the on-disk datatype
/// width.
pub fn byteswap_nifti(bytes: &[u8], elem_size: usize) -> Vec<u8> {
    let mut out = bytes.to_vec();
    let mut swap = |at: usize, width: usize, count: usize| {
        for i in 0..count {
            out[at + i * width..at + (i + 1) * width].reverse();
        }
    };
    // i32 fields
    for at in [0usize, 32, 140, 144] {
        swap(at, 4, 1);
    }
    // i16 fields: session_error, dim[8], intent_code/datatype/bitpix/
    // slice_start, slice_end, qform_code, sform_code
    swap(36, 2, 1);
    swap(40, 2, 8);
    swap(68, 2, 4);
    swap(120, 2, 1);
    swap(252, 2, 2);
    // f32 fields: intent_p1..3, pixdim[8], vox_offset, scl, cal/slice/toffset,
    // quaternions, qoffsets, srows
    swap(56, 4, 3);
    swap(76, 4, 8);
    swap(108, 4, 3);
    swap(124, 4, 4);
    swap(256, 4, 6);
    swap(280, 4, 12);
    // voxel payload
    let data_start = 352;
    if elem_size > 1 {
        let n = (bytes.len() - data_start) / elem_size;
        swap(data_start, elem_size, n);
    }
    out
}

pub struct PhantomCohort {
    pub ids: Vec<String>,
    pub clinical_csv: PathBuf,
    pub volumes_dir: PathBuf,
    pub reference_dir: PathBuf,
    /// Patients carrying a spurious distant node in the predicted mask.
    pub spurious_ids: Vec<String>,
}

/// Build `n` patients of phantom volumes plus a clinical CSV under `root`.
///
/// Every predicted mask holds a primary sphere and one nearby node; every
/// third patient also gets a spurious distant node that the reference mask
/// (the planted ground truth) does not contain. Survival times shorten with
/// primary-tumor radius so the encoded volume feature carries real signal.
pub fn build_phantom_cohort(root: &Path, n: usize) -> PhantomCohort {
    let volumes_dir = root.join("volumes");
    let reference_dir = root.join("reference");
    std::fs::create_dir_all(&volumes_dir).unwrap();
    std::fs::create_dir_all(&reference_dir).unwrap();

    let dims = [70, 24, 24];
    let spacing = [2.0, 2.0, 2.0];
    let primary_center = [24.0, 24.0, 24.0];

    let mut ids = Vec::new();
    let mut spurious_ids = Vec::new();
    let mut clinical_rows = String::from(
        "patient_id,gender,age,tobacco,alcohol,performance_status,hpv_status,surgery,chemotherapy,rfs_months,event\n",
    );

    for i in 0..n {
        let id = format!("ph{i:03}");
        let radius = 7.0 + (i % 3) as f64;
        let primary = Some(Sphere { center_mm: primary_center, radius_mm: radius });
        let near_node = Sphere {
            center_mm: [primary_center[0] + 30.0 + (i % 5) as f64, 24.0, 24.0],
            radius_mm: 5.0,
        };
        let spurious_node = Sphere {
            center_mm: [primary_center[0] + 96.0, 24.0, 24.0],
            radius_mm: 5.0,
        };
        let has_spurious = i % 3 == 0;
        let mut nodes = vec![near_node];
        if has_spurious {
            nodes.push(spurious_node);
            spurious_ids.push(id.clone());
        }

        let intensities = |seed: u64, nodes: Vec<Sphere>| PhantomSpec {
            dims,
            spacing,
            origin: [0.0; 3],
            primary,
            nodes,
            ct: RegionIntensities { background: -50.0, primary: 60.0, node: 30.0 },
            pet: RegionIntensities { background: 0.5, primary: 8.0, node: 5.0 },
            noise_sd: 3.0,
            seed,
        };
        let (mask, ct, pet) =
            generate_volume_phantom(&intensities(1000 + i as u64, nodes)).unwrap();
        let (reference, _, _) =
            generate_volume_phantom(&intensities(1000 + i as u64, vec![near_node])).unwrap();

        write_labels(&mask, &volumes_dir.join(format!("{id}_mask.nii"))).unwrap();
        write_scalar(&ct, &volumes_dir.join(format!("{id}_ct.nii"))).unwrap();
        write_scalar(&pet, &volumes_dir.join(format!("{id}_pet.nii"))).unwrap();
        write_labels(&reference, &reference_dir.join(format!("{id}_mask.nii"))).unwrap();

        // larger tumors recur earlier; sprinkle censoring
        let time = 40.0 / (1.0 + 0.4 * (radius - 7.0)) + (i % 7) as f64 * 0.9;
        let event = i % 4 != 3;
        let status = |v: usize| ["1", "0", ""][v % 3];
        clinical_rows.push_str(&format!(
            "{id},{},{},{},{},{},{},{},{},{time},{}\n",
            status(i),
            50 + i,
            status(i + 1),
            status(i + 2),
            status(i + 3),
            status(i + 4),
            status(i + 5),
            status(i + 6),
            u8::from(event),
        ));
        ids.push(id);
    }

    let clinical_csv = root.join("clinical.csv");
    std::fs::write(&clinical_csv, clinical_rows).unwrap();
    PhantomCohort { ids, clinical_csv, volumes_dir, reference_dir, spurious_ids }
}
