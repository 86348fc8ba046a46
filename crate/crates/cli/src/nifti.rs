//! Minimal NIfTI-1 reader and writer.
//!
//! Single-file uncompressed `.nii` only: 348-byte header, magic `n+1\0`,
//! voxel data contiguous at `vox_offset`. Supported on-disk datatypes are
//! uint8, int16, int32, float32, and float64. Endianness is detected from
//! the `dim[0] in 1..=7` heuristic with a byte-swap fallback. The writer
//! emits little-endian float32 for scalar volumes and uint8 for labels.

use std::io::Write;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use survrad_core::volume::{LabelVolume, ScalarVolume};

use crate::error::{ErrorKind, KindResult};

const HEADER_SIZE: usize = 348;
const DATA_OFFSET: usize = 352;

mod offset {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QOFFSET_X: usize = 268;
    pub const QOFFSET_Y: usize = 272;
    pub const QOFFSET_Z: usize = 276;
    pub const SROW_X: usize = 280;
    pub const SROW_Y: usize = 296;
    pub const SROW_Z: usize = 312;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DataType {
    UInt8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl DataType {
    fn from_code(code: i16) -> KindResult<Self> {
        match code {
            2 => Ok(Self::UInt8),
            4 => Ok(Self::Int16),
            8 => Ok(Self::Int32),
            16 => Ok(Self::Float32),
            64 => Ok(Self::Float64),
            other => Err(ErrorKind::Unsupported(format!("NIfTI datatype code {other}"))),
        }
    }

    fn byte_size(self) -> usize {
        match self {
            Self::UInt8 => 1,
            Self::Int16 => 2,
            Self::Int32 | Self::Float32 => 4,
            Self::Float64 => 8,
        }
    }
}

struct ParsedHeader {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    datatype: DataType,
    vox_offset: usize,
    scl_slope: f64,
    scl_inter: f64,
    little_endian: bool,
}

fn parse_header(bytes: &[u8]) -> KindResult<ParsedHeader> {
    if bytes.len() < DATA_OFFSET {
        return Err(ErrorKind::Format(format!(
            "file too short for a NIfTI-1 header ({} bytes)",
            bytes.len()
        )));
    }
    let magic = &bytes[offset::MAGIC..offset::MAGIC + 4];
    if magic != b"n+1\0" {
        return Err(ErrorKind::Format(format!(
            "bad magic {:?}, expected \"n+1\\0\"",
            magic
        )));
    }

    // endianness heuristic: a plausible header has dim[0] in 1..=7
    let ndim_le = LittleEndian::read_i16(&bytes[offset::DIM..offset::DIM + 2]);
    let little_endian = if (1..=7).contains(&ndim_le) {
        true
    } else {
        let ndim_be = BigEndian::read_i16(&bytes[offset::DIM..offset::DIM + 2]);
        if (1..=7).contains(&ndim_be) {
            false
        } else {
            return Err(ErrorKind::Format(format!(
                "implausible dim[0] = {ndim_le} under either byte order"
            )));
        }
    };

    if little_endian {
        parse_header_endian::<LittleEndian>(bytes, true)
    } else {
        parse_header_endian::<BigEndian>(bytes, false)
    }
}

fn parse_header_endian<E: ByteOrder>(bytes: &[u8], little_endian: bool) -> KindResult<ParsedHeader> {
    let sizeof_hdr = E::read_i32(&bytes[offset::SIZEOF_HDR..offset::SIZEOF_HDR + 4]);
    if sizeof_hdr != HEADER_SIZE as i32 {
        return Err(ErrorKind::Format(format!(
            "sizeof_hdr = {sizeof_hdr}, expected 348"
        )));
    }
    let ndim = E::read_i16(&bytes[offset::DIM..offset::DIM + 2]) as usize;
    let mut dim = [1i16; 7];
    for (i, d) in dim.iter_mut().enumerate() {
        let at = offset::DIM + 2 + i * 2;
        *d = E::read_i16(&bytes[at..at + 2]);
    }
    if ndim < 3 {
        return Err(ErrorKind::Unsupported(format!("{ndim}-dimensional volume")));
    }
    for (i, &d) in dim.iter().enumerate().take(ndim) {
        if i < 3 {
            if d < 1 {
                return Err(ErrorKind::Format(format!("dim[{}] = {d}", i + 1)));
            }
        } else if d > 1 {
            return Err(ErrorKind::Unsupported(format!(
                "volume has a non-trivial dimension {} (= {d})",
                i + 1
            )));
        }
    }
    let dims = [dim[0] as usize, dim[1] as usize, dim[2] as usize];

    let datatype = DataType::from_code(E::read_i16(&bytes[offset::DATATYPE..offset::DATATYPE + 2]))?;
    let bitpix = E::read_i16(&bytes[offset::BITPIX..offset::BITPIX + 2]);
    if bitpix as usize != datatype.byte_size() * 8 {
        return Err(ErrorKind::Format(format!(
            "bitpix {bitpix} does not match datatype size {}",
            datatype.byte_size() * 8
        )));
    }

    let mut spacing = [0.0_f64; 3];
    for (i, s) in spacing.iter_mut().enumerate() {
        let at = offset::PIXDIM + 4 + i * 4;
        *s = E::read_f32(&bytes[at..at + 4]) as f64;
        if !(*s > 0.0) || !s.is_finite() {
            return Err(ErrorKind::Format(format!("pixdim[{}] = {s} must be > 0", i + 1)));
        }
    }

    let vox_offset_raw = E::read_f32(&bytes[offset::VOX_OFFSET..offset::VOX_OFFSET + 4]);
    if !vox_offset_raw.is_finite()
        || vox_offset_raw.fract() != 0.0
        || (vox_offset_raw as i64) < HEADER_SIZE as i64
    {
        return Err(ErrorKind::Format(format!("invalid vox_offset {vox_offset_raw}")));
    }

    let origin = [
        E::read_f32(&bytes[offset::QOFFSET_X..offset::QOFFSET_X + 4]) as f64,
        E::read_f32(&bytes[offset::QOFFSET_Y..offset::QOFFSET_Y + 4]) as f64,
        E::read_f32(&bytes[offset::QOFFSET_Z..offset::QOFFSET_Z + 4]) as f64,
    ];

    Ok(ParsedHeader {
        dims,
        spacing,
        origin,
        datatype,
        vox_offset: vox_offset_raw as usize,
        scl_slope: E::read_f32(&bytes[offset::SCL_SLOPE..offset::SCL_SLOPE + 4]) as f64,
        scl_inter: E::read_f32(&bytes[offset::SCL_INTER..offset::SCL_INTER + 4]) as f64,
        little_endian,
    })
}

fn raw_values(bytes: &[u8], header: &ParsedHeader) -> KindResult<Vec<f64>> {
    let n = header.dims[0] * header.dims[1] * header.dims[2];
    let need = header.vox_offset + n * header.datatype.byte_size();
    if bytes.len() < need {
        return Err(ErrorKind::Format(format!(
            "truncated voxel data: file has {} bytes, need {need}",
            bytes.len()
        )));
    }
    let data = &bytes[header.vox_offset..need];
    let out = if header.little_endian {
        decode::<LittleEndian>(data, header.datatype, n)
    } else {
        decode::<BigEndian>(data, header.datatype, n)
    };
    Ok(out)
}

fn decode<E: ByteOrder>(data: &[u8], datatype: DataType, n: usize) -> Vec<f64> {
    match datatype {
        DataType::UInt8 => data.iter().take(n).map(|&b| f64::from(b)).collect(),
        DataType::Int16 => (0..n)
            .map(|i| f64::from(E::read_i16(&data[i * 2..i * 2 + 2])))
            .collect(),
        DataType::Int32 => (0..n)
            .map(|i| f64::from(E::read_i32(&data[i * 4..i * 4 + 4])))
            .collect(),
        DataType::Float32 => (0..n)
            .map(|i| f64::from(E::read_f32(&data[i * 4..i * 4 + 4])))
            .collect(),
        DataType::Float64 => (0..n)
            .map(|i| E::read_f64(&data[i * 8..i * 8 + 8]))
            .collect(),
    }
}

/// Read a scalar (intensity) volume. The header's scaling slope/intercept
/// are applied when non-trivial.
pub fn read_scalar(path: &Path) -> KindResult<ScalarVolume> {
    let bytes = std::fs::read(path)?;
    let header = parse_header(&bytes)?;
    let mut values = raw_values(&bytes, &header)?;
    if header.scl_slope != 0.0 && (header.scl_slope != 1.0 || header.scl_inter != 0.0) {
        for v in &mut values {
            *v = header.scl_slope * *v + header.scl_inter;
        }
    }
    ScalarVolume::new(header.dims, header.spacing, header.origin, values).map_err(ErrorKind::from)
}

/// Read a label volume and validate every voxel is one of {0, 1, 2}.
pub fn read_labels(path: &Path) -> KindResult<LabelVolume> {
    let bytes = std::fs::read(path)?;
    let header = parse_header(&bytes)?;
    if header.scl_slope != 0.0 && (header.scl_slope != 1.0 || header.scl_inter != 0.0) {
        return Err(ErrorKind::Validation(
            "label volume carries a non-identity intensity scaling".into(),
        ));
    }
    let values = raw_values(&bytes, &header)?;
    let mut labels = Vec::with_capacity(values.len());
    for v in values {
        if v.fract() != 0.0 || !(0.0..=2.0).contains(&v) {
            return Err(ErrorKind::Validation(format!(
                "label value {v} outside {{0, 1, 2}}"
            )));
        }
        labels.push(v as u8);
    }
    LabelVolume::new(header.dims, header.spacing, header.origin, labels).map_err(ErrorKind::from)
}

fn build_header(
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    datatype: DataType,
) -> Vec<u8> {
    let mut h = vec![0u8; HEADER_SIZE];
    LittleEndian::write_i32(&mut h[offset::SIZEOF_HDR..offset::SIZEOF_HDR + 4], 348);
    LittleEndian::write_i16(&mut h[offset::DIM..offset::DIM + 2], 3);
    for (i, &d) in dims.iter().enumerate() {
        let at = offset::DIM + 2 + i * 2;
        LittleEndian::write_i16(&mut h[at..at + 2], d as i16);
    }
    for i in 3..7 {
        let at = offset::DIM + 2 + i * 2;
        LittleEndian::write_i16(&mut h[at..at + 2], 1);
    }
    LittleEndian::write_i16(
        &mut h[offset::DATATYPE..offset::DATATYPE + 2],
        match datatype {
            DataType::UInt8 => 2,
            DataType::Int16 => 4,
            DataType::Int32 => 8,
            DataType::Float32 => 16,
            DataType::Float64 => 64,
        },
    );
    LittleEndian::write_i16(
        &mut h[offset::BITPIX..offset::BITPIX + 2],
        (datatype.byte_size() * 8) as i16,
    );
    LittleEndian::write_f32(&mut h[offset::PIXDIM..offset::PIXDIM + 4], 1.0); // qfac
    for (i, &s) in spacing.iter().enumerate() {
        let at = offset::PIXDIM + 4 + i * 4;
        LittleEndian::write_f32(&mut h[at..at + 4], s as f32);
    }
    LittleEndian::write_f32(&mut h[offset::VOX_OFFSET..offset::VOX_OFFSET + 4], DATA_OFFSET as f32);
    LittleEndian::write_f32(&mut h[offset::SCL_SLOPE..offset::SCL_SLOPE + 4], 1.0);
    LittleEndian::write_f32(&mut h[offset::SCL_INTER..offset::SCL_INTER + 4], 0.0);
    h[offset::XYZT_UNITS] = 2; // millimeters
    LittleEndian::write_i16(&mut h[offset::QFORM_CODE..offset::QFORM_CODE + 2], 1);
    LittleEndian::write_i16(&mut h[offset::SFORM_CODE..offset::SFORM_CODE + 2], 1);
    LittleEndian::write_f32(&mut h[offset::QOFFSET_X..offset::QOFFSET_X + 4], origin[0] as f32);
    LittleEndian::write_f32(&mut h[offset::QOFFSET_Y..offset::QOFFSET_Y + 4], origin[1] as f32);
    LittleEndian::write_f32(&mut h[offset::QOFFSET_Z..offset::QOFFSET_Z + 4], origin[2] as f32);
    // sform rows: diagonal spacing with the origin in the last column
    let rows = [offset::SROW_X, offset::SROW_Y, offset::SROW_Z];
    for (axis, &row) in rows.iter().enumerate() {
        LittleEndian::write_f32(&mut h[row + axis * 4..row + axis * 4 + 4], spacing[axis] as f32);
        LittleEndian::write_f32(&mut h[row + 12..row + 16], origin[axis] as f32);
    }
    h[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(b"n+1\0");
    h
}

fn write_file(path: &Path, header: Vec<u8>, data: &[u8]) -> KindResult<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&header)?;
    file.write_all(&[0u8; DATA_OFFSET - HEADER_SIZE])?; // no extensions
    file.write_all(data)?;
    Ok(())
}

/// Write a scalar volume as little-endian float32.
pub fn write_scalar(vol: &ScalarVolume, path: &Path) -> KindResult<()> {
    let header = build_header(vol.dims(), vol.spacing(), vol.origin(), DataType::Float32);
    let mut data = vec![0u8; vol.values().len() * 4];
    for (i, &v) in vol.values().iter().enumerate() {
        LittleEndian::write_f32(&mut data[i * 4..i * 4 + 4], v as f32);
    }
    write_file(path, header, &data)
}

/// Write a label volume as uint8.
pub fn write_labels(vol: &LabelVolume, path: &Path) -> KindResult<()> {
    let header = build_header(vol.dims(), vol.spacing(), vol.origin(), DataType::UInt8);
    write_file(path, header, vol.labels())
}
