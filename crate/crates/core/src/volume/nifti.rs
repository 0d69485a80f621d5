//! Single-file NIfTI-1 reader/writer (`.nii`, optionally gzipped).
//!
//! Supported subset: 3-D scalar images and 3-D images with a vector
//! component axis in `dim[5]`, stored as int16 or float32.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Grid, Volume, IDENTITY3};
use crate::error::{InspexError, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
pub const DESCRIP_LEN: usize = 80;

/// Decoded image: spatial grid, component count and scaled float voxels.
/// Components are the slowest axis in `data`.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiImage {
    pub grid: Grid,
    pub components: usize,
    pub intent_code: i16,
    pub description: String,
    pub data: Vec<f32>,
}

struct Reader<'a> {
    b: &'a [u8],
    swap: bool,
}

impl Reader<'_> {
    fn i16(&self, off: usize) -> i16 {
        let a = [self.b[off], self.b[off + 1]];
        if self.swap {
            i16::from_be_bytes(a)
        } else {
            i16::from_le_bytes(a)
        }
    }

    fn i32(&self, off: usize) -> i32 {
        let a = self.b[off..off + 4].try_into().unwrap();
        if self.swap {
            i32::from_be_bytes(a)
        } else {
            i32::from_le_bytes(a)
        }
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_bits(self.i32(off) as u32)
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(InspexError::io(path))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| InspexError::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn load_nifti_raw(path: &Path) -> Result<NiftiImage> {
    let bytes = read_bytes(path)?;
    decode(&bytes).map_err(|e| match e {
        InspexError::Format(m) => InspexError::Format(format!("{}: {m}", path.display())),
        InspexError::Unsupported(m) => InspexError::Unsupported(format!("{}: {m}", path.display())),
        InspexError::Data(m) => InspexError::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn decode(bytes: &[u8]) -> Result<NiftiImage> {
    if bytes.len() < HEADER_SIZE {
        return Err(InspexError::Format(format!("{} bytes is shorter than a NIfTI-1 header", bytes.len())));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let swap = match le {
        348 => false,
        _ if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == 348 => true,
        _ => return Err(InspexError::Format(format!("sizeof_hdr is {le}, expected 348"))),
    };
    if &bytes[344..348] != b"n+1\0" {
        return Err(InspexError::Format(format!(
            "magic {:?} is not single-file NIfTI-1",
            String::from_utf8_lossy(&bytes[344..348])
        )));
    }
    let r = Reader { b: bytes, swap };
    let dim: Vec<i64> = (0..8).map(|i| r.i16(40 + 2 * i) as i64).collect();
    let ndim = dim[0];
    if !(3..=5).contains(&ndim) {
        return Err(InspexError::Unsupported(format!("{ndim}-D image; only 3-D volumes are supported")));
    }
    let extent = |i: usize| if (i as i64) <= ndim { dim[i].max(1) } else { 1 };
    if dim[1..=3].iter().any(|&d| d < 1) {
        return Err(InspexError::Format(format!("invalid dimensions {:?}", &dim[1..=3])));
    }
    if extent(4) != 1 {
        return Err(InspexError::Unsupported(format!("4-D series with {} time points", extent(4))));
    }
    let components = extent(5) as usize;
    if (6..8).any(|i| extent(i) != 1) {
        return Err(InspexError::Unsupported("dimensions beyond 5".into()));
    }
    let shape = [dim[1] as usize, dim[2] as usize, dim[3] as usize];
    let datatype = r.i16(70);
    let bytes_per = match datatype {
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        other => return Err(InspexError::Unsupported(format!("datatype code {other}"))),
    };
    let pixdim: Vec<f32> = (0..8).map(|i| r.f32(76 + 4 * i)).collect();
    let vox_offset = r.f32(108);
    if !(vox_offset >= HEADER_SIZE as f32) {
        return Err(InspexError::Format(format!("vox_offset {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    let mut slope = r.f32(112) as f64;
    let inter = r.f32(116) as f64;
    if slope == 0.0 || !slope.is_finite() {
        slope = 1.0;
    }
    let inter = if inter.is_finite() { inter } else { 0.0 };

    let n = shape.iter().product::<usize>() * components;
    let payload = bytes
        .get(vox_offset..vox_offset + n * bytes_per)
        .ok_or_else(|| InspexError::Format(format!("truncated: need {} voxel bytes", n * bytes_per)))?;
    let identity_scale = slope == 1.0 && inter == 0.0;
    let data: Vec<f32> = match datatype {
        DT_INT16 => payload
            .chunks_exact(2)
            .map(|c| {
                let raw = if swap {
                    i16::from_be_bytes([c[0], c[1]])
                } else {
                    i16::from_le_bytes([c[0], c[1]])
                };
                (slope * raw as f64 + inter) as f32
            })
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|c| {
                let a = [c[0], c[1], c[2], c[3]];
                let raw = if swap { f32::from_be_bytes(a) } else { f32::from_le_bytes(a) };
                if identity_scale {
                    raw
                } else {
                    (slope * raw as f64 + inter) as f32
                }
            })
            .collect(),
    };
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(InspexError::Data(format!("non-finite voxel at index {i}")));
    }

    let mut spacing = [pixdim[1] as f64, pixdim[2] as f64, pixdim[3] as f64];
    for s in spacing.iter_mut() {
        if !(*s > 0.0 && s.is_finite()) {
            *s = s.abs();
            if *s == 0.0 || !s.is_finite() {
                *s = 1.0;
            }
        }
    }
    let (origin, direction) = orientation(&r, pixdim[0]);
    let descrip = &bytes[148..148 + DESCRIP_LEN];
    let end = descrip.iter().position(|&b| b == 0).unwrap_or(DESCRIP_LEN);
    let grid = Grid {
        shape,
        spacing,
        origin,
        direction,
    };
    grid.validate()?;
    Ok(NiftiImage {
        grid,
        components,
        intent_code: r.i16(68),
        description: String::from_utf8_lossy(&descrip[..end]).into_owned(),
        data,
    })
}

// Origin and direction from sform when present, else qform, else identity.
fn orientation(r: &Reader, qfac: f32) -> ([f64; 3], [[f64; 3]; 3]) {
    let qform_code = r.i16(252);
    let sform_code = r.i16(254);
    if sform_code > 0 {
        let rows: Vec<[f64; 4]> = (0..3)
            .map(|i| {
                let mut row = [0.0; 4];
                for (j, v) in row.iter_mut().enumerate() {
                    *v = r.f32(280 + 16 * i + 4 * j) as f64;
                }
                row
            })
            .collect();
        let mut dir = [[0.0; 3]; 3];
        for col in 0..3 {
            let norm = (0..3).map(|i| rows[i][col] * rows[i][col]).sum::<f64>().sqrt();
            for i in 0..3 {
                dir[i][col] = if norm > 0.0 { rows[i][col] / norm } else { IDENTITY3[i][col] };
            }
        }
        let origin = [rows[0][3], rows[1][3], rows[2][3]];
        if origin.iter().chain(dir.iter().flatten()).all(|v| v.is_finite()) {
            return (origin, dir);
        }
    }
    if qform_code > 0 {
        let (b, c, d) = (r.f32(256) as f64, r.f32(260) as f64, r.f32(264) as f64);
        let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
        let mut m = [
            [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
            [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
            [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ];
        if qfac < 0.0 {
            for row in m.iter_mut() {
                row[2] = -row[2];
            }
        }
        let origin = [r.f32(268) as f64, r.f32(272) as f64, r.f32(276) as f64];
        return (origin, m);
    }
    ([0.0; 3], IDENTITY3)
}

fn encode(img: &NiftiImage) -> Vec<u8> {
    let g = &img.grid;
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut Vec<u8>, off: usize, v: i16| h[off..off + 2].copy_from_slice(&v.to_le_bytes());
    let put_i32 = |h: &mut Vec<u8>, off: usize, v: i32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, off: usize, v: f32| h[off..off + 4].copy_from_slice(&v.to_le_bytes());
    put_i32(&mut h, 0, HEADER_SIZE as i32);
    h[38] = b'r';
    let ndim: i16 = if img.components > 1 { 5 } else { 3 };
    let dims = [ndim, g.shape[0] as i16, g.shape[1] as i16, g.shape[2] as i16, 1, img.components as i16, 1, 1];
    for (i, d) in dims.iter().enumerate() {
        put_i16(&mut h, 40 + 2 * i, *d);
    }
    put_i16(&mut h, 68, img.intent_code);
    put_i16(&mut h, 70, DT_FLOAT32);
    put_i16(&mut h, 72, 32);
    let pixdim = [1.0, g.spacing[0] as f32, g.spacing[1] as f32, g.spacing[2] as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        put_f32(&mut h, 76 + 4 * i, *p);
    }
    put_f32(&mut h, 108, VOX_OFFSET as f32);
    put_f32(&mut h, 112, 1.0);
    put_f32(&mut h, 116, 0.0);
    // mm + sec
    h[123] = 2 | 8;
    let desc = img.description.as_bytes();
    let n = desc.len().min(DESCRIP_LEN - 1);
    h[148..148 + n].copy_from_slice(&desc[..n]);
    put_i16(&mut h, 254, 1);
    for i in 0..3 {
        for j in 0..3 {
            put_f32(&mut h, 280 + 16 * i + 4 * j, (g.direction[i][j] * g.spacing[j]) as f32);
        }
        put_f32(&mut h, 280 + 16 * i + 12, g.origin[i] as f32);
    }
    h[344..348].copy_from_slice(b"n+1\0");
    h.reserve(img.data.len() * 4);
    for v in &img.data {
        h.extend_from_slice(&v.to_le_bytes());
    }
    h
}

/// Writes float32 NIfTI-1; gzip when the path ends in `.gz`. The file is
/// written under a temporary name and renamed into place.
pub fn save_nifti_raw(path: &Path, img: &NiftiImage) -> Result<()> {
    img.grid.validate()?;
    if img.data.len() != img.grid.len() * img.components {
        return Err(InspexError::Argument("voxel buffer does not match grid".into()));
    }
    let mut bytes = encode(img);
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&bytes).map_err(InspexError::io(path))?;
        bytes = enc.finish().map_err(InspexError::io(path))?;
    }
    crate::io::write_atomic(path, &bytes)
}

pub fn load_nifti(path: &Path) -> Result<Volume> {
    let img = load_nifti_raw(path)?;
    if img.components != 1 {
        return Err(InspexError::Unsupported(format!(
            "{}: {} components per voxel, expected a scalar volume",
            path.display(),
            img.components
        )));
    }
    Volume::new(img.grid, img.data)
}

pub fn save_nifti(v: &Volume, path: &Path) -> Result<()> {
    save_nifti_raw(
        path,
        &NiftiImage {
            grid: v.grid().clone(),
            components: 1,
            intent_code: 0,
            description: "HU".into(),
            data: v.data().to_vec(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(dims: [i16; 8], datatype: i16, slope: f32, inter: f32) -> Vec<u8> {
        let mut h = vec![0u8; VOX_OFFSET];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        for (i, d) in dims.iter().enumerate() {
            h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&datatype.to_le_bytes());
        for i in 1..4 {
            h[76 + 4 * i..80 + 4 * i].copy_from_slice(&1.0f32.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[112..116].copy_from_slice(&slope.to_le_bytes());
        h[116..120].copy_from_slice(&inter.to_le_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h
    }

    #[test]
    fn int16_scaling_applies_slope_and_intercept() {
        let mut b = header([3, 2, 1, 1, 1, 1, 1, 1], DT_INT16, 1.0, -1024.0);
        b.extend_from_slice(&24i16.to_le_bytes());
        b.extend_from_slice(&1064i16.to_le_bytes());
        let img = decode(&b).unwrap();
        assert_eq!(img.data, vec![-1000.0, 40.0]);
    }

    #[test]
    fn rejects_bad_magic_4d_and_datatypes() {
        let mut b = header([3, 1, 1, 1, 1, 1, 1, 1], DT_FLOAT32, 1.0, 0.0);
        b.extend_from_slice(&0f32.to_le_bytes());
        let mut bad = b.clone();
        bad[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(decode(&bad), Err(InspexError::Format(_))));

        let mut four = header([4, 1, 1, 1, 2, 1, 1, 1], DT_FLOAT32, 1.0, 0.0);
        four.extend_from_slice(&[0u8; 8]);
        assert!(matches!(decode(&four), Err(InspexError::Unsupported(_))));

        let mut u8img = header([3, 1, 1, 1, 1, 1, 1, 1], 2, 1.0, 0.0);
        u8img.push(0);
        assert!(matches!(decode(&u8img), Err(InspexError::Unsupported(_))));
    }

    #[test]
    fn non_finite_payload_is_a_data_error() {
        let mut b = header([3, 1, 1, 1, 1, 1, 1, 1], DT_FLOAT32, 1.0, 0.0);
        b.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&b), Err(InspexError::Data(_))));
    }

    #[test]
    fn big_endian_headers_are_read() {
        let mut h = vec![0u8; VOX_OFFSET];
        h[0..4].copy_from_slice(&348i32.to_be_bytes());
        for (i, d) in [3i16, 1, 1, 1, 1, 1, 1, 1].iter().enumerate() {
            h[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_be_bytes());
        }
        h[70..72].copy_from_slice(&DT_FLOAT32.to_be_bytes());
        h[108..112].copy_from_slice(&352f32.to_be_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(&(-850.5f32).to_be_bytes());
        assert_eq!(decode(&h).unwrap().data, vec![-850.5]);
    }
}
