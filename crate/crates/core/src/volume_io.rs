//! The `.mev` volume container.
//!
//! Layout, all multi-byte fields little-endian, 38-byte header:
//!
//! | offset | size | field                                             |
//! |-------:|-----:|---------------------------------------------------|
//! | 0      | 4    | magic `b"MEVL"`                                   |
//! | 4      | 4    | `format_version: u32` (currently 1)               |
//! | 8      | 1    | `kind: u8` (0 evidence, 1 labels, 2 scalar field) |
//! | 9      | 4    | `classes: u32`                                    |
//! | 13     | 12   | `dims: [u32; 3]` as (H, W, L)                     |
//! | 25     | 12   | `spacing: [f32; 3]` in mm                         |
//! | 37     | 1    | `dtype: u8` (0 f32, 1 u16)                        |
//! | 38     | ...  | payload                                           |
//!
//! Evidence payloads hold `classes * H * W * L` f32 values, channel-major, each
//! channel in C order (`L` fastest). Label payloads hold `H * W * L` u16 values
//! and scalar fields `H * W * L` f32 values. Evidence is always f32, labels
//! always u16, scalar fields always f32; scalar fields carry `classes = 1`.
//!
//! Converting from NIfTI needs only these header fields: `dim[1..=3]` to
//! `dims`, `pixdim[1..=3]` to `spacing`, `dim[4]` to `classes` for evidence,
//! and `datatype` to the matching payload dtype after casting.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"MEVL";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 38;
/// Label value marking a voxel with no pseudo-label.
pub const CONTENTIOUS_LABEL: u16 = u16::MAX;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("size mismatch: expected {expected} payload bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("kind/dtype mismatch: {0}")]
    KindMismatch(String),
    #[error("cannot serialize: {0}")]
    Serialization(String),
}

impl VolumeError {
    /// Stable numeric code for each failure class.
    pub fn code(&self) -> u8 {
        match self {
            VolumeError::Io { .. } => 1,
            VolumeError::CorruptHeader(_) => 2,
            VolumeError::SizeMismatch { .. } => 3,
            VolumeError::KindMismatch(_) => 4,
            VolumeError::Serialization(_) => 5,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        VolumeError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

type VResult<T> = std::result::Result<T, VolumeError>;

/// Volume extent in voxels, `(H, W, L)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub h: usize,
    pub w: usize,
    pub l: usize,
}

impl Dims {
    pub const fn new(h: usize, w: usize, l: usize) -> Self {
        Self { h, w, l }
    }

    pub fn voxel_count(&self) -> usize {
        self.h * self.w * self.l
    }

    /// Row-major linear index of `(i, j, k)`.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.w + j) * self.l + k
    }

    #[inline]
    pub fn coords(&self, v: usize) -> (usize, usize, usize) {
        (v / (self.w * self.l), (v / self.l) % self.w, v % self.l)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.h, self.w, self.l]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum VolumeKind {
    Evidence = 0,
    Labels = 1,
    ScalarField = 2,
}

impl VolumeKind {
    fn from_u8(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Evidence),
            1 => Some(Self::Labels),
            2 => Some(Self::ScalarField),
            _ => None,
        }
    }

    fn dtype(self) -> Dtype {
        match self {
            VolumeKind::Labels => Dtype::U16,
            VolumeKind::Evidence | VolumeKind::ScalarField => Dtype::F32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 0,
    U16 = 1,
}

impl Dtype {
    fn from_u8(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::F32),
            1 => Some(Self::U16),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeHeader {
    pub format_version: u32,
    pub kind: VolumeKind,
    pub classes: u32,
    pub dims: Dims,
    pub spacing: [f32; 3],
    pub dtype: Dtype,
}

impl VolumeHeader {
    pub fn payload_values(&self) -> usize {
        match self.kind {
            VolumeKind::Evidence => self.classes as usize * self.dims.voxel_count(),
            _ => self.dims.voxel_count(),
        }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.classes.to_le_bytes());
        for d in self.dims.as_array() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for s in self.spacing {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.push(self.dtype as u8);
    }

    fn decode(bytes: &[u8]) -> VResult<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(VolumeError::CorruptHeader(format!(
                "file has {} bytes, header needs {HEADER_LEN}",
                bytes.len()
            )));
        }
        if bytes[0..4] != MAGIC {
            return Err(VolumeError::CorruptHeader(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let format_version = u32_at(4);
        if format_version != FORMAT_VERSION {
            return Err(VolumeError::CorruptHeader(format!(
                "unsupported format version {format_version}"
            )));
        }
        let kind = VolumeKind::from_u8(bytes[8])
            .ok_or_else(|| VolumeError::CorruptHeader(format!("unknown kind {}", bytes[8])))?;
        let classes = u32_at(9);
        let dims = Dims::new(u32_at(13) as usize, u32_at(17) as usize, u32_at(21) as usize);
        let spacing = [f32_at(25), f32_at(29), f32_at(33)];
        let dtype = Dtype::from_u8(bytes[37])
            .ok_or_else(|| VolumeError::CorruptHeader(format!("unknown dtype {}", bytes[37])))?;
        let header = Self {
            format_version,
            kind,
            classes,
            dims,
            spacing,
            dtype,
        };
        header.validate()?;
        Ok(header)
    }

    fn validate(&self) -> VResult<()> {
        if self.dims.as_array().contains(&0) {
            return Err(VolumeError::CorruptHeader(format!("zero extent in {:?}", self.dims)));
        }
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(VolumeError::CorruptHeader(format!(
                "spacing {:?} must be positive",
                self.spacing
            )));
        }
        match self.kind {
            VolumeKind::Evidence if self.classes < 2 => {
                return Err(VolumeError::CorruptHeader("evidence needs >= 2 classes".into()))
            }
            VolumeKind::Labels if self.classes < 1 => {
                return Err(VolumeError::CorruptHeader("label volume needs >= 1 class".into()))
            }
            VolumeKind::ScalarField if self.classes != 1 => {
                return Err(VolumeError::CorruptHeader("scalar field must have classes = 1".into()))
            }
            _ => {}
        }
        if self.kind.dtype() != self.dtype {
            return Err(VolumeError::KindMismatch(format!(
                "{:?} volume cannot carry {:?} payload",
                self.kind, self.dtype
            )));
        }
        Ok(())
    }
}

fn check_len(dims: Dims, per_voxel: usize, len: usize) -> VResult<()> {
    let expected = dims.voxel_count() * per_voxel;
    if len != expected {
        return Err(VolumeError::SizeMismatch {
            expected,
            found: len,
        });
    }
    Ok(())
}

/// Per-class non-negative evidence for every voxel, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceMap {
    dims: Dims,
    classes: usize,
    spacing: [f32; 3],
    data: Vec<f32>,
}

impl EvidenceMap {
    /// `data` is channel-major: `data[c * V + v]`.
    pub fn new(dims: Dims, classes: usize, spacing: [f32; 3], data: Vec<f32>) -> VResult<Self> {
        check_len(dims, classes, data.len())?;
        Ok(Self {
            dims,
            classes,
            spacing,
            data,
        })
    }

    /// Builds a map from voxel-major values (`values[v * K + c]`).
    pub fn from_voxel_major(
        dims: Dims,
        classes: usize,
        spacing: [f32; 3],
        values: &[f64],
    ) -> VResult<Self> {
        check_len(dims, classes, values.len())?;
        let n = dims.voxel_count();
        let mut data = vec![0.0f32; n * classes];
        for v in 0..n {
            for c in 0..classes {
                data[c * n + v] = values[v * classes + c] as f32;
            }
        }
        Ok(Self {
            dims,
            classes,
            spacing,
            data,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn voxel_evidence(&self, v: usize) -> Vec<f64> {
        let n = self.dims.voxel_count();
        (0..self.classes).map(|c| self.data[c * n + v] as f64).collect()
    }

    /// Treats the stored values as logits and maps them through softplus.
    pub fn softplus(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|&x| {
                let x = x as f64;
                (x.max(0.0) + (-x.abs()).exp().ln_1p()) as f32
            })
            .collect();
        Self {
            data,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: Dims,
    classes: usize,
    spacing: [f32; 3],
    labels: Vec<u16>,
}

impl LabelVolume {
    pub fn new(dims: Dims, classes: usize, spacing: [f32; 3], labels: Vec<u16>) -> VResult<Self> {
        check_len(dims, 1, labels.len())?;
        Ok(Self {
            dims,
            classes,
            spacing,
            labels,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    dims: Dims,
    spacing: [f32; 3],
    values: Vec<f32>,
}

impl ScalarField {
    pub fn new(dims: Dims, spacing: [f32; 3], values: Vec<f32>) -> VResult<Self> {
        check_len(dims, 1, values.len())?;
        Ok(Self {
            dims,
            spacing,
            values,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Evidence(EvidenceMap),
    Labels(LabelVolume),
    Scalar(ScalarField),
}

impl Volume {
    pub fn header(&self) -> VolumeHeader {
        let (kind, classes, dims, spacing) = match self {
            Volume::Evidence(e) => (VolumeKind::Evidence, e.classes, e.dims, e.spacing),
            Volume::Labels(l) => (VolumeKind::Labels, l.classes, l.dims, l.spacing),
            Volume::Scalar(s) => (VolumeKind::ScalarField, 1, s.dims, s.spacing),
        };
        VolumeHeader {
            format_version: FORMAT_VERSION,
            kind,
            classes: classes as u32,
            dims,
            spacing,
            dtype: kind.dtype(),
        }
    }

    pub fn kind(&self) -> VolumeKind {
        self.header().kind
    }

    pub fn to_bytes(&self) -> VResult<Vec<u8>> {
        let header = self.header();
        header.validate()?;
        if header.dims.as_array().iter().any(|&d| d > u32::MAX as usize) {
            return Err(VolumeError::CorruptHeader("extent exceeds u32".into()));
        }
        let mut out = Vec::with_capacity(HEADER_LEN + header.payload_values() * header.dtype.width());
        header.encode(&mut out);
        match self {
            Volume::Evidence(e) => e.data.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Volume::Labels(l) => l.labels.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Volume::Scalar(s) => s.values.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> VResult<Self> {
        let header = VolumeHeader::decode(bytes)?;
        let payload = &bytes[HEADER_LEN..];
        let expected = header.payload_values() * header.dtype.width();
        if payload.len() != expected {
            return Err(VolumeError::SizeMismatch {
                expected,
                found: payload.len(),
            });
        }
        let f32s = || -> Vec<f32> {
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        Ok(match header.kind {
            VolumeKind::Evidence => Volume::Evidence(EvidenceMap {
                dims: header.dims,
                classes: header.classes as usize,
                spacing: header.spacing,
                data: f32s(),
            }),
            VolumeKind::ScalarField => Volume::Scalar(ScalarField {
                dims: header.dims,
                spacing: header.spacing,
                values: f32s(),
            }),
            VolumeKind::Labels => Volume::Labels(LabelVolume {
                dims: header.dims,
                classes: header.classes as usize,
                spacing: header.spacing,
                labels: payload
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            }),
        })
    }

    pub fn into_evidence(self) -> VResult<EvidenceMap> {
        match self {
            Volume::Evidence(e) => Ok(e),
            other => Err(VolumeError::KindMismatch(format!(
                "expected evidence volume, found {:?}",
                other.kind()
            ))),
        }
    }

    pub fn into_labels(self) -> VResult<LabelVolume> {
        match self {
            Volume::Labels(l) => Ok(l),
            other => Err(VolumeError::KindMismatch(format!(
                "expected label volume, found {:?}",
                other.kind()
            ))),
        }
    }

    pub fn into_scalar(self) -> VResult<ScalarField> {
        match self {
            Volume::Scalar(s) => Ok(s),
            other => Err(VolumeError::KindMismatch(format!(
                "expected scalar field, found {:?}",
                other.kind()
            ))),
        }
    }
}

impl From<EvidenceMap> for Volume {
    fn from(v: EvidenceMap) -> Self {
        Volume::Evidence(v)
    }
}

impl From<LabelVolume> for Volume {
    fn from(v: LabelVolume) -> Self {
        Volume::Labels(v)
    }
}

impl From<ScalarField> for Volume {
    fn from(v: ScalarField) -> Self {
        Volume::Scalar(v)
    }
}

pub fn read_volume(path: impl AsRef<Path>) -> VResult<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| VolumeError::io(path, e))?;
    Volume::from_bytes(&bytes)
}

pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> VResult<()> {
    let path = path.as_ref();
    let bytes = volume.to_bytes()?;
    fs::write(path, bytes).map_err(|e| VolumeError::io(path, e))
}

/// `printf("%.{digits}g")` formatting.
pub fn format_significant(value: f64, digits: usize) -> String {
    if value == 0.0 {
        return "0".to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, value);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{value:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes one `i,j,k,value` line per voxel in row-major order with 9
/// significant digits.
pub fn export_csv(field: &ScalarField, path: impl AsRef<Path>) -> VResult<()> {
    let path = path.as_ref();
    if path.as_os_str().is_empty() {
        return Err(VolumeError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty path"),
        ));
    }
    if let Some(pos) = field.values.iter().position(|v| !v.is_finite()) {
        return Err(VolumeError::Serialization(format!(
            "voxel {pos} holds non-finite value {}",
            field.values[pos]
        )));
    }
    let mut text = String::with_capacity(field.values.len() * 16);
    for (v, &x) in field.values.iter().enumerate() {
        let (i, j, k) = field.dims.coords(v);
        let _ = writeln!(text, "{i},{j},{k},{}", format_significant(x as f64, 9));
    }
    let file = fs::File::create(path).map_err(|e| VolumeError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| VolumeError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn evidence_2x2x2() -> EvidenceMap {
        let data: Vec<f32> = (0..16).map(|i| i as f32 * 0.25).collect();
        EvidenceMap::new(Dims::new(2, 2, 2), 2, [1.0, 1.0, 2.5], data).unwrap()
    }

    #[test]
    fn header_is_38_bytes_and_little_endian() {
        let bytes = Volume::from(evidence_2x2x2()).to_bytes().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 16 * 4);
        assert_eq!(&bytes[0..4], b"MEVL");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(bytes[8], 0);
        assert_eq!(&bytes[9..13], &[2, 0, 0, 0]);
        assert_eq!(&bytes[33..37], &2.5f32.to_le_bytes());
        assert_eq!(bytes[37], 0);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = Volume::from(evidence_2x2x2()).to_bytes().unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        let err = Volume::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, VolumeError::CorruptHeader(_)));
        assert_eq!(err.code(), 2);
    }

    #[test]
    fn truncated_payload() {
        let bytes = Volume::from(evidence_2x2x2()).to_bytes().unwrap();
        let err = Volume::from_bytes(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(matches!(err, VolumeError::SizeMismatch { expected: 64, found: 60 }));
        assert_eq!(err.code(), 3);
    }

    #[test]
    fn kind_dtype_mismatch() {
        let mut bytes = Volume::from(evidence_2x2x2()).to_bytes().unwrap();
        bytes[37] = Dtype::U16 as u8;
        assert_eq!(Volume::from_bytes(&bytes).unwrap_err().code(), 4);
        let err = Volume::from(evidence_2x2x2()).into_labels().unwrap_err();
        assert_eq!(err.code(), 4);
    }

    #[test]
    fn typed_accessors() {
        let e = evidence_2x2x2();
        assert_eq!(e.voxel_evidence(1), vec![0.25, 2.25]);
        let vm = EvidenceMap::from_voxel_major(Dims::new(1, 1, 2), 2, [1.0; 3], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(vm.data(), &[1.0, 3.0, 2.0, 4.0]);
        let sp = EvidenceMap::new(Dims::new(1, 1, 1), 2, [1.0; 3], vec![0.0, 30.0]).unwrap().softplus();
        assert!((sp.data()[0] - std::f32::consts::LN_2).abs() < 1e-7);
        assert!((sp.data()[1] - 30.0).abs() < 1e-5);
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_significant(0.5, 9), "0.5");
        assert_eq!(format_significant(1.0, 9), "1");
        assert_eq!(format_significant(0.1f32 as f64, 9), "0.100000001");
        assert_eq!(format_significant(123456789.0, 9), "123456789");
        assert_eq!(format_significant(1234567890.0, 9), "1.23456789e+09");
        assert_eq!(format_significant(-2.5e-7, 9), "-2.5e-07");
        assert_eq!(format_significant(0.0001, 9), "0.0001");
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let f = ScalarField::new(Dims::new(1, 1, 2), [1.0; 3], vec![0.5, 1.0]).unwrap();
        export_csv(&f, &path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "0,0,0,0.5\n0,0,1,1\n");

        assert_eq!(export_csv(&f, "").unwrap_err().code(), 1);
        let nan = ScalarField::new(Dims::new(1, 1, 2), [1.0; 3], vec![0.5, f32::NAN]).unwrap();
        assert_eq!(export_csv(&nan, dir.path().join("n.csv")).unwrap_err().code(), 5);
    }

    #[test]
    fn missing_file_is_io() {
        assert_eq!(read_volume("/nonexistent/x.mev").unwrap_err().code(), 1);
    }
}
