//! NIfTI-1 single-file reader and writer.
//!
//! Reads either byte order (detected from `sizeof_hdr`) and transparently
//! inflates gzip streams. Writes one canonical form: little-endian, magic
//! `n+1`, `vox_offset` 352, no extensions, optionally gzip-compressed.
//!
//! Orientation fields (qform/sform) are parsed and preserved but never
//! applied; voxel data is handled in stored order.

use std::io::{Read, Write};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::volume::{voxel_count, LabelMap, Shape, Spacing, VolumeGrid};
use crate::{Error, Result};

pub const HEADER_SIZE: usize = 348;
/// Payload offset of everything this module writes (header + 4 extension bytes).
pub const CANONICAL_VOX_OFFSET: usize = 352;
pub const MAGIC: [u8; 4] = *b"n+1\0";
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

/// Supported voxel storage types.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(i16)]
pub enum DataType {
    UInt8 = 2,
    Int16 = 4,
    Int32 = 8,
    Float32 = 16,
}

impl DataType {
    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Self::UInt8),
            4 => Ok(Self::Int16),
            8 => Ok(Self::Int32),
            16 => Ok(Self::Float32),
            _ => Err(Error::UnsupportedDatatype(code)),
        }
    }

    pub fn code(self) -> i16 {
        self as i16
    }

    pub fn byte_size(self) -> usize {
        match self {
            Self::UInt8 => 1,
            Self::Int16 => 2,
            Self::Int32 | Self::Float32 => 4,
        }
    }

    pub fn bitpix(self) -> i16 {
        8 * self.byte_size() as i16
    }
}

/// Parsed NIfTI-1 header. Legacy ANALYZE fields are not kept.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim_info: u8,
    pub dim: [i16; 8],
    pub intent_p1: f32,
    pub intent_p2: f32,
    pub intent_p3: f32,
    pub intent_code: i16,
    pub datatype: i16,
    pub bitpix: i16,
    pub slice_start: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub slice_end: i16,
    pub slice_code: u8,
    pub xyzt_units: u8,
    pub cal_max: f32,
    pub cal_min: f32,
    pub slice_duration: f32,
    pub toffset: f32,
    pub descrip: [u8; 80],
    pub aux_file: [u8; 24],
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern_b: f32,
    pub quatern_c: f32,
    pub quatern_d: f32,
    pub qoffset_x: f32,
    pub qoffset_y: f32,
    pub qoffset_z: f32,
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub intent_name: [u8; 16],
    pub magic: [u8; 4],
}

impl Default for NiftiHeader {
    fn default() -> Self {
        Self {
            dim_info: 0,
            dim: [3, 1, 1, 1, 1, 1, 1, 1],
            intent_p1: 0.0,
            intent_p2: 0.0,
            intent_p3: 0.0,
            intent_code: 0,
            datatype: DataType::Float32.code(),
            bitpix: DataType::Float32.bitpix(),
            slice_start: 0,
            pixdim: [1.0; 8],
            vox_offset: CANONICAL_VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            slice_end: 0,
            slice_code: 0,
            // millimetres + seconds
            xyzt_units: 2 | 8,
            cal_max: 0.0,
            cal_min: 0.0,
            slice_duration: 0.0,
            toffset: 0.0,
            descrip: [0; 80],
            aux_file: [0; 24],
            qform_code: 1,
            sform_code: 0,
            quatern_b: 0.0,
            quatern_c: 0.0,
            quatern_d: 0.0,
            qoffset_x: 0.0,
            qoffset_y: 0.0,
            qoffset_z: 0.0,
            srow_x: [0.0; 4],
            srow_y: [0.0; 4],
            srow_z: [0.0; 4],
            intent_name: [0; 16],
            magic: MAGIC,
        }
    }
}

impl NiftiHeader {
    /// Header for a 3D volume of the given geometry and storage type.
    pub fn for_volume(shape: Shape, spacing: Spacing, datatype: DataType) -> Self {
        let mut h = Self::default();
        for a in 0..3 {
            h.dim[a + 1] = shape[a] as i16;
            h.pixdim[a + 1] = spacing[a] as f32;
        }
        h.datatype = datatype.code();
        h.bitpix = datatype.bitpix();
        h
    }

    pub fn shape(&self) -> Shape {
        [self.dim[1] as usize, self.dim[2] as usize, self.dim[3] as usize]
    }

    /// Spatial spacing in mm, widened through the shortest decimal form of
    /// each stored `f32` so that a spacing written as 1.62 reads back as the
    /// `f64` 1.62 rather than 1.6200000047683716.
    pub fn spacing(&self) -> Spacing {
        std::array::from_fn(|a| widen(self.pixdim[a + 1]))
    }

    pub fn data_type(&self) -> Result<DataType> {
        DataType::from_code(self.datatype)
    }

    fn scaling(&self) -> Option<(f64, f64)> {
        (self.scl_slope != 0.0 && self.scl_slope.is_finite())
            .then(|| (f64::from(self.scl_slope), f64::from(self.scl_inter)))
    }

    fn validate(&self) -> Result<()> {
        if !(self.dim[0] == 3 || self.dim[0] == 4) {
            return Err(Error::Format(format!("dim[0] = {} (only 3D volumes are supported)", self.dim[0])));
        }
        if self.dim[1..4].iter().any(|&d| d < 1) {
            return Err(Error::Format(format!("non-positive dimension in {:?}", &self.dim[1..4])));
        }
        if self.pixdim[1..4].iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Format(format!("non-positive voxel spacing {:?}", &self.pixdim[1..4])));
        }
        Ok(())
    }
}

fn widen(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(f64::from(v))
}

/// Voxel volume in mm³: the product of the three spatial spacings.
pub fn voxel_volume(header: &NiftiHeader) -> Result<f64> {
    crate::volume::voxel_volume(header.spacing())
}

/// A header plus its intensity-scaled voxel values in x-fastest order.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiImage {
    pub header: NiftiHeader,
    pub data: Vec<f64>,
}

impl NiftiImage {
    pub fn new(header: NiftiHeader, data: Vec<f64>) -> Result<Self> {
        let image = Self { header, data };
        image.check_consistency()?;
        Ok(image)
    }

    /// Float32 image of a CT volume.
    pub fn from_volume(volume: &VolumeGrid) -> Self {
        Self {
            header: NiftiHeader::for_volume(volume.shape(), volume.spacing(), DataType::Float32),
            data: volume.values().to_vec(),
        }
    }

    /// Unsigned 8-bit image of a label map.
    pub fn from_labels(labels: &LabelMap) -> Self {
        Self {
            header: NiftiHeader::for_volume(labels.shape(), labels.spacing(), DataType::UInt8),
            data: labels.labels().iter().map(|&l| f64::from(l)).collect(),
        }
    }

    pub fn to_volume(&self) -> Result<VolumeGrid> {
        VolumeGrid::new(self.header.shape(), self.header.spacing(), self.data.clone())
    }

    /// Interpret the voxel values as class labels.
    pub fn to_labels(&self) -> Result<LabelMap> {
        let labels = self
            .data
            .iter()
            .map(|&v| {
                if v == v.trunc() && (0.0..=255.0).contains(&v) {
                    Ok(v as u8)
                } else {
                    Err(Error::Validation(format!("voxel value {v} is not a class label")))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        LabelMap::new(self.header.shape(), self.header.spacing(), labels)
    }

    fn check_consistency(&self) -> Result<()> {
        self.header.validate()?;
        if self.header.dim[0] == 4 && self.header.dim[4] > 1 {
            return Err(Error::Consistency("time series cannot be written".into()));
        }
        let expected = voxel_count(self.header.shape());
        if self.data.len() != expected {
            return Err(Error::Consistency(format!(
                "dims {:?} need {expected} voxels, payload has {}",
                &self.header.dim[1..4],
                self.data.len()
            )));
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    big_endian: bool,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut b: [u8; N] = self.bytes[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        if self.big_endian {
            b.reverse();
        }
        b
    }

    fn raw<const N: usize>(&mut self) -> [u8; N] {
        let b = self.bytes[self.pos..self.pos + N].try_into().unwrap();
        self.pos += N;
        b
    }

    fn skip(&mut self, n: usize) {
        self.pos += n;
    }

    fn i16(&mut self) -> i16 {
        i16::from_le_bytes(self.take())
    }

    fn i32(&mut self) -> i32 {
        i32::from_le_bytes(self.take())
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take())
    }

    fn u8(&mut self) -> u8 {
        self.raw::<1>()[0]
    }

    fn f32s<const N: usize>(&mut self) -> [f32; N] {
        std::array::from_fn(|_| self.f32())
    }
}

fn parse_header(bytes: &[u8]) -> Result<(NiftiHeader, bool)> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!("{} bytes is too short for a NIfTI-1 header", bytes.len())));
    }
    let raw: [u8; 4] = bytes[0..4].try_into().unwrap();
    let big_endian = if i32::from_le_bytes(raw) == HEADER_SIZE as i32 {
        false
    } else if i32::from_be_bytes(raw) == HEADER_SIZE as i32 {
        true
    } else {
        return Err(Error::Format(format!("sizeof_hdr is not 348 in either byte order ({raw:02x?})")));
    };
    let mut c = Cursor { bytes, pos: 0, big_endian };
    let _sizeof_hdr = c.i32();
    // data_type, db_name, extents, session_error, regular
    c.skip(10 + 18 + 4 + 2 + 1);
    let dim_info = c.u8();
    let dim: [i16; 8] = std::array::from_fn(|_| c.i16());
    let intent_p1 = c.f32();
    let intent_p2 = c.f32();
    let intent_p3 = c.f32();
    let intent_code = c.i16();
    let datatype = c.i16();
    let bitpix = c.i16();
    let slice_start = c.i16();
    let pixdim = c.f32s::<8>();
    let vox_offset = c.f32();
    let scl_slope = c.f32();
    let scl_inter = c.f32();
    let slice_end = c.i16();
    let slice_code = c.u8();
    let xyzt_units = c.u8();
    let cal_max = c.f32();
    let cal_min = c.f32();
    let slice_duration = c.f32();
    let toffset = c.f32();
    // glmax, glmin
    c.skip(8);
    let descrip = c.raw::<80>();
    let aux_file = c.raw::<24>();
    let qform_code = c.i16();
    let sform_code = c.i16();
    let quatern_b = c.f32();
    let quatern_c = c.f32();
    let quatern_d = c.f32();
    let qoffset_x = c.f32();
    let qoffset_y = c.f32();
    let qoffset_z = c.f32();
    let srow_x = c.f32s::<4>();
    let srow_y = c.f32s::<4>();
    let srow_z = c.f32s::<4>();
    let intent_name = c.raw::<16>();
    let magic = c.raw::<4>();
    debug_assert_eq!(c.pos, HEADER_SIZE);
    if magic != MAGIC {
        return Err(Error::Format(format!("magic {magic:02x?} is not single-file \"n+1\"")));
    }
    let header = NiftiHeader {
        dim_info,
        dim,
        intent_p1,
        intent_p2,
        intent_p3,
        intent_code,
        datatype,
        bitpix,
        slice_start,
        pixdim,
        vox_offset,
        scl_slope,
        scl_inter,
        slice_end,
        slice_code,
        xyzt_units,
        cal_max,
        cal_min,
        slice_duration,
        toffset,
        descrip,
        aux_file,
        qform_code,
        sform_code,
        quatern_b,
        quatern_c,
        quatern_d,
        qoffset_x,
        qoffset_y,
        qoffset_z,
        srow_x,
        srow_y,
        srow_z,
        intent_name,
        magic,
    };
    header.validate()?;
    Ok((header, big_endian))
}

fn decode_payload(bytes: &[u8], dtype: DataType, count: usize, big_endian: bool) -> Vec<f64> {
    macro_rules! decode {
        ($t:ty) => {{
            const N: usize = std::mem::size_of::<$t>();
            bytes
                .chunks_exact(N)
                .take(count)
                .map(|chunk| {
                    let b: [u8; N] = chunk.try_into().unwrap();
                    let v = if big_endian { <$t>::from_be_bytes(b) } else { <$t>::from_le_bytes(b) };
                    f64::from(v)
                })
                .collect()
        }};
    }
    match dtype {
        DataType::UInt8 => decode!(u8),
        DataType::Int16 => decode!(i16),
        DataType::Int32 => decode!(i32),
        DataType::Float32 => decode!(f32),
    }
}

fn inflate_if_gzip(bytes: &[u8]) -> Result<std::borrow::Cow<'_, [u8]>> {
    if bytes.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        MultiGzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip stream: {e}")))?;
        Ok(out.into())
    } else {
        Ok(bytes.into())
    }
}

/// Parse a NIfTI-1 stream, raw or gzip-compressed, applying intensity
/// scaling (`stored * scl_slope + scl_inter` when `scl_slope != 0`).
///
/// Four-dimensional files with a single frame are accepted; only the first
/// three-dimensional frame is ever decoded.
pub fn read_nifti(bytes: &[u8]) -> Result<NiftiImage> {
    let bytes = inflate_if_gzip(bytes)?;
    let (header, big_endian) = parse_header(&bytes)?;
    let dtype = header.data_type()?;
    if !(header.vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::Format(format!("vox_offset {} lies inside the header", header.vox_offset)));
    }
    let offset = header.vox_offset as usize;
    let count = voxel_count(header.shape());
    let expected = offset + count * dtype.byte_size();
    if bytes.len() < expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    let mut data = decode_payload(&bytes[offset..expected], dtype, count, big_endian);
    if let Some((slope, inter)) = header.scaling().filter(|&s| s != (1.0, 0.0)) {
        for v in &mut data {
            *v = *v * slope + inter;
        }
    }
    Ok(NiftiImage { header, data })
}

fn encode_header(h: &NiftiHeader, out: &mut Vec<u8>, big_endian: bool) {
    let mut put = |b: &[u8]| {
        if big_endian {
            out.extend(b.iter().rev());
        } else {
            out.extend_from_slice(b);
        }
    };
    put(&(HEADER_SIZE as i32).to_le_bytes());
    // Legacy ANALYZE fields, zeroed except `regular = 'r'`.
    for _ in 0..(10 + 18 + 4 + 2) {
        put(&[0]);
    }
    put(b"r");
    put(&[h.dim_info]);
    for d in h.dim {
        put(&d.to_le_bytes());
    }
    for f in [h.intent_p1, h.intent_p2, h.intent_p3] {
        put(&f.to_le_bytes());
    }
    for s in [h.intent_code, h.datatype, h.bitpix, h.slice_start] {
        put(&s.to_le_bytes());
    }
    for p in h.pixdim {
        put(&p.to_le_bytes());
    }
    for f in [h.vox_offset, h.scl_slope, h.scl_inter] {
        put(&f.to_le_bytes());
    }
    put(&h.slice_end.to_le_bytes());
    put(&[h.slice_code]);
    put(&[h.xyzt_units]);
    for f in [h.cal_max, h.cal_min, h.slice_duration, h.toffset] {
        put(&f.to_le_bytes());
    }
    put(&0i32.to_le_bytes());
    put(&0i32.to_le_bytes());
    // Byte strings are written verbatim, byte by byte.
    for &b in h.descrip.iter().chain(&h.aux_file) {
        put(&[b]);
    }
    put(&h.qform_code.to_le_bytes());
    put(&h.sform_code.to_le_bytes());
    for f in [h.quatern_b, h.quatern_c, h.quatern_d, h.qoffset_x, h.qoffset_y, h.qoffset_z] {
        put(&f.to_le_bytes());
    }
    for f in h.srow_x.iter().chain(&h.srow_y).chain(&h.srow_z) {
        put(&f.to_le_bytes());
    }
    for &b in h.intent_name.iter().chain(&MAGIC) {
        put(&[b]);
    }
}

fn stored_value(v: f64, scaling: Option<(f64, f64)>) -> f64 {
    match scaling {
        Some((slope, inter)) if !(slope == 1.0 && inter == 0.0) => (v - inter) / slope,
        _ => v,
    }
}

fn encode_payload(image: &NiftiImage, dtype: DataType, out: &mut Vec<u8>, big_endian: bool) -> Result<()> {
    let scaling = image.header.scaling();
    macro_rules! encode_int {
        ($t:ty) => {{
            for &v in &image.data {
                let s = stored_value(v, scaling).round();
                if !(s >= <$t>::MIN as f64 && s <= <$t>::MAX as f64) {
                    return Err(Error::Consistency(format!(
                        "value {v} does not fit datatype {}",
                        dtype.code()
                    )));
                }
                let s = s as $t;
                out.extend_from_slice(&if big_endian { s.to_be_bytes() } else { s.to_le_bytes() });
            }
        }};
    }
    match dtype {
        DataType::UInt8 => encode_int!(u8),
        DataType::Int16 => encode_int!(i16),
        DataType::Int32 => encode_int!(i32),
        DataType::Float32 => {
            for &v in &image.data {
                let s = stored_value(v, scaling) as f32;
                out.extend_from_slice(&if big_endian { s.to_be_bytes() } else { s.to_le_bytes() });
            }
        }
    }
    Ok(())
}

fn encode(image: &NiftiImage, big_endian: bool) -> Result<Vec<u8>> {
    image.check_consistency()?;
    let dtype = image.header.data_type()?;
    let mut header = image.header.clone();
    header.bitpix = dtype.bitpix();
    header.vox_offset = CANONICAL_VOX_OFFSET as f32;
    header.magic = MAGIC;
    let mut out = Vec::with_capacity(CANONICAL_VOX_OFFSET + image.data.len() * dtype.byte_size());
    encode_header(&header, &mut out, big_endian);
    out.extend_from_slice(&[0; 4]);
    encode_payload(image, dtype, &mut out, big_endian)?;
    Ok(out)
}

/// Serialize to the canonical single-file form, optionally gzip-compressed.
///
/// Integer datatypes store `round((value - scl_inter) / scl_slope)`; values
/// that do not fit the datatype are a consistency error.
pub fn write_nifti(image: &NiftiImage, compress: bool) -> Result<Vec<u8>> {
    let raw = encode(image, false)?;
    if !compress {
        return Ok(raw);
    }
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&raw)?;
    Ok(enc.finish()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_voxel(value: f32, slope: f32, inter: f32) -> Vec<u8> {
        let mut h = NiftiHeader::for_volume([1, 1, 1], [1.0; 3], DataType::Float32);
        h.scl_slope = slope;
        h.scl_inter = inter;
        let mut out = Vec::new();
        encode_header(&h, &mut out, false);
        out.extend_from_slice(&[0; 4]);
        out.extend_from_slice(&value.to_le_bytes());
        out
    }

    #[test]
    fn minimal_volume_with_and_without_scaling() {
        assert_eq!(read_nifti(&single_voxel(5.0, 0.0, 0.0)).unwrap().data, vec![5.0]);
        assert_eq!(read_nifti(&single_voxel(5.0, 2.0, 1.0)).unwrap().data, vec![11.0]);
    }

    #[test]
    fn header_is_348_bytes_and_payload_starts_at_352() {
        let img = NiftiImage::from_volume(&VolumeGrid::filled([2, 2, 2], [1.0; 3], 1.0).unwrap());
        let bytes = write_nifti(&img, false).unwrap();
        assert_eq!(bytes.len(), 352 + 8 * 4);
        assert_eq!(&bytes[344..348], b"n+1\0");
        assert_eq!(i32::from_le_bytes(bytes[0..4].try_into().unwrap()), 348);
    }

    #[test]
    fn voxel_volume_of_default_grid() {
        let h = NiftiHeader::for_volume([1, 1, 1], [1.62, 1.62, 3.22], DataType::UInt8);
        assert!((voxel_volume(&h).unwrap() - 8.450568).abs() < 1e-9);
        assert_eq!(h.spacing(), [1.62, 1.62, 3.22]);
        let h = NiftiHeader::for_volume([1, 1, 1], [2.0; 3], DataType::UInt8);
        assert_eq!(voxel_volume(&h).unwrap(), 8.0);
        let mut h = NiftiHeader::default();
        h.pixdim[2] = 0.0;
        assert!(matches!(voxel_volume(&h), Err(Error::Domain(_))));
    }

    #[test]
    fn gzip_output_has_magic() {
        let labels = LabelMap::new([2, 2, 2], [1.0; 3], vec![0, 1, 2, 0, 1, 2, 2, 1]).unwrap();
        let bytes = write_nifti(&NiftiImage::from_labels(&labels), true).unwrap();
        assert_eq!(&bytes[..2], &[0x1f, 0x8b]);
        assert_eq!(read_nifti(&bytes).unwrap().to_labels().unwrap(), labels);
    }

    #[test]
    fn byte_swapped_header_parses_identically() {
        let mut h = NiftiHeader::for_volume([3, 2, 2], [0.5, 0.75, 2.5], DataType::Int16);
        h.scl_slope = 0.5;
        h.scl_inter = -3.0;
        h.descrip[..5].copy_from_slice(b"swap!");
        let img = NiftiImage::new(h, (0..12).map(|i| i as f64 * 0.5 - 3.0).collect()).unwrap();
        let le = encode(&img, false).unwrap();
        let be = encode(&img, true).unwrap();
        assert_ne!(le, be);
        assert_eq!(read_nifti(&le).unwrap(), read_nifti(&be).unwrap());
        assert_eq!(read_nifti(&be).unwrap().data, img.data);
    }

    #[test]
    fn error_categories() {
        let good = single_voxel(1.0, 0.0, 0.0);
        let mut bad_magic = good.clone();
        bad_magic[344] = b'x';
        assert!(matches!(read_nifti(&bad_magic), Err(Error::Format(_))));
        let mut bad_size = good.clone();
        bad_size[0] = 0;
        assert!(matches!(read_nifti(&bad_size), Err(Error::Format(_))));
        let mut bad_type = good.clone();
        bad_type[70..72].copy_from_slice(&64i16.to_le_bytes());
        assert!(matches!(read_nifti(&bad_type), Err(Error::UnsupportedDatatype(64))));
        assert!(matches!(
            read_nifti(&good[..good.len() - 1]),
            Err(Error::Truncated { expected: 356, found: 355 })
        ));
        let h = NiftiHeader::for_volume([2, 2, 2], [1.0; 3], DataType::Float32);
        assert!(matches!(NiftiImage::new(h.clone(), vec![0.0; 7]), Err(Error::Consistency(_))));
        let img = NiftiImage { header: NiftiHeader { datatype: 2, ..h }, data: vec![256.0; 8] };
        assert!(matches!(write_nifti(&img, false), Err(Error::Consistency(_))));
    }

    #[test]
    fn rewrite_is_byte_stable() {
        let v = VolumeGrid::from_fn([4, 4, 4], [1.62, 1.62, 3.22], |x, y, z| {
            (x as f64).sin() * 100.0 + (y * z) as f64
        })
        .unwrap();
        let once = write_nifti(&NiftiImage::from_volume(&v), true).unwrap();
        let twice = write_nifti(&read_nifti(&once).unwrap(), true).unwrap();
        assert_eq!(once, twice);
    }

    fn datatype_strategy() -> impl Strategy<Value = (DataType, Vec<f64>)> {
        let n = 4 * 3 * 2;
        prop_oneof![
            proptest::collection::vec(0u8..=255, n)
                .prop_map(|v| (DataType::UInt8, v.into_iter().map(f64::from).collect())),
            proptest::collection::vec(any::<i16>(), n)
                .prop_map(|v| (DataType::Int16, v.into_iter().map(f64::from).collect())),
            proptest::collection::vec(any::<i32>(), n)
                .prop_map(|v| (DataType::Int32, v.into_iter().map(f64::from).collect())),
            proptest::collection::vec(any::<f32>().prop_filter("finite", |f| f.is_finite()), n)
                .prop_map(|v| (DataType::Float32, v.into_iter().map(f64::from).collect())),
        ]
    }

    proptest! {
        #[test]
        fn round_trip_every_datatype(
            (dtype, data) in datatype_strategy(),
            sx in 0.1f32..5.0, sy in 0.1f32..5.0, sz in 0.1f32..5.0,
            compress in any::<bool>(),
        ) {
            let mut h = NiftiHeader::for_volume([4, 3, 2], [1.0; 3], dtype);
            h.pixdim[1..4].copy_from_slice(&[sx, sy, sz]);
            let img = NiftiImage::new(h, data).unwrap();
            let back = read_nifti(&write_nifti(&img, compress).unwrap()).unwrap();
            prop_assert_eq!(back.header.shape(), img.header.shape());
            prop_assert_eq!(back.header.pixdim, img.header.pixdim);
            let same_bits = back.data.iter().zip(&img.data).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same_bits);
        }
    }
}
