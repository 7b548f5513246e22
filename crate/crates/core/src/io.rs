//! File formats: TNS1 tensors and binary PGM/PPM images.
//!
//! TNS1 layout: the magic `TNS1`, a little-endian `u32` rank, that many
//! little-endian `u32` dimensions, then little-endian `f32` values in
//! row-major order.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::contours::BoundaryMap;
use crate::error::{Error, Result};
use crate::tensor::{ColumnMatrix, FeatureMap, LabelMap};

const MAGIC: &[u8; 4] = b"TNS1";

/// An n-dimensional tensor as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!("tensor dims {dims:?} need {n} values, got {}", data.len())));
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |reason: &str| Error::format("TNS1", reason);
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("missing TNS1 magic"));
        }
        let word = |i: usize| -> Result<u32> {
            bytes
                .get(i..i + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                .ok_or_else(|| bad("truncated header"))
        };
        let ndim = word(4)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for d in 0..ndim {
            dims.push(word(8 + 4 * d)? as usize);
        }
        let start = 8 + 4 * ndim;
        let n: usize = dims.iter().product();
        let body = &bytes[start..];
        if body.len() != 4 * n {
            return Err(bad(&format!("dims {dims:?} need {} data bytes, found {}", 4 * n, body.len())));
        }
        let data = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        Ok(Tensor { dims, data })
    }
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, t.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Tensor::decode(&bytes)
}

/// Stored as `[height, width, channels]`.
pub fn write_feature_map(path: impl AsRef<Path>, x: &FeatureMap) -> Result<()> {
    let (h, w, c) = x.shape();
    write_tensor(path, &Tensor::from_f64(vec![h, w, c], x.data())?)
}

/// Accepts rank 2 (`[height, width]`, one channel) or rank 3 tensors.
pub fn read_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let t = read_tensor(path)?;
    let (h, w, c) = match t.dims.as_slice() {
        &[h, w] => (h, w, 1),
        &[h, w, c] => (h, w, c),
        other => return Err(Error::format("TNS1", format!("expected a rank 2 or 3 feature map, got dims {other:?}"))),
    };
    FeatureMap::new(h, w, c, t.to_f64())
}

/// Stored flattened as `[out_height, out_width, k]` (depth 1) or
/// `[out_height, out_width, k, depth]`. Invalid entries are written as 0.
pub fn write_columns(path: impl AsRef<Path>, cols: &ColumnMatrix) -> Result<()> {
    let mut dims = vec![cols.out_height(), cols.out_width(), cols.k()];
    if cols.depth() != 1 {
        dims.push(cols.depth());
    }
    write_tensor(path, &Tensor::from_f64(dims, cols.values())?)
}

/// A decoded binary PGM (`P5`) image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub values: Vec<u16>,
}

fn parse_header<'a>(bytes: &'a [u8], magic: &[u8; 2], kind: &'static str) -> Result<([usize; 3], &'a [u8])> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(kind, format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(kind, "malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(kind, "header number out of range"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(kind, "missing raster separator"));
    }
    let [w, h, maxval] = fields;
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format(kind, format!("bad header values {w}x{h} maxval {maxval}")));
    }
    Ok((fields, &bytes[pos + 1..]))
}

fn decode_samples(raster: &[u8], count: usize, maxval: usize, kind: &'static str) -> Result<Vec<u16>> {
    let wide = maxval > 255;
    let need = if wide { 2 * count } else { count };
    if raster.len() < need {
        return Err(Error::format(kind, format!("raster has {} bytes, need {need}", raster.len())));
    }
    let values: Vec<u16> = if wide {
        raster[..need].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    } else {
        raster[..need].iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(v) = values.iter().find(|&&v| usize::from(v) > maxval) {
        return Err(Error::format(kind, format!("sample {v} exceeds maxval {maxval}")));
    }
    Ok(values)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Gray> {
    let ([width, height, maxval], raster) = parse_header(bytes, b"P5", "PGM")?;
    let values = decode_samples(raster, width * height, maxval, "PGM")?;
    Ok(Gray { width, height, maxval: maxval as u16, values })
}

pub fn encode_pgm(g: &Gray) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", g.width, g.height, g.maxval).into_bytes();
    if g.maxval > 255 {
        for v in &g.values {
            out.extend_from_slice(&v.to_be_bytes());
        }
    } else {
        out.extend(g.values.iter().map(|&v| v as u8));
    }
    out
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Gray> {
    let path = path.as_ref();
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pgm(path: impl AsRef<Path>, g: &Gray) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(g)).map_err(|e| Error::io(path, e))
}

/// Label maps are stored as 8-bit PGM when every id fits, 16-bit otherwise.
pub fn write_label_map(path: impl AsRef<Path>, l: &LabelMap) -> Result<()> {
    let max = l.labels().iter().copied().max().unwrap_or(0);
    if max > u32::from(u16::MAX) {
        return Err(Error::param(format!("label id {max} does not fit a 16-bit PGM")));
    }
    let maxval = if max <= 255 { 255 } else { u16::MAX };
    write_pgm(
        path,
        &Gray { width: l.width(), height: l.height(), maxval, values: l.labels().iter().map(|&v| v as u16).collect() },
    )
}

pub fn read_label_map(path: impl AsRef<Path>, ignore_id: u32) -> Result<LabelMap> {
    let g = read_pgm(path)?;
    LabelMap::with_ignore(g.height, g.width, g.values.into_iter().map(u32::from).collect(), ignore_id)
}

/// Reads a boundary map from PGM (rescaled by maxval) or TNS1, chosen by
/// file content.
pub fn read_boundary_map(path: impl AsRef<Path>) -> Result<BoundaryMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        let t = Tensor::decode(&bytes)?;
        let (h, w) = match t.dims.as_slice() {
            &[h, w] | &[h, w, 1] => (h, w),
            other => return Err(Error::format("TNS1", format!("boundary map must be HxW or HxWx1, got {other:?}"))),
        };
        return BoundaryMap::new(h, w, t.to_f64());
    }
    let g = decode_pgm(&bytes)?;
    let scale = 1.0 / f64::from(g.maxval);
    BoundaryMap::new(g.height, g.width, g.values.iter().map(|&v| f64::from(v) * scale).collect())
}

/// Writes a 3-channel map with values in `[0, 1]` as an 8-bit PPM.
pub fn write_ppm(path: impl AsRef<Path>, x: &FeatureMap) -> Result<()> {
    if x.channels() != 3 {
        return Err(Error::shape(format!("PPM output needs 3 channels, got {}", x.channels())));
    }
    let path = path.as_ref();
    let mut out = format!("P6\n{} {}\n255\n", x.width(), x.height()).into_bytes();
    out.extend(x.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a binary PPM as a 3-channel map scaled to `[0, 1]`.
pub fn read_ppm(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ([width, height, maxval], raster) = parse_header(&bytes, b"P6", "PPM")?;
    let values = decode_samples(raster, width * height * 3, maxval, "PPM")?;
    let scale = 1.0 / maxval as f64;
    FeatureMap::new(height, width, 3, values.iter().map(|&v| f64::from(v) * scale).collect())
}

/// Reads an image from PPM, PGM or TNS1 depending on its leading bytes.
pub fn read_image(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let mut head = Vec::with_capacity(4);
    fs::File::open(path).and_then(|f| f.take(4).read_to_end(&mut head)).map_err(|e| Error::io(path, e))?;
    if head.starts_with(MAGIC) {
        read_feature_map(path)
    } else if head.starts_with(b"P6") {
        read_ppm(path)
    } else if head.starts_with(b"P5") {
        let g = read_pgm(path)?;
        let scale = 1.0 / f64::from(g.maxval);
        FeatureMap::new(g.height, g.width, 1, g.values.iter().map(|&v| f64::from(v) * scale).collect())
    } else {
        Err(Error::format("image", format!("{}: unrecognized file type", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tns1_layout_is_exact() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let bytes = t.encode();
        let mut expect = b"TNS1".to_vec();
        expect.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expect.extend_from_slice(&1.0f32.to_le_bytes());
        expect.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn tns1_rejects_garbage() {
        assert!(Tensor::decode(b"TNS2\0\0\0\0").is_err());
        let mut bytes = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().encode();
        bytes.pop();
        assert!(Tensor::decode(&bytes).is_err());
        assert!(Tensor::decode(b"TNS1\x05\0\0\0").is_err());
    }

    #[test]
    fn pgm_8_and_16_bit() {
        let g8 = Gray { width: 2, height: 1, maxval: 255, values: vec![0, 200] };
        assert_eq!(decode_pgm(&encode_pgm(&g8)).unwrap(), g8);
        let g16 = Gray { width: 1, height: 2, maxval: 65535, values: vec![300, 65535] };
        assert_eq!(decode_pgm(&encode_pgm(&g16)).unwrap(), g16);
        let commented = b"P5\n# a comment\n2 1\n255\n\x01\x02";
        assert_eq!(decode_pgm(commented).unwrap().values, vec![1, 2]);
        assert!(decode_pgm(b"P5\n2 1\n255\n\x01").is_err());
        assert!(decode_pgm(b"P6\n1 1\n255\n\x01\x01\x01").is_err());
    }

    #[test]
    fn boundary_pgm_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.pgm");
        write_pgm(&p, &Gray { width: 3, height: 1, maxval: 255, values: vec![0, 51, 255] }).unwrap();
        let b = read_boundary_map(&p).unwrap();
        assert_eq!(b.prob(), &[0.0, 0.2, 1.0]);
        let t = dir.path().join("b.tns");
        write_tensor(&t, &Tensor::new(vec![1, 2], vec![0.0, 1.5]).unwrap()).unwrap();
        assert!(read_boundary_map(&t).is_err());
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_tensor("/nonexistent/x.tns").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.tns"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn tns1_round_trip_bit_exact(dims in proptest::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| f32::from_bits(seed.wrapping_mul(2_654_435_761).wrapping_add(i as u32 * 97) & 0x7f7f_ffff)).collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = Tensor::decode(&t.encode()).unwrap();
            prop_assert_eq!(back.dims, t.dims);
            prop_assert!(back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn label_pgm_round_trip(labels in proptest::collection::vec(0u32..300, 12)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("l.pgm");
            let l = LabelMap::new(3, 4, labels).unwrap();
            write_label_map(&p, &l).unwrap();
            prop_assert_eq!(read_label_map(&p, 255).unwrap(), l);
        }
    }
}
