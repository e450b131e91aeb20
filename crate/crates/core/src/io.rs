//! The ISOV binary volume format plus TIFF import and 8-bit slice export.
//!
//! Layout (all little-endian):
//!
//! | offset | type    | field                     |
//! |--------|---------|---------------------------|
//! | 0      | [u8; 4] | magic `ISOV`              |
//! | 4      | u32     | version (1)               |
//! | 8      | u32 × 3 | nx, ny, nz                |
//! | 20     | f32 × 3 | sx, sy, sz                |
//! | 32     | u32     | dtype (0 = f32, 1 = u32)  |
//! | 36     | …       | payload, x fastest        |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::LabelVolume;
use crate::volume::{Image2D, Volume};

pub const MAGIC: [u8; 4] = *b"ISOV";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 36;

/// Payloads larger than this are rejected as a dimension overflow.
const MAX_PAYLOAD_BYTES: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Dtype {
    F32 = 0,
    U32 = 1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub dims: [u32; 3],
    pub spacing: [f32; 3],
    pub dtype: Dtype,
}

impl Header {
    fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..4].copy_from_slice(&MAGIC);
        b[4..8].copy_from_slice(&VERSION.to_le_bytes());
        for i in 0..3 {
            b[8 + 4 * i..12 + 4 * i].copy_from_slice(&self.dims[i].to_le_bytes());
            b[20 + 4 * i..24 + 4 * i].copy_from_slice(&self.spacing[i].to_le_bytes());
        }
        b[32..36].copy_from_slice(&(self.dtype as u32).to_le_bytes());
        b
    }

    fn decode(b: &[u8; HEADER_LEN]) -> Result<Self> {
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let magic: [u8; 4] = b[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dims = [u32_at(8), u32_at(12), u32_at(16)];
        let spacing = [f32_at(20), f32_at(24), f32_at(28)];
        let dtype = match u32_at(32) {
            0 => Dtype::F32,
            1 => Dtype::U32,
            other => return Err(Error::UnsupportedDtype(other)),
        };
        let h = Header {
            dims,
            spacing,
            dtype,
        };
        h.payload_bytes()?;
        Ok(h)
    }

    /// Validated payload size in bytes.
    pub fn payload_bytes(&self) -> Result<u64> {
        let [nx, ny, nz] = self.dims;
        let overflow = Error::DimensionOverflow { nx, ny, nz };
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::Shape(format!("zero extent in {:?}", self.dims)));
        }
        let bytes = (nx as u64)
            .checked_mul(ny as u64)
            .and_then(|v| v.checked_mul(nz as u64))
            .and_then(|v| v.checked_mul(4))
            .ok_or(overflow)?;
        if bytes > MAX_PAYLOAD_BYTES || usize::try_from(bytes).is_err() {
            return Err(Error::DimensionOverflow { nx, ny, nz });
        }
        Ok(bytes)
    }
}

fn read_header_and_payload(r: &mut impl Read) -> Result<(Header, Vec<u8>)> {
    let mut hb = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        let n = r.read(&mut hb[got..])?;
        if n == 0 {
            return Err(Error::TruncatedPayload {
                expected: HEADER_LEN as u64,
                found: got as u64,
            });
        }
        got += n;
    }
    let header = Header::decode(&hb)?;
    let expected = header.payload_bytes()?;
    let mut payload = Vec::with_capacity(expected as usize);
    r.take(expected + 1).read_to_end(&mut payload)?;
    if payload.len() as u64 != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len() as u64,
        });
    }
    Ok((header, payload))
}

fn dims_usize(h: &Header) -> [usize; 3] {
    h.dims.map(|d| d as usize)
}

fn write_raw(path: &Path, header: Header, words: impl Iterator<Item = [u8; 4]>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header.encode())?;
    for b in words {
        w.write_all(&b)?;
    }
    w.flush()?;
    Ok(())
}

fn header_for(dims: [usize; 3], spacing: [f32; 3], dtype: Dtype) -> Result<Header> {
    let conv =
        |d: usize| u32::try_from(d).map_err(|_| Error::Shape(format!("extent {d} too large")));
    Ok(Header {
        dims: [conv(dims[0])?, conv(dims[1])?, conv(dims[2])?],
        spacing,
        dtype,
    })
}

pub fn write_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let h = header_for(vol.dims(), vol.spacing(), Dtype::F32)?;
    write_raw(path.as_ref(), h, vol.data().iter().map(|v| v.to_le_bytes()))
}

pub fn decode_volume(r: &mut impl Read) -> Result<Volume> {
    let (h, payload) = read_header_and_payload(r)?;
    if h.dtype != Dtype::F32 {
        return Err(Error::UnsupportedDtype(h.dtype as u32));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(dims_usize(&h), h.spacing, data)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    decode_volume(&mut BufReader::new(File::open(path)?))
}

pub fn write_labels(labels: &LabelVolume, path: impl AsRef<Path>) -> Result<()> {
    let h = header_for(labels.dims(), [1.0; 3], Dtype::U32)?;
    write_raw(
        path.as_ref(),
        h,
        labels.data().iter().map(|v| v.to_le_bytes()),
    )
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let (h, payload) = read_header_and_payload(&mut BufReader::new(File::open(path)?))?;
    if h.dtype != Dtype::U32 {
        return Err(Error::UnsupportedDtype(h.dtype as u32));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LabelVolume::new(dims_usize(&h), data)
}

/// Imports an uncompressed single-channel grayscale multi-page TIFF.
/// Each page becomes one z plane.
pub fn import_tiff(path: impl AsRef<Path>) -> Result<Volume> {
    use tiff::decoder::{Decoder, DecodingResult};
    let codec = |e: tiff::TiffError| Error::Codec(e.to_string());
    let mut dec = Decoder::new(BufReader::new(File::open(path)?)).map_err(codec)?;
    let (w, h) = dec.dimensions().map_err(codec)?;
    let mut data = Vec::new();
    let mut pages = 0usize;
    loop {
        let (pw, ph) = dec.dimensions().map_err(codec)?;
        if (pw, ph) != (w, h) {
            return Err(Error::Shape("TIFF pages differ in size".into()));
        }
        let page: Vec<f32> = match dec.read_image().map_err(codec)? {
            DecodingResult::U8(v) => v.into_iter().map(f32::from).collect(),
            DecodingResult::U16(v) => v.into_iter().map(f32::from).collect(),
            DecodingResult::U32(v) => v.into_iter().map(|x| x as f32).collect(),
            DecodingResult::I8(v) => v.into_iter().map(f32::from).collect(),
            DecodingResult::I16(v) => v.into_iter().map(f32::from).collect(),
            DecodingResult::F32(v) => v,
            DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
            _ => return Err(Error::Codec("unsupported TIFF sample type".into())),
        };
        if page.len() != (w * h) as usize {
            return Err(Error::Codec("multi-channel TIFF is not supported".into()));
        }
        data.extend(page);
        pages += 1;
        if !dec.more_images() {
            break;
        }
        dec.next_image().map_err(codec)?;
    }
    Volume::new([w as usize, h as usize, pages], [1.0; 3], data)
}

/// Min-max scales an image to 8 bits.
pub fn to_u8(img: &Image2D) -> Vec<u8> {
    let (lo, hi) = img
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    img.data()
        .iter()
        .map(|&v| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8)
        .collect()
}

pub fn write_png(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(w, img.width() as u32, img.height() as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Codec(e.to_string()))?;
    writer
        .write_image_data(&to_u8(img))
        .map_err(|e| Error::Codec(e.to_string()))?;
    writer.finish().map_err(|e| Error::Codec(e.to_string()))?;
    Ok(())
}

/// Binary PGM (P5).
pub fn write_pgm(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", img.width(), img.height())?;
    w.write_all(&to_u8(img))?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeros_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.isov");
        let v = Volume::zeros([2, 2, 2]);
        write_volume(&v, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 8 * 4);
        assert_eq!(&bytes[..4], b"ISOV");
        assert!(bytes[HEADER_LEN..].iter().all(|&b| b == 0));
        assert_eq!(read_volume(&p).unwrap(), v);
    }

    fn header_bytes(dims: [u32; 3]) -> Vec<u8> {
        Header {
            dims,
            spacing: [1.0; 3],
            dtype: Dtype::F32,
        }
        .encode()
        .to_vec()
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = header_bytes([10, 10, 10]);
        bytes.extend(std::iter::repeat_n(0u8, 999 * 4));
        let err = decode_volume(&mut bytes.as_slice()).unwrap_err();
        assert!(matches!(
            err,
            Error::TruncatedPayload {
                expected: 4000,
                found: 3996
            }
        ));
    }

    #[test]
    fn bad_magic() {
        let mut bytes = header_bytes([1, 1, 1]);
        bytes[0] = b'X';
        bytes.extend([0u8; 4]);
        assert!(matches!(
            decode_volume(&mut bytes.as_slice()),
            Err(Error::BadMagic(_))
        ));
    }

    #[test]
    fn dimension_overflow() {
        let bytes = header_bytes([u32::MAX, u32::MAX, u32::MAX]);
        assert!(matches!(
            decode_volume(&mut bytes.as_slice()),
            Err(Error::DimensionOverflow { .. })
        ));
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.isov");
        let l = LabelVolume::new([3, 2, 1], vec![0, 1, 2, 2, 0, 7]).unwrap();
        write_labels(&l, &p).unwrap();
        assert_eq!(read_labels(&p).unwrap(), l);
        assert!(matches!(read_volume(&p), Err(Error::UnsupportedDtype(1))));
    }

    #[test]
    fn u8_scaling() {
        let img = Image2D::new(3, 1, vec![-1.0, 0.0, 1.0]);
        assert_eq!(to_u8(&img), vec![0, 128, 255]);
    }
}
