//! Grayscale PNG files: 16-bit label maps, 8-bit masks and 8-bit image bands.

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Write};
use std::path::Path;

use ::png::{BitDepth, ColorType, Decoder, Encoder, Transformations};

use crate::error::{Error, Result};
use crate::raster::{Grid2D, LabelMap, SemanticMask};

struct GrayImage {
    height: usize,
    width: usize,
    depth: u8,
    bytes: Vec<u8>,
}

fn decode_gray(bytes: &[u8], expected_depth: u8) -> Result<GrayImage> {
    let mut decoder = Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::PngDecode(e.to_string()))?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    let (color, depth) = (info.color_type, info.bit_depth as u8);
    if color != ColorType::Grayscale {
        return Err(Error::PngChannels(format!("{color:?}")));
    }
    if depth != expected_depth {
        return Err(Error::PngBitDepth {
            expected: expected_depth,
            found: depth,
        });
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::PngDecode("image too large".into()))?;
    let mut buf = vec![0; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::PngDecode(e.to_string()))?;
    buf.truncate(frame.buffer_size());
    Ok(GrayImage {
        height,
        width,
        depth,
        bytes: buf,
    })
}

fn encode_gray(height: usize, width: usize, depth: BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(ColorType::Grayscale);
        encoder.set_depth(depth);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::PngDecode(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::PngDecode(e.to_string()))?;
        writer
            .finish()
            .map_err(|e| Error::PngDecode(e.to_string()))?;
    }
    Ok(out)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    std::io::Read::read_to_end(&mut BufReader::new(file), &mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn encode_labels_png(l: &LabelMap) -> Result<Vec<u8>> {
    let (h, w) = l.dims();
    let data: Vec<u8> = l
        .labels
        .values()
        .iter()
        .flat_map(|v| v.to_be_bytes())
        .collect();
    encode_gray(h, w, BitDepth::Sixteen, &data)
}

pub fn decode_labels_png(bytes: &[u8]) -> Result<LabelMap> {
    let img = decode_gray(bytes, 16)?;
    debug_assert_eq!(img.depth, 16);
    let values = img
        .bytes
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok(LabelMap::new(Grid2D::from_vec(
        img.height, img.width, values,
    )?))
}

pub fn write_labels_png(path: impl AsRef<Path>, l: &LabelMap) -> Result<()> {
    write_file(path.as_ref(), &encode_labels_png(l)?)
}

pub fn read_labels_png(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_labels_png(&read_file(path.as_ref())?)
}

/// Writes a mask as 0/255.
pub fn encode_mask_png(m: &SemanticMask) -> Result<Vec<u8>> {
    let (h, w) = m.dims();
    let data: Vec<u8> =
        m.m.values()
            .iter()
            .map(|&v| if v > 0 { 255 } else { 0 })
            .collect();
    encode_gray(h, w, BitDepth::Eight, &data)
}

/// Any nonzero sample loads as 1.
pub fn decode_mask_png(bytes: &[u8]) -> Result<SemanticMask> {
    let img = decode_gray(bytes, 8)?;
    Ok(SemanticMask::from_values(Grid2D::from_vec(
        img.height, img.width, img.bytes,
    )?))
}

pub fn write_mask_png(path: impl AsRef<Path>, m: &SemanticMask) -> Result<()> {
    write_file(path.as_ref(), &encode_mask_png(m)?)
}

pub fn read_mask_png(path: impl AsRef<Path>) -> Result<SemanticMask> {
    decode_mask_png(&read_file(path.as_ref())?)
}

/// Writes a [0, 1] band as 8-bit gray; values outside the range are clamped.
pub fn write_band_png(path: impl AsRef<Path>, band: &Grid2D<f32>) -> Result<()> {
    let (h, w) = band.dims();
    let data: Vec<u8> = band
        .values()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_file(path.as_ref(), &encode_gray(h, w, BitDepth::Eight, &data)?)
}

pub fn read_band_png(path: impl AsRef<Path>) -> Result<Grid2D<f32>> {
    let img = decode_gray(&read_file(path.as_ref())?, 8)?;
    Grid2D::from_vec(
        img.height,
        img.width,
        img.bytes.iter().map(|&v| v as f32 / 255.0).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(h: usize, w: usize, f: impl FnMut(usize, usize) -> u16) -> LabelMap {
        LabelMap::new(Grid2D::from_fn(h, w, f).unwrap())
    }

    #[test]
    fn labels_round_trip_with_max_id() {
        let l = labels(5, 7, |y, x| {
            if (y, x) == (4, 6) {
                u16::MAX
            } else {
                (y * 7 + x) as u16 * 1000
            }
        });
        let bytes = encode_labels_png(&l).unwrap();
        let back = decode_labels_png(&bytes).unwrap();
        assert_eq!(back, l);
        assert_eq!(encode_labels_png(&back).unwrap(), bytes);
    }

    #[test]
    fn labels_reject_eight_bit() {
        let m = SemanticMask::from_values(Grid2D::filled(3, 3, 1).unwrap());
        let bytes = encode_mask_png(&m).unwrap();
        assert!(matches!(
            decode_labels_png(&bytes),
            Err(Error::PngBitDepth {
                expected: 16,
                found: 8
            })
        ));
    }

    #[test]
    fn rejects_multichannel() {
        let mut out = Vec::new();
        {
            let mut enc = Encoder::new(&mut out, 2, 2);
            enc.set_color(ColorType::Rgb);
            enc.set_depth(BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0; 12]).unwrap();
        }
        assert!(matches!(decode_mask_png(&out), Err(Error::PngChannels(_))));
        assert!(matches!(
            decode_labels_png(&out),
            Err(Error::PngChannels(_))
        ));
    }

    #[test]
    fn mask_values_normalize() {
        let raw = encode_gray(1, 4, BitDepth::Eight, &[0, 255, 1, 0]).unwrap();
        let m = decode_mask_png(&raw).unwrap();
        assert_eq!(m.m.values(), &[0, 1, 1, 0]);
        let written = encode_mask_png(&m).unwrap();
        let img = decode_gray(&written, 8).unwrap();
        assert_eq!(img.bytes, vec![0, 255, 255, 0]);
        assert_eq!(decode_mask_png(&written).unwrap(), m);
    }

    #[test]
    fn truncated_file_is_decode_error() {
        let l = labels(4, 4, |y, x| (y + x) as u16);
        let bytes = encode_labels_png(&l).unwrap();
        assert!(matches!(
            decode_labels_png(&bytes[..20]),
            Err(Error::PngDecode(_))
        ));
    }
}
