//! File interchange: NPY arrays, grayscale PNGs and JSON manifests.

mod manifest;
mod npy;
mod png;

use std::path::Path;

pub use manifest::{sha256_file, Manifest};
pub use npy::{parse_header, read_npy, write_npy, Dtype, NpyArray, NpyData, NpyHeader, MAGIC};
pub use png::{
    decode_labels_png, decode_mask_png, encode_labels_png, encode_mask_png, read_band_png,
    read_labels_png, read_mask_png, write_band_png, write_labels_png, write_mask_png,
};

use crate::error::{Error, Result};
use crate::raster::{FlowField, Grid2D, ProbabilityMap};

/// Accepted excess of |V| over 1 before a loaded flow field is clipped or rejected.
pub const FLOW_MAGNITUDE_TOLERANCE: f32 = 1e-3;

pub fn flows_to_npy(v: &FlowField) -> NpyArray {
    let (h, w) = v.dims();
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend_from_slice(v.dy.values());
    data.extend_from_slice(v.dx.values());
    NpyArray {
        shape: vec![2, h, w],
        data: NpyData::F32(data),
    }
}

fn layout_error(expected: &str, a: &NpyArray) -> Error {
    Error::NpyLayout {
        expected: expected.to_string(),
        found: format!("{} {:?}", a.data.dtype().descr(), a.shape),
    }
}

/// Converts a `[2, H, W]` float32 array (dy first) into a flow field.
///
/// Non-finite components are always rejected. Vectors longer than
/// `1 + FLOW_MAGNITUDE_TOLERANCE` are an error under `strict`, otherwise they
/// are logged and clipped back to unit length.
pub fn flows_from_npy(a: &NpyArray, strict: bool) -> Result<FlowField> {
    let (NpyData::F32(data), [2, h, w]) = (&a.data, a.shape.as_slice()) else {
        return Err(layout_error("<f4 [2, H, W]", a));
    };
    let (h, w) = (*h, *w);
    if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "flow field contains non-finite value {bad}"
        )));
    }
    let n = h * w;
    let v = FlowField::new(
        Grid2D::from_vec(h, w, data[..n].to_vec())?,
        Grid2D::from_vec(h, w, data[n..].to_vec())?,
    )?;
    let max = v.max_magnitude();
    if max > 1.0 + FLOW_MAGNITUDE_TOLERANCE {
        if strict {
            return Err(Error::FlowMagnitude {
                magnitude: max,
                tolerance: FLOW_MAGNITUDE_TOLERANCE,
            });
        }
        log::warn!("flow magnitude {max} exceeds unit length; clipping");
        return Ok(v.clip_magnitude());
    }
    Ok(v)
}

pub fn prob_to_npy(p: &ProbabilityMap) -> NpyArray {
    let (h, w) = p.dims();
    NpyArray {
        shape: vec![h, w],
        data: NpyData::F32(p.p.values().to_vec()),
    }
}

pub fn prob_from_npy(a: &NpyArray) -> Result<ProbabilityMap> {
    let (NpyData::F32(data), [h, w]) = (&a.data, a.shape.as_slice()) else {
        return Err(layout_error("<f4 [H, W]", a));
    };
    ProbabilityMap::new(Grid2D::from_vec(*h, *w, data.clone())?)
}

pub fn read_flows(path: impl AsRef<Path>, strict: bool) -> Result<FlowField> {
    flows_from_npy(&read_npy(path)?, strict)
}

pub fn write_flows(path: impl AsRef<Path>, v: &FlowField) -> Result<()> {
    write_npy(path, &flows_to_npy(v))
}

pub fn read_prob(path: impl AsRef<Path>) -> Result<ProbabilityMap> {
    prob_from_npy(&read_npy(path)?)
}

pub fn write_prob(path: impl AsRef<Path>, p: &ProbabilityMap) -> Result<()> {
    write_npy(path, &prob_to_npy(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(dy: Vec<f32>, dx: Vec<f32>, h: usize, w: usize) -> NpyArray {
        NpyArray {
            shape: vec![2, h, w],
            data: NpyData::F32(dy.into_iter().chain(dx).collect()),
        }
    }

    #[test]
    fn flows_round_trip() {
        let a = field(vec![0.6, 0.0, -1.0, 0.0], vec![0.8, 0.0, 0.0, 1.0], 2, 2);
        let v = flows_from_npy(&a, true).unwrap();
        assert_eq!(v.dy.values(), &[0.6, 0.0, -1.0, 0.0]);
        assert_eq!(flows_to_npy(&v), a);
    }

    #[test]
    fn oversized_flows_clip_or_fail() {
        let a = field(vec![3.0, 0.0], vec![4.0, 1.0005], 1, 2);
        assert!(matches!(
            flows_from_npy(&a, true),
            Err(Error::FlowMagnitude { .. })
        ));
        let v = flows_from_npy(&a, false).unwrap();
        assert!((v.magnitude(0, 0) - 1.0).abs() < 1e-6);
        assert!(v.max_magnitude() <= 1.0 + 1e-6);
        // within tolerance passes untouched
        let ok = field(vec![0.0], vec![1.0005], 1, 1);
        assert_eq!(flows_from_npy(&ok, true).unwrap().dx.values(), &[1.0005]);
    }

    #[test]
    fn non_finite_flows_rejected() {
        let a = field(vec![f32::NAN], vec![0.0], 1, 1);
        assert!(matches!(
            flows_from_npy(&a, false),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn wrong_layouts_rejected() {
        let three = NpyArray {
            shape: vec![3, 1, 1],
            data: NpyData::F32(vec![0.0; 3]),
        };
        assert!(matches!(
            flows_from_npy(&three, false),
            Err(Error::NpyLayout { .. })
        ));
        let ints = NpyArray {
            shape: vec![2, 2],
            data: NpyData::U16(vec![0; 4]),
        };
        assert!(matches!(prob_from_npy(&ints), Err(Error::NpyLayout { .. })));
        let out_of_range = NpyArray {
            shape: vec![1, 2],
            data: NpyData::F32(vec![0.5, 1.5]),
        };
        assert!(prob_from_npy(&out_of_range).is_err());
    }
}
