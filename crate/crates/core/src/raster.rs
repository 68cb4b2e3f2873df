//! Raster containers shared by every stage of the pipeline.
//!
//! Coordinates are `(row y, col x)` with the origin at the top-left corner and
//! row-major storage, matching the image files read and written by [`crate::io`].

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Native crown diameter (pixels) the flow dynamics are tuned for.
pub const REFERENCE_DIAMETER: f64 = 30.0;

/// Dense row-major 2D array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Grid2D<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Copy> Grid2D<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyGrid);
        }
        Ok(Self {
            height,
            width,
            values: vec![value; height * width],
        })
    }

    pub fn from_vec(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyGrid);
        }
        if values.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: (height, width),
                found: (values.len(), 1),
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyGrid);
        }
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.values[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid2D<U> {
        Grid2D {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Copies the window `[y0, y0+h) x [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop window {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut values = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            values.extend_from_slice(&self.values[y * self.width + x0..y * self.width + x0 + w]);
        }
        Self::from_vec(h, w, values)
    }
}

pub(crate) fn check_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::ShapeMismatch { expected, found });
    }
    Ok(())
}

/// Sub-pixel position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub y: f64,
    pub x: f64,
}

impl Point {
    pub fn new(y: f64, x: f64) -> Self {
        Self { y, x }
    }

    /// Clamps into `[0, h-1] x [0, w-1]`.
    #[inline]
    pub fn clamped(self, height: usize, width: usize) -> Self {
        Self {
            y: self.y.clamp(0.0, (height - 1) as f64),
            x: self.x.clamp(0.0, (width - 1) as f64),
        }
    }
}

/// Per-pixel displacement field `(dy, dx)` in pixels per step.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub dy: Grid2D<f32>,
    pub dx: Grid2D<f32>,
}

impl FlowField {
    pub fn new(dy: Grid2D<f32>, dx: Grid2D<f32>) -> Result<Self> {
        check_dims(dy.dims(), dx.dims())?;
        Ok(Self { dy, dx })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Ok(Self {
            dy: Grid2D::filled(height, width, 0.0)?,
            dx: Grid2D::filled(height, width, 0.0)?,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dy.dims()
    }

    pub fn magnitude(&self, y: usize, x: usize) -> f32 {
        self.dy.get(y, x).hypot(self.dx.get(y, x))
    }

    /// Largest per-pixel vector magnitude.
    pub fn max_magnitude(&self) -> f32 {
        self.dy
            .values()
            .iter()
            .zip(self.dx.values())
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f32::max)
    }

    /// Scales every vector to unit length, leaving exact zeros at zero.
    pub fn renormalized(&self) -> Self {
        let mut out = self.clone();
        for (vy, vx) in out
            .dy
            .values_mut()
            .iter_mut()
            .zip(out.dx.values_mut().iter_mut())
        {
            let (gy, gx) = (*vy as f64, *vx as f64);
            let n = gy.hypot(gx);
            if n < 1e-12 {
                *vy = 0.0;
                *vx = 0.0;
            } else {
                *vy = (gy / (n + 1e-12)) as f32;
                *vx = (gx / (n + 1e-12)) as f32;
            }
        }
        out
    }

    /// Shrinks any vector longer than one pixel per step to unit length.
    pub fn clip_magnitude(&self) -> Self {
        let mut out = self.clone();
        for (vy, vx) in out
            .dy
            .values_mut()
            .iter_mut()
            .zip(out.dx.values_mut().iter_mut())
        {
            let n = (*vy as f64).hypot(*vx as f64);
            if n > 1.0 {
                *vy = (*vy as f64 / n) as f32;
                *vx = (*vx as f64 / n) as f32;
            }
        }
        out
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        Ok(Self {
            dy: self.dy.crop(y0, x0, h, w)?,
            dx: self.dx.crop(y0, x0, h, w)?,
        })
    }
}

/// Instance raster: 0 is background, `k >= 1` is instance `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub labels: Grid2D<u16>,
}

impl LabelMap {
    pub fn new(labels: Grid2D<u16>) -> Self {
        Self { labels }
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Ok(Self::new(Grid2D::filled(height, width, 0)?))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dims()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels.get(y, x)
    }

    /// Distinct nonzero ids in ascending order.
    pub fn ids(&self) -> Vec<u16> {
        let mut seen = vec![false; u16::MAX as usize + 1];
        for &v in self.labels.values() {
            seen[v as usize] = true;
        }
        (1..=u16::MAX).filter(|&k| seen[k as usize]).collect()
    }

    pub fn count(&self) -> usize {
        self.ids().len()
    }

    pub fn max_id(&self) -> u16 {
        self.labels.values().iter().copied().max().unwrap_or(0)
    }

    /// Pixel count per id, indexed by id (index 0 is background).
    pub fn areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.max_id() as usize + 1];
        for &v in self.labels.values() {
            areas[v as usize] += 1;
        }
        areas
    }

    pub fn foreground(&self) -> Grid2D<bool> {
        self.labels.map(|v| v != 0)
    }

    /// Compacts ids to `1..=K` in order of first occurrence in a row-major scan.
    pub fn relabel_sequential(&self) -> Self {
        let mut mapping: HashMap<u16, u16> = HashMap::new();
        let mut next = 1u16;
        let mut out = self.labels.clone();
        for v in out.values_mut() {
            if *v == 0 {
                continue;
            }
            let id = *mapping.entry(*v).or_insert_with(|| {
                let id = next;
                next = next.wrapping_add(1);
                id
            });
            *v = id;
        }
        Self::new(out)
    }

    /// Sets every pixel whose id satisfies `drop` to background.
    pub fn remove_where(&self, drop: impl Fn(u16) -> bool) -> Self {
        Self::new(self.labels.map(|v| if v != 0 && drop(v) { 0 } else { v }))
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        Ok(Self::new(self.labels.crop(y0, x0, h, w)?))
    }
}

/// Foreground probability in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    pub p: Grid2D<f32>,
}

impl ProbabilityMap {
    pub fn new(p: Grid2D<f32>) -> Result<Self> {
        if let Some(bad) = p.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "probability value {bad} outside [0, 1]"
            )));
        }
        Ok(Self { p })
    }

    /// 1 on labeled pixels, 0 elsewhere.
    pub fn from_labels(l: &LabelMap) -> Self {
        Self {
            p: l.labels.map(|v| if v != 0 { 1.0 } else { 0.0 }),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.p.dims()
    }
}

/// Binary raster with values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticMask {
    pub m: Grid2D<u8>,
}

/// Same representation; used for single-shape masks.
pub type BinaryMask = SemanticMask;

impl SemanticMask {
    /// Any nonzero value becomes 1.
    pub fn from_values(m: Grid2D<u8>) -> Self {
        Self {
            m: m.map(|v| (v != 0) as u8),
        }
    }

    pub fn from_bools(b: &Grid2D<bool>) -> Self {
        Self {
            m: b.map(|v| v as u8),
        }
    }

    pub fn from_labels(l: &LabelMap) -> Self {
        Self {
            m: l.labels.map(|v| (v != 0) as u8),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.m.dims()
    }

    #[inline]
    pub fn is_set(&self, y: usize, x: usize) -> bool {
        self.m.get(y, x) != 0
    }

    pub fn count(&self) -> usize {
        self.m.values().iter().filter(|&&v| v != 0).count()
    }
}

#[inline]
fn clamp_index(v: f64, n: usize) -> f64 {
    v.clamp(0.0, (n - 1) as f64)
}

/// Bilinear interpolation of a scalar grid at an edge-clamped position.
#[inline]
pub fn sample_bilinear(g: &Grid2D<f32>, y: f64, x: f64) -> f64 {
    let (h, w) = g.dims();
    let y = clamp_index(y, h);
    let x = clamp_index(x, w);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let v00 = g.get(y0, x0) as f64;
    let v01 = g.get(y0, x1) as f64;
    let v10 = g.get(y1, x0) as f64;
    let v11 = g.get(y1, x1) as f64;
    let top = v00 + (v01 - v00) * fx;
    let bottom = v10 + (v11 - v10) * fx;
    top + (bottom - top) * fy
}

/// Flow vector `(vy, vx)` at a sub-pixel position.
#[inline]
pub fn bilinear_sample(field: &FlowField, p: Point) -> (f64, f64) {
    (
        sample_bilinear(&field.dy, p.y, p.x),
        sample_bilinear(&field.dx, p.y, p.x),
    )
}

fn scaled_dims(h: usize, w: usize, factor: f64) -> Result<(usize, usize)> {
    if !factor.is_finite() || factor <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "rescale factor must be finite and positive, got {factor}"
        )));
    }
    let oh = (h as f64 * factor).round() as usize;
    let ow = (w as f64 * factor).round() as usize;
    if oh == 0 || ow == 0 {
        return Err(Error::InvalidArgument(format!(
            "rescale by {factor} collapses {h}x{w} to {oh}x{ow}"
        )));
    }
    Ok((oh, ow))
}

// Align-corners mapping: output index i samples input at i * (n_in-1)/(n_out-1),
// so corner pixels map to corners and a scale of 1 is the identity.
#[inline]
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out <= 1 || n_in <= 1 {
        0.0
    } else {
        i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

/// Resamples to an explicit output size.
pub fn resize_bilinear(g: &Grid2D<f32>, height: usize, width: usize) -> Result<Grid2D<f32>> {
    let (h, w) = g.dims();
    if (height, width) == (h, w) {
        return Ok(g.clone());
    }
    Grid2D::from_fn(height, width, |y, x| {
        sample_bilinear(g, source_coord(y, h, height), source_coord(x, w, width)) as f32
    })
}

/// Bilinear resampling by `factor`; output dims are `round(dim * factor)`.
pub fn rescale_bilinear(g: &Grid2D<f32>, factor: f64) -> Result<Grid2D<f32>> {
    let (h, w) = scaled_dims(g.height(), g.width(), factor)?;
    resize_bilinear(g, h, w)
}

/// Nearest-neighbor resampling to an explicit output size.
pub fn resize_nearest(l: &LabelMap, height: usize, width: usize) -> Result<LabelMap> {
    let (h, w) = l.dims();
    if (height, width) == (h, w) {
        return Ok(l.clone());
    }
    let grid = Grid2D::from_fn(height, width, |y, x| {
        let sy = source_coord(y, h, height).round() as usize;
        let sx = source_coord(x, w, width).round() as usize;
        l.get(sy.min(h - 1), sx.min(w - 1))
    })?;
    Ok(LabelMap::new(grid))
}

/// Nearest-neighbor resampling by `factor`; never invents label values.
pub fn rescale_nearest(l: &LabelMap, factor: f64) -> Result<LabelMap> {
    let (h, w) = scaled_dims(l.labels.height(), l.labels.width(), factor)?;
    resize_nearest(l, h, w)
}

/// Inverse of the diameter prior: the factor applied to inputs before segmentation.
pub fn diameter_scale(diameter: f64) -> Result<f64> {
    if !diameter.is_finite() || diameter <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "diameter must be finite and positive, got {diameter}"
        )));
    }
    Ok(REFERENCE_DIAMETER / diameter)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(dy: Vec<f32>, dx: Vec<f32>, h: usize, w: usize) -> FlowField {
        FlowField::new(
            Grid2D::from_vec(h, w, dy).unwrap(),
            Grid2D::from_vec(h, w, dx).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn sample_constant_field() {
        let f = field(vec![1.0; 16], vec![0.0; 16], 4, 4);
        for &(y, x) in &[(0.0, 0.0), (1.3, 2.7), (-5.0, 9.0), (3.0, 3.0)] {
            assert_eq!(bilinear_sample(&f, Point::new(y, x)), (1.0, 0.0));
        }
    }

    #[test]
    fn sample_exact_at_nodes() {
        let dy: Vec<f32> = (0..48).map(|i| i as f32 * 0.25).collect();
        let dx: Vec<f32> = (0..48).map(|i| -(i as f32)).collect();
        let f = field(dy, dx, 6, 8);
        let (vy, vx) = bilinear_sample(&f, Point::new(3.0, 4.0));
        assert_eq!(vy, f.dy.get(3, 4) as f64);
        assert_eq!(vx, f.dx.get(3, 4) as f64);
    }

    #[test]
    fn sample_midpoint_of_two_by_two() {
        let f = field(vec![0.0, 0.0, 1.0, 1.0], vec![0.0; 4], 2, 2);
        let (vy, _) = bilinear_sample(&f, Point::new(0.5, 0.5));
        assert!((vy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rescale_identity_and_constant() {
        let g = Grid2D::from_fn(5, 7, |y, x| (y * 7 + x) as f32 * 0.1).unwrap();
        assert_eq!(rescale_bilinear(&g, 1.0).unwrap(), g);
        let c = Grid2D::filled(10, 12, 7.0f32).unwrap();
        let half = rescale_bilinear(&c, 0.5).unwrap();
        assert_eq!(half.dims(), (5, 6));
        assert!(half.values().iter().all(|&v| (v - 7.0).abs() < 1e-6));
    }

    #[test]
    fn rescale_ramp_keeps_endpoints_and_order() {
        let ramp = Grid2D::from_fn(1, 11, |_, x| x as f32).unwrap();
        let up = rescale_bilinear(&ramp, 2.0).unwrap();
        assert_eq!(up.dims(), (2, 22));
        let row = &up.values()[..22];
        assert!((row[0] - 0.0).abs() < 1e-6);
        assert!((row[21] - 10.0).abs() < 1e-6);
        assert!(row.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rescale_rejects_bad_factor() {
        let g = Grid2D::filled(4, 4, 0.0f32).unwrap();
        assert!(rescale_bilinear(&g, f64::NAN).is_err());
        assert!(rescale_bilinear(&g, 0.0).is_err());
        assert!(rescale_bilinear(&g, 0.01).is_err());
        let l = LabelMap::empty(4, 4).unwrap();
        assert!(rescale_nearest(&l, f64::INFINITY).is_err());
    }

    #[test]
    fn nearest_keeps_value_set() {
        let l = LabelMap::new(Grid2D::from_fn(8, 8, |y, x| 1 + ((y + x) % 2) as u16).unwrap());
        let half = rescale_nearest(&l, 0.5).unwrap();
        assert_eq!(half.dims(), (4, 4));
        assert!(half.labels.values().iter().all(|v| [0, 1, 2].contains(v)));
        assert_eq!(rescale_nearest(&l, 1.0).unwrap(), l);

        let single = LabelMap::new(Grid2D::filled(5, 3, 4u16).unwrap());
        for f in [0.4, 1.0, 2.5] {
            let r = rescale_nearest(&single, f).unwrap();
            assert!(r.labels.values().iter().all(|&v| v == 4));
        }
    }

    #[test]
    fn relabel_compacts_in_scan_order() {
        let l = LabelMap::new(Grid2D::from_vec(1, 5, vec![0, 9, 5, 9, 0]).unwrap());
        let r = l.relabel_sequential();
        assert_eq!(r.labels.values(), &[0, 1, 2, 1, 0]);

        let l = LabelMap::new(Grid2D::from_vec(1, 4, vec![0, 5, 9, 0]).unwrap());
        assert_eq!(l.relabel_sequential().labels.values(), &[0, 1, 2, 0]);

        let z = LabelMap::empty(3, 3).unwrap();
        assert_eq!(z.relabel_sequential(), z);
    }

    #[test]
    fn diameter_prior() {
        assert_eq!(diameter_scale(30.0).unwrap(), 1.0);
        assert_eq!(diameter_scale(15.0).unwrap(), 2.0);
        assert!(diameter_scale(-1.0).is_err());
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(matches!(Grid2D::filled(0, 3, 0u8), Err(Error::EmptyGrid)));
        assert!(Grid2D::from_vec(2, 2, vec![0u8; 3]).is_err());
    }
}
