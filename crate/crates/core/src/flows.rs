//! Flow fields synthesized from instance masks.
//!
//! Each instance gets a heat potential: a unit of heat is injected at the
//! instance center every iteration and spread by a masked Jacobi average in
//! which pixels outside the mask act as a zero-temperature sink. The flow is
//! the normalized gradient of `log(1 + T)`, so every vector points toward the
//! interior and the center is the only sink.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{check_dims, FlowField, Grid2D, LabelMap, Point};

const NORM_EPS: f64 = 1e-12;

/// Inclusive pixel bounds `(y0, x0, y1, x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BBox {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceStats {
    pub id: u16,
    /// Medoid pixel, the sink target of the instance.
    pub center: (usize, usize),
    pub bbox: BBox,
    pub area: usize,
}

impl InstanceStats {
    pub fn center_point(&self) -> Point {
        Point::new(self.center.0 as f64, self.center.1 as f64)
    }
}

/// Row-major pixel lists per id; index 0 (background) is left empty.
pub(crate) fn pixels_by_id(l: &LabelMap) -> Vec<Vec<(usize, usize)>> {
    let mut out: Vec<Vec<(usize, usize)>> = vec![Vec::new(); l.max_id() as usize + 1];
    let (h, w) = l.dims();
    for y in 0..h {
        for x in 0..w {
            let v = l.get(y, x);
            if v != 0 {
                out[v as usize].push((y, x));
            }
        }
    }
    out
}

fn stats_from_pixels(id: u16, pixels: &[(usize, usize)]) -> InstanceStats {
    let mut bbox = BBox {
        y0: usize::MAX,
        x0: usize::MAX,
        y1: 0,
        x1: 0,
    };
    let (mut sy, mut sx) = (0.0f64, 0.0f64);
    for &(y, x) in pixels {
        bbox.y0 = bbox.y0.min(y);
        bbox.x0 = bbox.x0.min(x);
        bbox.y1 = bbox.y1.max(y);
        bbox.x1 = bbox.x1.max(x);
        sy += y as f64;
        sx += x as f64;
    }
    let n = pixels.len() as f64;
    let (cy, cx) = (sy / n, sx / n);
    // Pixels arrive in row-major order, so strict `<` keeps the smallest row, then column.
    let mut best = pixels[0];
    let mut best_d = f64::INFINITY;
    for &(y, x) in pixels {
        let d = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
        if d < best_d {
            best_d = d;
            best = (y, x);
        }
    }
    InstanceStats {
        id,
        center: best,
        bbox,
        area: pixels.len(),
    }
}

/// Stats for every instance present, ascending by id.
pub fn instance_stats(l: &LabelMap) -> Vec<InstanceStats> {
    pixels_by_id(l)
        .iter()
        .enumerate()
        .filter(|(_, px)| !px.is_empty())
        .map(|(id, px)| stats_from_pixels(id as u16, px))
        .collect()
}

/// Medoid of instance `k`: the mask pixel closest to the mask centroid.
pub fn instance_center(l: &LabelMap, k: u16) -> Result<Point> {
    let pixels = instance_pixels(l, k)?;
    Ok(stats_from_pixels(k, &pixels).center_point())
}

fn instance_pixels(l: &LabelMap, k: u16) -> Result<Vec<(usize, usize)>> {
    let (h, w) = l.dims();
    let mut pixels = Vec::new();
    if k != 0 {
        for y in 0..h {
            for x in 0..w {
                if l.get(y, x) == k {
                    pixels.push((y, x));
                }
            }
        }
    }
    if pixels.is_empty() {
        return Err(Error::UnknownInstance(k));
    }
    Ok(pixels)
}

/// Heat potential of one instance on its bounding box grown by one pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    /// Image coordinates of `psi[(0, 0)]`; may be -1 when the instance touches the image edge.
    pub origin: (isize, isize),
    pub psi: Grid2D<f64>,
    pub stats: InstanceStats,
}

impl PotentialField {
    /// Potential at an image pixel; zero outside the stored window.
    pub fn at(&self, y: usize, x: usize) -> f64 {
        let ly = y as isize - self.origin.0;
        let lx = x as isize - self.origin.1;
        if ly < 0 || lx < 0 || ly as usize >= self.psi.height() || lx as usize >= self.psi.width() {
            return 0.0;
        }
        self.psi.get(ly as usize, lx as usize)
    }
}

fn diffuse(pixels: &[(usize, usize)], stats: &InstanceStats) -> PotentialField {
    let bbox = stats.bbox;
    let lh = bbox.height() + 2;
    let lw = bbox.width() + 2;
    let local = |y: usize, x: usize| (y - bbox.y0 + 1) * lw + (x - bbox.x0 + 1);

    let mut inside = vec![false; lh * lw];
    let cells: Vec<usize> = pixels.iter().map(|&(y, x)| local(y, x)).collect();
    for &i in &cells {
        inside[i] = true;
    }
    // The one-pixel margin guarantees every mask cell has all four neighbors in the window.
    let neighbors: Vec<[Option<usize>; 4]> = cells
        .iter()
        .map(|&i| {
            let mut n = [None; 4];
            for (slot, j) in n.iter_mut().zip([i - lw, i + lw, i - 1, i + 1]) {
                if inside[j] {
                    *slot = Some(j);
                }
            }
            n
        })
        .collect();

    let source = local(stats.center.0, stats.center.1);
    let n_iter = 2 * (bbox.height() + bbox.width());
    let mut heat = vec![0.0f64; lh * lw];
    let mut next = vec![0.0f64; lh * lw];
    for _ in 0..n_iter {
        heat[source] += 1.0;
        for (&i, nb) in cells.iter().zip(&neighbors) {
            let mut acc = heat[i];
            for j in nb.iter().flatten() {
                acc += heat[*j];
            }
            next[i] = acc / 5.0;
        }
        std::mem::swap(&mut heat, &mut next);
    }

    let psi: Vec<f64> = heat.iter().map(|t| t.ln_1p()).collect();
    PotentialField {
        origin: (bbox.y0 as isize - 1, bbox.x0 as isize - 1),
        psi: Grid2D::from_vec(lh, lw, psi).expect("window is non-empty"),
        stats: stats.clone(),
    }
}

/// Runs the masked heat diffusion for instance `k`.
pub fn diffuse_potential(l: &LabelMap, k: u16) -> Result<PotentialField> {
    let pixels = instance_pixels(l, k)?;
    let stats = stats_from_pixels(k, &pixels);
    Ok(diffuse(&pixels, &stats))
}

/// Unit flow vectors for one instance, as `(pixel, vy, vx)` in row-major order.
fn instance_flows(
    pixels: &[(usize, usize)],
    stats: &InstanceStats,
) -> Vec<((usize, usize), f32, f32)> {
    let field = diffuse(pixels, stats);
    let lw = field.psi.width();
    let psi = field.psi.values();
    pixels
        .iter()
        .map(|&(y, x)| {
            let ly = y - stats.bbox.y0 + 1;
            let lx = x - stats.bbox.x0 + 1;
            let i = ly * lw + lx;
            let gy = (psi[i + lw] - psi[i - lw]) / 2.0;
            let gx = (psi[i + 1] - psi[i - 1]) / 2.0;
            let n = gy.hypot(gx);
            if n < NORM_EPS {
                ((y, x), 0.0, 0.0)
            } else {
                (
                    (y, x),
                    (gy / (n + NORM_EPS)) as f32,
                    (gx / (n + NORM_EPS)) as f32,
                )
            }
        })
        .collect()
}

type PixelFlow = ((usize, usize), f32, f32);

/// Inward-pointing unit flows for every instance; background stays exactly zero.
pub fn flows_from_labels(l: &LabelMap) -> FlowField {
    let (h, w) = l.dims();
    let by_id = pixels_by_id(l);
    let per_instance: Vec<Vec<PixelFlow>> = by_id
        .par_iter()
        .enumerate()
        .filter(|(_, px)| !px.is_empty())
        .map(|(id, px)| instance_flows(px, &stats_from_pixels(id as u16, px)))
        .collect();

    let mut flow = FlowField::zeros(h, w).expect("label map is non-empty");
    for vectors in per_instance {
        for ((y, x), vy, vx) in vectors {
            flow.dy.set(y, x, vy);
            flow.dx.set(y, x, vx);
        }
    }
    flow
}

/// Mean squared vector difference between `v_pred` and the flows recomputed
/// from each instance mask.
pub fn flow_error(l: &LabelMap, v_pred: &FlowField) -> Result<BTreeMap<u16, f64>> {
    check_dims(l.dims(), v_pred.dims())?;
    let v_ref = flows_from_labels(l);
    let mut sums: BTreeMap<u16, (f64, usize)> = BTreeMap::new();
    for ((((&k, &py), &px), &ry), &rx) in l
        .labels
        .values()
        .iter()
        .zip(v_pred.dy.values())
        .zip(v_pred.dx.values())
        .zip(v_ref.dy.values())
        .zip(v_ref.dx.values())
    {
        if k == 0 {
            continue;
        }
        let e = (py as f64 - ry as f64).powi(2) + (px as f64 - rx as f64).powi(2);
        let s = sums.entry(k).or_insert((0.0, 0));
        s.0 += e;
        s.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect())
}

/// Drops instances whose flow error exceeds `flow_threshold`, then relabels.
pub fn filter_by_flow_error(
    l: &LabelMap,
    v_pred: &FlowField,
    flow_threshold: f64,
) -> Result<LabelMap> {
    if flow_threshold.is_nan() || flow_threshold < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "flow_threshold must be >= 0, got {flow_threshold}"
        )));
    }
    let errors = flow_error(l, v_pred)?;
    Ok(
        l.remove_where(|k| errors.get(&k).is_some_and(|&e| e > flow_threshold))
            .relabel_sequential(),
    )
}
