//! End-to-end segmentation: semantic gating, the diameter prior, and tiled
//! processing of rasters too large for one pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advect::{segment_detailed, SegmentationSettings};
use crate::error::{Error, Result};
use crate::gate::{apply_mask_flows, filter_instances_by_canopy};
use crate::raster::{
    check_dims, diameter_scale, rescale_bilinear, resize_nearest, FlowField, Grid2D, LabelMap,
    ProbabilityMap, SemanticMask, REFERENCE_DIAMETER,
};

/// Minimum band IoU for two seam instances from different tiles to be merged.
pub const SEAM_MERGE_IOU: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub settings: SegmentationSettings,
    /// Expected crown diameter in pixels; inputs are rescaled by 30 / diameter.
    pub diameter: f64,
    /// Minimum in-canopy fraction per instance; `None` disables the post-filter.
    pub rho: Option<f64>,
    pub tile: usize,
    pub overlap: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            settings: SegmentationSettings::default(),
            diameter: REFERENCE_DIAMETER,
            rho: None,
            tile: 1024,
            overlap: 128,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        diameter_scale(self.diameter)?;
        if let Some(rho) = self.rho {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::InvalidArgument(format!(
                    "rho must be in [0, 1], got {rho}"
                )));
            }
        }
        Ok(())
    }

    /// Tiling needs room for two overlaps per tile and an overlap at least
    /// one crown diameter wide.
    pub fn validate_tiling(&self) -> Result<()> {
        self.validate()?;
        if self.tile < 2 * self.overlap || self.tile == 0 {
            return Err(Error::InvalidArgument(format!(
                "tile size {} must be positive and at least twice the overlap {}",
                self.tile, self.overlap
            )));
        }
        if (self.overlap as f64) < self.diameter {
            return Err(Error::InvalidArgument(format!(
                "overlap {} is smaller than the crown diameter {}",
                self.overlap, self.diameter
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounts {
    pub n_instances: usize,
    pub n_advected: usize,
    pub n_clusters: usize,
    pub removed_small: usize,
    pub removed_flow: usize,
    pub removed_canopy: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub labels: LabelMap,
    pub counts: RunCounts,
}

fn rescale_inputs(
    v: &FlowField,
    p: &ProbabilityMap,
    factor: f64,
) -> Result<(FlowField, ProbabilityMap)> {
    let flows = FlowField::new(
        rescale_bilinear(&v.dy, factor)?,
        rescale_bilinear(&v.dx, factor)?,
    )?
    .renormalized();
    let prob = rescale_bilinear(&p.p, factor)?.map(|x| x.clamp(0.0, 1.0));
    Ok((flows, ProbabilityMap::new(prob)?))
}

/// Gates, rescales, segments and maps labels back to the input grid. The
/// canopy post-filter is not applied here.
fn segment_gated(
    v: &FlowField,
    p: &ProbabilityMap,
    mask: Option<&SemanticMask>,
    cfg: &PipelineConfig,
) -> Result<RunOutcome> {
    check_dims(v.dims(), p.dims())?;
    let gated;
    let (v, p) = match mask {
        Some(m) => {
            gated = apply_mask_flows(v, p, m)?;
            (&gated.0, &gated.1)
        }
        None => (v, p),
    };
    let factor = diameter_scale(cfg.diameter)?;
    let out = if factor == 1.0 {
        segment_detailed(v, p, &cfg.settings)?
    } else {
        let (sv, sp) = rescale_inputs(v, p, factor)?;
        let mut out = segment_detailed(&sv, &sp, &cfg.settings)?;
        let (h, w) = v.dims();
        out.labels = resize_nearest(&out.labels, h, w)?.relabel_sequential();
        out
    };
    Ok(RunOutcome {
        counts: RunCounts {
            n_instances: out.labels.count(),
            n_advected: out.n_advected,
            n_clusters: out.n_clusters,
            removed_small: out.removed_small,
            removed_flow: out.removed_flow,
            removed_canopy: 0,
        },
        labels: out.labels,
    })
}

fn apply_canopy_filter(
    out: &mut RunOutcome,
    mask: Option<&SemanticMask>,
    rho: Option<f64>,
) -> Result<()> {
    if let (Some(m), Some(rho)) = (mask, rho) {
        let before = out.labels.count();
        out.labels = filter_instances_by_canopy(&out.labels, m, rho)?;
        out.counts.removed_canopy = before - out.labels.count();
        out.counts.n_instances = out.labels.count();
    }
    Ok(())
}

/// Segments the whole raster in one pass.
pub fn run_segmentation(
    v: &FlowField,
    p: &ProbabilityMap,
    mask: Option<&SemanticMask>,
    cfg: &PipelineConfig,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut out = segment_gated(v, p, mask, cfg)?;
    apply_canopy_filter(&mut out, mask, cfg.rho)?;
    Ok(out)
}

/// Half-open pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub y0: usize,
    pub x0: usize,
    pub y1: usize,
    pub x1: usize,
}

impl Rect {
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        (self.y0..self.y1).contains(&y) && (self.x0..self.x1).contains(&x)
    }

    /// Smallest rectangle covering both.
    pub fn union(&self, o: &Rect) -> Rect {
        Rect {
            y0: self.y0.min(o.y0),
            x0: self.x0.min(o.x0),
            y1: self.y1.max(o.y1),
            x1: self.x1.max(o.x1),
        }
    }

    pub fn intersect(&self, o: &Rect) -> Rect {
        let y0 = self.y0.max(o.y0);
        let x0 = self.x0.max(o.x0);
        Rect {
            y0,
            x0,
            y1: self.y1.min(o.y1).max(y0),
            x1: self.x1.min(o.x1).max(x0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    /// Window handed to the segmenter.
    pub rect: Rect,
    /// Part of the window this tile is authoritative for; cores partition the image.
    pub core: Rect,
}

/// Splits `[0, len)` into windows of `tile` advancing by `tile - overlap`,
/// the last one flush with the end, and cores split at overlap midpoints.
fn axis_spans(len: usize, tile: usize, overlap: usize) -> Vec<((usize, usize), (usize, usize))> {
    if len <= tile {
        return vec![((0, len), (0, len))];
    }
    let stride = tile - overlap;
    let mut starts = Vec::new();
    let mut s = 0;
    while s + tile < len {
        starts.push(s);
        s += stride;
    }
    starts.push(len - tile);
    let n = starts.len();
    (0..n)
        .map(|i| {
            let (a, b) = (starts[i], starts[i] + tile);
            let lo = if i == 0 {
                0
            } else {
                (a + starts[i - 1] + tile) / 2
            };
            let hi = if i + 1 == n {
                len
            } else {
                (starts[i + 1] + b) / 2
            };
            ((a, b), (lo, hi))
        })
        .collect()
}

/// Tile layout in row-major order.
pub fn plan_tiles(height: usize, width: usize, tile: usize, overlap: usize) -> Vec<Tile> {
    let rows = axis_spans(height, tile, overlap);
    let cols = axis_spans(width, tile, overlap);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &((y0, y1), (cy0, cy1)) in &rows {
        for &((x0, x1), (cx0, cx1)) in &cols {
            out.push(Tile {
                rect: Rect { y0, x0, y1, x1 },
                core: Rect {
                    y0: cy0,
                    x0: cx0,
                    y1: cy1,
                    x1: cx1,
                },
            });
        }
    }
    out
}

struct Accepted {
    source: Rect,
    core: bool,
    pixels: Vec<usize>,
}

/// Sequential reduction of per-tile label maps into one map.
struct Stitcher {
    width: usize,
    /// Index + 1 into `accepted`, 0 for background.
    owner: Vec<u32>,
    accepted: Vec<Accepted>,
}

impl Stitcher {
    fn new(height: usize, width: usize) -> Self {
        Self {
            width,
            owner: vec![0; height * width],
            accepted: Vec::new(),
        }
    }

    fn claim(&mut self, pixels: Vec<usize>, source: Rect, core: bool) {
        self.accepted.push(Accepted {
            source,
            core,
            pixels,
        });
        let tag = self.accepted.len() as u32;
        for &i in &self.accepted[tag as usize - 1].pixels {
            self.owner[i] = tag;
        }
    }

    fn count_in(&self, pixels: &[usize], r: &Rect) -> usize {
        pixels
            .iter()
            .filter(|&&i| r.contains(i / self.width, i % self.width))
            .count()
    }

    fn live_pixels(&self, k: usize) -> Vec<usize> {
        let tag = k as u32 + 1;
        self.accepted[k]
            .pixels
            .iter()
            .copied()
            .filter(|&i| self.owner[i] == tag)
            .collect()
    }

    fn add_seam(&mut self, pixels: Vec<usize>, source: Rect) {
        let mut overlaps: Vec<(usize, usize)> = Vec::new();
        for &i in &pixels {
            let o = self.owner[i];
            if o == 0 {
                continue;
            }
            let k = o as usize - 1;
            match overlaps.iter_mut().find(|(j, _)| *j == k) {
                Some((_, n)) => *n += 1,
                None => overlaps.push((k, 1)),
            }
        }
        if overlaps.is_empty() {
            self.claim(pixels, source, false);
            return;
        }
        overlaps.sort_unstable();
        let overlaps: Vec<usize> = overlaps.into_iter().map(|(k, _)| k).collect();

        // IoU restricted to the window both tiles saw.
        let mut best: Option<(usize, f64)> = None;
        for &k in &overlaps {
            let band = source.intersect(&self.accepted[k].source);
            let tag = k as u32 + 1;
            let inter = pixels
                .iter()
                .filter(|&&i| self.owner[i] == tag && band.contains(i / self.width, i % self.width))
                .count();
            let a = self.count_in(&pixels, &band);
            let b = self.count_in(&self.live_pixels(k), &band);
            let iou = if inter == 0 {
                0.0
            } else {
                inter as f64 / (a + b - inter) as f64
            };
            if iou >= SEAM_MERGE_IOU && best.is_none_or(|(_, v)| iou > v) {
                best = Some((k, iou));
            }
        }
        if let Some((k, _)) = best {
            let tag = k as u32 + 1;
            self.accepted[k].source = self.accepted[k].source.union(&source);
            for i in pixels {
                if self.owner[i] == 0 {
                    self.owner[i] = tag;
                    self.accepted[k].pixels.push(i);
                }
            }
            return;
        }

        // No match: the larger instance wins; core instances are never displaced.
        let size = pixels.len();
        let wins = overlaps.iter().all(|&k| {
            let a = &self.accepted[k];
            !a.core && self.live_pixels(k).len() < size
        });
        if wins {
            for &k in &overlaps {
                for i in self.live_pixels(k) {
                    self.owner[i] = 0;
                }
            }
            self.claim(pixels, source, false);
        }
    }

    /// Compacts surviving instances to ids in order of first occurrence.
    fn finish(self, height: usize) -> Result<LabelMap> {
        let mut map = vec![0u16; self.accepted.len() + 1];
        let mut next = 0usize;
        let mut values = Vec::with_capacity(self.owner.len());
        for &o in &self.owner {
            if o != 0 && map[o as usize] == 0 {
                next += 1;
                if next > u16::MAX as usize {
                    return Err(Error::LabelOverflow(next));
                }
                map[o as usize] = next as u16;
            }
            values.push(map[o as usize]);
        }
        Ok(LabelMap::new(Grid2D::from_vec(height, self.width, values)?))
    }
}

/// Segments overlapping tiles independently and stitches them in row-major
/// tile order. Instances lying entirely inside a tile's core are kept as is;
/// the others are merged with already accepted instances when their IoU
/// inside the shared window is at least `SEAM_MERGE_IOU`, otherwise the
/// larger of the conflicting instances survives.
pub fn run_tiled(
    v: &FlowField,
    p: &ProbabilityMap,
    mask: Option<&SemanticMask>,
    cfg: &PipelineConfig,
) -> Result<RunOutcome> {
    cfg.validate_tiling()?;
    check_dims(v.dims(), p.dims())?;
    if let Some(m) = mask {
        check_dims(v.dims(), m.dims())?;
    }
    let (h, w) = v.dims();
    let tiles = plan_tiles(h, w, cfg.tile, cfg.overlap);

    let results: Vec<RunOutcome> = tiles
        .par_iter()
        .map(|t| {
            let r = t.rect;
            let tv = v.crop(r.y0, r.x0, r.height(), r.width())?;
            let tp = ProbabilityMap::new(p.p.crop(r.y0, r.x0, r.height(), r.width())?)?;
            let tm = match mask {
                Some(m) => Some(SemanticMask::from_values(m.m.crop(
                    r.y0,
                    r.x0,
                    r.height(),
                    r.width(),
                )?)),
                None => None,
            };
            segment_gated(&tv, &tp, tm.as_ref(), cfg)
        })
        .collect::<Result<_>>()?;

    let mut counts = RunCounts::default();
    let mut stitcher = Stitcher::new(h, w);
    let mut seams = Vec::new();
    for (t, res) in tiles.iter().zip(&results) {
        counts.n_advected += res.counts.n_advected;
        counts.n_clusters += res.counts.n_clusters;
        counts.removed_small += res.counts.removed_small;
        counts.removed_flow += res.counts.removed_flow;

        let n = res.labels.max_id() as usize + 1;
        let mut pixels: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut inside_core = vec![true; n];
        let r = t.rect;
        for ly in 0..r.height() {
            for lx in 0..r.width() {
                let id = res.labels.get(ly, lx) as usize;
                if id == 0 {
                    continue;
                }
                let (y, x) = (r.y0 + ly, r.x0 + lx);
                pixels[id].push(y * w + x);
                inside_core[id] &= t.core.contains(y, x);
            }
        }
        for (id, px) in pixels.into_iter().enumerate().skip(1) {
            if px.is_empty() {
                continue;
            }
            if inside_core[id] {
                stitcher.claim(px, r, true);
            } else {
                seams.push((px, r));
            }
        }
    }
    for (px, r) in seams {
        stitcher.add_seam(px, r);
    }

    let labels = stitcher.finish(h)?;
    counts.n_instances = labels.count();
    let mut out = RunOutcome { labels, counts };
    apply_canopy_filter(&mut out, mask, cfg.rho)?;
    Ok(out)
}
