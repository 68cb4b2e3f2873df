//! Euler advection of pixels along a flow field and grouping of the
//! trajectories by the sink they converge to.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flows::{filter_by_flow_error, pixels_by_id};
use crate::raster::{bilinear_sample, check_dims, FlowField, LabelMap, Point, ProbabilityMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationSettings {
    /// Euler steps per pixel.
    pub niter: usize,
    /// Maximum flow error an instance may have and survive.
    pub flow_threshold: f64,
    /// Pixels advect only when their probability is strictly above this.
    pub cellprob_threshold: f64,
    /// Instances smaller than this many pixels are dropped.
    pub min_area: usize,
    /// Minimum trajectory count for a histogram bin to seed a sink.
    pub h_min: u32,
    /// Number of 8-neighbor growth rounds per sink basin.
    pub grow_iters: usize,
    /// Minimum bin count a neighbor needs to join a basin.
    pub grow_min: u32,
}

impl Default for SegmentationSettings {
    fn default() -> Self {
        Self {
            niter: 200,
            flow_threshold: 1.0,
            cellprob_threshold: 0.0,
            min_area: 15,
            h_min: 10,
            grow_iters: 5,
            grow_min: 3,
        }
    }
}

impl SegmentationSettings {
    pub fn validate(&self) -> Result<()> {
        if self.niter == 0 {
            return Err(Error::InvalidArgument("niter must be >= 1".into()));
        }
        if !self.flow_threshold.is_finite() || self.flow_threshold < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "flow_threshold must be finite and >= 0, got {}",
                self.flow_threshold
            )));
        }
        if !self.cellprob_threshold.is_finite() {
            return Err(Error::InvalidArgument(
                "cellprob_threshold must be finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryEnd {
    pub origin: (usize, usize),
    pub final_pos: Point,
}

/// One sink: its seed bin, the number of trajectories ending there, and the
/// bins its basin absorbed (seed first).
#[derive(Clone, Debug, PartialEq)]
pub struct Sink {
    pub bin: (usize, usize),
    pub mass: u32,
    pub basin: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct SinkSet {
    pub sinks: Vec<Sink>,
}

/// Integrates `p <- clamp(p + V(p))` for every gated pixel.
pub fn advect(
    v: &FlowField,
    p: &ProbabilityMap,
    s: &SegmentationSettings,
) -> Result<Vec<TrajectoryEnd>> {
    check_dims(v.dims(), p.dims())?;
    let (h, w) = v.dims();
    let threshold = s.cellprob_threshold;
    let origins: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| p.p.get(y, x) as f64 > threshold)
        .collect();

    Ok(origins
        .par_iter()
        .map(|&(y, x)| {
            let mut pos = Point::new(y as f64, x as f64);
            for _ in 0..s.niter {
                let (vy, vx) = bilinear_sample(v, pos);
                pos = Point::new(pos.y + vy, pos.x + vx).clamped(h, w);
            }
            TrajectoryEnd {
                origin: (y, x),
                final_pos: pos,
            }
        })
        .collect())
}

fn histogram(ends: &[TrajectoryEnd], (h, w): (usize, usize)) -> Vec<u32> {
    let mut counts = vec![0u32; h * w];
    for e in ends {
        counts[bin_index(e.final_pos, h, w)] += 1;
    }
    counts
}

#[inline]
fn bin_index(p: Point, h: usize, w: usize) -> usize {
    let y = (p.y.round().max(0.0) as usize).min(h - 1);
    let x = (p.x.round().max(0.0) as usize).min(w - 1);
    y * w + x
}

/// Locates sinks in the trajectory-end histogram and grows their basins.
pub fn find_sinks(
    ends: &[TrajectoryEnd],
    dims: (usize, usize),
    s: &SegmentationSettings,
) -> SinkSet {
    let counts = histogram(ends, dims);
    SinkSet {
        sinks: find_sinks_in(&counts, dims, s).0,
    }
}

/// Returns the sinks plus the per-bin owner map (0 = unclaimed, else sink index + 1).
fn find_sinks_in(
    counts: &[u32],
    (h, w): (usize, usize),
    s: &SegmentationSettings,
) -> (Vec<Sink>, Vec<u32>) {
    // Seeds: bins with enough mass that beat every other bin in their 5x5
    // window, comparing (count, earlier row-major position).
    let mut seeds: Vec<(usize, u32)> = Vec::new();
    for (i, &c) in counts.iter().enumerate() {
        if c < s.h_min.max(1) {
            continue;
        }
        let (y, x) = (i / w, i % w);
        let mut is_max = true;
        'window: for ny in y.saturating_sub(2)..=(y + 2).min(h - 1) {
            for nx in x.saturating_sub(2)..=(x + 2).min(w - 1) {
                let j = ny * w + nx;
                if j == i {
                    continue;
                }
                if counts[j] > c || (counts[j] == c && j < i) {
                    is_max = false;
                    break 'window;
                }
            }
        }
        if is_max {
            seeds.push((i, c));
        }
    }
    seeds.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut owner = vec![0u32; h * w];
    let mut basins: Vec<Vec<usize>> = Vec::with_capacity(seeds.len());
    let mut frontiers: Vec<Vec<usize>> = Vec::with_capacity(seeds.len());
    for (k, &(i, _)) in seeds.iter().enumerate() {
        owner[i] = k as u32 + 1;
        basins.push(vec![i]);
        frontiers.push(vec![i]);
    }
    for _ in 0..s.grow_iters {
        for k in 0..seeds.len() {
            let mut grown = Vec::new();
            for &i in &frontiers[k] {
                let (y, x) = (i / w, i % w);
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        let j = ny * w + nx;
                        if owner[j] == 0 && counts[j] >= s.grow_min {
                            owner[j] = k as u32 + 1;
                            grown.push(j);
                        }
                    }
                }
            }
            basins[k].extend_from_slice(&grown);
            frontiers[k] = grown;
        }
    }

    let sinks = seeds
        .iter()
        .zip(basins)
        .map(|(&(i, mass), basin)| Sink {
            bin: (i / w, i % w),
            mass,
            basin: basin.into_iter().map(|j| (j / w, j % w)).collect(),
        })
        .collect();
    (sinks, owner)
}

/// Assigns every trajectory origin the label of the basin its end falls in.
pub fn cluster_sinks(
    ends: &[TrajectoryEnd],
    dims: (usize, usize),
    s: &SegmentationSettings,
) -> Result<LabelMap> {
    let (h, w) = dims;
    let mut out = LabelMap::empty(h, w)?;
    if ends.is_empty() {
        return Ok(out);
    }
    let counts = histogram(ends, dims);
    let (sinks, owner) = find_sinks_in(&counts, dims, s);
    if sinks.len() > u16::MAX as usize {
        return Err(Error::LabelOverflow(sinks.len()));
    }
    for e in ends {
        let k = owner[bin_index(e.final_pos, h, w)];
        out.labels.set(e.origin.0, e.origin.1, k as u16);
    }
    Ok(out.relabel_sequential())
}

/// Keeps the largest 4-connected component of every instance and fills
/// background holes it encloses.
pub fn cleanup_instances(l: &LabelMap) -> LabelMap {
    let mut out = l.clone();
    for (id, pixels) in pixels_by_id(l).iter().enumerate() {
        if pixels.is_empty() {
            continue;
        }
        let id = id as u16;
        let kept = keep_largest_component(&mut out, pixels);
        fill_holes(&mut out, id, &kept);
    }
    out
}

const N4: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// Local window over an instance bbox.
struct Window {
    y0: usize,
    x0: usize,
    h: usize,
    w: usize,
}

impl Window {
    fn around(pixels: &[(usize, usize)]) -> Self {
        let (mut y0, mut x0, mut y1, mut x1) = (usize::MAX, usize::MAX, 0, 0);
        for &(y, x) in pixels {
            y0 = y0.min(y);
            x0 = x0.min(x);
            y1 = y1.max(y);
            x1 = x1.max(x);
        }
        Self {
            y0,
            x0,
            h: y1 - y0 + 1,
            w: x1 - x0 + 1,
        }
    }

    #[inline]
    fn index(&self, y: usize, x: usize) -> usize {
        (y - self.y0) * self.w + (x - self.x0)
    }

    fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (ly, lx) = ((i / self.w) as isize, (i % self.w) as isize);
        N4.iter().filter_map(move |(dy, dx)| {
            let (ny, nx) = (ly + dy, lx + dx);
            (ny >= 0 && nx >= 0 && (ny as usize) < self.h && (nx as usize) < self.w)
                .then(|| ny as usize * self.w + nx as usize)
        })
    }
}

/// Returns the surviving pixels.
fn keep_largest_component(out: &mut LabelMap, pixels: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let win = Window::around(pixels);
    let mut inside = vec![false; win.h * win.w];
    for &(y, x) in pixels {
        inside[win.index(y, x)] = true;
    }
    let mut comp = vec![u32::MAX; win.h * win.w];
    let mut sizes: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for &(sy, sx) in pixels {
        let start = win.index(sy, sx);
        if comp[start] != u32::MAX {
            continue;
        }
        let c = sizes.len() as u32;
        comp[start] = c;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for j in win.neighbors(i) {
                if inside[j] && comp[j] == u32::MAX {
                    comp[j] = c;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    if sizes.len() <= 1 {
        return pixels.to_vec();
    }
    // First component in scan order wins ties.
    let keep = sizes.iter().enumerate().fold(
        0usize,
        |best, (i, &s)| if s > sizes[best] { i } else { best },
    ) as u32;
    let mut kept = Vec::with_capacity(sizes[keep as usize]);
    for &(y, x) in pixels {
        if comp[win.index(y, x)] == keep {
            kept.push((y, x));
        } else {
            out.labels.set(y, x, 0);
        }
    }
    kept
}

fn fill_holes(out: &mut LabelMap, id: u16, pixels: &[(usize, usize)]) {
    let win = Window::around(pixels);
    if win.h < 3 || win.w < 3 {
        return;
    }
    // Flood the complement of the instance from the bbox rim; whatever stays
    // unreached is enclosed.
    let mut wall = vec![false; win.h * win.w];
    for &(y, x) in pixels {
        wall[win.index(y, x)] = true;
    }
    let mut reached = vec![false; win.h * win.w];
    let mut queue = VecDeque::new();
    for i in 0..win.h * win.w {
        let (ly, lx) = (i / win.w, i % win.w);
        let rim = ly == 0 || lx == 0 || ly == win.h - 1 || lx == win.w - 1;
        if rim && !wall[i] {
            reached[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for j in win.neighbors(i) {
            if !reached[j] && !wall[j] {
                reached[j] = true;
                queue.push_back(j);
            }
        }
    }
    for i in 0..win.h * win.w {
        if !reached[i] && !wall[i] {
            let (y, x) = (win.y0 + i / win.w, win.x0 + i % win.w);
            if out.get(y, x) == 0 {
                out.labels.set(y, x, id);
            }
        }
    }
}

/// Labels plus bookkeeping from one segmentation run.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentOutcome {
    pub labels: LabelMap,
    pub n_advected: usize,
    pub n_clusters: usize,
    pub removed_small: usize,
    pub removed_flow: usize,
}

/// Advection, sink clustering, mask cleanup, size filter, flow-consistency filter.
pub fn segment_detailed(
    v: &FlowField,
    p: &ProbabilityMap,
    s: &SegmentationSettings,
) -> Result<SegmentOutcome> {
    s.validate()?;
    check_dims(v.dims(), p.dims())?;
    let ends = advect(v, p, s)?;
    let clustered = cluster_sinks(&ends, v.dims(), s)?;
    let n_clusters = clustered.count();
    let cleaned = cleanup_instances(&clustered);

    let areas = cleaned.areas();
    let sized = cleaned.remove_where(|k| areas[k as usize] < s.min_area);
    let n_sized = sized.count();
    let removed_small = cleaned.count() - n_sized;

    let filtered = filter_by_flow_error(&sized, v, s.flow_threshold)?;
    let removed_flow = n_sized - filtered.count();
    Ok(SegmentOutcome {
        labels: filtered.relabel_sequential(),
        n_advected: ends.len(),
        n_clusters,
        removed_small,
        removed_flow,
    })
}

pub fn segment(v: &FlowField, p: &ProbabilityMap, s: &SegmentationSettings) -> Result<LabelMap> {
    Ok(segment_detailed(v, p, s)?.labels)
}
