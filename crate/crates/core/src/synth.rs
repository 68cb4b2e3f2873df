//! Seeded synthetic crown scenes.
//!
//! Crowns are star-convex blobs with radius `r(θ) = r0 (1 + Σ a_j cos(jθ + φ_j))`
//! for `j = 2, 3, 4`. Placement is in z-order: a later crown covers earlier
//! ones, and placements that would hide more than `max_occlusion` of an
//! existing crown are rejected.
//!
//! All randomness comes from a single `Xoshiro256PlusPlus` stream seeded with
//! `SceneSpec::seed` through `seed_from_u64` (SplitMix64 expansion). Draw order:
//! placement attempts, then crown colors, then per-pixel noise, then clutter.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Grid2D, LabelMap, Point, SemanticMask};

/// Number of lobe harmonics per crown, orders 2..=4.
const N_HARMONICS: usize = 3;
const FIRST_ORDER: usize = 2;
const ATTEMPTS_PER_CROWN: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub n_crowns: usize,
    pub radius_range: (f64, f64),
    /// Upper bound on the summed lobe amplitudes of one crown.
    pub lobe_amplitude: f64,
    /// Largest fraction of a crown that later crowns may hide.
    pub max_occlusion: f64,
    pub clutter: bool,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 256,
            width: 256,
            n_crowns: 20,
            radius_range: (8.0, 16.0),
            lobe_amplitude: 0.3,
            max_occlusion: 0.5,
            clutter: false,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (r_min, r_max) = self.radius_range;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.height == 0 || self.width == 0 {
            return bad("scene dimensions must be positive".into());
        }
        if r_min.is_nan() || r_min < 3.0 || r_max.is_nan() || r_max < r_min || !r_max.is_finite() {
            return bad(format!(
                "radius range must satisfy 3 <= r_min <= r_max, got ({r_min}, {r_max})"
            ));
        }
        if !(0.0..0.5).contains(&self.lobe_amplitude) {
            return bad(format!(
                "lobe_amplitude must be in [0, 0.5), got {}",
                self.lobe_amplitude
            ));
        }
        if !(0.0..1.0).contains(&self.max_occlusion) {
            return bad(format!(
                "max_occlusion must be in [0, 1), got {}",
                self.max_occlusion
            ));
        }
        if self.n_crowns > u16::MAX as usize {
            return Err(Error::LabelOverflow(self.n_crowns));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Crown {
    pub id: u16,
    pub center: Point,
    pub r0: f64,
    pub harmonics: Vec<Harmonic>,
    /// In-image pixel count before occlusion.
    pub full_area: usize,
}

impl Crown {
    pub fn radius_at(&self, theta: f64) -> f64 {
        boundary_radius(self.r0, &self.harmonics, theta)
    }
}

/// Textured non-canopy patch painted onto the image background.
#[derive(Clone, Debug, PartialEq)]
pub struct ClutterPatch {
    pub center: Point,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: [Grid2D<f32>; 3],
    pub labels: LabelMap,
    pub semantic: SemanticMask,
    pub spec: SceneSpec,
    pub crowns: Vec<Crown>,
    pub clutter: Vec<ClutterPatch>,
}

fn boundary_radius(r0: f64, harmonics: &[Harmonic], theta: f64) -> f64 {
    let lobes: f64 = harmonics
        .iter()
        .enumerate()
        .map(|(i, h)| h.amplitude * ((i + FIRST_ORDER) as f64 * theta + h.phase).cos())
        .sum();
    r0 * (1.0 + lobes)
}

fn check_amplitudes(harmonics: &[Harmonic]) -> Result<()> {
    let sum: f64 = harmonics.iter().map(|h| h.amplitude.abs()).sum();
    if sum.is_nan() || sum >= 0.5 {
        return Err(Error::AmplitudeSum(sum));
    }
    Ok(())
}

/// Membership test for a point of the continuous crown region.
pub fn crown_contains(center: Point, r0: f64, harmonics: &[Harmonic], y: f64, x: f64) -> bool {
    let dy = y - center.y;
    let dx = x - center.x;
    dy.hypot(dx) <= boundary_radius(r0, harmonics, dy.atan2(dx))
}

/// Row-major in-image pixels of a crown.
fn crown_pixels(
    center: Point,
    r0: f64,
    harmonics: &[Harmonic],
    (h, w): (usize, usize),
) -> Vec<(usize, usize)> {
    let reach = r0 * 1.5 + 1.0;
    let y0 = (center.y - reach).floor().max(0.0) as usize;
    let x0 = (center.x - reach).floor().max(0.0) as usize;
    let y1 = ((center.y + reach).ceil().max(0.0) as usize).min(h - 1);
    let x1 = ((center.x + reach).ceil().max(0.0) as usize).min(w - 1);
    let mut out = Vec::new();
    if y0 > y1 || x0 > x1 {
        return out;
    }
    for y in y0..=y1 {
        for x in x0..=x1 {
            if crown_contains(center, r0, harmonics, y as f64, x as f64) {
                out.push((y, x));
            }
        }
    }
    out
}

/// Rasterizes `{ p : |p - center| <= r(θ) }`. Harmonic `i` has angular order `i + 2`.
pub fn crown_shape(
    center: Point,
    r0: f64,
    harmonics: &[Harmonic],
    dims: (usize, usize),
) -> Result<BinaryMask> {
    check_amplitudes(harmonics)?;
    if r0.is_nan() || r0 <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "crown radius must be positive, got {r0}"
        )));
    }
    let mut m = Grid2D::filled(dims.0, dims.1, 0u8)?;
    for (y, x) in crown_pixels(center, r0, harmonics, dims) {
        m.set(y, x, 1);
    }
    Ok(SemanticMask { m })
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(spec.seed);
    let mut labels = Grid2D::filled(h, w, 0u16)?;
    let mut crowns: Vec<Crown> = Vec::with_capacity(spec.n_crowns);
    // Index 0 unused; visible[k] tracks crown k's currently uncovered pixels.
    let mut visible: Vec<usize> = vec![0];
    let (r_min, r_max) = spec.radius_range;
    let min_area = PI * r_min * r_min / 2.0;
    let per_lobe = spec.lobe_amplitude / N_HARMONICS as f64;

    let max_attempts = ATTEMPTS_PER_CROWN * spec.n_crowns;
    let mut attempts = 0;
    let mut hits: Vec<usize> = Vec::new();
    while crowns.len() < spec.n_crowns {
        if attempts >= max_attempts {
            return Err(Error::Placement {
                placed: crowns.len(),
                requested: spec.n_crowns,
            });
        }
        attempts += 1;

        let center = Point::new(
            rng.random_range(0.0..h as f64),
            rng.random_range(0.0..w as f64),
        );
        let r0 = if r_max > r_min {
            rng.random_range(r_min..=r_max)
        } else {
            r_min
        };
        let harmonics: Vec<Harmonic> = (0..N_HARMONICS)
            .map(|_| Harmonic {
                amplitude: if per_lobe > 0.0 {
                    rng.random_range(0.0..per_lobe)
                } else {
                    0.0
                },
                phase: rng.random_range(0.0..2.0 * PI),
            })
            .collect();

        let pixels = crown_pixels(center, r0, &harmonics, (h, w));
        if (pixels.len() as f64) < min_area {
            continue;
        }
        hits.clear();
        hits.resize(visible.len(), 0);
        for &(y, x) in &pixels {
            hits[labels.get(y, x) as usize] += 1;
        }
        let occludes_too_much = crowns.iter().any(|c| {
            let k = c.id as usize;
            hits[k] > 0
                && ((visible[k] - hits[k]) as f64) < (1.0 - spec.max_occlusion) * c.full_area as f64
        });
        if occludes_too_much {
            continue;
        }

        let id = crowns.len() as u16 + 1;
        for (k, &n) in hits.iter().enumerate().skip(1) {
            visible[k] -= n;
        }
        for &(y, x) in &pixels {
            labels.set(y, x, id);
        }
        visible.push(pixels.len());
        crowns.push(Crown {
            id,
            center,
            r0,
            harmonics,
            full_area: pixels.len(),
        });
    }

    let labels = LabelMap::new(labels);
    let image = render(&labels, &crowns, &mut rng)?;
    let mut scene = Scene {
        semantic: SemanticMask::from_labels(&labels),
        image,
        labels,
        spec: spec.clone(),
        crowns,
        clutter: Vec::new(),
    };
    if spec.clutter {
        add_clutter(&mut scene, &mut rng);
    }
    Ok(scene)
}

fn render(
    labels: &LabelMap,
    crowns: &[Crown],
    rng: &mut Xoshiro256PlusPlus,
) -> Result<[Grid2D<f32>; 3]> {
    let (h, w) = labels.dims();
    let colors: Vec<[f64; 3]> = crowns
        .iter()
        .map(|_| {
            [
                rng.random_range(0.08..0.30),
                rng.random_range(0.35..0.65),
                rng.random_range(0.08..0.25),
            ]
        })
        .collect();
    const SOIL: [f64; 3] = [0.46, 0.39, 0.29];

    let mut bands = [
        Grid2D::filled(h, w, 0.0f32)?,
        Grid2D::filled(h, w, 0.0f32)?,
        Grid2D::filled(h, w, 0.0f32)?,
    ];
    for y in 0..h {
        for x in 0..w {
            let k = labels.get(y, x);
            let (base, shade) = if k == 0 {
                (SOIL, 1.0)
            } else {
                let c = &crowns[k as usize - 1];
                let dy = y as f64 - c.center.y;
                let dx = x as f64 - c.center.x;
                let rel = (dy.hypot(dx) / c.radius_at(dy.atan2(dx))).min(1.0);
                (colors[k as usize - 1], 1.0 - 0.45 * rel * rel)
            };
            for (b, band) in bands.iter_mut().enumerate() {
                let noise = rng.random_range(-0.04..0.04);
                band.set(y, x, (base[b] * shade + noise).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(bands)
}

/// Striped roof- and road-like patches on background pixels only.
fn add_clutter(scene: &mut Scene, rng: &mut Xoshiro256PlusPlus) {
    let spec = &scene.spec;
    let (h, w) = (spec.height, spec.width);
    let n = (spec.n_crowns / 10).max(3);
    let (r_min, r_max) = spec.radius_range;
    for _ in 0..n {
        let center = Point::new(
            rng.random_range(0.0..h as f64),
            rng.random_range(0.0..w as f64),
        );
        let radius = if r_max > r_min {
            rng.random_range(r_min..=r_max)
        } else {
            r_min
        };
        let angle = rng.random_range(0.0..PI);
        let freq = rng.random_range(0.4..1.2);
        let tint: [f64; 3] = [
            rng.random_range(0.4..0.8),
            rng.random_range(0.3..0.7),
            rng.random_range(0.3..0.7),
        ];
        let (sa, ca) = angle.sin_cos();
        let y0 = (center.y - radius).floor().max(0.0) as usize;
        let x0 = (center.x - radius).floor().max(0.0) as usize;
        let y1 = ((center.y + radius).ceil() as usize).min(h - 1);
        let x1 = ((center.x + radius).ceil() as usize).min(w - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let dy = y as f64 - center.y;
                let dx = x as f64 - center.x;
                if dy.abs() > radius || dx.abs() > radius || scene.labels.get(y, x) != 0 {
                    continue;
                }
                let stripe = 0.5 + 0.5 * (freq * (dx * ca + dy * sa)).sin();
                for (b, band) in scene.image.iter_mut().enumerate() {
                    band.set(
                        y,
                        x,
                        (tint[b] * (0.55 + 0.45 * stripe)).clamp(0.0, 1.0) as f32,
                    );
                }
            }
        }
        scene.clutter.push(ClutterPatch { center, radius });
    }
}
