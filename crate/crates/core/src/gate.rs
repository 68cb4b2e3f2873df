//! Restricting segmentation to canopy pixels with a binary semantic mask.

use crate::error::{Error, Result};
use crate::raster::{check_dims, FlowField, Grid2D, LabelMap, ProbabilityMap, SemanticMask};

/// Default minimum in-canopy fraction for `filter_instances_by_canopy`.
pub const DEFAULT_RHO: f64 = 0.5;

fn zero_outside(g: &Grid2D<f32>, m: &SemanticMask) -> Grid2D<f32> {
    let values = g
        .values()
        .iter()
        .zip(m.m.values())
        .map(|(&v, &keep)| if keep > 0 { v } else { 0.0 })
        .collect();
    Grid2D::from_vec(g.height(), g.width(), values).expect("dims unchanged")
}

/// Multiplies every band by the mask.
pub fn apply_mask_image(bands: &[Grid2D<f32>], m: &SemanticMask) -> Result<Vec<Grid2D<f32>>> {
    bands
        .iter()
        .map(|b| {
            check_dims(m.dims(), b.dims())?;
            Ok(zero_outside(b, m))
        })
        .collect()
}

/// Zeroes flows and probabilities wherever the mask is 0.
pub fn apply_mask_flows(
    v: &FlowField,
    p: &ProbabilityMap,
    m: &SemanticMask,
) -> Result<(FlowField, ProbabilityMap)> {
    check_dims(m.dims(), v.dims())?;
    check_dims(m.dims(), p.dims())?;
    let flows = FlowField::new(zero_outside(&v.dy, m), zero_outside(&v.dx, m))?;
    let prob = ProbabilityMap::new(zero_outside(&p.p, m))?;
    Ok((flows, prob))
}

/// Removes instances whose fraction of pixels on canopy is below `rho`, then
/// relabels the survivors.
pub fn filter_instances_by_canopy(l: &LabelMap, m: &SemanticMask, rho: f64) -> Result<LabelMap> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!(
            "rho must be in [0, 1], got {rho}"
        )));
    }
    check_dims(m.dims(), l.dims())?;
    let n = l.max_id() as usize + 1;
    let mut total = vec![0usize; n];
    let mut inside = vec![0usize; n];
    for (&id, &keep) in l.labels.values().iter().zip(m.m.values()) {
        total[id as usize] += 1;
        inside[id as usize] += (keep > 0) as usize;
    }
    let drop = |id: u16| {
        let k = id as usize;
        total[k] > 0 && (inside[k] as f64) < rho * total[k] as f64
    };
    Ok(l.remove_where(drop).relabel_sequential())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_plane(h: usize, w: usize) -> SemanticMask {
        SemanticMask::from_values(Grid2D::from_fn(h, w, |_, x| (x < w / 2) as u8).unwrap())
    }

    #[test]
    fn image_masking() {
        let band = Grid2D::filled(4, 6, 5.0f32).unwrap();
        let ones = SemanticMask::from_values(Grid2D::filled(4, 6, 1).unwrap());
        let zeros = SemanticMask::from_values(Grid2D::filled(4, 6, 0).unwrap());
        assert_eq!(
            apply_mask_image(std::slice::from_ref(&band), &ones).unwrap()[0],
            band
        );
        assert!(
            apply_mask_image(std::slice::from_ref(&band), &zeros).unwrap()[0]
                .values()
                .iter()
                .all(|&v| v == 0.0)
        );
        let out = apply_mask_image(&[band.clone(), band], &half_plane(4, 6)).unwrap();
        for b in &out {
            for y in 0..4 {
                for x in 0..6 {
                    assert_eq!(b.get(y, x), if x < 3 { 5.0 } else { 0.0 });
                }
            }
        }
        let twice = apply_mask_image(&out, &half_plane(4, 6)).unwrap();
        assert_eq!(twice, out);
    }

    #[test]
    fn flow_masking_is_idempotent() {
        let v = FlowField::new(
            Grid2D::from_fn(4, 6, |y, _| if y % 2 == 0 { 1.0 } else { -1.0 }).unwrap(),
            Grid2D::filled(4, 6, 0.0).unwrap(),
        )
        .unwrap();
        let p = ProbabilityMap::new(Grid2D::filled(4, 6, 0.9).unwrap()).unwrap();
        let m = half_plane(4, 6);
        let (v1, p1) = apply_mask_flows(&v, &p, &m).unwrap();
        assert_eq!(v1.dy.get(0, 2), 1.0);
        assert_eq!(v1.dy.get(0, 3), 0.0);
        assert_eq!(p1.p.get(1, 5), 0.0);
        let (v2, p2) = apply_mask_flows(&v1, &p1, &m).unwrap();
        assert_eq!((v2, p2), (v1, p1));
        assert!(apply_mask_flows(&v, &p, &half_plane(3, 6)).is_err());
    }

    #[test]
    fn canopy_fraction_filter() {
        // Instance 1: 10 pixels in row 0, columns 0..10, canopy covers columns 0..4 (40%).
        // Instance 2: 5 pixels fully on canopy. Instance 3: fully off canopy.
        let l = LabelMap::new(
            Grid2D::from_fn(3, 10, |y, x| match y {
                0 => 1,
                1 if x < 5 => 2,
                2 if x >= 5 => 3,
                _ => 0,
            })
            .unwrap(),
        );
        let m = SemanticMask::from_values(
            Grid2D::from_fn(3, 10, |y, x| (x < 4 || (y == 1 && x < 5)) as u8).unwrap(),
        );

        let half = filter_instances_by_canopy(&l, &m, 0.5).unwrap();
        assert_eq!(half.count(), 1);
        assert_eq!(half.get(1, 0), 1);
        assert_eq!(half.get(0, 0), 0);

        let low = filter_instances_by_canopy(&l, &m, 0.3).unwrap();
        assert_eq!(low.count(), 2);
        assert_eq!(low.get(0, 9), 1);

        assert_eq!(
            filter_instances_by_canopy(&l, &m, 0.0).unwrap(),
            l.relabel_sequential()
        );
        assert!(filter_instances_by_canopy(&l, &m, 1.5).is_err());
    }
}
