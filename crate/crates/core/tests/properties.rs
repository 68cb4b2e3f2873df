use std::collections::BTreeMap;

use crownseg::flows::{flow_error, flows_from_labels};
use crownseg::gate::{apply_mask_flows, filter_instances_by_canopy};
use crownseg::metrics::{summary, ScoredPrediction};
use crownseg::raster::{sample_bilinear, Grid2D, LabelMap, ProbabilityMap, SemanticMask};
use crownseg::synth::{generate_scene, SceneSpec};
use proptest::prelude::*;

fn arb_labels() -> impl Strategy<Value = LabelMap> {
    (2usize..24, 2usize..24).prop_flat_map(|(h, w)| {
        prop::collection::vec(0u16..6, h * w)
            .prop_map(move |v| LabelMap::new(Grid2D::from_vec(h, w, v).unwrap()))
    })
}

fn small_scene(seed: u64) -> LabelMap {
    let spec = SceneSpec {
        height: 64,
        width: 64,
        n_crowns: 6,
        radius_range: (4.0, 9.0),
        seed,
        ..Default::default()
    };
    generate_scene(&spec).unwrap().labels
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabel_is_idempotent(l in arb_labels()) {
        let once = l.relabel_sequential();
        prop_assert_eq!(once.relabel_sequential(), once.clone());
        prop_assert_eq!(once.count(), l.count());
        prop_assert_eq!(once.max_id() as usize, once.count());
    }

    #[test]
    fn bilinear_stays_within_neighbors(
        v in prop::collection::vec(-5.0f32..5.0, 16),
        y in -2.0f64..6.0,
        x in -2.0f64..6.0,
    ) {
        let g = Grid2D::from_vec(4, 4, v.clone()).unwrap();
        let s = sample_bilinear(&g, y, x);
        let lo = v.iter().cloned().fold(f32::INFINITY, f32::min) as f64;
        let hi = v.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        prop_assert!(s >= lo - 1e-9 && s <= hi + 1e-9);
    }

    #[test]
    fn reference_flows_have_zero_error(l in arb_labels()) {
        let v = flows_from_labels(&l);
        prop_assert!(v.max_magnitude() <= 1.0 + 1e-6);
        for (_, e) in flow_error(&l, &v).unwrap() {
            prop_assert_eq!(e, 0.0);
        }
    }

    #[test]
    fn scene_flows_have_zero_error(seed in any::<u64>()) {
        let l = small_scene(seed);
        let errs = flow_error(&l, &flows_from_labels(&l)).unwrap();
        prop_assert!(errs.values().all(|&e| e == 0.0));
    }

    #[test]
    fn flow_masking_is_idempotent(l in arb_labels(), m in prop::collection::vec(0u8..2, 1)) {
        let (h, w) = l.dims();
        let mask = SemanticMask::from_values(Grid2D::from_fn(h, w, |y, x| !(y + x + m[0] as usize).is_multiple_of(3) as u8).unwrap());
        let v = flows_from_labels(&l);
        let p = ProbabilityMap::from_labels(&l);
        let once = apply_mask_flows(&v, &p, &mask).unwrap();
        let twice = apply_mask_flows(&once.0, &once.1, &mask).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn canopy_filter_at_zero_only_relabels(l in arb_labels()) {
        let (h, w) = l.dims();
        let mask = SemanticMask::from_values(Grid2D::filled(h, w, 0).unwrap());
        prop_assert_eq!(filter_instances_by_canopy(&l, &mask, 0.0).unwrap(), l.relabel_sequential());
    }

    #[test]
    fn metrics_ignore_label_permutation(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let gt = small_scene(seed);
        let pred = small_scene(seed.wrapping_add(1));
        let ids = pred.ids();
        let scores: BTreeMap<u16, f64> = ids.iter().map(|&k| (k, 1.0 / (1.0 + k as f64))).collect();
        let base = summary(&gt, &ScoredPrediction::new(pred.clone(), scores.clone()).unwrap(), 0.5).unwrap();

        let mut perm = ids.clone();
        let mut s = perm_seed;
        for i in (1..perm.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let map: BTreeMap<u16, u16> = ids.iter().copied().zip(perm.iter().copied()).collect();
        let permuted = LabelMap::new(pred.labels.map(|v| if v == 0 { 0 } else { map[&v] }));
        let permuted_scores = scores.iter().map(|(k, s)| (map[k], *s)).collect();
        let other = summary(&gt, &ScoredPrediction::new(permuted, permuted_scores).unwrap(), 0.5).unwrap();
        prop_assert_eq!(base, other);
    }
}
