//! Instance matching and detection-style scores (precision, recall, F1, AP@50).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{check_dims, LabelMap, ProbabilityMap};

/// Pairwise IoU between ground-truth (rows) and predicted (columns) instances.
#[derive(Clone, Debug, PartialEq)]
pub struct IouMatrix {
    pub gt_ids: Vec<u16>,
    pub pred_ids: Vec<u16>,
    pub iou: Vec<Vec<f64>>,
}

impl IouMatrix {
    pub fn get(&self, gt_id: u16, pred_id: u16) -> Option<f64> {
        let i = self.gt_ids.binary_search(&gt_id).ok()?;
        let j = self.pred_ids.binary_search(&pred_id).ok()?;
        Some(self.iou[i][j])
    }
}

/// One joint-histogram pass over the pixels.
pub fn iou_matrix(gt: &LabelMap, pred: &LabelMap) -> Result<IouMatrix> {
    check_dims(gt.dims(), pred.dims())?;
    let mut joint: HashMap<(u16, u16), usize> = HashMap::new();
    let mut gt_area: BTreeMap<u16, usize> = BTreeMap::new();
    let mut pred_area: BTreeMap<u16, usize> = BTreeMap::new();
    for (&g, &p) in gt.labels.values().iter().zip(pred.labels.values()) {
        if g != 0 {
            *gt_area.entry(g).or_default() += 1;
        }
        if p != 0 {
            *pred_area.entry(p).or_default() += 1;
        }
        if g != 0 && p != 0 {
            *joint.entry((g, p)).or_default() += 1;
        }
    }
    let gt_ids: Vec<u16> = gt_area.keys().copied().collect();
    let pred_ids: Vec<u16> = pred_area.keys().copied().collect();
    let mut iou = vec![vec![0.0; pred_ids.len()]; gt_ids.len()];
    for (&(g, p), &inter) in &joint {
        let i = gt_ids.binary_search(&g).expect("gt id indexed");
        let j = pred_ids.binary_search(&p).expect("pred id indexed");
        let union = gt_area[&g] + pred_area[&p] - inter;
        iou[i][j] = inter as f64 / union as f64;
    }
    Ok(IouMatrix {
        gt_ids,
        pred_ids,
        iou,
    })
}

/// Predicted instances with a confidence per id.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPrediction {
    pub labels: LabelMap,
    pub scores: BTreeMap<u16, f64>,
}

impl ScoredPrediction {
    pub fn new(labels: LabelMap, scores: BTreeMap<u16, f64>) -> Result<Self> {
        for k in labels.ids() {
            match scores.get(&k) {
                Some(s) if s.is_finite() => {}
                Some(s) => {
                    return Err(Error::InvalidArgument(format!(
                        "score {s} for instance {k} is not finite"
                    )))
                }
                None => return Err(Error::InvalidArgument(format!("instance {k} has no score"))),
            }
        }
        Ok(Self { labels, scores })
    }

    /// Scores every instance 1.0; ranking then falls back to ascending id.
    pub fn uniform(labels: LabelMap) -> Self {
        let scores = labels.ids().into_iter().map(|k| (k, 1.0)).collect();
        Self { labels, scores }
    }

    /// Scores each instance by its mean foreground probability.
    pub fn from_probability(labels: LabelMap, prob: &ProbabilityMap) -> Result<Self> {
        check_dims(labels.dims(), prob.dims())?;
        let mut sums: BTreeMap<u16, (f64, usize)> = BTreeMap::new();
        for (&k, &p) in labels.labels.values().iter().zip(prob.p.values()) {
            if k != 0 {
                let e = sums.entry(k).or_insert((0.0, 0));
                e.0 += p as f64;
                e.1 += 1;
            }
        }
        let scores = sums
            .into_iter()
            .map(|(k, (s, n))| (k, s / n as f64))
            .collect();
        Ok(Self { labels, scores })
    }

    /// Ids by descending score, ties by ascending id.
    fn ranked(&self, ids: &[u16]) -> Vec<u16> {
        let mut ids = ids.to_vec();
        ids.sort_by(|a, b| {
            let sa = self.scores.get(a).copied().unwrap_or(0.0);
            let sb = self.scores.get(b).copied().unwrap_or(0.0);
            sb.total_cmp(&sa).then(a.cmp(b))
        });
        ids
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct MatchResult {
    /// `(gt_id, pred_id, iou)` in the order predictions were matched.
    pub pairs: Vec<(u16, u16, f64)>,
    pub unmatched_gt: Vec<u16>,
    pub unmatched_pred: Vec<u16>,
    /// For each prediction in rank order, whether it was matched.
    ranked_hits: Vec<bool>,
}

/// Greedy one-to-one matching in descending score order.
pub fn match_at_iou(gt: &LabelMap, sp: &ScoredPrediction, tau: f64) -> Result<MatchResult> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "IoU threshold must be in (0, 1], got {tau}"
        )));
    }
    let m = iou_matrix(gt, &sp.labels)?;
    Ok(greedy_assign(&m, &sp.ranked(&m.pred_ids), tau))
}

/// Each prediction, in the given order, takes the free GT with the highest
/// IoU >= `tau`; equal IoUs go to the lowest gt id.
fn greedy_assign(m: &IouMatrix, ranked: &[u16], tau: f64) -> MatchResult {
    let mut gt_taken = vec![false; m.gt_ids.len()];
    let mut result = MatchResult::default();
    for &pred_id in ranked {
        let j = m
            .pred_ids
            .binary_search(&pred_id)
            .expect("ranked ids come from the matrix");
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in m.iou.iter().enumerate() {
            let v = row[j];
            if gt_taken[i] || v < tau {
                continue;
            }
            // Rows are ascending in gt id, so strict `>` keeps the lowest id on ties.
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        match best {
            Some((i, v)) => {
                gt_taken[i] = true;
                result.pairs.push((m.gt_ids[i], pred_id, v));
                result.ranked_hits.push(true);
            }
            None => {
                result.unmatched_pred.push(pred_id);
                result.ranked_hits.push(false);
            }
        }
    }
    result.unmatched_gt = m
        .gt_ids
        .iter()
        .zip(&gt_taken)
        .filter(|(_, &t)| !t)
        .map(|(&g, _)| g)
        .collect();
    result.unmatched_pred.sort_unstable();
    result
}

/// 101-point interpolated average precision of a ranked hit list.
fn interpolated_ap(ranked_hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return if ranked_hits.is_empty() { 1.0 } else { 0.0 };
    }
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(ranked_hits.len());
    let mut tp = 0usize;
    for (i, &hit) in ranked_hits.iter().enumerate() {
        tp += hit as usize;
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    // Running max from the right gives max precision at recall >= r.
    let mut envelope = vec![0.0; curve.len()];
    let mut running = 0.0f64;
    for i in (0..curve.len()).rev() {
        running = running.max(curve[i].1);
        envelope[i] = running;
    }
    let mut total = 0.0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        // Recall is nondecreasing along the ranking.
        if let Some(i) = curve.iter().position(|&(rec, _)| rec >= r - 1e-12) {
            total += envelope[i];
        }
    }
    total / 101.0
}

pub fn average_precision(gt: &LabelMap, sp: &ScoredPrediction, tau: f64) -> Result<f64> {
    let m = match_at_iou(gt, sp, tau)?;
    Ok(interpolated_ap(&m.ranked_hits, gt.count()))
}

/// AP at IoU 0.5 with 101-point interpolation.
pub fn average_precision_50(gt: &LabelMap, sp: &ScoredPrediction) -> Result<f64> {
    average_precision(gt, sp, 0.5)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_iou: f64,
    pub ap50: f64,
    pub n_gt: usize,
    pub n_pred: usize,
    pub n_matched: usize,
}

/// Precision/recall/F1 and mean matched IoU at `tau`, plus AP@50.
///
/// Ratios with an empty denominator are reported as 0.
pub fn summary(gt: &LabelMap, sp: &ScoredPrediction, tau: f64) -> Result<Report> {
    let m = match_at_iou(gt, sp, tau)?;
    let n_gt = m.pairs.len() + m.unmatched_gt.len();
    let n_pred = m.pairs.len() + m.unmatched_pred.len();
    let n_matched = m.pairs.len();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(n_matched, n_pred);
    let recall = ratio(n_matched, n_gt);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let mean_iou = if n_matched == 0 {
        0.0
    } else {
        m.pairs.iter().map(|p| p.2).sum::<f64>() / n_matched as f64
    };
    let ap50 = if (tau - 0.5).abs() < f64::EPSILON {
        interpolated_ap(&m.ranked_hits, n_gt)
    } else {
        average_precision_50(gt, sp)?
    };
    Ok(Report {
        precision,
        recall,
        f1,
        mean_iou,
        ap50,
        n_gt,
        n_pred,
        n_matched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Grid2D;

    fn lm(h: usize, w: usize, f: impl Fn(usize, usize) -> u16) -> LabelMap {
        LabelMap::new(Grid2D::from_fn(h, w, f).unwrap())
    }

    fn square(y0: usize, x0: usize, n: usize) -> impl Fn(usize, usize) -> bool {
        move |y, x| y >= y0 && y < y0 + n && x >= x0 && x < x0 + n
    }

    #[test]
    fn identity_matrix_for_identical_maps() {
        let gt = lm(20, 20, |y, x| {
            if square(1, 1, 5)(y, x) {
                3
            } else if square(10, 10, 6)(y, x) {
                7
            } else {
                0
            }
        });
        let m = iou_matrix(&gt, &gt).unwrap();
        assert_eq!(m.gt_ids, vec![3, 7]);
        assert_eq!(m.iou, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn disjoint_and_shifted() {
        let gt = lm(20, 30, |y, x| square(2, 2, 10)(y, x) as u16);
        let far = lm(20, 30, |y, x| square(2, 18, 10)(y, x) as u16);
        assert_eq!(iou_matrix(&gt, &far).unwrap().iou, vec![vec![0.0]]);
        let shifted = lm(20, 30, |y, x| square(2, 7, 10)(y, x) as u16);
        let m = iou_matrix(&gt, &shifted).unwrap();
        assert!((m.iou[0][0] - 50.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let a = LabelMap::empty(4, 4).unwrap();
        let b = LabelMap::empty(4, 5).unwrap();
        assert!(iou_matrix(&a, &b).is_err());
    }

    #[test]
    fn greedy_order_on_overlapping_candidates() {
        // Overlapping predictions only exist at the matrix level: one GT,
        // pred 1 at IoU 0.8 with the lower score, pred 2 at IoU 0.6.
        let m = IouMatrix {
            gt_ids: vec![1],
            pred_ids: vec![1, 2],
            iou: vec![vec![0.8, 0.6]],
        };
        // Brute force: enumerate both processing orders.
        let by_score = greedy_assign(&m, &[2, 1], 0.5);
        let by_iou = greedy_assign(&m, &[1, 2], 0.5);
        assert_eq!(by_score.pairs, vec![(1, 2, 0.6)]);
        assert_eq!(by_score.unmatched_pred, vec![1]);
        assert_eq!(by_iou.pairs, vec![(1, 1, 0.8)]);

        let scores: BTreeMap<u16, f64> = [(1, 0.2), (2, 0.9)].into_iter().collect();
        let sp = ScoredPrediction {
            labels: LabelMap::empty(1, 1).unwrap(),
            scores,
        };
        assert_eq!(sp.ranked(&[1, 2]), vec![2, 1]);
    }

    #[test]
    fn ties_go_to_lowest_gt_id() {
        let m = IouMatrix {
            gt_ids: vec![3, 9],
            pred_ids: vec![4],
            iou: vec![vec![0.5], vec![0.5]],
        };
        assert_eq!(greedy_assign(&m, &[4], 0.5).pairs, vec![(3, 4, 0.5)]);
    }

    #[test]
    fn greedy_rule_on_overlapping_predictions() {
        // Two predictions cannot overlap in one label map, so the GT is split
        // into a left block (cols 0..8) and the predictions cover it partially.
        // GT: 10x10 square. P1 = cols 0..8 (IoU 0.8), P2 = cols 8..10 plus 8
        // extra columns outside (IoU 20/100... below 0.5).
        let gt = lm(10, 20, |y, x| square(0, 0, 10)(y, x) as u16);
        let pred = lm(10, 20, |_, x| {
            if x < 8 {
                1
            } else if x < 14 {
                2
            } else {
                0
            }
        });
        let m = iou_matrix(&gt, &pred).unwrap();
        assert!((m.get(1, 1).unwrap() - 0.8).abs() < 1e-12);
        let scores: BTreeMap<u16, f64> = [(1, 0.2), (2, 0.9)].into_iter().collect();
        let sp = ScoredPrediction::new(pred, scores).unwrap();
        let r = match_at_iou(&gt, &sp, 0.5).unwrap();
        assert_eq!(r.pairs, vec![(1, 1, 0.8)]);
        assert_eq!(r.unmatched_pred, vec![2]);
        assert!(r.unmatched_gt.is_empty());
    }

    #[test]
    fn one_of_two_ap() {
        let gt = lm(10, 30, |y, x| {
            if square(0, 0, 8)(y, x) {
                1
            } else if square(0, 15, 8)(y, x) {
                2
            } else {
                0
            }
        });
        let pred = lm(10, 30, |y, x| square(0, 0, 8)(y, x) as u16);
        let sp = ScoredPrediction::uniform(pred);
        let ap = average_precision_50(&gt, &sp).unwrap();
        assert!((ap - 51.0 / 101.0).abs() < 1e-12);
        let r = summary(&gt, &sp, 0.5).unwrap();
        assert_eq!((r.precision, r.recall), (1.0, 0.5));
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_conventions() {
        let empty = LabelMap::empty(6, 6).unwrap();
        let one = lm(6, 6, |y, x| square(1, 1, 3)(y, x) as u16);
        assert_eq!(
            average_precision_50(&empty, &ScoredPrediction::uniform(empty.clone())).unwrap(),
            1.0
        );
        assert_eq!(
            average_precision_50(&empty, &ScoredPrediction::uniform(one.clone())).unwrap(),
            0.0
        );
        assert_eq!(
            average_precision_50(&one, &ScoredPrediction::uniform(empty.clone())).unwrap(),
            0.0
        );
        let r = summary(&one, &ScoredPrediction::uniform(empty), 0.5).unwrap();
        assert_eq!(
            (r.precision, r.recall, r.f1, r.n_gt, r.n_pred),
            (0.0, 0.0, 0.0, 1, 0)
        );
    }

    #[test]
    fn perfect_summary() {
        let gt = lm(16, 16, |y, x| {
            if square(0, 0, 5)(y, x) {
                2
            } else if square(8, 8, 5)(y, x) {
                5
            } else {
                0
            }
        });
        let r = summary(&gt, &ScoredPrediction::uniform(gt.clone()), 0.5).unwrap();
        assert_eq!(
            (r.precision, r.recall, r.f1, r.mean_iou, r.ap50),
            (1.0, 1.0, 1.0, 1.0, 1.0)
        );
        assert_eq!((r.n_gt, r.n_pred, r.n_matched), (2, 2, 2));
    }

    #[test]
    fn disjoint_prediction_scores_zero() {
        let gt = lm(10, 20, |y, x| square(0, 0, 5)(y, x) as u16);
        let pred = lm(10, 20, |y, x| square(0, 10, 5)(y, x) as u16);
        assert_eq!(
            average_precision_50(&gt, &ScoredPrediction::uniform(pred)).unwrap(),
            0.0
        );
    }

    #[test]
    fn missing_score_rejected() {
        let gt = lm(4, 4, |y, _| (y < 2) as u16);
        assert!(ScoredPrediction::new(gt, BTreeMap::new()).is_err());
    }

    #[test]
    fn bad_tau_rejected() {
        let gt = LabelMap::empty(3, 3).unwrap();
        let sp = ScoredPrediction::uniform(gt.clone());
        assert!(match_at_iou(&gt, &sp, 0.0).is_err());
        assert!(match_at_iou(&gt, &sp, 1.5).is_err());
    }
}
