//! Detection metrics: IOU matching, per-class and macro precision/recall,
//! F1, 101-point interpolated AP, mAP@0.5 and mAP@0.5:0.95.
//!
//! Conventions: a 0/0 precision or recall is 0; classes without ground
//! truth are left out of every macro average; true negatives are not
//! defined for detection and are reported as `"n/a"`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::postprocess::{iou, BBox};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GroundTruth {
    pub image_id: u64,
    pub category: u64,
    pub bbox: BBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub image_id: u64,
    pub category: u64,
    pub bbox: BBox,
    pub score: f32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    pub fn precision(&self) -> f64 {
        precision_recall(*self).0
    }

    pub fn recall(&self) -> f64 {
        precision_recall(*self).1
    }
}

/// Per-category TP/FP/FN. Merging is a per-key sum, so any reduction order
/// gives the same totals.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub per_class: BTreeMap<u64, ClassCounts>,
}

impl ConfusionCounts {
    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (k, c) in &other.per_class {
            let e = self.per_class.entry(*k).or_default();
            e.tp += c.tp;
            e.fp += c.fp;
            e.fn_ += c.fn_;
        }
    }

    pub fn total(&self) -> ClassCounts {
        self.per_class.values().fold(ClassCounts::default(), |a, c| ClassCounts {
            tp: a.tp + c.tp,
            fp: a.fp + c.fp,
            fn_: a.fn_ + c.fn_,
        })
    }
}

/// Outcome of one prediction, in the class-wise ranking order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MatchFlag {
    /// Index into the prediction slice.
    pub prediction: usize,
    pub category: u64,
    pub score: f32,
    /// Index into the ground-truth slice of the matched box.
    pub matched: Option<usize>,
}

impl MatchFlag {
    pub fn is_tp(&self) -> bool {
        self.matched.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchResult {
    pub counts: ConfusionCounts,
    /// Grouped by category (ascending), each group sorted by score
    /// descending, then image id and prediction index.
    pub flags: Vec<MatchFlag>,
    /// Ground-truth boxes per category.
    pub gt_counts: BTreeMap<u64, u64>,
}

/// Greedy matching: within each category, predictions in ranking order
/// take the highest-IOU unmatched ground truth of the same image with
/// IOU >= `iou_threshold` (TP) or become FP. Unmatched ground truths are FN.
pub fn match_detections(preds: &[Prediction], gts: &[GroundTruth], iou_threshold: f64) -> MatchResult {
    let mut gt_by: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
    let mut gt_counts: BTreeMap<u64, u64> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        gt_by.entry((g.category, g.image_id)).or_default().push(i);
        *gt_counts.entry(g.category).or_default() += 1;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (&preds[a], &preds[b]);
        p.category
            .cmp(&q.category)
            .then(q.score.total_cmp(&p.score))
            .then(p.image_id.cmp(&q.image_id))
            .then(a.cmp(&b))
    });

    let mut used = vec![false; gts.len()];
    let mut counts = ConfusionCounts::default();
    for &c in gt_counts.keys() {
        counts.per_class.insert(c, ClassCounts::default());
    }
    let mut flags = Vec::with_capacity(preds.len());
    for i in order {
        let p = &preds[i];
        let mut best: Option<(usize, f64)> = None;
        if let Some(cands) = gt_by.get(&(p.category, p.image_id)) {
            for &g in cands {
                if used[g] {
                    continue;
                }
                let v = iou(&p.bbox, &gts[g].bbox);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
        }
        let entry = counts.per_class.entry(p.category).or_default();
        match best {
            Some((g, _)) => {
                used[g] = true;
                entry.tp += 1;
            }
            None => entry.fp += 1,
        }
        flags.push(MatchFlag {
            prediction: i,
            category: p.category,
            score: p.score,
            matched: best.map(|b| b.0),
        });
    }
    for (g, u) in gts.iter().zip(&used) {
        if !u {
            counts.per_class.entry(g.category).or_default().fn_ += 1;
        }
    }
    MatchResult {
        counts,
        flags,
        gt_counts,
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(TP / (TP + FP), TP / (TP + FN))`, each 0 on an empty denominator.
pub fn precision_recall(c: ClassCounts) -> (f64, f64) {
    (ratio(c.tp, c.tp + c.fp), ratio(c.tp, c.tp + c.fn_))
}

/// Unweighted mean; 0 for no values.
pub fn macro_average(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Harmonic mean `2PR / (P + R)`, 0 when both are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `(recall, precision)` after each prediction of a ranked TP/FP sequence.
pub fn pr_curve(tp_flags: &[bool], gt_count: u64) -> Vec<(f64, f64)> {
    let mut tp = 0u64;
    tp_flags
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            tp += t as u64;
            (ratio(tp, gt_count), tp as f64 / (i + 1) as f64)
        })
        .collect()
}

pub const RECALL_SAMPLES: usize = 101;

/// Envelope precision (the best precision at recall >= r) sampled at
/// r = 0, 0.01, ..., 1. Samples beyond the highest recall reached are 0.
pub fn envelope_samples(points: &[(f64, f64)]) -> Vec<f64> {
    let mut env: Vec<(f64, f64)> = points.to_vec();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i].1 = env[i].1.max(env[i + 1].1);
    }
    let mut j = 0;
    (0..RECALL_SAMPLES)
        .map(|s| {
            let r = s as f64 / (RECALL_SAMPLES - 1) as f64;
            // Sample 1.0 must be reached exactly by a curve with full recall.
            while j < env.len() && env[j].0 < r - 1e-12 {
                j += 1;
            }
            env.get(j).map_or(0.0, |e| e.1)
        })
        .collect()
}

/// 101-point interpolated AP of a P-R curve in ranking order.
pub fn average_precision(points: &[(f64, f64)]) -> f64 {
    macro_average(&envelope_samples(points))
}

pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Per-category AP at one IOU threshold, for categories with ground truth.
pub fn class_aps(preds: &[Prediction], gts: &[GroundTruth], iou_threshold: f64) -> BTreeMap<u64, f64> {
    let m = match_detections(preds, gts, iou_threshold);
    curves(&m)
        .into_iter()
        .map(|(c, pts)| (c, average_precision(&pts)))
        .collect()
}

fn curves(m: &MatchResult) -> BTreeMap<u64, Vec<(f64, f64)>> {
    m.gt_counts
        .iter()
        .map(|(&c, &n)| {
            let flags: Vec<bool> = m.flags.iter().filter(|f| f.category == c).map(MatchFlag::is_tp).collect();
            (c, pr_curve(&flags, n))
        })
        .collect()
}

/// `(mAP@0.5, mAP@0.5:0.95)` from per-threshold per-class APs.
pub fn map_range(per_threshold: &[BTreeMap<u64, f64>]) -> (f64, f64) {
    let maps: Vec<f64> = per_threshold
        .iter()
        .map(|aps| macro_average(&aps.values().copied().collect::<Vec<_>>()))
        .collect();
    (maps.first().copied().unwrap_or(0.0), macro_average(&maps))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub category: u64,
    pub name: Option<String>,
    pub ground_truths: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub ap50: f64,
    pub ap50_95: f64,
    /// Envelope precision at 101 recall points, IOU 0.5.
    pub pr_samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub images: usize,
    pub ground_truths: usize,
    pub predictions: usize,
    pub classes: Vec<ClassReport>,
    pub precision_all: f64,
    pub recall_all: f64,
    pub f1: f64,
    pub map50: f64,
    pub map50_95: f64,
    pub true_negatives: &'static str,
    pub iou_thresholds: Vec<f64>,
}

/// Full report. Precision and recall use every supplied prediction at IOU
/// 0.5; macro values average the classes that have ground truth.
pub fn evaluate(preds: &[Prediction], gts: &[GroundTruth], names: &BTreeMap<u64, String>) -> EvalReport {
    let thresholds = iou_thresholds();
    let matches: Vec<MatchResult> = thresholds.iter().map(|&t| match_detections(preds, gts, t)).collect();
    let per_threshold: Vec<BTreeMap<u64, Vec<(f64, f64)>>> = matches.iter().map(curves).collect();
    let aps: Vec<BTreeMap<u64, f64>> = per_threshold
        .iter()
        .map(|cs| cs.iter().map(|(&c, p)| (c, average_precision(p))).collect())
        .collect();
    let (map50, map50_95) = map_range(&aps);

    let m50 = &matches[0];
    let classes: Vec<ClassReport> = m50
        .gt_counts
        .iter()
        .map(|(&c, &n)| {
            let counts = m50.counts.per_class[&c];
            let (precision, recall) = precision_recall(counts);
            let ap_all: Vec<f64> = aps.iter().map(|a| a[&c]).collect();
            ClassReport {
                category: c,
                name: names.get(&c).cloned(),
                ground_truths: n,
                tp: counts.tp,
                fp: counts.fp,
                fn_: counts.fn_,
                precision,
                recall,
                ap50: ap_all[0],
                ap50_95: macro_average(&ap_all),
                pr_samples: envelope_samples(&per_threshold[0][&c]),
            }
        })
        .collect();
    let precision_all = macro_average(&classes.iter().map(|c| c.precision).collect::<Vec<_>>());
    let recall_all = macro_average(&classes.iter().map(|c| c.recall).collect::<Vec<_>>());
    let mut images: Vec<u64> = gts.iter().map(|g| g.image_id).chain(preds.iter().map(|p| p.image_id)).collect();
    images.sort_unstable();
    images.dedup();
    EvalReport {
        images: images.len(),
        ground_truths: gts.len(),
        predictions: preds.len(),
        classes,
        precision_all,
        recall_all,
        f1: f1(precision_all, recall_all),
        map50,
        map50_95,
        true_negatives: "n/a",
        iou_thresholds: thresholds,
    }
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "images {}  ground truths {}  predictions {}",
            self.images, self.ground_truths, self.predictions
        );
        let _ = writeln!(
            s,
            "{:>8} {:<16} {:>6} {:>6} {:>6} {:>6} {:>9} {:>9} {:>8} {:>12}",
            "category", "name", "gt", "tp", "fp", "fn", "precision", "recall", "AP@0.5", "AP@0.5:0.95"
        );
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{:>8} {:<16} {:>6} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>8.4} {:>12.4}",
                c.category,
                c.name.as_deref().unwrap_or("-"),
                c.ground_truths,
                c.tp,
                c.fp,
                c.fn_,
                c.precision,
                c.recall,
                c.ap50,
                c.ap50_95
            );
        }
        let _ = writeln!(
            s,
            "Precision_all {:.4}  Recall_all {:.4}  F1 {:.4}  mAP@0.5 {:.4}  mAP@0.5:0.95 {:.4}  TN {}",
            self.precision_all, self.recall_all, self.f1, self.map50, self.map50_95, self.true_negatives
        );
        s
    }

    /// `category,recall,precision` rows of the sampled IOU-0.5 envelopes.
    pub fn pr_csv(&self) -> String {
        let mut s = String::from("category,recall,precision\n");
        for c in &self.classes {
            for (i, p) in c.pr_samples.iter().enumerate() {
                let _ = writeln!(s, "{},{:.2},{:.6}", c.category, i as f64 / 100.0, p);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests;
