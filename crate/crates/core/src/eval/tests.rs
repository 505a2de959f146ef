use proptest::prelude::*;

use super::*;

fn gt(image_id: u64, category: u64, b: [f32; 4]) -> GroundTruth {
    GroundTruth { image_id, category, bbox: BBox::new(b[0], b[1], b[2], b[3]) }
}

fn pred(image_id: u64, category: u64, b: [f32; 4], score: f32) -> Prediction {
    Prediction { image_id, category, bbox: BBox::new(b[0], b[1], b[2], b[3]), score }
}

fn as_pred(g: &GroundTruth, score: f32) -> Prediction {
    Prediction { image_id: g.image_id, category: g.category, bbox: g.bbox, score }
}

/// Exhaustive prefix enumeration: exact area under the monotone envelope.
fn exact_envelope_area(flags: &[bool], n_gt: u64) -> f64 {
    let prefixes: Vec<(f64, f64)> = (1..=flags.len())
        .map(|k| {
            let tp = flags[..k].iter().filter(|t| **t).count() as f64;
            (tp / n_gt as f64, tp / k as f64)
        })
        .collect();
    let mut levels: Vec<f64> = prefixes.iter().map(|p| p.0).filter(|r| *r > 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let best = prefixes.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        area += (r - prev) * best;
        prev = r;
    }
    area
}

fn brute_101(flags: &[bool], n_gt: u64) -> f64 {
    let prefixes: Vec<(f64, f64)> = (1..=flags.len())
        .map(|k| {
            let tp = flags[..k].iter().filter(|t| **t).count() as f64;
            (tp / n_gt as f64, tp / k as f64)
        })
        .collect();
    (0..=100)
        .map(|i| {
            let r = i as f64 / 100.0;
            prefixes.iter().filter(|p| p.0 >= r - 1e-12).map(|p| p.1).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

/// Independent greedy matcher: TP flags for one category, ranking order.
fn brute_flags(preds: &[Prediction], gts: &[GroundTruth], cat: u64, thr: f64) -> Vec<bool> {
    let mut ps: Vec<(usize, &Prediction)> = preds.iter().enumerate().filter(|(_, p)| p.category == cat).collect();
    ps.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.1.image_id.cmp(&b.1.image_id)).then(a.0.cmp(&b.0)));
    let mut taken = vec![false; gts.len()];
    ps.iter()
        .map(|(_, p)| {
            let mut best = None;
            let mut best_iou = thr;
            for (j, g) in gts.iter().enumerate() {
                if taken[j] || g.category != cat || g.image_id != p.image_id {
                    continue;
                }
                let v = iou(&p.bbox, &g.bbox);
                if v >= best_iou && (best.is_none() || v > best_iou) {
                    best = Some(j);
                    best_iou = v;
                }
            }
            if let Some(j) = best {
                taken[j] = true;
            }
            best.is_some()
        })
        .collect()
}

#[test]
fn identical_predictions_are_all_true_positives() {
    let gts = vec![gt(1, 3, [0.0, 0.0, 10.0, 10.0]), gt(1, 3, [20.0, 20.0, 30.0, 35.0]), gt(2, 5, [4.0, 4.0, 9.0, 9.0])];
    let preds: Vec<Prediction> = gts.iter().map(|g| as_pred(g, 0.9)).collect();
    let m = match_detections(&preds, &gts, 0.5);
    assert_eq!(m.counts.total(), ClassCounts { tp: 3, fp: 0, fn_: 0 });
    let r = evaluate(&preds, &gts, &BTreeMap::new());
    assert_eq!((r.map50, r.map50_95, r.precision_all, r.recall_all), (1.0, 1.0, 1.0, 1.0));
}

#[test]
fn no_predictions() {
    let gts = vec![gt(1, 0, [0.0, 0.0, 10.0, 10.0]), gt(1, 1, [0.0, 0.0, 5.0, 5.0])];
    let m = match_detections(&[], &gts, 0.5);
    assert_eq!(m.counts.total(), ClassCounts { tp: 0, fp: 0, fn_: 2 });
    let r = evaluate(&[], &gts, &BTreeMap::new());
    assert_eq!((r.precision_all, r.recall_all, r.f1, r.map50), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(r.true_negatives, "n/a");
}

#[test]
fn duplicate_on_one_gt_becomes_false_positive() {
    let gts = vec![gt(7, 0, [0.0, 0.0, 10.0, 10.0]), gt(7, 0, [50.0, 50.0, 60.0, 60.0])];
    let preds = vec![
        pred(7, 0, [0.0, 0.0, 10.0, 10.0], 0.9),
        pred(7, 0, [1.0, 0.0, 11.0, 10.0], 0.8),
        pred(7, 0, [50.0, 50.0, 60.0, 61.0], 0.7),
    ];
    let m = match_detections(&preds, &gts, 0.5);
    assert_eq!(m.counts.per_class[&0], ClassCounts { tp: 2, fp: 1, fn_: 0 });
    let tps: Vec<bool> = m.flags.iter().map(MatchFlag::is_tp).collect();
    assert_eq!(tps, vec![true, false, true]);
}

#[test]
fn precision_recall_cases() {
    assert_eq!(precision_recall(ClassCounts { tp: 5, fp: 5, fn_: 5 }), (0.5, 0.5));
    assert_eq!(precision_recall(ClassCounts { tp: 0, fp: 0, fn_: 3 }), (0.0, 0.0));
    assert!((macro_average(&[0.6, 0.8]) - 0.7).abs() < 1e-12);
    assert_eq!(macro_average(&[]), 0.0);
}

#[test]
fn f1_cases() {
    assert!((f1(0.677, 0.503) - 0.577).abs() < 1e-3);
    assert!((f1(0.712, 0.573) - 0.635).abs() < 1e-3);
    assert!((f1(0.4, 0.4) - 0.4).abs() < 1e-15);
    assert_eq!(f1(0.5, 0.5), 0.5);
    assert_eq!(f1(0.0, 0.0), 0.0);
}

#[test]
fn tp_fp_tp_ranking() {
    let pts = pr_curve(&[true, false, true], 2);
    let ap = average_precision(&pts);
    let expected = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
    assert!((ap - expected).abs() < 1e-12, "{ap}");
    assert!((ap - 0.8350).abs() < 1e-4);
    assert!((exact_envelope_area(&[true, false, true], 2) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
}

#[test]
fn ap_edges() {
    assert_eq!(average_precision(&pr_curve(&[true, true, true], 3)), 1.0);
    assert_eq!(average_precision(&pr_curve(&[false, false], 3)), 0.0);
    assert_eq!(average_precision(&[]), 0.0);
    // Low-IOU predictions never match.
    let gts = vec![gt(1, 0, [0.0, 0.0, 10.0, 10.0])];
    let preds = vec![pred(1, 0, [8.0, 8.0, 18.0, 18.0], 0.9)];
    assert_eq!(class_aps(&preds, &gts, 0.5)[&0], 0.0);
}

#[test]
fn classes_without_ground_truth_are_excluded() {
    let gts = vec![gt(1, 0, [0.0, 0.0, 10.0, 10.0])];
    let preds = vec![as_pred(&gts[0], 0.9), pred(1, 9, [0.0, 0.0, 3.0, 3.0], 0.8)];
    let r = evaluate(&preds, &gts, &BTreeMap::new());
    assert_eq!(r.classes.len(), 1);
    assert_eq!(r.map50, 1.0);
    let m = match_detections(&preds, &gts, 0.5);
    assert_eq!(m.counts.per_class[&9].fp, 1);
}

#[test]
fn merge_is_order_free() {
    let gts = vec![gt(1, 0, [0.0, 0.0, 10.0, 10.0]), gt(2, 1, [0.0, 0.0, 4.0, 4.0]), gt(3, 0, [2.0, 2.0, 9.0, 9.0])];
    let preds = vec![as_pred(&gts[0], 0.5), pred(2, 1, [9.0, 9.0, 12.0, 12.0], 0.4), as_pred(&gts[2], 0.3)];
    let whole = match_detections(&preds, &gts, 0.5).counts;
    let per_image: Vec<ConfusionCounts> = (1..=3)
        .map(|i| {
            let p: Vec<Prediction> = preds.iter().filter(|p| p.image_id == i).copied().collect();
            let g: Vec<GroundTruth> = gts.iter().filter(|g| g.image_id == i).copied().collect();
            match_detections(&p, &g, 0.5).counts
        })
        .collect();
    for order in [[0, 1, 2], [2, 0, 1], [1, 2, 0]] {
        let mut acc = ConfusionCounts::default();
        for i in order {
            acc.merge(&per_image[i]);
        }
        assert_eq!(acc, whole);
    }
}

#[test]
fn report_renders() {
    let gts = vec![gt(1, 1, [0.0, 0.0, 10.0, 10.0])];
    let names: BTreeMap<u64, String> = [(1, "person".to_string())].into();
    let r = evaluate(&[as_pred(&gts[0], 0.9)], &gts, &names);
    assert!(r.to_table().contains("person"));
    assert_eq!(r.pr_csv().lines().count(), 1 + 101);
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["true_negatives"], "n/a");
    assert_eq!(json["classes"][0]["fn"], 0);
    assert_eq!(json["iou_thresholds"].as_array().unwrap().len(), 10);
}

/// Ground truths sit in pairwise disjoint cells; predictions are jittered
/// copies of them or strays placed away from every ground truth.
fn instance() -> impl Strategy<Value = (Vec<GroundTruth>, Vec<Prediction>)> {
    let g = (0u64..3, 0u64..2, 0u8..4, 5f32..60.0, 5f32..60.0);
    let p = (0usize..64, -8f32..8.0, -8f32..8.0, -6f32..6.0, 1u8..100, any::<bool>());
    (prop::collection::vec(g, 1..10), prop::collection::vec(p, 0..20)).prop_map(|(gs, ps)| {
        let mut gts: Vec<GroundTruth> = Vec::new();
        for (k, (img, cat, cell, w, h)) in gs.into_iter().enumerate() {
            let ox = (cell as f32) * 100.0 + (k as f32) * 400.0;
            gts.push(gt(img, cat, [ox, 0.0, ox + w, h]));
        }
        let preds = ps
            .into_iter()
            .map(|(i, dx, dy, dw, q, stray)| {
                let g = gts[i % gts.len()];
                let b = g.bbox;
                let dy = if stray { 200.0 + dy * 10.0 } else { dy };
                pred(g.image_id, g.category, [b.x1 + dx, b.y1 + dy, b.x2 + dx + dw, b.y2 + dy], q as f32 / 100.0)
            })
            .filter(|p| p.bbox.is_valid())
            .collect();
        (gts, preds)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn ap_matches_brute_force_oracles((gts, preds) in instance()) {
        for thr in [0.5, 0.75] {
            let m = match_detections(&preds, &gts, thr);
            let aps = class_aps(&preds, &gts, thr);
            for (&cat, &n) in &m.gt_counts {
                let flags = brute_flags(&preds, &gts, cat, thr);
                let mine: Vec<bool> = m.flags.iter().filter(|f| f.category == cat).map(MatchFlag::is_tp).collect();
                prop_assert_eq!(&mine, &flags);
                let ap = aps[&cat];
                prop_assert!((ap - brute_101(&flags, n)).abs() < 1e-9);
                prop_assert!((ap - exact_envelope_area(&flags, n)).abs() <= 0.01);
            }
        }
    }

    #[test]
    fn raising_iou_threshold_never_helps((gts, preds) in instance()) {
        let r = evaluate(&preds, &gts, &BTreeMap::new());
        prop_assert!(r.map50_95 <= r.map50 + 1e-12);
        let mut prev: Option<(u64, BTreeMap<u64, f64>)> = None;
        for t in iou_thresholds() {
            let tp = match_detections(&preds, &gts, t).counts.total().tp;
            let aps = class_aps(&preds, &gts, t);
            if let Some((ptp, paps)) = &prev {
                prop_assert!(tp <= *ptp);
                for (c, a) in &aps {
                    prop_assert!(*a <= paps[c] + 1e-12);
                }
                let m = |x: &BTreeMap<u64, f64>| macro_average(&x.values().copied().collect::<Vec<_>>());
                prop_assert!(m(&aps) <= m(paps) + 1e-12);
            }
            prev = Some((tp, aps));
        }
    }

    #[test]
    fn duplicates_never_raise_ap((gts, preds) in instance(), pick in 0usize..20) {
        prop_assume!(!preds.is_empty());
        let mut dup = preds.clone();
        dup.push(preds[pick % preds.len()]);
        for t in [0.5, 0.7] {
            let a = class_aps(&preds, &gts, t);
            let b = class_aps(&dup, &gts, t);
            for (c, v) in &b {
                prop_assert!(*v <= a[c] + 1e-12);
            }
        }
    }

    #[test]
    fn report_is_internally_consistent((gts, preds) in instance()) {
        let r = evaluate(&preds, &gts, &BTreeMap::new());
        prop_assert!((r.f1 - f1(r.precision_all, r.recall_all)).abs() < 1e-15);
        for v in [r.precision_all, r.recall_all, r.f1, r.map50, r.map50_95] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for c in &r.classes {
            prop_assert!(c.tp <= c.ground_truths);
            prop_assert_eq!(c.tp + c.fn_, c.ground_truths);
        }
    }
}
