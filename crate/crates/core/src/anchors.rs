//! k-means anchor fitting over box dimensions and assignment of anchors to
//! feature-map scales.
//!
//! Distance is `1 - IOU` of two boxes placed on a common centre, so only
//! widths and heights matter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ANCHORS_PER_SCALE;

/// Box or anchor `(width, height)` in input pixels.
pub type Wh = [f32; 2];

pub const MAX_ROUNDS: usize = 300;
/// Independent k-means++ restarts; the lowest final objective wins.
pub const RESTARTS: usize = 5;

/// IOU of two co-centred boxes; 0 when either is degenerate.
pub fn iou_wh(a: Wh, b: Wh) -> f64 {
    let (aw, ah, bw, bh) = (a[0] as f64, a[1] as f64, b[0] as f64, b[1] as f64);
    let inter = aw.min(bw) * ah.min(bh);
    let union = aw * ah + bw * bh - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let inter = a[0].min(b[0]) * a[1].min(b[1]);
    let union = a[0] * a[1] + b[0] * b[1] - inter;
    if union <= 0.0 {
        1.0
    } else {
        1.0 - inter / union
    }
}

fn area(a: Wh) -> f64 {
    a[0] as f64 * a[1] as f64
}

/// Ascending by area, then width, then height.
pub fn sort_by_area(anchors: &mut [Wh]) {
    anchors.sort_by(|a, b| {
        area(*a)
            .total_cmp(&area(*b))
            .then(a[0].total_cmp(&b[0]))
            .then(a[1].total_cmp(&b[1]))
    });
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KMeansFit {
    /// Centroids sorted by area.
    pub anchors: Vec<Wh>,
    /// Total `1 - IOU` to the assigned centroid after each assignment step
    /// of the chosen run.
    pub objective: Vec<f64>,
    pub rounds: usize,
    pub converged: bool,
}

fn validate_boxes(boxes: &[Wh], k: usize) -> Result<()> {
    if boxes.is_empty() {
        return Err(Error::Domain("no boxes to cluster".into()));
    }
    if k == 0 {
        return Err(Error::Domain("k must be positive".into()));
    }
    let bad = boxes
        .iter()
        .filter(|b| !(b[0].is_finite() && b[1].is_finite() && b[0] > 0.0 && b[1] > 0.0))
        .count();
    if bad > 0 {
        return Err(Error::Domain(format!(
            "{bad} of {} boxes have a zero, negative or non-finite dimension",
            boxes.len()
        )));
    }
    let mut distinct: Vec<(u32, u32)> = boxes.iter().map(|b| (b[0].to_bits(), b[1].to_bits())).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if k > distinct.len() {
        return Err(Error::Domain(format!(
            "k = {k} exceeds the {} distinct box sizes",
            distinct.len()
        )));
    }
    Ok(())
}

fn nearest(p: [f64; 2], centroids: &[[f64; 2]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist(p, *c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| dist(*p, centroids[0]).powi(2)).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut idx = None;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 {
                    idx = Some(i);
                    if t < *w {
                        break;
                    }
                    t -= w;
                }
            }
            idx.unwrap()
        } else {
            // Unreachable while k <= distinct sizes; kept for safety.
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        centroids.push(c);
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(dist(*p, c).powi(2));
        }
    }
    centroids
}

fn assign(points: &[[f64; 2]], centroids: &[[f64; 2]], labels: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (l, p) in labels.iter_mut().zip(points) {
        let (j, d) = nearest(*p, centroids);
        *l = j;
        total += d;
    }
    total
}

fn cluster_cost(points: &[[f64; 2]], labels: &[usize], j: usize, c: [f64; 2]) -> f64 {
    points
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == j)
        .map(|(p, _)| dist(*p, c))
        .sum()
}

/// Fit `k` anchors to `boxes`: [`RESTARTS`] k-means++ runs drawn from one
/// seeded stream, keeping the run with the lowest final objective (earliest
/// on ties).
pub fn fit_anchors_detailed(boxes: &[Wh], k: usize, seed: u64) -> Result<KMeansFit> {
    validate_boxes(boxes, k)?;
    let points: Vec<[f64; 2]> = boxes.iter().map(|b| [b[0] as f64, b[1] as f64]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..RESTARTS {
        let fit = kmeans_run(&points, k, &mut rng);
        let better = match &best {
            None => true,
            Some(b) => fit.objective.last() < b.objective.last(),
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn kmeans_run(points: &[[f64; 2]], k: usize, rng: &mut ChaCha8Rng) -> KMeansFit {
    let mut centroids = seed_plus_plus(points, k, rng);
    let mut labels = vec![usize::MAX; points.len()];
    let mut objective = Vec::new();
    let mut converged = false;
    let mut rounds = 0;

    let mut prev = labels.clone();
    while rounds < MAX_ROUNDS {
        rounds += 1;
        let j = assign(points, &centroids, &mut labels);
        objective.push(j);
        if labels == prev {
            converged = true;
            break;
        }
        prev.clone_from(&labels);

        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l][0] += p[0];
            sums[l][1] += p[1];
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let mean = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            if cluster_cost(points, &labels, c, mean) <= cluster_cost(points, &labels, c, centroids[c]) {
                centroids[c] = mean;
            }
        }
        // Empty clusters move to the point farthest from its own centroid.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, nearest(*p, &centroids).1))
                .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
            centroids[c] = points[far.0];
        }
    }

    let mut anchors: Vec<Wh> = centroids.iter().map(|c| [c[0] as f32, c[1] as f32]).collect();
    sort_by_area(&mut anchors);
    KMeansFit {
        anchors,
        objective,
        rounds,
        converged,
    }
}

/// `k` area-sorted anchors; deterministic in `(boxes, k, seed)`.
pub fn fit_anchors(boxes: &[Wh], k: usize, seed: u64) -> Result<Vec<Wh>> {
    Ok(fit_anchors_detailed(boxes, k, seed)?.anchors)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorScale {
    /// Feature-map side length.
    pub size: usize,
    pub anchors: [Wh; ANCHORS_PER_SCALE],
}

/// Anchors per scale, largest feature map first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub scales: Vec<AnchorScale>,
}

impl AnchorSet {
    /// In the nested form used by model configs.
    pub fn config_anchors(&self) -> Vec<Vec<Wh>> {
        self.scales.iter().map(|s| s.anchors.to_vec()).collect()
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for sc in &self.scales {
            let pairs: Vec<String> = sc
                .anchors
                .iter()
                .map(|a| format!("{}x{}", fmt_dim(a[0]), fmt_dim(a[1])))
                .collect();
            s.push_str(&format!("{0}x{0}  {1}\n", sc.size, pairs.join(", ")));
        }
        s
    }
}

fn fmt_dim(v: f32) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.1}")
    }
}

/// Split area-sorted anchors into consecutive triples, smallest triple to
/// the largest feature map. Input order of either argument does not matter.
pub fn assign_to_scales(anchors: &[Wh], scales: &[usize]) -> Result<AnchorSet> {
    if scales.is_empty() || anchors.len() != ANCHORS_PER_SCALE * scales.len() {
        return Err(Error::Domain(format!(
            "{} anchors cannot be split into {} scales of {ANCHORS_PER_SCALE}",
            anchors.len(),
            scales.len()
        )));
    }
    let mut sorted = anchors.to_vec();
    sort_by_area(&mut sorted);
    let mut sizes = scales.to_vec();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let scales = sizes
        .iter()
        .zip(sorted.chunks(ANCHORS_PER_SCALE))
        .map(|(&size, c)| AnchorScale {
            size,
            anchors: [c[0], c[1], c[2]],
        })
        .collect();
    Ok(AnchorSet { scales })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    use super::*;

    const TABLE: [[Wh; 3]; 4] = [
        [[9.0, 12.0], [20.0, 19.0], [17.0, 42.0]],
        [[43.0, 26.0], [36.0, 56.0], [76.0, 52.0]],
        [[49.0, 121.0], [108.0, 102.0], [111.0, 121.0]],
        [[231.0, 138.0], [230.0, 325.0], [479.0, 372.0]],
    ];

    fn table_flat() -> Vec<Wh> {
        TABLE.iter().flatten().copied().collect()
    }

    fn clusters(seed: u64) -> (Vec<Wh>, [[f64; 2]; 3]) {
        let means = [[10.0, 12.0], [60.0, 50.0], [230.0, 140.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut boxes = Vec::new();
        for m in means {
            let nw = Normal::new(m[0], m[0] * 0.05).unwrap();
            let nh = Normal::new(m[1], m[1] * 0.05).unwrap();
            for _ in 0..300 {
                boxes.push([nw.sample(&mut rng) as f32, nh.sample(&mut rng) as f32]);
            }
        }
        (boxes, means)
    }

    #[test]
    fn iou_wh_cases() {
        assert_eq!(iou_wh([2.0, 2.0], [2.0, 2.0]), 1.0);
        assert!((iou_wh([2.0, 2.0], [1.0, 4.0]) - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(iou_wh([0.0, 3.0], [0.0, 3.0]), 0.0);
    }

    #[test]
    fn distinct_sizes_are_a_fixpoint() {
        let mut boxes = table_flat();
        boxes.reverse();
        let fit = fit_anchors_detailed(&boxes, 12, 7).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.anchors, table_flat());
    }

    #[test]
    fn recovers_three_clusters() {
        let (boxes, means) = clusters(11);
        for seed in 0..8 {
            let got = fit_anchors(&boxes, 3, seed).unwrap();
            for (g, m) in got.iter().zip(means) {
                for d in 0..2 {
                    let rel = (g[d] as f64 - m[d]).abs() / m[d];
                    assert!(rel < 0.10, "seed {seed}: {g:?} vs {m:?}");
                }
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (boxes, _) = clusters(3);
        let a = fit_anchors_detailed(&boxes, 9, 42).unwrap();
        let b = fit_anchors_detailed(&boxes, 9, 42).unwrap();
        let bits = |f: &KMeansFit| f.anchors.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn rejects_bad_input() {
        let e = fit_anchors(&[[1.0, 0.0], [2.0, 2.0], [0.0, 0.0]], 1, 0).unwrap_err();
        assert!(e.to_string().contains("2 of 3"), "{e}");
        assert!(fit_anchors(&[[1.0, 1.0], [1.0, 1.0], [2.0, 1.0]], 3, 0).is_err());
        assert!(fit_anchors(&[], 1, 0).is_err());
    }

    #[test]
    fn table_layout_is_reproduced() {
        let set = assign_to_scales(&table_flat(), &[160, 80, 40, 20]).unwrap();
        for (sc, (size, row)) in set.scales.iter().zip([160, 80, 40, 20].into_iter().zip(TABLE)) {
            assert_eq!(sc.size, size);
            assert_eq!(sc.anchors, row);
        }
        assert_eq!(set.config_anchors()[3][2], [479.0, 372.0]);
        assert!(set.to_table().starts_with("160x160  9x12, 20x19, 17x42\n"));
    }

    #[test]
    fn three_scale_assignment() {
        let base = [[10.0, 13.0], [16.0, 30.0], [33.0, 23.0], [30.0, 61.0], [62.0, 45.0], [59.0, 119.0], [116.0, 90.0], [156.0, 198.0], [373.0, 326.0]];
        let set = assign_to_scales(&base, &[20, 80, 40]).unwrap();
        let sizes: Vec<usize> = set.scales.iter().map(|s| s.size).collect();
        assert_eq!(sizes, vec![80, 40, 20]);
        assert_eq!(set.scales[0].anchors, [[10.0, 13.0], [16.0, 30.0], [33.0, 23.0]]);
        assert!(assign_to_scales(&base, &[80, 40, 20, 10]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn objective_never_increases(
            boxes in prop::collection::vec((1u16..400, 1u16..400), 12..80),
            k in 1usize..9, seed in 0u64..1000,
        ) {
            let boxes: Vec<Wh> = boxes.into_iter().map(|(w, h)| [w as f32, h as f32]).collect();
            let fit = match fit_anchors_detailed(&boxes, k, seed) {
                Ok(f) => f,
                Err(_) => return Ok(()),
            };
            for w in fit.objective.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", fit.objective);
            }
            prop_assert_eq!(fit.anchors.len(), k);
        }

        #[test]
        fn assignment_is_permutation_invariant(perm in Just(table_flat()).prop_shuffle()) {
            prop_assert_eq!(
                assign_to_scales(&perm, &[20, 40, 80, 160]).unwrap(),
                assign_to_scales(&table_flat(), &[160, 80, 40, 20]).unwrap()
            );
        }
    }
}
