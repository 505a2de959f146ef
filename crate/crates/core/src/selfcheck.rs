//! Randomised self-checks comparing fast paths against reference
//! implementations: blocked vs naive convolution, CrossConv vs its composite
//! kernel, closed-form vs counted costs, and 101-point AP vs the exact
//! envelope area.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blocks::{forward_cross_conv, Activation, Block, BlockKind, BlockParams, BlockWeights};
use crate::cost::{analyze, count_block_empirical, count_flops_empirical, CostModel};
use crate::error::Result;
use crate::eval::{average_precision, pr_curve};
use crate::model::bundled_config;
use crate::tensor::{conv2d, conv2d_naive, ConvSpec, Shape, Tensor};

pub const CONV_REL_TOL: f32 = 1e-5;
pub const AP_ENVELOPE_TOL: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleOutcome {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    /// Largest observed error (relative error, absolute AP gap, or count mismatch).
    pub worst: f64,
    pub failures: Vec<String>,
}

impl OracleOutcome {
    fn new(name: &'static str) -> Self {
        OracleOutcome {
            name,
            passed: 0,
            total: 0,
            worst: 0.0,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, err: f64, what: impl FnOnce() -> String) {
        self.total += 1;
        self.worst = self.worst.max(err);
        if ok {
            self.passed += 1;
        } else if self.failures.len() < 10 {
            self.failures.push(what());
        }
    }

    pub fn ok(&self) -> bool {
        self.passed == self.total
    }
}

fn uniform(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
}

/// A random valid convolution with its input.
pub fn random_conv_case(rng: &mut ChaCha8Rng) -> (ConvSpec, Tensor, Tensor, Option<Vec<f32>>) {
    let g = rng.random_range(1..=3usize);
    let (cin_g, cout_g) = (rng.random_range(1..=4usize), rng.random_range(1..=4usize));
    let (kh, kw) = (rng.random_range(1..=5usize), rng.random_range(1..=5usize));
    let (sh, sw) = (rng.random_range(1..=3usize), rng.random_range(1..=3usize));
    let (ph, pw) = (rng.random_range(0..=kh / 2 + 1), rng.random_range(0..=kw / 2 + 1));
    let spec = ConvSpec::new(cin_g * g, cout_g * g, 1)
        .kernel_hw(kh, kw)
        .stride_hw(sh, sw)
        .pad_hw(ph, pw)
        .groups(g)
        .bias(rng.random_bool(0.5));
    let h = rng.random_range(kh..kh + 12);
    let w = rng.random_range(kw..kw + 12);
    let n = rng.random_range(1..=2usize);
    let x = uniform(Shape::new(n, spec.in_channels, h, w), rng);
    let wt = uniform(spec.weight_shape(), rng);
    let bias = spec
        .has_bias
        .then(|| (0..spec.out_channels).map(|_| rng.random_range(-1.0f32..1.0)).collect());
    (spec, x, wt, bias)
}

pub fn conv_oracle(cases: usize, seed: u64) -> Result<OracleOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OracleOutcome::new("conv2d vs conv2d_naive");
    for i in 0..cases {
        let (spec, x, w, b) = random_conv_case(&mut rng);
        let fast = conv2d(&x, &spec, &w, b.as_deref())?;
        let slow = conv2d_naive(&x, &spec, &w, b.as_deref())?;
        let err = if fast.shape() == slow.shape() { fast.max_rel_diff(&slow) } else { f32::INFINITY };
        out.record(err <= CONV_REL_TOL, err as f64, || format!("case {i}: {spec:?} rel err {err:e}"));
    }
    Ok(out)
}

/// Linear single-channel CrossConv against one `k x k` conv with the
/// outer-product kernel, compared on interior pixels.
pub fn crossconv_oracle(cases: usize, seed: u64) -> Result<OracleOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OracleOutcome::new("CrossConv vs composite kernel");
    for i in 0..cases {
        let k = [3usize, 5][rng.random_range(0..2)];
        let (h, w) = (rng.random_range(k + 1..k + 10), rng.random_range(k + 1..k + 10));
        let p = BlockParams::cross_conv(1, 1, k, 1, false).with_activation(Activation::Identity);
        let b = Block::from_params(&p)?;
        let weights = BlockWeights::seeded(&b.param_entries(), rng.random());
        let x = uniform(Shape::new(1, 1, h, w), &mut rng);
        let y = forward_cross_conv(&x, &p, &weights)?;
        let row = weights.get("cv1.conv.weight").map(|t| t.data().to_vec()).unwrap_or_default();
        let col = weights.get("cv2.conv.weight").map(|t| t.data().to_vec()).unwrap_or_default();
        let kern = Tensor::from_fn(Shape::new(1, 1, k, k), |[_, _, dy, dx]| col[dy] * row[dx]);
        let z = conv2d_naive(&x, &ConvSpec::new(1, 1, k), &kern, None)?;
        let r = k / 2;
        let mut worst = 0f32;
        for yy in r..h - r {
            for xx in r..w - r {
                let (a, c) = (y.get([0, 0, yy, xx]), z.get([0, 0, yy, xx]));
                let d = (a - c).abs();
                let rel = if d <= 1e-7 { 0.0 } else { d / a.abs().max(c.abs()) };
                worst = worst.max(rel);
            }
        }
        out.record(worst <= CONV_REL_TOL, worst as f64, || format!("case {i}: k={k} {h}x{w} rel err {worst:e}"));
    }
    Ok(out)
}

/// Block parameterisations covering every block kind.
pub fn cost_cases() -> Vec<(BlockParams, Shape)> {
    vec![
        (BlockParams::conv(3, 16, 6, 2), Shape::new(1, 3, 16, 16)),
        (BlockParams::conv(8, 16, 3, 2), Shape::new(1, 8, 9, 7)),
        (BlockParams::bottleneck(8, 8, true), Shape::new(1, 8, 6, 6)),
        (BlockParams::c3(BlockKind::C3, 16, 16, 2, true), Shape::new(1, 16, 8, 8)),
        (BlockParams::c3(BlockKind::C3Ghost, 16, 32, 2, true), Shape::new(1, 16, 8, 8)),
        (BlockParams::c3(BlockKind::C3CrossConv, 16, 16, 3, true), Shape::new(1, 16, 7, 9)),
        (BlockParams::ghost_conv(8, 16), Shape::new(1, 8, 8, 8)),
        (BlockParams::ghost_bottleneck(16, 16, 1), Shape::new(1, 16, 6, 6)),
        (BlockParams::ghost_bottleneck(16, 32, 2), Shape::new(1, 16, 9, 8)),
        (BlockParams::cross_conv(8, 16, 5, 2, false), Shape::new(1, 8, 11, 10)),
        (BlockParams::gam(16, 4, true), Shape::new(1, 16, 8, 8)),
        (BlockParams::sppf(16, 16, 5), Shape::new(1, 16, 8, 8)),
        (BlockParams::upsample(8, 2), Shape::new(1, 8, 4, 4)),
    ]
}

/// Closed-form MACs and elementwise counts against the instrumented
/// executor, for every block kind and for truncations of yolov5s at 64x64.
pub fn cost_oracle() -> Result<OracleOutcome> {
    let mut out = OracleOutcome::new("analytic vs counted cost");
    for (p, s) in cost_cases() {
        let b = Block::from_params(&p)?;
        let (_, analytic) = b.cost(s)?;
        let w = BlockWeights::seeded(&b.param_entries(), 0);
        let counted = count_block_empirical(&b, &w, s)?;
        let gap = (analytic.macs.abs_diff(counted.macs) + analytic.elementwise.abs_diff(counted.elementwise)) as f64;
        out.record(analytic == counted, gap, || format!("{:?} at {s}: {analytic:?} vs {counted:?}", p.kind));
    }
    let cfg = bundled_config("yolov5s")?;
    for n in [1, 3, 6, 10, cfg.layers.len()] {
        let t = cfg.truncated(n)?;
        let a = analyze(&t, 64, 64)?;
        let c = count_flops_empirical(&t, 64, 64)?;
        let ok = a.total_macs == c.macs && a.total_elementwise == c.elementwise && a.total_params == c.params;
        let gap = a.total_macs.abs_diff(c.macs) as f64;
        out.record(ok, gap, || format!("yolov5s first {n} layers: {} vs {} MACs", a.total_macs, c.macs));
    }
    Ok(out)
}

/// Exact area under the monotone precision envelope of a ranked TP/FP list.
pub fn exact_envelope_area(flags: &[bool], gt_count: u64) -> f64 {
    let pts = pr_curve(flags, gt_count);
    let mut area = 0.0;
    let mut prev_r = 0.0;
    for (i, &(r, _)) in pts.iter().enumerate() {
        if r > prev_r {
            let best = pts[i..].iter().map(|p| p.1).fold(0.0, f64::max);
            area += (r - prev_r) * best;
            prev_r = r;
        }
    }
    area
}

pub fn ap_oracle(cases: usize, seed: u64) -> OracleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OracleOutcome::new("101-point AP vs exact envelope");
    for i in 0..cases {
        let len = rng.random_range(1..=20usize);
        let flags: Vec<bool> = (0..len).map(|_| rng.random_bool(0.6)).collect();
        let tp = flags.iter().filter(|f| **f).count() as u64;
        let gt = (tp + rng.random_range(0..4)).max(1);
        let ap = average_precision(&pr_curve(&flags, gt));
        let exact = exact_envelope_area(&flags, gt);
        let gap = (ap - exact).abs();
        out.record(gap <= AP_ENVELOPE_TOL, gap, || format!("case {i}: {flags:?} gt {gt}: {ap} vs {exact}"));
    }
    out
}
