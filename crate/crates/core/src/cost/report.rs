use std::fmt::Write as _;

use serde::Serialize;

use super::Cost;
use crate::model::Source;
use crate::tensor::Shape;

pub const FLOP_CONVENTION: &str = "FLOPs = 2 x multiply-accumulates (conv and linear, padded taps included) \
+ 1 per elementwise op (bias, activation, add, gate multiply, maxpool compare) + 2 per folded batch-norm element; \
batch 1; upsample, concat and permute are free";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub index: usize,
    pub kind: String,
    pub from: Vec<String>,
    pub repeats: usize,
    pub out_shapes: Vec<Shape>,
    pub params: u64,
    pub macs: u64,
    pub elementwise: u64,
    pub flops: u64,
}

impl CostRow {
    pub(crate) fn new(
        index: usize,
        kind: &str,
        from: &[Source],
        repeats: usize,
        out_shapes: Vec<Shape>,
        cost: Cost,
    ) -> Self {
        let from = from
            .iter()
            .map(|s| match s {
                Source::Image => "image".to_string(),
                Source::Layer(j) => j.to_string(),
            })
            .collect();
        CostRow {
            index,
            kind: kind.to_string(),
            from,
            repeats,
            out_shapes,
            params: cost.params,
            macs: cost.macs,
            elementwise: cost.elementwise,
            flops: cost.flops(),
        }
    }

    pub fn cost(&self) -> Cost {
        Cost {
            params: self.params,
            macs: self.macs,
            elementwise: self.elementwise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub model: String,
    pub input: (usize, usize),
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub total_macs: u64,
    pub total_elementwise: u64,
    pub total_flops: u64,
    pub convention: &'static str,
}

impl CostReport {
    pub(crate) fn new(model: String, input: (usize, usize), rows: Vec<CostRow>) -> Self {
        let total: Cost = rows.iter().map(CostRow::cost).sum();
        CostReport {
            model,
            input,
            rows,
            total_params: total.params,
            total_macs: total.macs,
            total_elementwise: total.elementwise,
            total_flops: total.flops(),
            convention: FLOP_CONVENTION,
        }
    }

    pub fn params_millions(&self) -> f64 {
        self.total_params as f64 / 1e6
    }

    pub fn gflops(&self) -> f64 {
        self.total_flops as f64 / 1e9
    }

    /// Gigaflops counting only `2 * MACs`.
    pub fn mac_gflops(&self) -> f64 {
        2.0 * self.total_macs as f64 / 1e9
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model {}  input {}x{}", self.model, self.input.0, self.input.1);
        let _ = writeln!(
            s,
            "{:>4} {:<12} {:>10} {:>3} {:<22} {:>11} {:>15}",
            "idx", "kind", "from", "n", "output", "params", "flops"
        );
        for r in &self.rows {
            let shapes: Vec<String> = r.out_shapes.iter().map(Shape::to_string).collect();
            let shape = if shapes.len() == 1 {
                shapes[0].clone()
            } else {
                format!("{} maps", shapes.len())
            };
            let _ = writeln!(
                s,
                "{:>4} {:<12} {:>10} {:>3} {:<22} {:>11} {:>15}",
                r.index,
                r.kind,
                r.from.join(","),
                r.repeats,
                shape,
                r.params,
                r.flops
            );
        }
        let _ = writeln!(
            s,
            "total params {} ({:.3} M), FLOPs {} ({:.2} GFLOPs; MAC-only {:.2})",
            self.total_params,
            self.params_millions(),
            self.total_flops,
            self.gflops(),
            self.mac_gflops()
        );
        let _ = writeln!(s, "convention: {}", self.convention);
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostDiffRow {
    pub index: usize,
    pub kind_a: Option<String>,
    pub kind_b: Option<String>,
    pub params_a: u64,
    pub params_b: u64,
    pub flops_a: u64,
    pub flops_b: u64,
}

impl CostDiffRow {
    pub fn params_delta(&self) -> i64 {
        self.params_b as i64 - self.params_a as i64
    }

    pub fn flops_delta(&self) -> i64 {
        self.flops_b as i64 - self.flops_a as i64
    }
}

/// Index-aligned per-layer deltas (`b - a`). The Detect rows of the two
/// reports are aligned with each other regardless of their index.
pub fn diff_reports(a: &CostReport, b: &CostReport) -> Vec<CostDiffRow> {
    fn split(r: &CostReport) -> (Vec<&CostRow>, Vec<&CostRow>) {
        r.rows.iter().partition(|x| x.kind != "Detect")
    }
    let (ba, ha) = split(a);
    let (bb, hb) = split(b);
    let n = ba.len().max(bb.len());
    let mut out: Vec<CostDiffRow> = (0..n)
        .map(|i| {
            let (x, y) = (ba.get(i), bb.get(i));
            CostDiffRow {
                index: i,
                kind_a: x.map(|r| r.kind.clone()),
                kind_b: y.map(|r| r.kind.clone()),
                params_a: x.map_or(0, |r| r.params),
                params_b: y.map_or(0, |r| r.params),
                flops_a: x.map_or(0, |r| r.flops),
                flops_b: y.map_or(0, |r| r.flops),
            }
        })
        .collect();
    if !ha.is_empty() || !hb.is_empty() {
        let (x, y) = (ha.first(), hb.first());
        out.push(CostDiffRow {
            index: n,
            kind_a: x.map(|r| r.kind.clone()),
            kind_b: y.map(|r| r.kind.clone()),
            params_a: x.map_or(0, |r| r.params),
            params_b: y.map_or(0, |r| r.params),
            flops_a: x.map_or(0, |r| r.flops),
            flops_b: y.map_or(0, |r| r.flops),
        });
    }
    out
}
