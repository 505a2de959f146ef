use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

use tla_core::anchors::{assign_to_scales, fit_anchors, AnchorSet};
use tla_core::cost::{analyze, count_flops_empirical, diff_reports, formula_comparison, CostDiffRow};
use tla_core::dataset::{coco80_to_91, letterbox, load_coco, load_image, load_results, predictions, stretch};
use tla_core::eval::evaluate;
use tla_core::model::{bundled_config, bundled_names, load_config, parse_config, save_weights};
use tla_core::postprocess::{decode, nms, CocoResult, DecodeParams};
use tla_core::selfcheck::{ap_oracle, conv_oracle, cost_oracle, crossconv_oracle, OracleOutcome};
use tla_core::{build_model, WeightSource};

use crate::{AnalyzeArgs, AnchorsArgs, Command, ConfigsArgs, EvalArgs, InferArgs, OracleArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok = 0,
    OracleFailure = 2,
}

pub const NOT_REPRODUCIBLE: &str = "Accuracy figures (precision, recall, mAP) of trained models are not reproducible here: \
no training is performed and bundled weights are random. Parameter counts and GFLOPs are the quantitative reference.";

pub fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Analyze(a) => analyze_cmd(a),
        Command::Anchors(a) => anchors_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::OracleCheck(a) => oracle_cmd(a),
        Command::Configs(a) => configs_cmd(a),
    }
}

/// Write to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    let mut out = io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

macro_rules! out {
    ($($t:tt)*) => { emit(&format!($($t)*)) };
}

macro_rules! outln {
    () => { emit("\n") };
    ($($t:tt)*) => { emit(&(format!($($t)*) + "\n")) };
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    outln!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<Outcome> {
    if a.closed_form {
        let pad = a.pad.unwrap_or(a.kernel / 2);
        let cmp = formula_comparison(a.fmap, a.kernel, a.channels, a.stride, pad)?;
        if a.json {
            print_json(&cmp)?;
        } else {
            outln!("closed form  W={} k={} C={} s={} p={}", cmp.w, cmp.k, cmp.c, cmp.s, cmp.p);
            outln!("standard  k x k      params {:>10}  flops {:>14}", cmp.standard.params, cmp.standard.flops);
            outln!("cross     1 x k, k x 1  params {:>7}  flops {:>14}", cmp.cross.params, cmp.cross.flops);
            outln!("params ratio {:.4} (k/2 = {:.4})  flops ratio {:.4}", cmp.params_ratio, cmp.k as f64 / 2.0, cmp.flops_ratio);
            if cmp.cross_flops_exceed_standard {
                outln!("note: the cross formula gives MORE FLOPs than the standard one for these inputs");
            }
        }
        return Ok(Outcome::Ok);
    }
    let name = a.config.as_deref().context("--config is required")?;
    let cfg = load_config(name)?;
    let report = analyze(&cfg, a.input_size, a.input_size)?;
    let empirical = if a.empirical {
        Some(count_flops_empirical(&cfg, a.input_size, a.input_size)?)
    } else {
        None
    };
    if let Some(other) = &a.diff {
        let cfg_b = load_config(other)?;
        let report_b = analyze(&cfg_b, a.input_size, a.input_size)?;
        let rows = diff_reports(&report, &report_b);
        if a.json {
            #[derive(Serialize)]
            struct Diff<'a> {
                a: &'a str,
                b: &'a str,
                input: usize,
                rows: &'a [CostDiffRow],
                params_delta: i64,
                flops_delta: i64,
            }
            print_json(&Diff {
                a: &report.model,
                b: &report_b.model,
                input: a.input_size,
                rows: &rows,
                params_delta: report_b.total_params as i64 - report.total_params as i64,
                flops_delta: report_b.total_flops as i64 - report.total_flops as i64,
            })?;
        } else {
            out!("{}", diff_table(&report.model, &report_b.model, &rows));
        }
        return Ok(Outcome::Ok);
    }
    if a.json {
        let mut v = serde_json::to_value(&report)?;
        if let Some(e) = empirical {
            v["empirical"] = serde_json::to_value(e)?;
        }
        print_json(&v)?;
    } else {
        out!("{}", report.to_table());
        if let Some(e) = empirical {
            let verdict = if e.macs == report.total_macs && e.elementwise == report.total_elementwise {
                "match"
            } else {
                "MISMATCH"
            };
            outln!("counted: MACs {} elementwise {} FLOPs {} ({verdict})", e.macs, e.elementwise, e.flops());
        }
    }
    Ok(Outcome::Ok)
}

fn diff_table(a: &str, b: &str, rows: &[CostDiffRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "diff {b} - {a}");
    let _ = writeln!(s, "{:>4} {:<14} {:<14} {:>11} {:>15}", "idx", "a", "b", "d params", "d flops");
    for r in rows {
        if r.kind_a == r.kind_b && r.params_delta() == 0 && r.flops_delta() == 0 {
            continue;
        }
        let _ = writeln!(
            s,
            "{:>4} {:<14} {:<14} {:>11} {:>15}",
            r.index,
            r.kind_a.as_deref().unwrap_or("-"),
            r.kind_b.as_deref().unwrap_or("-"),
            r.params_delta(),
            r.flops_delta()
        );
    }
    let dp: i64 = rows.iter().map(CostDiffRow::params_delta).sum();
    let df: i64 = rows.iter().map(CostDiffRow::flops_delta).sum();
    let _ = writeln!(s, "total  params {dp:+}  flops {df:+}");
    s
}

fn default_scales(k: usize, input: u32) -> Result<Vec<usize>> {
    let n = k / 3;
    if !k.is_multiple_of(3) || n == 0 || n > 4 {
        bail!("k = {k}: pass --scales explicitly (three anchors per scale, up to four default scales)");
    }
    let all: Vec<usize> = [4, 8, 16, 32].iter().map(|s| input as usize / s).collect();
    Ok(all[4 - n..].to_vec())
}

fn anchors_cmd(a: AnchorsArgs) -> Result<Outcome> {
    let data = load_coco(&a.dataset).with_context(|| format!("loading {}", a.dataset.display()))?;
    if data.dropped > 0 {
        eprintln!("warning: dropped {} annotations with non-positive width or height", data.dropped);
    }
    let boxes = data.boxes_wh(a.input_size);
    let scales = match a.scales {
        Some(s) => s,
        None => default_scales(a.k, a.input_size)?,
    };
    let anchors = fit_anchors(&boxes, a.k, a.seed)?;
    let set = assign_to_scales(&anchors, &scales)?;
    if let Some(cfg_path) = &a.patch {
        let patched = patch_config(cfg_path, &set)?;
        let Some(p) = &a.out else {
            out!("{patched}");
            return Ok(Outcome::Ok);
        };
        fs::write(p, &patched)?;
        eprintln!("wrote {}", p.display());
    }
    if a.json {
        print_json(&set)?;
    } else {
        outln!("{} boxes, k = {}, seed {}", boxes.len(), a.k, a.seed);
        out!("{}", set.to_table());
    }
    Ok(Outcome::Ok)
}

fn patch_config(spec: &str, set: &AnchorSet) -> Result<String> {
    let text = if Path::new(spec).is_file() {
        fs::read_to_string(spec)?
    } else {
        let name = spec.strip_suffix(".cfg").unwrap_or(spec);
        tla_core::model::BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, d)| d.to_string())
            .with_context(|| format!("no config file or bundled variant `{spec}`"))?
    };
    let mut doc: Value = serde_json::from_str(&text)?;
    doc["anchors"] = serde_json::to_value(set.config_anchors())?;
    let out = serde_json::to_string_pretty(&doc)? + "\n";
    parse_config(&out).context("patched config does not validate")?;
    Ok(out)
}

fn infer_cmd(a: InferArgs) -> Result<Outcome> {
    let cfg = load_config(&a.config)?;
    let source = match &a.weights {
        Some(p) => WeightSource::File(p.clone()),
        None => WeightSource::Seeded(a.seed),
    };
    let model = build_model(cfg.clone(), source)?;
    if let Some(p) = &a.save_weights {
        save_weights(model.weights(), p)?;
        eprintln!("wrote {}", p.display());
    }
    if a.input_size == 0 || !a.input_size.is_multiple_of(model.max_stride()) {
        bail!("--input-size {} must be a positive multiple of {}", a.input_size, model.max_stride());
    }
    if !(0.0..=1.0).contains(&a.conf) || !(0.0..=1.0).contains(&a.iou) {
        bail!("--conf and --iou must lie in [0, 1]");
    }
    let image = load_image(&a.image)?;
    let (input, lb) = if a.stretch {
        stretch(&image, a.input_size)?
    } else {
        letterbox(&image, a.input_size)?
    };
    let maps = model.forward(&input)?;
    let strides = cfg.strides()?;
    let size = a.input_size as f32;
    let params = DecodeParams {
        anchors: &cfg.anchors,
        strides: &strides,
        num_classes: cfg.nc,
        conf_threshold: a.conf,
        image_size: (size, size),
    };
    let dets = nms(&decode(&maps, &params)?, a.iou as f64);
    let coco_ids = cfg.nc == 80 && !a.raw_class_ids;
    let results: Vec<CocoResult> = dets
        .iter()
        .map(|d| {
            let mut d = *d;
            d.bbox = lb.to_source(&d.bbox);
            let cat = if coco_ids {
                coco80_to_91(d.class_id).unwrap_or(d.class_id as u64)
            } else {
                d.class_id as u64
            };
            d.to_coco(a.image_id, cat)
        })
        .collect();
    let shapes: Vec<String> = maps.iter().map(|m| m.shape().to_string()).collect();
    eprintln!("head maps: {}", shapes.join(", "));
    eprintln!("{} detections after NMS", results.len());
    if a.weights.is_none() {
        eprintln!("note: weights are random (seed {}); detections exercise the pipeline only", a.seed);
    }
    let text = serde_json::to_string_pretty(&results)? + "\n";
    match &a.out {
        Some(p) => fs::write(p, text)?,
        None => out!("{text}"),
    }
    Ok(Outcome::Ok)
}

fn eval_cmd(a: EvalArgs) -> Result<Outcome> {
    let data = load_coco(&a.gt).with_context(|| format!("loading {}", a.gt.display()))?;
    if data.dropped > 0 {
        eprintln!("warning: dropped {} annotations with non-positive width or height", data.dropped);
    }
    let results = load_results(&a.results).with_context(|| format!("loading {}", a.results.display()))?;
    let preds = predictions(&results);
    let report = evaluate(&preds, &data.ground_truths(), &data.category_names());
    if let Some(p) = &a.pr_csv {
        fs::write(p, report.pr_csv())?;
    }
    if a.json {
        print_json(&report)?;
    } else {
        out!("{}", report.to_table());
    }
    Ok(Outcome::Ok)
}

fn oracle_cmd(a: OracleArgs) -> Result<Outcome> {
    if a.cases == 0 {
        bail!("--cases must be positive");
    }
    let suites: Vec<OracleOutcome> = vec![
        conv_oracle(a.cases, a.seed)?,
        crossconv_oracle(a.cases.div_ceil(5), a.seed.wrapping_add(1))?,
        cost_oracle()?,
        ap_oracle(a.cases, a.seed.wrapping_add(2)),
    ];
    let ok = suites.iter().all(OracleOutcome::ok);
    if a.json {
        #[derive(Serialize)]
        struct Summary<'a> {
            cases: usize,
            seed: u64,
            passed: bool,
            suites: &'a [OracleOutcome],
        }
        print_json(&Summary {
            cases: a.cases,
            seed: a.seed,
            passed: ok,
            suites: &suites,
        })?;
    } else {
        for s in &suites {
            let tag = if s.ok() { "PASS" } else { "FAIL" };
            outln!("{tag} {}: {}/{} (worst {:.3e})", s.name, s.passed, s.total, s.worst);
            for f in &s.failures {
                outln!("     {f}");
            }
        }
    }
    Ok(if ok { Outcome::Ok } else { Outcome::OracleFailure })
}

#[derive(Serialize)]
struct ConfigRow {
    name: String,
    description: String,
    scales: usize,
    strides: Vec<usize>,
    params: u64,
    params_m: f64,
    gflops_640: f64,
}

fn configs_cmd(a: ConfigsArgs) -> Result<Outcome> {
    let mut rows = Vec::new();
    for name in bundled_names() {
        let cfg = bundled_config(name)?;
        let r = analyze(&cfg, 640, 640)?;
        rows.push(ConfigRow {
            name: cfg.name.clone(),
            description: cfg.description.clone().unwrap_or_default(),
            scales: cfg.scale_count(),
            strides: cfg.strides()?,
            params: r.total_params,
            params_m: (r.params_millions() * 1000.0).round() / 1000.0,
            gflops_640: (r.gflops() * 100.0).round() / 100.0,
        });
    }
    if a.json {
        #[derive(Serialize)]
        struct Doc<'a> {
            configs: &'a [ConfigRow],
            accuracy_reproducible: bool,
            note: &'a str,
        }
        print_json(&Doc {
            configs: &rows,
            accuracy_reproducible: false,
            note: NOT_REPRODUCIBLE,
        })?;
    } else {
        outln!("{:<14} {:>6} {:>9} {:>8}  description", "name", "scales", "params M", "GFLOPs");
        for r in &rows {
            outln!("{:<14} {:>6} {:>9.3} {:>8.2}  {}", r.name, r.scales, r.params_m, r.gflops_640, r.description);
        }
        outln!();
        outln!("{NOT_REPRODUCIBLE}");
    }
    Ok(Outcome::Ok)
}
