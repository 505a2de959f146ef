use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_yolo-tla"))
        .args(args)
        .current_dir(root())
        .output()
        .expect("spawn yolo-tla")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).unwrap()
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

#[test]
fn analyze_tla_s_totals() {
    let v = json(&["analyze", "--config", "configs/yolo-tla-s.cfg", "--json"]);
    let params = v["total_params"].as_f64().unwrap() / 1e6;
    let gflops = v["total_flops"].as_f64().unwrap() / 1e9;
    assert!((params - 9.49).abs() / 9.49 <= 0.05, "{params}");
    assert!((gflops - 25.3).abs() / 25.3 <= 0.10, "{gflops}");
    assert!(v["convention"].as_str().unwrap().contains("multiply-accumulates"));
    let table = ok(&["analyze", "--config", "yolo-tla-s"]);
    assert!(table.contains("Detect") && table.contains("GFLOPs"));
}

#[test]
fn json_outputs_match_golden_files() {
    assert_eq!(ok(&["analyze", "--config", "yolov5s", "--json"]), golden("analyze_yolov5s.json"));
    assert_eq!(
        ok(&["eval", "--gt", "fixtures/mini_gt.json", "--results", "fixtures/mini_res.json", "--json"]),
        golden("eval_mini.json")
    );
    assert_eq!(ok(&["configs", "--json"]), golden("configs.json"));
    assert_eq!(ok(&["analyze", "--closed-form", "--json"]), golden("closed_form_k3.json"));
}

#[test]
fn closed_form_ratio_is_half_k() {
    for k in [1u64, 3, 5, 7] {
        let ks = k.to_string();
        let v = json(&["analyze", "--closed-form", "--kernel", &ks, "--channels", "16", "--fmap", "80", "--json"]);
        assert_eq!(v["standard"]["params"].as_u64().unwrap() * 2, v["cross"]["params"].as_u64().unwrap() * k);
    }
    let text = ok(&["analyze", "--closed-form"]);
    assert!(text.contains("MORE FLOPs"), "{text}");
}

#[test]
fn diff_lists_changed_layers() {
    let v = json(&["analyze", "--config", "yolov5s", "--diff", "yolov5s-cc1", "--json"]);
    let changed: Vec<&Value> = v["rows"].as_array().unwrap().iter().filter(|r| r["params_a"] != r["params_b"]).collect();
    assert_eq!(changed.len(), 1);
    assert!(v["params_delta"].as_i64().unwrap() < 0);
    assert!(ok(&["analyze", "--config", "yolov5s", "--diff", "yolov5s-cc1"]).contains("C3CrossConv"));
}

#[test]
fn empirical_counts_and_guard() {
    let text = ok(&["analyze", "--config", "yolov5s-g2", "--input-size", "64", "--empirical"]);
    assert!(text.contains("(match)"), "{text}");
    let out = run(&["analyze", "--config", "yolov5s", "--empirical"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shrink"));
}

#[test]
fn oracle_check_passes() {
    let out = run(&["oracle-check", "--cases", "100", "--seed", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("PASS conv2d vs conv2d_naive: 100/100"), "{text}");
    assert!(!text.contains("FAIL"));
    let v = json(&["oracle-check", "--cases", "10", "--seed", "4", "--json"]);
    assert_eq!(v["passed"], true);
    assert_eq!(v["suites"].as_array().unwrap().len(), 4);
}

#[test]
fn eval_fixture_map() {
    // person: TP FP FP TP over 3 GT -> envelope 1.0 up to recall 1/3 (34
    // samples), 0.5 up to 2/3 (33 samples): AP = 50.5 / 101 = 0.5.
    // car: TP FP TP over 2 GT -> (51 + 50 * 2/3) / 101.
    let car = (51.0 + 50.0 * 2.0 / 3.0) / 101.0;
    let expected = (0.5 + car) / 2.0;
    let v = json(&["eval", "--gt", "fixtures/mini_gt.json", "--results", "fixtures/mini_res.json", "--json"]);
    assert!((v["map50"].as_f64().unwrap() - expected).abs() <= 0.01);
    let (p, r) = (v["precision_all"].as_f64().unwrap(), v["recall_all"].as_f64().unwrap());
    assert!((v["f1"].as_f64().unwrap() - 2.0 * p * r / (p + r)).abs() < 1e-12);
    let text = ok(&["eval", "--gt", "fixtures/mini_gt.json", "--results", "fixtures/mini_res.json"]);
    assert!(text.contains("person") && text.contains("TN n/a"));
}

#[test]
fn usage_errors_exit_one() {
    for args in [&["analyze", "--bogus"][..], &["nope"], &[], &["infer", "--config", "yolov5s"]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
    }
    let out = run(&["analyze", "--config", "no-such-model"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["eval", "--gt", "fixtures/mini_res.json", "--results", "fixtures/mini_res.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_documents_defaults() {
    let out = run(&["infer", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["[default: 0.25]", "[default: 0.45]", "[default: 640]", "[default: 0]"] {
        assert!(text.contains(needle), "missing {needle}");
    }
    assert!(ok(&["--help"]).contains("oracle-check"));
}

#[test]
fn configs_states_non_reproducibility() {
    let text = ok(&["configs"]);
    assert!(text.contains("not reproducible"));
    assert_eq!(text.lines().filter(|l| l.starts_with("yolo")).count(), 10);
}

#[test]
fn infer_is_deterministic_and_round_trips_weights() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path().join("m.tlaw");
    let ws = w.to_str().unwrap();
    let base = ["infer", "--config", "yolo-tla-s", "--image", "fixtures/street.ppm", "--input-size", "64", "--conf", "0.05"];
    let a = ok(&[&base[..], &["--seed", "3", "--save-weights", ws]].concat());
    let b = ok(&[&base[..], &["--seed", "3"]].concat());
    assert_eq!(a, b);
    let c = ok(&[&base[..], &["--weights", ws]].concat());
    assert_eq!(a, c);
    let dets: Vec<Value> = serde_json::from_str(&a).unwrap();
    for d in &dets {
        let bb: Vec<f64> = d["bbox"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!(bb[0] >= 0.0 && bb[1] >= 0.0 && bb[0] + bb[2] <= 64.0 + 1e-3 && bb[1] + bb[3] <= 48.0 + 1e-3);
        assert!(d["score"].as_f64().unwrap() >= 0.05);
    }
    let out = run(&[&base[..6], &["--input-size", "100"]].concat());
    assert_eq!(out.status.code(), Some(1));
}

fn many_boxes() -> String {
    let anns: Vec<Value> = (0..40)
        .map(|i| {
            let w = 4 + (i * 37) % 300;
            let h = 6 + (i * 53) % 280;
            serde_json::json!({"id": i, "image_id": 1, "category_id": 1, "bbox": [0, 0, w, h]})
        })
        .collect();
    serde_json::json!({
        "images": [{"id": 1, "width": 640, "height": 640, "file_name": "a.ppm"}],
        "annotations": anns,
        "categories": [{"id": 1, "name": "thing"}]
    })
    .to_string()
}

#[test]
fn anchors_fit_and_patch() {
    let text = ok(&["anchors", "--dataset", "fixtures/mini_gt.json", "--k", "3", "--scales", "20"]);
    assert!(text.contains("20x20"));
    let v = json(&["anchors", "--dataset", "fixtures/mini_gt.json", "--k", "3", "--json"]);
    assert_eq!(v["scales"][0]["size"], 20);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("patched.cfg");
    let os = out.to_str().unwrap();
    // Three-scale config with one scale of anchors is rejected before writing.
    let bad = run(&["anchors", "--dataset", "fixtures/mini_gt.json", "--k", "3", "--scales", "20", "--patch", "yolov5s", "--out", os]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(!out.exists());
    let ds = dir.path().join("many.json");
    std::fs::write(&ds, many_boxes()).unwrap();
    let ds = ds.to_str().unwrap();
    ok(&["anchors", "--dataset", ds, "--k", "9", "--patch", "yolov5s", "--out", os]);
    let patched = std::fs::read_to_string(&out).unwrap();
    let v = json(&["analyze", "--config", os, "--input-size", "64", "--json"]);
    assert_eq!(v["total_params"], json(&["analyze", "--config", "yolov5s", "--input-size", "64", "--json"])["total_params"]);
    assert!(!patched.is_empty());
    let bad = run(&["anchors", "--dataset", "fixtures/mini_gt.json", "--k", "12"]);
    assert_eq!(bad.status.code(), Some(1));
}
