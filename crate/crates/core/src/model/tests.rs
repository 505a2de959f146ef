use super::*;
use crate::blocks::BlockKind;
use crate::error::Error;
use crate::tensor::{Shape, Tensor};

fn kinds(cfg: &ModelConfig) -> Vec<BlockKind> {
    cfg.layers.iter().map(|l| l.kind).collect()
}

#[test]
fn bundled_configs_parse() {
    let v5s = bundled_config("yolov5s").unwrap();
    assert_eq!((v5s.scale_count(), v5s.nc), (3, 80));
    assert_eq!(v5s.strides().unwrap(), vec![8, 16, 32]);
    let tla = bundled_config("yolo-tla-s.cfg").unwrap();
    assert_eq!(tla.scale_count(), 4);
    assert_eq!(tla.anchors[0], vec![[9.0, 12.0], [20.0, 19.0], [17.0, 42.0]]);
    assert_eq!(tla.strides().unwrap(), vec![4, 8, 16, 32]);
    for name in bundled_names() {
        let cfg = bundled_config(name).unwrap();
        assert_eq!(cfg.name, name);
        assert_eq!(cfg.max_stride().unwrap(), 32);
        for l in &cfg.layers {
            assert_eq!(l.out_channels() % 8, 0, "{name} layer {}", l.index);
        }
    }
    assert!(bundled_config("yolov9").is_err());
}

#[test]
fn seeded_builds_are_bit_identical() {
    let cfg = bundled_config("yolo-tla-s").unwrap();
    let a = build_model(cfg.clone(), WeightSource::Seeded(0)).unwrap();
    let b = build_model(cfg.clone(), WeightSource::Seeded(0)).unwrap();
    assert_eq!(a.weights(), b.weights());
    let c = build_model(cfg, WeightSource::Seeded(1)).unwrap();
    assert_ne!(a.weights(), c.weights());
}

#[test]
fn missing_weight_is_named() {
    let cfg = bundled_config("yolov5s").unwrap();
    let full = build_model(cfg.clone(), WeightSource::Seeded(3)).unwrap();
    let mut w = full.weights().clone();
    w.remove("model.7.conv.weight");
    match build_model(cfg.clone(), WeightSource::Weights(w)) {
        Err(Error::MissingWeight { path }) => assert_eq!(path, "model.7.conv.weight"),
        other => panic!("unexpected {:?}", other.map(|_| ())),
    }
    let mut w = full.weights().clone();
    w.insert("model.24.m.1.bias", Tensor::zeros(Shape::new(3, 1, 1, 1)));
    assert!(matches!(
        build_model(cfg, WeightSource::Weights(w)),
        Err(Error::WeightShape { ref path, .. }) if path == "model.24.m.1.bias"
    ));
}

#[test]
fn weight_file_round_trip_rebuilds_identical_model() {
    let cfg = bundled_config("yolov5s-g2").unwrap();
    let m = build_model(cfg.clone(), WeightSource::Seeded(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g2.tlaw");
    save_weights(m.weights(), &path).unwrap();
    let back = build_model(cfg, WeightSource::File(path.clone())).unwrap();
    assert_eq!(back.weights(), m.weights());
    let bytes = std::fs::read(&path).unwrap();
    let mut again = Vec::new();
    write_tlaw(back.weights(), &mut again).unwrap();
    assert_eq!(bytes, again);
    assert!(bytes.len() > 4 * m.param_count());
}

#[test]
fn forward_shapes_match_inference_for_every_bundled_config() {
    for name in bundled_names() {
        let cfg = bundled_config(name).unwrap();
        let m = build_model(cfg.clone(), WeightSource::Seeded(0)).unwrap();
        for (h, w) in [(64, 64), (96, 64)] {
            let x = Tensor::full(Shape::new(1, 3, h, w), 0.5);
            let maps = m.forward(&x).unwrap();
            let got: Vec<Shape> = maps.iter().map(Tensor::shape).collect();
            assert_eq!(got, cfg.head_shapes(h, w).unwrap(), "{name} {h}x{w}");
            assert!(maps.iter().all(|t| t.data().iter().all(|v| v.is_finite())));
        }
    }
}

#[test]
fn tla_head_layout_at_128() {
    let cfg = bundled_config("yolo-tla-s").unwrap();
    let shapes = cfg.head_shapes(128, 128).unwrap();
    let sides: Vec<usize> = shapes.iter().map(|s| s.h).collect();
    assert_eq!(sides, vec![32, 16, 8, 4]);
    assert!(shapes.iter().all(|s| s.c == 255));
}

#[test]
fn indivisible_input_is_rejected() {
    let m = build_model(bundled_config("yolov5s").unwrap(), WeightSource::Seeded(0)).unwrap();
    let err = m.forward(&Tensor::zeros(Shape::new(1, 3, 80, 72))).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(m.forward(&Tensor::zeros(Shape::new(1, 1, 64, 64))).is_err());
}

#[test]
fn variant_structure_relationships() {
    let v5s = bundled_config("yolov5s").unwrap();
    let cc1 = bundled_config("yolov5s-cc1").unwrap();
    let diffs: Vec<(BlockKind, BlockKind)> = kinds(&v5s)
        .into_iter()
        .zip(kinds(&cc1))
        .filter(|(a, b)| a != b)
        .collect();
    assert_eq!(kinds(&v5s).len(), kinds(&cc1).len());
    assert_eq!(diffs, vec![(BlockKind::C3, BlockKind::C3CrossConv)]);
    assert!(cc1.layers.iter().filter(|l| l.kind == BlockKind::C3CrossConv).all(|l| l.index < 10));

    let g2 = bundled_config("yolov5s-g2").unwrap();
    assert!(!kinds(&g2).contains(&BlockKind::C3));
    assert!(kinds(&g2).contains(&BlockKind::C3Ghost));

    // tla-s = tiny + backbone C3CrossConv + four GAMs.
    let tiny = bundled_config("yolov5s-tiny").unwrap();
    let tla = bundled_config("yolo-tla-s").unwrap();
    let without_gam: Vec<BlockKind> = kinds(&tla).into_iter().filter(|k| *k != BlockKind::GAM).collect();
    assert_eq!(kinds(&tla).len() - without_gam.len(), 4);
    let subs: Vec<(usize, BlockKind, BlockKind)> = kinds(&tiny)
        .into_iter()
        .zip(without_gam)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, (a, b))| (i, a, b))
        .collect();
    assert_eq!(subs, vec![(8, BlockKind::C3, BlockKind::C3CrossConv)]);
    let gam_after: Vec<BlockKind> = tla
        .layers
        .iter()
        .filter(|l| l.kind == BlockKind::GAM)
        .map(|l| tla.layers[l.index - 1].kind)
        .collect();
    assert_eq!(gam_after, vec![BlockKind::C3, BlockKind::C3, BlockKind::C3, BlockKind::C3CrossConv]);
}

#[test]
fn tiny_path_fuses_with_stride4_stage() {
    for name in ["yolov5s-tiny", "yolo-tla-s", "yolo-tla-m"] {
        let cfg = bundled_config(name).unwrap();
        let shapes = cfg.infer_shapes(640, 640).unwrap();
        let first = cfg.detect_from[0];
        let cat = cfg.layers[first].from[0];
        let Source::Layer(cat) = cat else { panic!() };
        assert_eq!(cfg.layers[cat].kind, BlockKind::Concat);
        let parts: Vec<Shape> = cfg.layers[cat]
            .from
            .iter()
            .map(|s| match s {
                Source::Layer(j) => shapes[*j],
                Source::Image => unreachable!(),
            })
            .collect();
        assert_eq!(parts[0], parts[1], "{name}");
        assert_eq!(parts[0].h, 160);
        let Source::Layer(tap) = cfg.layers[cat].from[1] else { panic!() };
        assert!(tap < 4, "{name} taps backbone layer {tap}");
    }
}

#[test]
fn headless_truncation_runs() {
    let cfg = bundled_config("yolov5s").unwrap().truncated(4).unwrap();
    let m = build_model(cfg.clone(), WeightSource::Seeded(0)).unwrap();
    let y = m.forward(&Tensor::zeros(Shape::new(1, 3, 64, 64))).unwrap();
    assert_eq!(y.len(), 1);
    assert_eq!(y[0].shape(), Shape::new(1, 128, 8, 8));
    assert_eq!(m.param_count(), model_layout(&cfg).unwrap().iter().map(|e| e.numel()).sum::<usize>());
}
