//! COCO instances annotations, PPM / `.tns` image loading and letterbox
//! resizing.
//!
//! Only the fields used here are read from COCO files:
//! `images[].{id, file_name, width, height}`,
//! `annotations[].{image_id, category_id, bbox}` and
//! `categories[].{id, name}`. Anything else is ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::anchors::Wh;
use crate::error::{Error, Result};
use crate::eval::{GroundTruth, Prediction};
use crate::postprocess::{BBox, CocoResult};
use crate::tensor::{read_tns, write_tns, Shape, Tensor, TNS_MAGIC};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    #[serde(default)]
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f32; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    #[serde(default)]
    pub name: String,
}

#[derive(Deserialize)]
struct RawCoco {
    images: Vec<ImageInfo>,
    annotations: Vec<Annotation>,
    categories: Vec<Category>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Dataset {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
    /// Annotations removed for a non-positive width or height.
    pub dropped: usize,
}

fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let context = if path == "." {
            format!("{what} line {} column {}", inner.line(), inner.column())
        } else {
            format!("{what} {path}")
        };
        Error::parse(context, inner.to_string())
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

/// Parse and validate COCO instances JSON.
pub fn parse_coco(text: &str) -> Result<Dataset> {
    let raw: RawCoco = parse_json(text, "coco")?;
    let images: BTreeSet<u64> = raw.images.iter().map(|i| i.id).collect();
    if images.len() != raw.images.len() {
        return Err(Error::parse("coco images", "duplicate image id"));
    }
    let cats: BTreeSet<u64> = raw.categories.iter().map(|c| c.id).collect();
    if cats.len() != raw.categories.len() {
        return Err(Error::parse("coco categories", "duplicate category id"));
    }
    let mut annotations = Vec::with_capacity(raw.annotations.len());
    let mut dropped = 0;
    for (i, a) in raw.annotations.into_iter().enumerate() {
        if !images.contains(&a.image_id) {
            return Err(Error::parse(format!("coco annotations[{i}].image_id"), format!("unknown image {}", a.image_id)));
        }
        if !cats.contains(&a.category_id) {
            return Err(Error::parse(
                format!("coco annotations[{i}].category_id"),
                format!("unknown category {}", a.category_id),
            ));
        }
        if !(a.bbox[2] > 0.0 && a.bbox[3] > 0.0) {
            dropped += 1;
            continue;
        }
        annotations.push(a);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} annotations with non-positive width or height");
    }
    Ok(Dataset {
        images: raw.images,
        annotations,
        categories: raw.categories,
        dropped,
    })
}

pub fn load_coco(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_coco(&read_text(path.as_ref())?)
}

impl Dataset {
    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn category_names(&self) -> BTreeMap<u64, String> {
        self.categories.iter().map(|c| (c.id, c.name.clone())).collect()
    }

    pub fn ground_truths(&self) -> Vec<GroundTruth> {
        self.annotations
            .iter()
            .map(|a| GroundTruth {
                image_id: a.image_id,
                category: a.category_id,
                bbox: BBox::from_xywh(a.bbox),
            })
            .collect()
    }

    /// Box sizes after scaling each image so its longer side is `target`,
    /// as letterboxing would.
    pub fn boxes_wh(&self, target: u32) -> Vec<Wh> {
        let scale: BTreeMap<u64, f32> = self
            .images
            .iter()
            .map(|i| (i.id, target as f32 / i.width.max(i.height).max(1) as f32))
            .collect();
        self.annotations
            .iter()
            .map(|a| {
                let s = scale[&a.image_id];
                [a.bbox[2] * s, a.bbox[3] * s]
            })
            .collect()
    }
}

pub fn parse_results(text: &str) -> Result<Vec<CocoResult>> {
    parse_json(text, "results")
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<CocoResult>> {
    parse_results(&read_text(path.as_ref())?)
}

pub fn predictions(results: &[CocoResult]) -> Vec<Prediction> {
    results
        .iter()
        .map(|r| Prediction {
            image_id: r.image_id,
            category: r.category_id,
            bbox: BBox::from_xywh(r.bbox),
            score: r.score,
        })
        .collect()
}

/// COCO category ids of the 80 contiguous training classes.
pub const COCO80_TO_91: [u64; 80] = [
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 27, 28, 31, 32,
    33, 34, 35, 36, 37, 38, 39, 40, 41, 42, 43, 44, 46, 47, 48, 49, 50, 51, 52, 53, 54, 55, 56, 57, 58, 59,
    60, 61, 62, 63, 64, 65, 67, 70, 72, 73, 74, 75, 76, 77, 78, 79, 80, 81, 82, 84, 85, 86, 87, 88, 89, 90,
];

pub fn coco80_to_91(class: usize) -> Option<u64> {
    COCO80_TO_91.get(class).copied()
}

fn skip_ws_and_comments(data: &[u8], mut i: usize) -> usize {
    loop {
        while i < data.len() && data[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < data.len() && data[i] == b'#' {
            while i < data.len() && data[i] != b'\n' {
                i += 1;
            }
        } else {
            return i;
        }
    }
}

fn header_number(data: &[u8], i: &mut usize) -> Result<usize> {
    *i = skip_ws_and_comments(data, *i);
    let start = *i;
    while *i < data.len() && data[*i].is_ascii_digit() {
        *i += 1;
    }
    std::str::from_utf8(&data[start..*i])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format("ppm", "malformed header"))
}

/// Decode binary 8-bit PPM (`P6`) into `1 x 3 x H x W`, values `byte / 255`.
pub fn decode_ppm(data: &[u8]) -> Result<Tensor> {
    if !data.starts_with(b"P6") {
        return Err(Error::format("ppm", "expected P6 magic"));
    }
    let mut i = 2;
    let w = header_number(data, &mut i)?;
    let h = header_number(data, &mut i)?;
    let max = header_number(data, &mut i)?;
    if max == 0 || max > 255 {
        return Err(Error::format("ppm", format!("maxval {max} is not 8-bit")));
    }
    if w == 0 || h == 0 {
        return Err(Error::format("ppm", "zero-sized image"));
    }
    if i >= data.len() || !data[i].is_ascii_whitespace() {
        return Err(Error::format("ppm", "missing separator after header"));
    }
    let pixels = &data[i + 1..];
    if pixels.len() < w * h * 3 {
        return Err(Error::format("ppm", format!("payload shorter than {w}x{h}x3")));
    }
    let plane = w * h;
    let mut out = vec![0.0f32; 3 * plane];
    for (p, rgb) in pixels[..3 * plane].chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + p] = rgb[c] as f32 / max as f32;
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), out)
}

/// Encode the first image of a `N x 3 x H x W` tensor as 8-bit `P6`.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::shape("encode_ppm", "channels", 3, s.c));
    }
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    let plane = s.h * s.w;
    let d = &image.data()[..3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Load a `P6` PPM or `.tns` tensor file, detected by content.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut data = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut data)?;
    if data.starts_with(b"P6") {
        return decode_ppm(&data);
    }
    if data.starts_with(TNS_MAGIC) {
        let t = read_tns(&data[..])?;
        let s = t.shape();
        if s.n != 1 || s.c != 3 {
            return Err(Error::format("tns", format!("image tensor must be 1x3xHxW, got {s}")));
        }
        return Ok(t);
    }
    Err(Error::format(
        "image",
        format!("{}: unsupported format; supported are binary PPM (P6, 8-bit) and .tns", path.display()),
    ))
}

pub fn save_tns(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tns(tensor, &mut w)?;
    w.flush()?;
    Ok(())
}

pub const PAD_VALUE: f32 = 114.0 / 255.0;

/// Maps network-input coordinates back to the source image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Letterbox {
    pub scale_x: f32,
    pub scale_y: f32,
    pub pad_x: usize,
    pub pad_y: usize,
    pub source: (usize, usize),
    pub target: usize,
}

impl Letterbox {
    /// Inverse of the resize, clipped to the source image.
    pub fn to_source(&self, b: &BBox) -> BBox {
        let (w, h) = (self.source.0 as f32, self.source.1 as f32);
        BBox::new(
            (b.x1 - self.pad_x as f32) / self.scale_x,
            (b.y1 - self.pad_y as f32) / self.scale_y,
            (b.x2 - self.pad_x as f32) / self.scale_x,
            (b.y2 - self.pad_y as f32) / self.scale_y,
        )
        .clip(w, h)
    }

    pub fn to_input(&self, b: &BBox) -> BBox {
        BBox::new(
            b.x1 * self.scale_x + self.pad_x as f32,
            b.y1 * self.scale_y + self.pad_y as f32,
            b.x2 * self.scale_x + self.pad_x as f32,
            b.y2 * self.scale_y + self.pad_y as f32,
        )
    }
}

fn resize_nearest(image: &Tensor, nh: usize, nw: usize) -> Tensor {
    let s = image.shape();
    let sx = s.w as f64 / nw as f64;
    let sy = s.h as f64 / nh as f64;
    let xs: Vec<usize> = (0..nw).map(|x| (((x as f64 + 0.5) * sx) as usize).min(s.w - 1)).collect();
    let ys: Vec<usize> = (0..nh).map(|y| (((y as f64 + 0.5) * sy) as usize).min(s.h - 1)).collect();
    Tensor::from_fn(Shape::new(s.n, s.c, nh, nw), |[n, c, y, x]| image.get([n, c, ys[y], xs[x]]))
}

/// Aspect-preserving nearest-neighbour resize of the longer side to
/// `target`, centred on a `target x target` canvas of [`PAD_VALUE`].
pub fn letterbox(image: &Tensor, target: usize) -> Result<(Tensor, Letterbox)> {
    let s = image.shape();
    if s.h == 0 || s.w == 0 || target == 0 {
        return Err(Error::Domain("letterbox needs a non-empty image and target".into()));
    }
    let scale = target as f64 / s.h.max(s.w) as f64;
    let nw = ((s.w as f64 * scale).round() as usize).clamp(1, target);
    let nh = ((s.h as f64 * scale).round() as usize).clamp(1, target);
    let resized = if (nh, nw) == (s.h, s.w) { image.clone() } else { resize_nearest(image, nh, nw) };
    let (px, py) = ((target - nw) / 2, (target - nh) / 2);
    let out = Tensor::from_fn(Shape::new(s.n, s.c, target, target), |[n, c, y, x]| {
        if y >= py && y < py + nh && x >= px && x < px + nw {
            resized.get([n, c, y - py, x - px])
        } else {
            PAD_VALUE
        }
    });
    Ok((
        out,
        Letterbox {
            scale_x: nw as f32 / s.w as f32,
            scale_y: nh as f32 / s.h as f32,
            pad_x: px,
            pad_y: py,
            source: (s.w, s.h),
            target,
        },
    ))
}

/// Plain nearest-neighbour resize to `target x target`, ignoring aspect.
pub fn stretch(image: &Tensor, target: usize) -> Result<(Tensor, Letterbox)> {
    let s = image.shape();
    if s.h == 0 || s.w == 0 || target == 0 {
        return Err(Error::Domain("stretch needs a non-empty image and target".into()));
    }
    Ok((
        resize_nearest(image, target, target),
        Letterbox {
            scale_x: target as f32 / s.w as f32,
            scale_y: target as f32 / s.h as f32,
            pad_x: 0,
            pad_y: 0,
            source: (s.w, s.h),
            target,
        },
    ))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const FIXTURE: &str = r#"{
        "info": {"year": 2017},
        "images": [
            {"id": 1, "file_name": "a.ppm", "width": 640, "height": 480, "license": 3},
            {"id": 2, "file_name": "b.ppm", "width": 320, "height": 640}
        ],
        "annotations": [
            {"id": 10, "image_id": 1, "category_id": 1, "bbox": [10, 20, 30, 40], "area": 1200, "iscrowd": 0},
            {"id": 11, "image_id": 1, "category_id": 3, "bbox": [100, 100, 50, 25]},
            {"id": 12, "image_id": 2, "category_id": 1, "bbox": [0, 0, 64, 32]}
        ],
        "categories": [{"id": 1, "name": "person", "supercategory": "person"}, {"id": 3, "name": "car"}]
    }"#;

    #[test]
    fn loads_fixture() {
        let d = parse_coco(FIXTURE).unwrap();
        assert_eq!((d.images.len(), d.annotations.len(), d.categories.len()), (2, 3, 2));
        assert_eq!(d.category_names()[&3], "car");
        let gts = d.ground_truths();
        assert_eq!(gts[1].bbox, BBox::new(100.0, 100.0, 150.0, 125.0));
        assert_eq!(d.boxes_wh(640)[0], [30.0, 40.0]);
        assert_eq!(d.boxes_wh(320)[2], [32.0, 16.0]);
    }

    #[test]
    fn empty_and_degenerate() {
        let d = parse_coco(r#"{"images": [], "annotations": [], "categories": []}"#).unwrap();
        assert!(d.annotations.is_empty());
        let text = FIXTURE.replace("[100, 100, 50, 25]", "[100, 100, 0, 25]");
        let d = parse_coco(&text).unwrap();
        assert_eq!((d.annotations.len(), d.dropped), (2, 1));
    }

    #[test]
    fn errors_name_the_field() {
        let err = parse_coco(r#"{"images": [], "categories": []}"#).unwrap_err();
        assert!(err.to_string().contains("annotations"), "{err}");
        let err = parse_coco(&FIXTURE.replace("\"width\": 320", "\"width\": \"wide\"")).unwrap_err();
        assert!(err.to_string().contains("images[1].width"), "{err}");
        let err = parse_coco(&FIXTURE.replace("\"category_id\": 3", "\"category_id\": 4")).unwrap_err();
        assert!(err.to_string().contains("annotations[1].category_id"), "{err}");
        assert!(matches!(parse_coco("{"), Err(Error::Parse { .. })));
    }

    #[test]
    fn results_round_trip() {
        let r = vec![CocoResult { image_id: 3, category_id: 18, bbox: [1.0, 2.0, 3.0, 4.0], score: 0.5 }];
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(parse_results(&text).unwrap(), r);
        assert_eq!(predictions(&r)[0].bbox, BBox::new(1.0, 2.0, 4.0, 6.0));
    }

    #[test]
    fn category_map() {
        assert_eq!(coco80_to_91(0), Some(1));
        assert_eq!(coco80_to_91(11), Some(13));
        assert_eq!(coco80_to_91(79), Some(90));
        assert_eq!(coco80_to_91(80), None);
    }

    #[test]
    fn ppm_decoding() {
        let white = [b"P6\n2 2\n255\n".as_slice(), &[255u8; 12]].concat();
        let t = decode_ppm(&white).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 2, 2));
        assert!(t.data().iter().all(|v| *v == 1.0));
        let red = [b"P6 # comment\n1 1 255 ".as_slice(), &[255, 0, 0]].concat();
        let t = decode_ppm(&red).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0]);
        assert!(decode_ppm(b"P6\n2 2\n65535\n").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00").is_err());
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
    }

    #[test]
    fn image_files() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::from_fn(Shape::new(1, 3, 3, 5), |[_, c, y, x]| (c * 15 + y * 5 + x) as f32 / 7.3);
        let p = dir.path().join("x.tns");
        save_tns(&t, &p).unwrap();
        let back = load_image(&p).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));

        let q = dir.path().join("y.ppm");
        let img = Tensor::from_fn(Shape::new(1, 3, 2, 3), |[_, c, y, x]| ((c + y + x) * 40) as f32 / 255.0);
        std::fs::write(&q, encode_ppm(&img).unwrap()).unwrap();
        assert!(load_image(&q).unwrap().max_abs_diff(&img) < 1e-6);

        let r = dir.path().join("z.png");
        std::fs::write(&r, b"\x89PNG....").unwrap();
        let err = load_image(&r).unwrap_err().to_string();
        assert!(err.contains("PPM") && err.contains(".tns"), "{err}");
    }

    #[test]
    fn letterbox_cases() {
        let img = Tensor::full(Shape::new(1, 3, 640, 640), 0.3);
        let (out, lb) = letterbox(&img, 640).unwrap();
        assert_eq!(out, img);
        assert_eq!((lb.scale_x, lb.pad_x, lb.pad_y), (1.0, 0, 0));

        let img = Tensor::full(Shape::new(1, 3, 320, 640), 0.3);
        let (out, lb) = letterbox(&img, 640).unwrap();
        assert_eq!((lb.scale_x, lb.scale_y, lb.pad_x, lb.pad_y), (1.0, 1.0, 0, 160));
        assert_eq!(out.get([0, 0, 159, 10]), PAD_VALUE);
        assert_eq!(out.get([0, 1, 160, 10]), 0.3);
        assert_eq!(out.get([0, 2, 479, 639]), 0.3);
        assert_eq!(out.get([0, 2, 480, 639]), PAD_VALUE);

        let img = Tensor::from_fn(Shape::new(1, 3, 2, 4), |[_, _, y, x]| (y * 4 + x) as f32);
        let (out, lb) = letterbox(&img, 8).unwrap();
        assert_eq!((lb.pad_x, lb.pad_y, lb.scale_x), (0, 2, 2.0));
        assert_eq!(out.get([0, 0, 2, 0]), 0.0);
        assert_eq!(out.get([0, 0, 5, 7]), 7.0);

        let (s, lb) = stretch(&img, 8).unwrap();
        assert_eq!(s.shape(), Shape::new(1, 3, 8, 8));
        assert_eq!((lb.scale_x, lb.scale_y), (2.0, 4.0));
    }

    proptest! {
        #[test]
        fn letterbox_round_trip(
            h in 1usize..900, w in 1usize..900,
            fx in 0f32..1.0, fy in 0f32..1.0, fw in 0f32..1.0, fh in 0f32..1.0,
        ) {
            let img = Tensor::zeros(Shape::new(1, 1, h, w));
            let (out, lb) = letterbox(&img, 64).unwrap();
            prop_assert_eq!(out.shape(), Shape::new(1, 1, 64, 64));
            let x1 = fx * w as f32;
            let y1 = fy * h as f32;
            let b = BBox::new(x1, y1, x1 + fw * (w as f32 - x1), y1 + fh * (h as f32 - y1));
            let back = lb.to_source(&lb.to_input(&b));
            for (a, c) in [(back.x1, b.x1), (back.y1, b.y1), (back.x2, b.x2), (back.y2, b.y2)] {
                prop_assert!((a - c).abs() <= 1.0, "{:?} -> {:?}", b, back);
            }
        }
    }
}
