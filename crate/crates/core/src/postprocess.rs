//! Head-map decoding, confidence filtering and class-wise NMS.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::anchors::Wh;
use crate::error::{Error, Result};
use crate::model::ANCHORS_PER_SCALE;
use crate::tensor::Tensor;

pub const DEFAULT_CONF_THRESHOLD: f32 = 0.25;
pub const DEFAULT_IOU_THRESHOLD: f32 = 0.45;

/// Corner box in input-image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BBox {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    /// From COCO `[x, y, w, h]`.
    pub fn from_xywh([x, y, w, h]: [f32; 4]) -> Self {
        BBox::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f32; 4] {
        [self.x1, self.y1, self.x2 - self.x1, self.y2 - self.y1]
    }

    pub fn width(&self) -> f32 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f32 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        let w = (self.x2 as f64 - self.x1 as f64).max(0.0);
        let h = (self.y2 as f64 - self.y1 as f64).max(0.0);
        w * h
    }

    pub fn is_valid(&self) -> bool {
        self.x2 >= self.x1 && self.y2 >= self.y1
    }

    pub fn clip(&self, width: f32, height: f32) -> BBox {
        BBox::new(
            self.x1.clamp(0.0, width),
            self.y1.clamp(0.0, height),
            self.x2.clamp(0.0, width),
            self.y2.clamp(0.0, height),
        )
    }

    pub fn translate(&self, dx: f32, dy: f32) -> BBox {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) as f64 - a.x1.max(b.x1) as f64).max(0.0);
    let ih = (a.y2.min(b.y2) as f64 - a.y1.max(b.y1) as f64).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    /// Objectness times the best class score.
    pub confidence: f32,
}

/// One record of a COCO results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoResult {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f32; 4],
    pub score: f32,
}

impl Detection {
    pub fn to_coco(&self, image_id: u64, category_id: u64) -> CocoResult {
        CocoResult {
            image_id,
            category_id,
            bbox: self.bbox.to_xywh(),
            score: self.confidence,
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Clone, Debug)]
pub struct DecodeParams<'a> {
    /// Per scale, in the same order as the maps.
    pub anchors: &'a [Vec<Wh>],
    pub strides: &'a [usize],
    pub num_classes: usize,
    pub conf_threshold: f32,
    /// `(width, height)` the boxes are clipped to.
    pub image_size: (f32, f32),
}

/// Decode batch-1 head maps laid out as `anchor * (5 + nc) + field`.
///
/// `cx = (2 sigmoid(tx) - 0.5 + gx) * stride`, `w = (2 sigmoid(tw))^2 * anchor_w`,
/// likewise for y and h. Detections with confidence below the threshold are
/// dropped and the rest clipped to the image.
pub fn decode(maps: &[Tensor], p: &DecodeParams) -> Result<Vec<Detection>> {
    if maps.len() != p.anchors.len() || maps.len() != p.strides.len() {
        return Err(Error::config(format!(
            "{} maps, {} anchor groups, {} strides",
            maps.len(),
            p.anchors.len(),
            p.strides.len()
        )));
    }
    let no = 5 + p.num_classes;
    let mut out = Vec::new();
    for (i, map) in maps.iter().enumerate() {
        let s = map.shape();
        if s.n != 1 {
            return Err(Error::shape("decode", format!("map {i} batch"), 1, s.n));
        }
        let anchors = &p.anchors[i];
        if anchors.len() != ANCHORS_PER_SCALE {
            return Err(Error::shape("decode", format!("scale {i} anchors"), ANCHORS_PER_SCALE, anchors.len()));
        }
        if s.c != ANCHORS_PER_SCALE * no {
            return Err(Error::shape("decode", format!("map {i} channels"), ANCHORS_PER_SCALE * no, s.c));
        }
        let stride = p.strides[i] as f32;
        let plane = s.h * s.w;
        let data = map.data();
        for (a, anchor) in anchors.iter().enumerate() {
            let base = a * no * plane;
            let at = |field: usize, cell: usize| data[base + field * plane + cell];
            for gy in 0..s.h {
                for gx in 0..s.w {
                    let cell = gy * s.w + gx;
                    let obj = sigmoid(at(4, cell));
                    // sigmoid is monotone, so the best class is the argmax logit.
                    let mut best = (0, f32::NEG_INFINITY);
                    for c in 0..p.num_classes {
                        let v = at(5 + c, cell);
                        if v > best.1 {
                            best = (c, v);
                        }
                    }
                    let confidence = obj * sigmoid(best.1);
                    if confidence.is_nan() || confidence < p.conf_threshold {
                        continue;
                    }
                    let cx = (2.0 * sigmoid(at(0, cell)) - 0.5 + gx as f32) * stride;
                    let cy = (2.0 * sigmoid(at(1, cell)) - 0.5 + gy as f32) * stride;
                    let w = (2.0 * sigmoid(at(2, cell))).powi(2) * anchor[0];
                    let h = (2.0 * sigmoid(at(3, cell))).powi(2) * anchor[1];
                    let bbox = BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
                        .clip(p.image_size.0, p.image_size.1);
                    out.push(Detection {
                        bbox,
                        class_id: best.0,
                        confidence,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Confidence descending, then class, x1, y1, x2 and y2 ascending.
pub fn ranking(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.x1.total_cmp(&b.bbox.x1))
        .then(a.bbox.y1.total_cmp(&b.bbox.y1))
        .then(a.bbox.x2.total_cmp(&b.bbox.x2))
        .then(a.bbox.y2.total_cmp(&b.bbox.y2))
}

/// Class-wise greedy NMS. A detection survives iff its IOU with every
/// already kept detection of the same class is at most `iou_threshold`.
/// Output is in [`ranking`] order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(ranking);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        let clash = kept
            .iter()
            .any(|k| k.class_id == d.class_id && iou(&k.bbox, &d.bbox) > iou_threshold);
        if !clash {
            kept.push(d);
        }
    }
    kept
}
