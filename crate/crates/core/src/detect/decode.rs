use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nncore::{Real, Tensor};

use super::{Anchors, BBox};

pub const DEFAULT_CONF: f64 = 0.25;
pub const DEFAULT_IOU: f64 = 0.45;
/// Cap on candidates entering NMS and on detections kept per scene.
pub const MAX_CANDIDATES: usize = 3000;
pub const MAX_DETECTIONS: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Box encoded by the four regression logits of a cell.
pub fn decode_box(t: [f64; 4], anchor: (f64, f64), cell_x: usize, cell_y: usize, grid: usize) -> BBox {
    let n = grid as f64;
    BBox::new(
        (2.0 * sigmoid(t[0]) - 0.5 + cell_x as f64) / n,
        (2.0 * sigmoid(t[1]) - 0.5 + cell_y as f64) / n,
        (2.0 * sigmoid(t[2])).powi(2) * anchor.0,
        (2.0 * sigmoid(t[3])).powi(2) * anchor.1,
    )
}

/// Inverse of [`decode_box`]; `None` when the box is out of reach of the
/// cell/anchor pair.
pub fn encode_box(b: &BBox, anchor: (f64, f64), cell_x: usize, cell_y: usize, grid: usize) -> Option<[f64; 4]> {
    let n = grid as f64;
    let px = (b.cx * n - cell_x as f64 + 0.5) / 2.0;
    let py = (b.cy * n - cell_y as f64 + 0.5) / 2.0;
    let pw = (b.w / anchor.0).sqrt() / 2.0;
    let ph = (b.h / anchor.1).sqrt() / 2.0;
    let ok = |p: f64| p > 0.0 && p < 1.0;
    (ok(px) && ok(py) && ok(pw) && ok(ph)).then(|| [logit(px), logit(py), logit(pw), logit(ph)])
}

/// Per-cell detections scoring at least `conf`, best class only.
/// `scales[s] = (reg [A·5,n,n], cls [A·C,n,n])`.
pub fn decode<F: Real>(scales: &[(&Tensor<F>, &Tensor<F>)], anchors: &Anchors, conf: f64) -> Result<Vec<Detection>> {
    let na = anchors.per_scale();
    let mut out = Vec::new();
    for (s, ((reg, cls), scale_anchors)) in scales.iter().zip(&anchors.scales).enumerate() {
        let (rc, n, n2) = reg.chw()?;
        let (cc, _, _) = cls.chw()?;
        if rc != na * 5 || n != n2 || cls.shape()[1..] != reg.shape()[1..] || cc % na != 0 {
            return Err(Error::Shape(format!("scale {s}: reg {:?}, cls {:?}", reg.shape(), cls.shape())));
        }
        let nc = cc / na;
        let nn = n * n;
        let (r, c) = (reg.data(), cls.data());
        for a in 0..na {
            for y in 0..n {
                for x in 0..n {
                    let cell = y * n + x;
                    let obj = sigmoid(r[(a * 5 + 4) * nn + cell].f64());
                    if obj < conf {
                        continue;
                    }
                    let (best, logit_best) = (0..nc)
                        .map(|k| (k, c[(a * nc + k) * nn + cell].f64()))
                        .fold((0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
                    let score = obj * sigmoid(logit_best);
                    if score < conf {
                        continue;
                    }
                    let t = [0, 1, 2, 3].map(|k| r[(a * 5 + k) * nn + cell].f64());
                    let bbox = decode_box(t, scale_anchors[a], x, y, n).clipped();
                    if bbox.w > 0.0 && bbox.h > 0.0 {
                        out.push(Detection { bbox, class_id: best, score });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Greedy per-class suppression, highest score first (ties keep input
/// order). Output is sorted by score.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    order.truncate(MAX_CANDIDATES);
    let sorted: Vec<Detection> = order.iter().map(|&i| dets[i]).collect();
    dets.clear();
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        if kept.iter().all(|k| k.class_id != d.class_id || k.bbox.iou(&d.bbox) < iou_thresh) {
            kept.push(d);
            if kept.len() == MAX_DETECTIONS {
                break;
            }
        }
    }
    kept
}

pub fn decode_and_nms<F: Real>(
    scales: &[(&Tensor<F>, &Tensor<F>)],
    anchors: &Anchors,
    conf: f64,
    iou_thresh: f64,
) -> Result<Vec<Detection>> {
    if !(conf > 0.0 && conf < 1.0 && iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(Error::Config(format!("thresholds must be in (0,1), got conf {conf}, iou {iou_thresh}")));
    }
    Ok(nms(decode(scales, anchors, conf)?, iou_thresh))
}

/// One `class_id score cx cy w h` line per detection.
pub fn format_detections(dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let b = d.bbox;
        writeln!(s, "{} {:.6} {:.6} {:.6} {:.6} {:.6}", d.class_id, d.score, b.cx, b.cy, b.w, b.h).unwrap();
    }
    s
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Format(format!("detection line {}: '{line}'", i + 1));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad());
            Ok(Detection {
                class_id: f[0].parse().map_err(|_| bad())?,
                score: num(1)?,
                bbox: BBox::new(num(2)?, num(3)?, num(4)?, num(5)?),
            })
        })
        .collect()
}
