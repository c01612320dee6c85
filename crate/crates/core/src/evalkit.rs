//! Detection metrics: 101-point interpolated AP, mAP50 and mAP50:95, and
//! micro F1 at its best confidence threshold, with per-SNR breakdowns.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::detect::{BBox, Detection};
use crate::kv::KvMap;

pub const IOU_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];
const RECALL_POINTS: usize = 101;

/// Detections and ground truth of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneEval {
    /// Stable identifier; fixes the processing order.
    pub id: u64,
    pub snr_db: f64,
    pub dets: Vec<Detection>,
    pub gts: Vec<(usize, BBox)>,
}

/// A ranked detection after matching: `(score, is_true_positive)`.
pub type Ranked = (f64, bool);

/// Greedy matching of one class in one scene: detections in descending
/// score order take the unmatched ground truth with the highest IoU, if
/// that IoU reaches `iou_thresh`. Returns one flag per input detection.
pub fn match_scene(dets: &[(f64, BBox)], gts: &[BBox], iou_thresh: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].0.total_cmp(&dets[a].0).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (j, gt) in gts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let v = dets[i].1.iou(gt);
            if v >= iou_thresh && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            tp[i] = true;
        }
    }
    tp
}

/// 101-point interpolated AP of a ranked list against `n_gt` ground truths;
/// `None` when there is no ground truth.
pub fn average_precision(ranked: &[Ranked], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut r: Vec<Ranked> = ranked.to_vec();
    r.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut recall = Vec::with_capacity(r.len());
    let mut precision = Vec::with_capacity(r.len());
    let mut tp = 0usize;
    for (i, (_, hit)) in r.iter().enumerate() {
        tp += usize::from(*hit);
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    // precision envelope, non-increasing in rank
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for k in 0..RECALL_POINTS {
        let level = k as f64 / (RECALL_POINTS - 1) as f64;
        let idx = recall.partition_point(|&v| v < level);
        if idx < precision.len() {
            sum += precision[idx];
        }
    }
    Some(sum / RECALL_POINTS as f64)
}

fn ordered(scenes: &[SceneEval]) -> Vec<&SceneEval> {
    let mut v: Vec<&SceneEval> = scenes.iter().collect();
    v.sort_by_key(|s| s.id);
    v
}

/// Ranked detections of one class over all scenes, and its ground-truth count.
fn ranked_for_class(scenes: &[&SceneEval], class: usize, iou_thresh: f64) -> (Vec<Ranked>, usize) {
    let mut ranked = Vec::new();
    let mut n_gt = 0;
    for s in scenes {
        let dets: Vec<(f64, BBox)> =
            s.dets.iter().filter(|d| d.class_id == class).map(|d| (d.score, d.bbox)).collect();
        let gts: Vec<BBox> = s.gts.iter().filter(|g| g.0 == class).map(|g| g.1).collect();
        n_gt += gts.len();
        let tp = match_scene(&dets, &gts, iou_thresh);
        ranked.extend(dets.iter().zip(tp).map(|(d, t)| (d.0, t)));
    }
    // stable sort keeps scene order for equal scores
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    (ranked, n_gt)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassAp {
    pub class_id: usize,
    pub n_gt: usize,
    pub ap50: f64,
    pub ap50_95: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnrRow {
    pub snr_db: f64,
    pub scenes: usize,
    pub map_50: f64,
    pub map_50_95: f64,
    pub f1: f64,
}

/// Confusion counts and F1 at one confidence threshold (IoU 0.5).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct F1Point {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Percent.
    pub map_50_95: f64,
    /// Percent.
    pub map_50: f64,
    /// Micro F1 at the best threshold.
    pub f1: f64,
    /// Per-class F1 averaged over classes with ground truth, same threshold.
    pub f1_macro: f64,
    pub operating_point: F1Point,
    pub per_class: Vec<ClassAp>,
    pub per_snr: Vec<SnrRow>,
    pub scenes: usize,
}

fn f1_of(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// All IoU-0.5 ranked detections across classes, plus the total gt count.
fn pooled(scenes: &[&SceneEval], num_classes: usize) -> (Vec<(f64, bool, usize)>, Vec<usize>) {
    let mut all = Vec::new();
    let mut n_gt = vec![0; num_classes];
    for c in 0..num_classes {
        let (r, n) = ranked_for_class(scenes, c, 0.5);
        n_gt[c] = n;
        all.extend(r.into_iter().map(|(s, t)| (s, t, c)));
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    (all, n_gt)
}

fn f1_at_threshold(pool: &[(f64, bool, usize)], total_gt: usize, thr: f64) -> F1Point {
    let kept = pool.iter().take_while(|d| d.0 >= thr);
    let (mut tp, mut fp) = (0, 0);
    for d in kept {
        if d.1 {
            tp += 1;
        } else {
            fp += 1;
        }
    }
    F1Point { threshold: thr, tp, fp, fn_: total_gt - tp, f1: f1_of(tp, fp, total_gt - tp) }
}

/// Micro F1 at IoU 0.5 keeping detections with score ≥ `threshold`.
pub fn f1_at(scenes: &[SceneEval], num_classes: usize, threshold: f64) -> F1Point {
    let s = ordered(scenes);
    let (pool, n_gt) = pooled(&s, num_classes);
    f1_at_threshold(&pool, n_gt.iter().sum(), threshold)
}

/// Threshold maximising micro F1; ties go to the higher threshold.
fn best_f1(pool: &[(f64, bool, usize)], total_gt: usize) -> F1Point {
    let mut best = F1Point { threshold: 1.0, tp: 0, fp: 0, fn_: total_gt, f1: 0.0 };
    let (mut tp, mut fp) = (0, 0);
    for (i, d) in pool.iter().enumerate() {
        if d.1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let boundary = pool.get(i + 1).is_none_or(|n| n.0 < d.0);
        if boundary {
            let f1 = f1_of(tp, fp, total_gt - tp);
            if f1 > best.f1 {
                best = F1Point { threshold: d.0, tp, fp, fn_: total_gt - tp, f1 };
            }
        }
    }
    best
}

fn map_of(scenes: &[&SceneEval], num_classes: usize) -> (f64, f64, Vec<ClassAp>) {
    let mut per_class = Vec::new();
    for c in 0..num_classes {
        let aps: Vec<Option<f64>> = IOU_THRESHOLDS
            .iter()
            .map(|&t| {
                let (r, n) = ranked_for_class(scenes, c, t);
                average_precision(&r, n)
            })
            .collect();
        if let Some(ap50) = aps[0] {
            let n_gt = scenes.iter().map(|s| s.gts.iter().filter(|g| g.0 == c).count()).sum();
            let ap50_95 = aps.iter().map(|a| a.unwrap_or(0.0)).sum::<f64>() / IOU_THRESHOLDS.len() as f64;
            per_class.push(ClassAp { class_id: c, n_gt, ap50, ap50_95 });
        }
    }
    if per_class.is_empty() {
        return (0.0, 0.0, per_class);
    }
    let n = per_class.len() as f64;
    let m50 = 100.0 * per_class.iter().map(|c| c.ap50).sum::<f64>() / n;
    let m5095 = 100.0 * per_class.iter().map(|c| c.ap50_95).sum::<f64>() / n;
    (m50, m5095, per_class)
}

/// Full report over all scenes, with SNR strata.
pub fn evaluate(scenes: &[SceneEval], num_classes: usize) -> EvalReport {
    let all = ordered(scenes);
    let (map_50, map_50_95, per_class) = map_of(&all, num_classes);
    let (pool, n_gt) = pooled(&all, num_classes);
    let total_gt: usize = n_gt.iter().sum();
    let op = best_f1(&pool, total_gt);

    let with_gt: Vec<usize> = (0..num_classes).filter(|&c| n_gt[c] > 0).collect();
    let f1_macro = if with_gt.is_empty() {
        0.0
    } else {
        with_gt
            .iter()
            .map(|&c| {
                let tp = pool.iter().filter(|d| d.2 == c && d.0 >= op.threshold && d.1).count();
                let fp = pool.iter().filter(|d| d.2 == c && d.0 >= op.threshold && !d.1).count();
                f1_of(tp, fp, n_gt[c] - tp)
            })
            .sum::<f64>()
            / with_gt.len() as f64
    };

    let mut strata: BTreeMap<i64, Vec<&SceneEval>> = BTreeMap::new();
    for s in &all {
        strata.entry((s.snr_db * 1000.0).round() as i64).or_default().push(s);
    }
    let per_snr = strata
        .into_values()
        .map(|group| {
            let (m50, m5095, _) = map_of(&group, num_classes);
            let (p, g) = pooled(&group, num_classes);
            SnrRow {
                snr_db: group[0].snr_db,
                scenes: group.len(),
                map_50: m50,
                map_50_95: m5095,
                f1: f1_at_threshold(&p, g.iter().sum(), op.threshold).f1,
            }
        })
        .collect();

    EvalReport { map_50_95, map_50, f1: op.f1, f1_macro, operating_point: op, per_class, per_snr, scenes: scenes.len() }
}

impl EvalReport {
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("scenes", self.scenes);
        kv.set("map_50_95", format!("{:.4}", self.map_50_95));
        kv.set("map_50", format!("{:.4}", self.map_50));
        kv.set("f1", format!("{:.4}", self.f1));
        kv.set("f1_macro", format!("{:.4}", self.f1_macro));
        kv.set("f1_threshold", format!("{:.4}", self.operating_point.threshold));
        kv.set("tp", self.operating_point.tp);
        kv.set("fp", self.operating_point.fp);
        kv.set("fn", self.operating_point.fn_);
        for c in &self.per_class {
            kv.set(&format!("ap50.class{}", c.class_id), format!("{:.4}", c.ap50));
            kv.set(&format!("ap50_95.class{}", c.class_id), format!("{:.4}", c.ap50_95));
        }
        for r in &self.per_snr {
            kv.set(&format!("map_50.snr{}", r.snr_db), format!("{:.4}", r.map_50));
            kv.set(&format!("f1.snr{}", r.snr_db), format!("{:.4}", r.f1));
        }
        kv
    }

    /// `snr_db,scenes,map_50,map_50_95,f1`.
    pub fn snr_csv(&self) -> String {
        let mut s = String::from("snr_db,scenes,map_50,map_50_95,f1\n");
        for r in &self.per_snr {
            writeln!(s, "{},{},{:.4},{:.4},{:.4}", r.snr_db, r.scenes, r.map_50, r.map_50_95, r.f1).unwrap();
        }
        s
    }

    /// Human-readable table; `names` maps class ids to labels.
    pub fn to_table(&self, names: &dyn Fn(usize) -> String) -> String {
        let op = &self.operating_point;
        let mut s = String::new();
        writeln!(s, "scenes: {}", self.scenes).unwrap();
        writeln!(
            s,
            "F1 operating point: confidence >= {:.4} (maximises micro F1 at IoU 0.5)",
            op.threshold
        )
        .unwrap();
        writeln!(s, "mAP50:95 {:6.2}%   mAP50 {:6.2}%   F1 {:.4} (macro {:.4})", self.map_50_95, self.map_50, self.f1, self.f1_macro)
            .unwrap();
        writeln!(s, "TP {}  FP {}  FN {}", op.tp, op.fp, op.fn_).unwrap();
        writeln!(s, "\n{:<10} {:>6} {:>8} {:>8}", "class", "gts", "AP50", "AP50:95").unwrap();
        for c in &self.per_class {
            writeln!(s, "{:<10} {:>6} {:>8.4} {:>8.4}", names(c.class_id), c.n_gt, c.ap50, c.ap50_95).unwrap();
        }
        writeln!(s, "\n{:>8} {:>7} {:>8} {:>9} {:>7}", "SNR dB", "scenes", "mAP50", "mAP50:95", "F1").unwrap();
        for r in &self.per_snr {
            writeln!(s, "{:>8.1} {:>7} {:>8.2} {:>9.2} {:>7.4}", r.snr_db, r.scenes, r.map_50, r.map_50_95, r.f1).unwrap();
        }
        s
    }
}
