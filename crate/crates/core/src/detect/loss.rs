use crate::error::{Error, Result};
use crate::nncore::{Graph, Real, Tensor, Var};

use super::assign::Targets;
use super::Anchors;

const EPS: f64 = 1e-7;

/// Raw head output of one scale.
#[derive(Clone, Copy, Debug)]
pub struct ScaleOutput {
    /// `[A·5, H, W]`: per anchor `tx, ty, tw, th, objectness`.
    pub reg: Var,
    /// `[A·num_classes, H, W]`.
    pub cls: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub box_weight: f64,
    pub obj_weight: f64,
    pub cls_weight: f64,
    /// Objectness weight per scale, finest first.
    pub balance: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { box_weight: 0.05, obj_weight: 1.0, cls_weight: 0.5, balance: vec![4.0, 1.0, 0.4] }
    }
}

impl LossConfig {
    /// Default gains rescaled for the model: objectness by the squared
    /// input size relative to 640, classification by `num_classes / 80`, and
    /// all three by `3 / num_scales`.
    pub fn scaled(num_classes: usize, input_size: usize, num_scales: usize) -> Self {
        let base = Self::default();
        let per_scale = 3.0 / num_scales as f64;
        let size = input_size as f64 / 640.0;
        LossConfig {
            box_weight: base.box_weight * per_scale,
            obj_weight: base.obj_weight * size * size * per_scale,
            cls_weight: base.cls_weight * num_classes as f64 / 80.0 * per_scale,
            balance: base.balance,
        }
    }
}

/// Unweighted loss components of one scale.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScaleLoss {
    pub box_loss: f64,
    pub obj_loss: f64,
    pub cls_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossParts {
    pub per_scale: Vec<ScaleLoss>,
    pub total: f64,
}

impl LossParts {
    pub fn box_loss(&self) -> f64 {
        self.per_scale.iter().map(|s| s.box_loss).sum()
    }

    pub fn obj_loss(&self) -> f64 {
        self.per_scale.iter().map(|s| s.obj_loss).sum()
    }

    pub fn cls_loss(&self) -> f64 {
        self.per_scale.iter().map(|s| s.cls_loss).sum()
    }
}

pub struct LossOutput {
    pub total: Var,
    pub parts: LossParts,
}

fn constant<F: Real>(g: &mut Graph<'_, F>, v: &[f64]) -> Var {
    g.constant(Tensor::new(&[v.len()], v.iter().map(|&x| F::of(x)).collect()).expect("rank 1"))
}

/// Complete-IoU per element of predicted and target `(cx, cy, w, h)`
/// vectors.
pub fn ciou<F: Real>(g: &mut Graph<'_, F>, pred: [Var; 4], target: [&[f64]; 4]) -> Result<Var> {
    let [px, py, pw, ph] = pred;
    let n = target[0].len();
    let tcorner = |c: &[f64], s: &[f64], sign: f64| -> Vec<f64> { (0..n).map(|i| c[i] + sign * 0.5 * s[i]).collect() };
    let (tx1, tx2) = (tcorner(target[0], target[2], -1.0), tcorner(target[0], target[2], 1.0));
    let (ty1, ty2) = (tcorner(target[1], target[3], -1.0), tcorner(target[1], target[3], 1.0));
    let (tx1, tx2, ty1, ty2) = (constant(g, &tx1), constant(g, &tx2), constant(g, &ty1), constant(g, &ty2));
    let (tcx, tcy) = (constant(g, target[0]), constant(g, target[1]));

    let hw = g.scale(pw, 0.5);
    let hh = g.scale(ph, 0.5);
    let px1 = g.sub(px, hw)?;
    let px2 = g.add(px, hw)?;
    let py1 = g.sub(py, hh)?;
    let py2 = g.add(py, hh)?;

    let ix2 = g.minimum(px2, tx2)?;
    let ix1 = g.maximum(px1, tx1)?;
    let iw = g.sub(ix2, ix1)?;
    let iw = g.clamp_min(iw, 0.0);
    let iy2 = g.minimum(py2, ty2)?;
    let iy1 = g.maximum(py1, ty1)?;
    let ih = g.sub(iy2, iy1)?;
    let ih = g.clamp_min(ih, 0.0);
    let inter = g.mul(iw, ih)?;
    let parea = g.mul(pw, ph)?;
    let tarea: Vec<f64> = (0..n).map(|i| target[2][i] * target[3][i] + EPS).collect();
    let tarea = constant(g, &tarea);
    let union = g.add(parea, tarea)?;
    let union = g.sub(union, inter)?;
    let iou = g.div(inter, union)?;

    let ex2 = g.maximum(px2, tx2)?;
    let ex1 = g.minimum(px1, tx1)?;
    let cw = g.sub(ex2, ex1)?;
    let ey2 = g.maximum(py2, ty2)?;
    let ey1 = g.minimum(py1, ty1)?;
    let ch = g.sub(ey2, ey1)?;
    let cw2 = g.square(cw);
    let ch2 = g.square(ch);
    let c2 = g.add(cw2, ch2)?;
    let c2 = g.affine(c2, 1.0, EPS);
    let dx = g.sub(px, tcx)?;
    let dy = g.sub(py, tcy)?;
    let dx2 = g.square(dx);
    let dy2 = g.square(dy);
    let rho2 = g.add(dx2, dy2)?;
    let dist = g.div(rho2, c2)?;

    let ph_eps = g.affine(ph, 1.0, EPS);
    let ratio = g.div(pw, ph_eps)?;
    let pa = g.atan(ratio);
    let ta: Vec<f64> = (0..n).map(|i| (target[2][i] / (target[3][i] + EPS)).atan()).collect();
    let ta = constant(g, &ta);
    let da = g.sub(ta, pa)?;
    let v = g.square(da);
    let v = g.scale(v, 4.0 / (std::f64::consts::PI * std::f64::consts::PI));
    let denom = g.sub(v, iou)?;
    let denom = g.affine(denom, 1.0, 1.0 + EPS);
    let alpha = g.div(v, denom)?;
    let av = g.mul(v, alpha)?;
    let penalty = g.add(dist, av)?;
    g.sub(iou, penalty)
}

/// Box (CIoU), objectness and classification loss of one scene.
pub fn detection_loss<F: Real>(
    g: &mut Graph<'_, F>,
    preds: &[ScaleOutput],
    targets: &Targets,
    anchors: &Anchors,
    num_classes: usize,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    if preds.len() != targets.scales.len() || preds.len() != anchors.scales.len() || cfg.balance.len() < preds.len() {
        return Err(Error::Shape(format!(
            "{} prediction scales, {} target scales, {} anchor scales, {} balance weights",
            preds.len(),
            targets.scales.len(),
            anchors.scales.len(),
            cfg.balance.len()
        )));
    }
    let na = anchors.per_scale();
    let mut terms = Vec::new();
    let mut per_scale = Vec::with_capacity(preds.len());
    for (s, ((out, st), scale_anchors)) in preds.iter().zip(&targets.scales).zip(&anchors.scales).enumerate() {
        let n = st.grid;
        let nn = n * n;
        let expect_reg = [na * 5, n, n];
        let expect_cls = [na * num_classes, n, n];
        if g.shape(out.reg) != expect_reg || g.shape(out.cls) != expect_cls {
            return Err(Error::Shape(format!(
                "scale {s}: predictions {:?}/{:?}, expected {expect_reg:?}/{expect_cls:?}",
                g.shape(out.reg),
                g.shape(out.cls)
            )));
        }
        let mut sl = ScaleLoss::default();

        let obj_idx: Vec<usize> = (0..na).flat_map(|a| ((a * 5 + 4) * nn)..((a * 5 + 5) * nn)).collect();
        let obj_logits = g.gather(out.reg, obj_idx)?;
        let obj_targets = st.objectness.iter().map(|&v| F::of(v)).collect();
        let obj = g.bce_with_logits(obj_logits, obj_targets)?;
        sl.obj_loss = g.value(obj).item().f64();
        terms.push(g.scale(obj, cfg.obj_weight * cfg.balance[s]));

        if !st.positives.is_empty() {
            let cell = |p: &super::Positive| p.cell_y * n + p.cell_x;
            let pick = |k: usize| -> Vec<usize> { st.positives.iter().map(|p| (p.anchor * 5 + k) * nn + cell(p)).collect() };
            let t: Vec<Var> = (0..4).map(|k| g.gather(out.reg, pick(k))).collect::<Result<_>>()?;
            let sx = g.sigmoid(t[0]);
            let px = g.affine(sx, 2.0, -0.5);
            let sy = g.sigmoid(t[1]);
            let py = g.affine(sy, 2.0, -0.5);
            let aw: Vec<f64> = st.positives.iter().map(|p| scale_anchors[p.anchor].0 * n as f64).collect();
            let ah: Vec<f64> = st.positives.iter().map(|p| scale_anchors[p.anchor].1 * n as f64).collect();
            let mut size = |tv: Var, anchor: &[f64]| -> Result<Var> {
                let s = g.sigmoid(tv);
                let s = g.scale(s, 2.0);
                let s = g.square(s);
                let a = constant(g, anchor);
                g.mul(s, a)
            };
            let pw = size(t[2], &aw)?;
            let ph = size(t[3], &ah)?;
            let cols: Vec<Vec<f64>> = (0..4).map(|k| st.positives.iter().map(|p| p.target[k]).collect()).collect();
            let c = ciou(g, [px, py, pw, ph], [&cols[0], &cols[1], &cols[2], &cols[3]])?;
            let m = g.mean(c);
            let boxl = g.affine(m, -1.0, 1.0);
            sl.box_loss = g.value(boxl).item().f64();
            terms.push(g.scale(boxl, cfg.box_weight));

            let cls_idx: Vec<usize> = st
                .positives
                .iter()
                .flat_map(|p| (0..num_classes).map(move |c| (p.anchor * num_classes + c) * nn + cell(p)))
                .collect();
            let cls_targets: Vec<F> = st
                .positives
                .iter()
                .flat_map(|p| (0..num_classes).map(move |c| if c == p.class_id { F::one() } else { F::zero() }))
                .collect();
            let cls_logits = g.gather(out.cls, cls_idx)?;
            let cls = g.bce_with_logits(cls_logits, cls_targets)?;
            sl.cls_loss = g.value(cls).item().f64();
            terms.push(g.scale(cls, cfg.cls_weight));
        }
        for (name, v) in [("box", sl.box_loss), ("objectness", sl.obj_loss), ("class", sl.cls_loss)] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} loss at scale {s}")));
            }
        }
        per_scale.push(sl);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    let value = g.value(total).item().f64();
    if !value.is_finite() {
        return Err(Error::NonFinite("total loss".into()));
    }
    Ok(LossOutput { total, parts: LossParts { per_scale, total: value } })
}
