use hifi_core::detect::{
    assign_targets, decode, decode_and_nms, decode_box, detection_loss, encode_box, format_detections, iou, nms,
    parse_detections, Anchors, BBox, Detection, LossConfig, ScaleOutput,
};
use hifi_core::nncore::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(
        rng.random_range(0.05..0.95),
        rng.random_range(0.05..0.95),
        rng.random_range(0.02..0.4),
        rng.random_range(0.02..0.4),
    )
}

#[test]
fn iou_examples() {
    let a = BBox::from_corners(0.0, 0.0, 2.0, 2.0);
    let b = BBox::from_corners(1.0, 1.0, 3.0, 3.0);
    assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
    assert_eq!(iou(&a, &a), 1.0);
    let far = BBox::from_corners(5.0, 5.0, 6.0, 6.0);
    assert_eq!(iou(&a, &far), 0.0);
}

proptest! {
    #[test]
    fn iou_is_symmetric(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        prop_assert_eq!(iou(&a, &b), iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&iou(&a, &b)));
    }
}

/// Only the middle anchor of the middle scale is anywhere near 0.1 × 0.1.
fn isolated_anchors() -> Anchors {
    Anchors {
        scales: vec![
            vec![(0.001, 0.001), (0.002, 0.002), (0.003, 0.003)],
            vec![(0.004, 0.004), (0.1, 0.1), (0.9, 0.005)],
            vec![(0.005, 0.9), (0.95, 0.95), (0.99, 0.99)],
        ],
    }
}

#[test]
fn centred_box_gets_three_cells() {
    let grids = [16, 8, 4];
    // centre of cell (3, 5) on the 8-grid
    let b = BBox::new(3.5 / 8.0, 5.5 / 8.0, 0.1, 0.1);
    let t = assign_targets(&[(2, b)], &isolated_anchors(), &grids);
    assert_eq!(t.warnings, 0);
    assert_eq!(t.num_positives(), 3);
    // oracle: own cell plus the neighbour on the far side of each half
    let cells: Vec<(usize, usize)> = t.scales[1].positives.iter().map(|p| (p.cell_x, p.cell_y)).collect();
    assert_eq!(cells, vec![(3, 5), (4, 5), (3, 6)]);
    assert!(t.scales[1].positives.iter().all(|p| p.anchor == 1 && p.class_id == 2));
    assert_eq!(t.scales[1].objectness.iter().filter(|v| **v == 1.0).count(), 3);

    let nudged = BBox::new(3.2 / 8.0, 5.8 / 8.0, 0.1, 0.1);
    let t = assign_targets(&[(0, nudged)], &isolated_anchors(), &grids);
    let cells: Vec<(usize, usize)> = t.scales[1].positives.iter().map(|p| (p.cell_x, p.cell_y)).collect();
    assert_eq!(cells, vec![(3, 5), (2, 5), (3, 6)]);
}

#[test]
fn empty_and_oversized_ground_truth() {
    let anchors = Anchors::default();
    let t = assign_targets(&[], &anchors, &[20, 10, 5]);
    assert_eq!(t.num_positives(), 0);
    assert!(t.scales.iter().all(|s| s.objectness.iter().all(|v| *v == 0.0)));

    let small = Anchors { scales: vec![vec![(0.01, 0.01); 3]; 3] };
    let t = assign_targets(&[(0, BBox::new(0.5, 0.5, 0.5, 0.5))], &small, &[20, 10, 5]);
    assert_eq!(t.num_positives(), 0);
    assert_eq!(t.warnings, 1);

    let t = assign_targets(&[(0, BBox::new(0.5, 0.5, 0.0, 0.1))], &small, &[20, 10, 5]);
    assert_eq!(t.warnings, 1);
}

#[test]
fn encode_decode_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let anchors = Anchors::default();
    let grids = [20, 10, 5];
    let mut checked = 0;
    for _ in 0..200 {
        let b = random_box(&mut rng);
        let t = assign_targets(&[(0, b)], &anchors, &grids);
        for (s, st) in t.scales.iter().enumerate() {
            for p in &st.positives {
                let a = anchors.scales[s][p.anchor];
                let logits = encode_box(&b, a, p.cell_x, p.cell_y, st.grid).expect("assigned boxes are reachable");
                let d = decode_box(logits, a, p.cell_x, p.cell_y, st.grid);
                assert!((d.cx - b.cx).abs() < 1e-5 && (d.cy - b.cy).abs() < 1e-5);
                assert!((d.w - b.w).abs() < 1e-5 && (d.h - b.h).abs() < 1e-5);
                checked += 1;
            }
        }
    }
    assert!(checked > 200);
}

fn saturated_predictions(
    gt: &[(usize, BBox)],
    anchors: &Anchors,
    grids: &[usize],
    nc: usize,
) -> Vec<(Tensor<f64>, Tensor<f64>)> {
    let t = assign_targets(gt, anchors, grids);
    let na = anchors.per_scale();
    t.scales
        .iter()
        .enumerate()
        .map(|(s, st)| {
            let n = st.grid;
            let nn = n * n;
            let mut reg = vec![0.0; na * 5 * nn];
            let mut cls = vec![-30.0; na * nc * nn];
            for a in 0..na {
                for c in 0..nn {
                    reg[(a * 5 + 4) * nn + c] = -30.0;
                }
            }
            for p in &st.positives {
                let cell = p.cell_y * n + p.cell_x;
                let b = gt[0].1;
                let e = encode_box(&b, anchors.scales[s][p.anchor], p.cell_x, p.cell_y, n).unwrap();
                for k in 0..4 {
                    reg[(p.anchor * 5 + k) * nn + cell] = e[k];
                }
                reg[(p.anchor * 5 + 4) * nn + cell] = 30.0;
                cls[(p.anchor * nc + p.class_id) * nn + cell] = 30.0;
            }
            (Tensor::new(&[na * 5, n, n], reg).unwrap(), Tensor::new(&[na * nc, n, n], cls).unwrap())
        })
        .collect()
}

#[test]
fn perfect_predictions_have_tiny_loss() {
    let anchors = Anchors::default();
    let grids = [20, 10, 5];
    let gt = vec![(4, BBox::new(0.41, 0.63, 0.12, 0.3))];
    let preds = saturated_predictions(&gt, &anchors, &grids, 14);
    let targets = assign_targets(&gt, &anchors, &grids);
    let mut g = Graph::<f64>::new();
    let outs: Vec<ScaleOutput> =
        preds.iter().map(|(r, c)| ScaleOutput { reg: g.input(r.clone()), cls: g.input(c.clone()) }).collect();
    let l = detection_loss(&mut g, &outs, &targets, &anchors, 14, &LossConfig::default()).unwrap();
    assert!(targets.num_positives() > 0);
    assert!(l.parts.total < 1e-3, "{:?}", l.parts);

    // and decoding recovers the box
    let refs: Vec<(&Tensor<f64>, &Tensor<f64>)> = preds.iter().map(|(r, c)| (r, c)).collect();
    let dets = decode_and_nms(&refs, &anchors, 0.25, 0.45).unwrap();
    assert_eq!(dets.len(), 1);
    assert_eq!(dets[0].class_id, 4);
    assert!(dets[0].bbox.iou(&gt[0].1) > 0.999);
}

#[test]
fn zero_logits_on_empty_scene() {
    let anchors = Anchors::default();
    let grids = [8, 4, 2];
    let targets = assign_targets(&[], &anchors, &grids);
    let mut g = Graph::<f64>::new();
    let outs: Vec<ScaleOutput> = grids
        .iter()
        .map(|&n| ScaleOutput { reg: g.input(Tensor::zeros(&[15, n, n])), cls: g.input(Tensor::zeros(&[42, n, n])) })
        .collect();
    let l = detection_loss(&mut g, &outs, &targets, &anchors, 14, &LossConfig::default()).unwrap();
    for s in &l.parts.per_scale {
        assert!((s.obj_loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(s.box_loss, 0.0);
        assert_eq!(s.cls_loss, 0.0);
    }
    let expected = std::f64::consts::LN_2 * (4.0 + 1.0 + 0.4);
    assert!((l.parts.total - expected).abs() < 1e-12);
}

#[test]
fn ciou_of_identical_boxes_is_one() {
    let mut g = Graph::<f64>::new();
    let v = |g: &mut Graph<f64>, x: f64| g.input(Tensor::new(&[1], vec![x]).unwrap());
    let p = [v(&mut g, 2.0), v(&mut g, 3.0), v(&mut g, 1.5), v(&mut g, 0.5)];
    let c = hifi_core::detect::ciou(&mut g, p, [&[2.0], &[3.0], &[1.5], &[0.5]]).unwrap();
    assert!((g.value(c).data()[0] - 1.0).abs() < 1e-6);
    // disjoint boxes: IoU 0, centre penalty only
    let q = [v(&mut g, 0.0), v(&mut g, 0.0), v(&mut g, 1.0), v(&mut g, 1.0)];
    let c = hifi_core::detect::ciou(&mut g, q, [&[3.0], &[0.0], &[1.0], &[1.0]]).unwrap();
    // enclosing box 4 × 1, diagonal² 17, centre distance² 9
    assert!((g.value(c).data()[0] + 9.0 / 17.0).abs() < 1e-6);
}

#[test]
fn nms_examples() {
    let b = BBox::new(0.5, 0.5, 0.2, 0.2);
    let d = |class_id, score| Detection { bbox: b, class_id, score };
    assert_eq!(nms(vec![d(1, 0.9), d(1, 0.8)], 0.45), vec![d(1, 0.9)]);
    assert_eq!(nms(vec![d(1, 0.9), d(2, 0.8)], 0.45).len(), 2);
}

/// Textbook O(n²) greedy suppression.
fn brute_force_nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut alive = vec![true; dets.len()];
    let mut out = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..dets.len() {
            if alive[i] && best.is_none_or(|b| dets[i].score > dets[b].score) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        alive[b] = false;
        out.push(dets[b]);
        for j in 0..dets.len() {
            if alive[j] && dets[j].class_id == dets[b].class_id && dets[j].bbox.iou(&dets[b].bbox) >= thr {
                alive[j] = false;
            }
        }
    }
    out
}

#[test]
fn nms_matches_brute_force() {
    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dets: Vec<Detection> = (0..50)
            .map(|_| Detection { bbox: random_box(&mut rng), class_id: rng.random_range(0..3), score: rng.random() })
            .collect();
        let thr = rng.random_range(0.1..0.9);
        let fast = nms(dets.clone(), thr);
        assert_eq!(fast, brute_force_nms(&dets, thr), "seed {seed}");
        for (i, a) in fast.iter().enumerate() {
            assert!(dets.contains(a));
            for b in &fast[i + 1..] {
                assert!(a.class_id != b.class_id || a.bbox.iou(&b.bbox) < thr);
            }
        }
    }
}

#[test]
fn decode_filters_by_score() {
    let anchors = Anchors::default();
    let mut reg = Tensor::<f32>::zeros(&[15, 2, 2]);
    let cls = Tensor::<f32>::zeros(&[6, 2, 2]);
    // every objectness at sigmoid(0) = 0.5, class prob 0.5 -> score 0.25
    let all = decode(&[(&reg, &cls)], &Anchors { scales: vec![anchors.scales[0].clone()] }, 0.25).unwrap();
    assert_eq!(all.len(), 12);
    reg.data_mut()[4 * 4] = -5.0;
    let fewer = decode(&[(&reg, &cls)], &Anchors { scales: vec![anchors.scales[0].clone()] }, 0.25).unwrap();
    assert_eq!(fewer.len(), 11);
    assert!(decode_and_nms(&[(&reg, &cls)], &anchors, 1.0, 0.5).is_err());
}

#[test]
fn detection_text_round_trip() {
    let dets = vec![
        Detection { bbox: BBox::new(0.5, 0.25, 0.1, 0.2), class_id: 3, score: 0.875 },
        Detection { bbox: BBox::new(0.125, 0.75, 0.05, 0.5), class_id: 13, score: 0.5 },
    ];
    let text = format_detections(&dets);
    assert!(text.starts_with("3 0.875000 0.500000 0.250000 0.100000 0.200000\n"));
    assert_eq!(parse_detections(&text).unwrap(), dets);
    assert!(parse_detections("1 2 3").is_err());
}
