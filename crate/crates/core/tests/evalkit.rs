use hifi_core::detect::{BBox, Detection};
use hifi_core::evalkit::{average_precision, evaluate, f1_at, match_scene, SceneEval};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn det(class_id: usize, score: f64, bbox: BBox) -> Detection {
    Detection { bbox, class_id, score }
}

/// Max precision over ranks reaching each recall level, rank by rank.
fn brute_force_ap(hits: &[bool], n_gt: usize) -> f64 {
    let mut points = Vec::new();
    for k in 1..=hits.len() {
        let tp = hits[..k].iter().filter(|h| **h).count();
        points.push((tp as f64 / n_gt as f64, tp as f64 / k as f64));
    }
    (0..=100)
        .map(|i| {
            let r = i as f64 / 100.0;
            points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 101.0
}

#[test]
fn ap_edge_cases() {
    assert_eq!(average_precision(&[(0.9, true), (0.8, true)], 2), Some(1.0));
    assert_eq!(average_precision(&[], 3), Some(0.0));
    assert_eq!(average_precision(&[], 0), None);
    assert_eq!(average_precision(&[(0.5, false)], 0), None);
}

#[test]
fn ap_matches_rank_by_rank_oracle() {
    // 3 gts, ranks: TP FP TP FP TP
    let hits = [true, false, true, false, true];
    let ranked: Vec<(f64, bool)> = hits.iter().enumerate().map(|(i, h)| (1.0 - 0.1 * i as f64, *h)).collect();
    let ap = average_precision(&ranked, 3).unwrap();
    assert!((ap - brute_force_ap(&hits, 3)).abs() < 1e-12);
    // closed form: recall 1/3 at P=1 (34 levels), 2/3 at 2/3 (33), 1 at 3/5 (34)
    let expected = (34.0 + 33.0 * 2.0 / 3.0 + 34.0 * 0.6) / 101.0;
    assert!((ap - expected).abs() < 1e-12);

    for seed in 0..200 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_gt = rng.random_range(1..8);
        let mut budget = n_gt;
        let hits: Vec<bool> = (0..rng.random_range(0..12))
            .map(|_| {
                let h = budget > 0 && rng.random_bool(0.5);
                budget -= usize::from(h);
                h
            })
            .collect();
        let ranked: Vec<(f64, bool)> = hits.iter().enumerate().map(|(i, h)| (100.0 - i as f64, *h)).collect();
        let ap = average_precision(&ranked, n_gt).unwrap();
        assert!((ap - brute_force_ap(&hits, n_gt)).abs() < 1e-12, "seed {seed}");
    }
}

#[test]
fn matching_is_greedy_by_score() {
    let g = BBox::new(0.5, 0.5, 0.2, 0.2);
    let near = BBox::new(0.51, 0.5, 0.2, 0.2);
    let tp = match_scene(&[(0.4, g), (0.9, near)], &[g], 0.5);
    assert_eq!(tp, vec![false, true]);
}

fn shifted(b: BBox, target_iou: f64) -> BBox {
    let dx = b.w * (1.0 - target_iou) / (1.0 + target_iou);
    BBox::new(b.cx + dx, b.cy, b.w, b.h)
}

fn fixture() -> Vec<SceneEval> {
    let a1 = BBox::new(0.2, 0.2, 0.1, 0.3);
    let b1 = BBox::new(0.7, 0.6, 0.2, 0.2);
    let a2 = BBox::new(0.4, 0.5, 0.15, 0.4);
    let a4 = BBox::new(0.6, 0.3, 0.1, 0.1);
    let b3 = BBox::new(0.5, 0.5, 0.2, 0.3);
    vec![
        SceneEval { id: 1, snr_db: 0.0, gts: vec![(0, a1), (1, b1)], dets: vec![det(0, 0.9, a1), det(1, 0.6, b1)] },
        SceneEval {
            id: 2,
            snr_db: 0.0,
            gts: vec![(0, a2)],
            dets: vec![det(0, 0.8, BBox::new(0.9, 0.9, 0.05, 0.05)), det(0, 0.3, a2)],
        },
        SceneEval {
            id: 3,
            snr_db: 10.0,
            gts: vec![(1, b3)],
            dets: vec![det(1, 0.7, shifted(b3, 0.62)), det(0, 0.5, BBox::new(0.1, 0.9, 0.05, 0.05))],
        },
        SceneEval { id: 4, snr_db: 10.0, gts: vec![(0, a4)], dets: vec![] },
    ]
}

#[test]
fn handcrafted_fixture() {
    let scenes = fixture();
    assert!((scenes[2].dets[0].bbox.iou(&scenes[2].gts[0].1) - 0.62).abs() < 1e-12);
    let r = evaluate(&scenes, 2);

    // class 0: T F F T over 3 gts -> envelope 1 (34 levels), 1/2 (33 levels)
    let ap0 = (34.0 + 33.0 * 0.5) / 101.0;
    // class 1: both hits up to IoU 0.6; above, the first is a miss -> 1/2 up to recall 1/2
    let ap1_50 = 1.0;
    let ap1_strict = 51.0 * 0.5 / 101.0;
    let ap1_5095 = (3.0 * ap1_50 + 7.0 * ap1_strict) / 10.0;
    assert_eq!(r.per_class.len(), 2);
    assert!((r.per_class[0].ap50 - ap0).abs() < 1e-12);
    assert!((r.per_class[0].ap50_95 - ap0).abs() < 1e-12);
    assert!((r.per_class[1].ap50 - ap1_50).abs() < 1e-12);
    assert!((r.per_class[1].ap50_95 - ap1_5095).abs() < 1e-12);
    assert!((r.map_50 - 100.0 * (ap0 + ap1_50) / 2.0).abs() < 1e-9);
    assert!((r.map_50_95 - 100.0 * (ap0 + ap1_5095) / 2.0).abs() < 1e-9);

    // pooled ranking T F T T F T over 5 gts; best F1 = 8/11 at 0.3
    assert!((r.f1 - 8.0 / 11.0).abs() < 1e-12);
    assert_eq!(r.operating_point.threshold, 0.3);
    assert_eq!((r.operating_point.tp, r.operating_point.fp, r.operating_point.fn_), (4, 2, 1));
    assert!((r.f1_macro - (4.0 / 7.0 + 1.0) / 2.0).abs() < 1e-12);

    assert_eq!(r.per_snr.len(), 2);
    let low = &r.per_snr[0];
    assert_eq!((low.snr_db, low.scenes), (0.0, 2));
    let ap0_low = (51.0 + 50.0 * 2.0 / 3.0) / 101.0;
    assert!((low.map_50 - 100.0 * (ap0_low + 1.0) / 2.0).abs() < 1e-9);
    assert!((low.f1 - 6.0 / 7.0).abs() < 1e-12);
    let high = &r.per_snr[1];
    assert!((high.map_50 - 50.0).abs() < 1e-9);
    assert!((high.f1 - 0.5).abs() < 1e-12);

    let kv = r.to_kv();
    assert_eq!(kv.get("tp"), Some("4"));
    assert!(r.snr_csv().starts_with("snr_db,scenes,map_50,map_50_95,f1\n0,2,"));
    assert!(r.to_table(&|c| format!("c{c}")).contains("maximises micro F1"));
}

#[test]
fn oracle_detector_scores_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let scenes: Vec<SceneEval> = (0..10)
        .map(|i| {
            let gts: Vec<(usize, BBox)> = (0..4)
                .map(|k| (rng.random_range(0..3), BBox::new(0.1 + 0.2 * k as f64, rng.random_range(0.2..0.8), 0.1, 0.2)))
                .collect();
            SceneEval { id: i, snr_db: (i % 3) as f64, dets: gts.iter().map(|g| det(g.0, 1.0, g.1)).collect(), gts }
        })
        .collect();
    let r = evaluate(&scenes, 3);
    assert_eq!(r.map_50_95, 100.0);
    assert_eq!(r.map_50, 100.0);
    assert_eq!(r.f1, 1.0);
}

#[test]
fn scene_order_does_not_matter() {
    let mut scenes = fixture();
    let r = evaluate(&scenes, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        scenes.shuffle(&mut rng);
        assert_eq!(evaluate(&scenes, 2), r);
    }
}

fn random_scenes(seed: u64) -> Vec<SceneEval> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..6)
        .map(|i| {
            let gts: Vec<(usize, BBox)> = (0..rng.random_range(0..4))
                .map(|_| (rng.random_range(0..2), BBox::new(rng.random(), rng.random(), 0.2, 0.2)))
                .collect();
            let mut dets = Vec::new();
            for g in &gts {
                if rng.random_bool(0.7) {
                    let j = BBox::new(g.1.cx + rng.random_range(-0.05..0.05), g.1.cy + rng.random_range(-0.05..0.05), 0.2, 0.2);
                    dets.push(det(if rng.random_bool(0.8) { g.0 } else { 1 - g.0 }, rng.random(), j));
                }
            }
            for _ in 0..rng.random_range(0..3) {
                dets.push(det(rng.random_range(0..2), rng.random(), BBox::new(rng.random(), rng.random(), 0.1, 0.1)));
            }
            SceneEval { id: i, snr_db: (i % 2) as f64 * 5.0, dets, gts }
        })
        .collect()
}

proptest! {
    #[test]
    fn report_invariants(seed in 0u64..5000) {
        let scenes = random_scenes(seed);
        let r = evaluate(&scenes, 2);
        prop_assert!(0.0 <= r.map_50_95 && r.map_50_95 <= r.map_50 + 1e-9 && r.map_50 <= 100.0);
        prop_assert!((0.0..=1.0).contains(&r.f1));
        prop_assert!(r.f1 + 1e-12 >= f1_at(&scenes, 2, 0.25).f1);
    }

    #[test]
    fn zero_score_false_positive_is_harmless(seed in 0u64..5000) {
        let scenes = random_scenes(seed);
        let before = evaluate(&scenes, 2);
        let mut more = scenes.clone();
        more[0].dets.push(det(0, 0.0, BBox::new(0.5, 0.5, 0.3, 0.3)));
        let after = evaluate(&more, 2);
        for (a, b) in before.per_class.iter().zip(&after.per_class) {
            prop_assert!((a.ap50 - b.ap50).abs() <= 1.0 / 101.0 + 1e-12);
        }
    }
}
