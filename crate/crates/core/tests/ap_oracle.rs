//! Average precision checked against an independent exhaustive reference,
//! plus monotonicity under adding/removing errors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radekit_core::boxes::{iou_bev, Box3D, Detection};
use radekit_core::eval::{average_precision, ApMode, Metric};

/// Exhaustive reference: rank by (score desc, then full coordinate order),
/// greedily match each prediction to the best unmatched ground truth, then
/// integrate precision over recall by direct enumeration of every
/// ground-truth count k — the best precision among prefixes holding at least
/// k true positives contributes 1/n_gt each.
fn reference_ap(preds: &[Detection], gts: &[Box3D], iou_thr: f64) -> f64 {
    let mut ranked: Vec<Detection> = preds.to_vec();
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| {
                let ka = (a.bbox.x, a.bbox.y, a.bbox.z, a.bbox.l, a.bbox.w, a.bbox.h, a.bbox.yaw);
                let kb = (b.bbox.x, b.bbox.y, b.bbox.z, b.bbox.l, b.bbox.w, b.bbox.h, b.bbox.yaw);
                ka.partial_cmp(&kb).unwrap()
            })
    });
    let mut taken = vec![false; gts.len()];
    let mut tp_flags = Vec::with_capacity(ranked.len());
    for p in &ranked {
        let mut best_iou = -1.0;
        let mut best_idx = usize::MAX;
        for (i, g) in gts.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let iou = iou_bev(&p.bbox, g);
            if iou >= iou_thr && iou > best_iou {
                best_iou = iou;
                best_idx = i;
            }
        }
        if best_idx != usize::MAX {
            taken[best_idx] = true;
            tp_flags.push(true);
        } else {
            tp_flags.push(false);
        }
    }

    let n_gt = gts.len();
    let mut ap = 0.0;
    for k in 1..=n_gt {
        // Best precision over every prefix containing at least k true
        // positives.
        let mut best = 0.0;
        let mut tp = 0usize;
        for (i, &t) in tp_flags.iter().enumerate() {
            if t {
                tp += 1;
            }
            if tp >= k {
                let prec = tp as f64 / (i + 1) as f64;
                if prec > best {
                    best = prec;
                }
            }
        }
        ap += best / n_gt as f64;
    }
    ap
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<(u32, Box3D)>) {
    let n_gt = rng.random_range(1..=10);
    let gts: Vec<(u32, Box3D)> = (0..n_gt)
        .map(|i| {
            let b = Box3D::new(
                5.0 + 7.0 * i as f64,
                rng.random_range(-6.0..6.0),
                0.5,
                rng.random_range(3.0..5.0),
                rng.random_range(1.5..2.5),
                1.5,
                rng.random_range(-0.6..0.6),
            )
            .unwrap();
            (1u32, b)
        })
        .collect();
    let n_pred = rng.random_range(0..=10);
    let preds: Vec<Detection> = (0..n_pred)
        .map(|_| {
            let (_, g) = gts[rng.random_range(0..n_gt)];
            let b = Box3D::new(
                g.x + rng.random_range(-2.5..2.5),
                g.y + rng.random_range(-1.5..1.5),
                g.z,
                g.l,
                g.w,
                g.h,
                g.yaw,
            )
            .unwrap();
            Detection::new(1, rng.random_range(0.01..1.0), b).unwrap()
        })
        .collect();
    (preds, gts)
}

#[test]
fn exact_ap_matches_exhaustive_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    for trial in 0..200 {
        let (preds, gts) = random_instance(&mut rng);
        let plain: Vec<Box3D> = gts.iter().map(|(_, b)| *b).collect();
        for thr in [0.3, 0.5] {
            let got = average_precision(&preds, &gts, Metric::Bev, thr, ApMode::Exact).unwrap()[&1];
            let want = reference_ap(&preds, &plain, thr);
            assert!(
                (got - want).abs() < 1e-9,
                "trial {trial} thr {thr}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn perfect_predictions_score_one_in_every_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for _ in 0..20 {
        let n = rng.random_range(1..=8);
        let gts: Vec<(u32, Box3D)> = (0..n)
            .map(|i| {
                let b = Box3D::new(
                    4.0 + 8.0 * i as f64,
                    rng.random_range(-5.0..5.0),
                    0.5,
                    4.0,
                    2.0,
                    1.5,
                    rng.random_range(-1.0..1.0),
                )
                .unwrap();
                (rng.random_range(1..4), b)
            })
            .collect();
        let preds: Vec<Detection> = gts
            .iter()
            .map(|(c, b)| Detection::new(*c, rng.random_range(0.5..1.0), *b).unwrap())
            .collect();
        for metric in [Metric::ThreeD, Metric::Bev] {
            for mode in [ApMode::R40, ApMode::Exact] {
                let aps = average_precision(&preds, &gts, metric, 0.5, mode).unwrap();
                for (class, ap) in aps {
                    assert_eq!(ap, 1.0, "class {class} {metric} {mode:?}");
                }
            }
        }
    }
}

#[test]
fn removing_a_false_positive_never_decreases_ap() {
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    for _ in 0..100 {
        let (preds, gts) = random_instance(&mut rng);
        if preds.is_empty() {
            continue;
        }
        let plain: Vec<Box3D> = gts.iter().map(|(_, b)| *b).collect();
        let base = reference_ap(&preds, &plain, 0.5);
        // Identify one false positive under the greedy match, then drop it.
        let base_main =
            average_precision(&preds, &gts, Metric::Bev, 0.5, ApMode::Exact).unwrap()[&1];
        assert!((base - base_main).abs() < 1e-9);
        let far = Box3D::new(500.0, 0.0, 0.5, 4.0, 2.0, 1.5, 0.0).unwrap();
        let mut with_fp = preds.clone();
        with_fp.push(Detection::new(1, rng.random_range(0.01..1.0), far).unwrap());
        let worse =
            average_precision(&with_fp, &gts, Metric::Bev, 0.5, ApMode::Exact).unwrap()[&1];
        assert!(
            worse <= base_main + 1e-12,
            "adding a false positive raised AP: {worse} > {base_main}"
        );
    }
}

#[test]
fn removing_a_true_positive_never_increases_ap() {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    for _ in 0..100 {
        let (mut preds, gts) = random_instance(&mut rng);
        // Guarantee one unambiguous true positive.
        let (_, g0) = gts[0];
        preds.push(Detection::new(1, 0.995, g0).unwrap());
        let base = average_precision(&preds, &gts, Metric::Bev, 0.5, ApMode::Exact).unwrap()[&1];
        let without: Vec<Detection> = preds[..preds.len() - 1].to_vec();
        let less = average_precision(&without, &gts, Metric::Bev, 0.5, ApMode::Exact).unwrap()[&1];
        assert!(
            less <= base + 1e-12,
            "dropping a true positive raised AP: {less} > {base}"
        );
    }
}
