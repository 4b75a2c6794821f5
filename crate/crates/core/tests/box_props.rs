//! Property tests for rotated-box overlap, non-maxima suppression, and the
//! target-encode/decode round trip.

use ndarray::Array3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radekit_core::boxes::{
    decode, detection_order, iou_3d, iou_bev, nms, Box3D, Detection,
};
use radekit_core::losses::build_targets;
use radekit_core::tensor::SensorGeometry;

fn box_strategy() -> impl Strategy<Value = Box3D> {
    (
        -30.0..30.0f64,
        -30.0..30.0f64,
        -2.0..2.0f64,
        0.5..8.0f64,
        0.5..8.0f64,
        0.5..4.0f64,
        -3.1..3.1f64,
    )
        .prop_map(|(x, y, z, l, w, h, yaw)| Box3D::new(x, y, z, l, w, h, yaw).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn iou_is_symmetric_and_bounded(a in box_strategy(), b in box_strategy()) {
        for f in [iou_bev, iou_3d] {
            let ab = f(&a, &b);
            let ba = f(&b, &a);
            prop_assert!((ab - ba).abs() <= 1e-12, "{ab} vs {ba}");
            prop_assert!((0.0..=1.0 + 1e-9).contains(&ab));
        }
    }

    #[test]
    fn iou_of_a_box_with_itself_is_one(a in box_strategy()) {
        prop_assert!((iou_bev(&a, &a) - 1.0).abs() <= 1e-9);
        prop_assert!((iou_3d(&a, &a) - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn iou_is_translation_invariant(
        a in box_strategy(),
        b in box_strategy(),
        tx in -20.0..20.0f64,
        ty in -20.0..20.0f64,
    ) {
        let shift = |c: &Box3D| Box3D::new(c.x + tx, c.y + ty, c.z, c.l, c.w, c.h, c.yaw).unwrap();
        prop_assert!((iou_bev(&a, &b) - iou_bev(&shift(&a), &shift(&b))).abs() <= 1e-9);
        prop_assert!((iou_3d(&a, &b) - iou_3d(&shift(&a), &shift(&b))).abs() <= 1e-9);
    }

    #[test]
    fn distant_boxes_do_not_overlap(a in box_strategy(), b in box_strategy()) {
        let far = Box3D::new(b.x + 200.0, b.y, b.z, b.l, b.w, b.h, b.yaw).unwrap();
        prop_assert_eq!(iou_bev(&a, &far), 0.0);
        prop_assert_eq!(iou_3d(&a, &far), 0.0);
    }

    #[test]
    fn vertically_disjoint_boxes_have_zero_volume_overlap(a in box_strategy()) {
        let above = Box3D::new(a.x, a.y, a.z + a.h + 1.0, a.l, a.w, a.h, a.yaw).unwrap();
        prop_assert_eq!(iou_3d(&a, &above), 0.0);
        // Their footprints still coincide.
        prop_assert!((iou_bev(&a, &above) - 1.0).abs() <= 1e-9);
    }
}

/// Independent suppression reference: mark each ranked detection suppressed
/// when any earlier unsuppressed detection of the same class overlaps it at
/// or above the threshold, then collect the survivors.
fn nms_reference(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut ranked: Vec<Detection> = detections.to_vec();
    ranked.sort_by(detection_order);
    let n = ranked.len();
    let mut suppressed = vec![false; n];
    for i in 0..n {
        if suppressed[i] {
            continue;
        }
        for j in (i + 1)..n {
            if suppressed[j] || ranked[j].class_id != ranked[i].class_id {
                continue;
            }
            if iou_bev(&ranked[i].bbox, &ranked[j].bbox) >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    ranked
        .into_iter()
        .zip(suppressed)
        .filter(|(_, s)| !s)
        .map(|(d, _)| d)
        .collect()
}

fn random_cluster(rng: &mut ChaCha8Rng, n: usize) -> Vec<Detection> {
    // A handful of cluster centers so suppression actually triggers.
    let centers: Vec<(f64, f64)> = (0..6)
        .map(|_| (rng.random_range(5.0..60.0), rng.random_range(-8.0..8.0)))
        .collect();
    (0..n)
        .map(|_| {
            let (cx, cy) = centers[rng.random_range(0..centers.len())];
            let b = Box3D::new(
                cx + rng.random_range(-1.5..1.5),
                cy + rng.random_range(-1.5..1.5),
                rng.random_range(-0.5..1.5),
                rng.random_range(2.0..5.0),
                rng.random_range(1.0..3.0),
                rng.random_range(1.0..2.5),
                rng.random_range(-3.0..3.0),
            )
            .unwrap();
            Detection::new(rng.random_range(1..4), rng.random_range(0.01..1.0), b).unwrap()
        })
        .collect()
}

#[test]
fn nms_agrees_with_reference_on_random_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for trial in 0..50 {
        let n = rng.random_range(1..120);
        let dets = random_cluster(&mut rng, n);
        for thr in [0.1, 0.3, 0.5] {
            let got = nms(&dets, thr);
            let want = nms_reference(&dets, thr);
            assert_eq!(got, want, "trial {trial} thr {thr}");
            // Survivors of one class never overlap at or above the threshold.
            for i in 0..got.len() {
                for j in (i + 1)..got.len() {
                    if got[i].class_id == got[j].class_id {
                        assert!(iou_bev(&got[i].bbox, &got[j].bbox) < thr);
                    }
                }
            }
        }
    }
}

#[test]
fn nms_keeps_everything_when_nothing_overlaps() {
    let dets: Vec<Detection> = (0..10)
        .map(|i| {
            let b = Box3D::new(5.0 + 10.0 * i as f64, 0.0, 0.5, 3.0, 1.5, 1.5, 0.2).unwrap();
            Detection::new(1, 0.9 - 0.05 * i as f64, b).unwrap()
        })
        .collect();
    assert_eq!(nms(&dets, 0.3).len(), dets.len());
}

/// Building head targets for a box and decoding at its peak bin recovers the
/// box: centers exactly (the offset channels store the quantization
/// residual), dimensions and yaw to f32 round-off.
#[test]
fn target_encode_then_decode_recovers_boxes() {
    let geometry = SensorGeometry {
        n_r: 64,
        n_a: 27,
        n_d: 8,
        n_e: 6,
        range_max: 72.0,
        azimuth_fov: 100.0,
        elevation_fov: 30.0,
        doppler_max: 12.0,
        z0: 0.2,
    };
    let n_cls = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for _ in 0..100 {
        let range = rng.random_range(3.0..70.0);
        let az: f64 = rng.random_range(-48.0..48.0f64).to_radians();
        let gt_box = Box3D::new(
            range * az.cos(),
            range * az.sin(),
            rng.random_range(-1.0..2.0),
            rng.random_range(1.0..6.0),
            rng.random_range(0.8..3.0),
            rng.random_range(0.8..2.5),
            rng.random_range(-3.0..3.0),
        )
        .unwrap();
        let class_id = rng.random_range(1..n_cls as u32);
        let gt = [(class_id, gt_box)];

        let targets = build_targets(&gt, &geometry, n_cls, 3.0).unwrap();
        assert_eq!(targets.peaks.len(), 1);
        let peak = &targets.peaks[0];

        let mut conf = Array3::<f32>::zeros((n_cls, geometry.n_r, geometry.n_a_pad()));
        conf[[peak.class_id as usize, peak.r, peak.a]] = 1.0;
        let params = targets.params.mapv(|v| v as f32);

        let dets = decode(&conf, &params, &geometry, 0.3).unwrap();
        assert_eq!(dets.len(), 1);
        let d = &dets[0];
        assert_eq!(d.class_id, class_id);
        let b = &d.bbox;
        assert!((b.x - gt_box.x).abs() < 1e-4, "x {} vs {}", b.x, gt_box.x);
        assert!((b.y - gt_box.y).abs() < 1e-4, "y {} vs {}", b.y, gt_box.y);
        assert!((b.z - gt_box.z).abs() < 1e-6);
        assert!((b.l / gt_box.l - 1.0).abs() < 1e-6);
        assert!((b.w / gt_box.w - 1.0).abs() < 1e-6);
        assert!((b.h / gt_box.h - 1.0).abs() < 1e-6);
        assert!((b.yaw - gt_box.yaw).abs() < 1e-6, "yaw {} vs {}", b.yaw, gt_box.yaw);
        assert!(iou_3d(b, &gt_box) > 0.999);
    }
}
