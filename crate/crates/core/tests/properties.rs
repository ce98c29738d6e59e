mod support;

use proptest::prelude::*;
use support::oracles::{ref_iou, ref_nms};
use wwbl_core::mask2box::{trace_contours, BinaryMask, BorderKind};
use wwbl_core::proposals::{hierarchy, selective_search, ProposalConfig};
use wwbl_core::{
    extract_wsg_boxes, extract_wsol_box, iou, nms, BoundingBox, ExtractionConfig, ImageTensor, SaliencyMask,
};

fn bbox() -> impl Strategy<Value = BoundingBox> {
    (0u32..60, 0u32..60, 1u32..40, 1u32..40).prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h).unwrap())
}

fn mask(max: usize) -> impl Strategy<Value = SaliencyMask> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(prop::sample::select(vec![0.0f32, 0.2, 0.55, 0.7, 1.0]), h * w)
            .prop_map(move |v| SaliencyMask::new(h, w, v).unwrap())
    })
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        prop_assert_eq!(iou(&a, &b), iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&iou(&a, &b)));
        prop_assert!((iou(&a, &b) - ref_iou(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn iou_self_is_exactly_one(a in bbox()) {
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn nms_suppression_is_justified(
        boxes in prop::collection::vec((bbox(), 0u8..10), 0..60),
        thr in 0.1f64..0.9,
    ) {
        let scored: Vec<(BoundingBox, f32)> = boxes.iter().map(|(b, s)| (*b, *s as f32 / 9.0)).collect();
        let kept = nms(&scored, thr);
        for k in &kept {
            prop_assert!(scored.contains(k));
        }
        for (i, a) in kept.iter().enumerate() {
            for b in &kept[i + 1..] {
                prop_assert!(iou(&a.0, &b.0) < thr);
            }
        }
        for s in &scored {
            if !kept.contains(s) {
                prop_assert!(kept.iter().any(|k| k.1 >= s.1 && iou(&k.0, &s.0) >= thr));
            }
        }
        let idx = ref_nms(&scored, thr);
        prop_assert_eq!(kept, idx.iter().map(|&i| scored[i]).collect::<Vec<_>>());
    }

    #[test]
    fn outer_contours_are_closed_8_chains(m in mask(24)) {
        let bin = wwbl_core::mask2box::binarize(&m, 0.5);
        for c in trace_contours(&bin) {
            let pts = &c.points;
            prop_assert!(!pts.is_empty());
            for i in 0..pts.len() {
                let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
                let (dx, dy) = ((a.0 as i64 - b.0 as i64).abs(), (a.1 as i64 - b.1 as i64).abs());
                prop_assert!(dx <= 1 && dy <= 1);
            }
            if c.kind == BorderKind::Outer {
                for &(x, y) in pts {
                    prop_assert!(bin.get(y as usize, x as usize));
                }
            }
        }
    }

    #[test]
    fn extracted_boxes_are_in_frame_and_ordered(m in mask(40)) {
        let cfg = ExtractionConfig::default();
        let wsol = extract_wsol_box(&m, &cfg);
        prop_assert!(wsol.fits_within(m.width() as u32, m.height() as u32));
        let out = extract_wsg_boxes(&m, &cfg);
        for w in out.windows(2) {
            prop_assert!(w[0].1 >= w[1].1);
        }
        if let Some(first) = out.first() {
            for (b, s) in &out {
                prop_assert!(b.area() > 0 && b.fits_within(m.width() as u32, m.height() as u32));
                prop_assert!(*s >= cfg.energy_keep_ratio * first.1);
            }
        }
    }

    #[test]
    fn pointing_inside_box_of_argmax(m in mask(30)) {
        let (y, x) = m.argmax();
        let b = BoundingBox::new(x as u32, y as u32, 1, 1).unwrap();
        prop_assert!(wwbl_core::pointing_hit(&m, &b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn merging_removes_one_region_per_step(seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let img = ImageTensor::from_fn(28, 28, |_, _| {
            [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]
        })
        .unwrap();
        let cfg = ProposalConfig { min_component_size: 4, smoothing_sigma: 0.0, ..Default::default() };
        let h = hierarchy(&img, &cfg);
        prop_assert_eq!(h.merges.len(), h.initial_count - 1);
        // merged ids are fresh and strictly increasing
        for (k, m) in h.merges.iter().enumerate() {
            prop_assert_eq!(m.into, h.initial_count + k);
        }
        let props = selective_search(&img, &cfg).unwrap();
        prop_assert!(!props.is_empty() && props.len() <= cfg.max_proposals);
        prop_assert_eq!(&props, &selective_search(&img, &cfg).unwrap());
        for p in &props {
            prop_assert!(p.bbox.fits_within(28, 28));
            prop_assert_eq!(&p.crop, &img.crop(&p.bbox).unwrap());
        }
    }
}

#[test]
fn binary_mask_round_trip_through_contours() {
    // a ring yields outer + hole, the hole's parent is the outer border
    let m = BinaryMask::from_fn(9, 9, |y, x| {
        (1..8).contains(&y) && (1..8).contains(&x) && !((3..6).contains(&y) && (3..6).contains(&x))
    });
    let cs = trace_contours(&m);
    assert_eq!(cs.iter().filter(|c| c.kind == BorderKind::Outer).count(), 1);
    assert_eq!(cs.iter().filter(|c| c.kind == BorderKind::Hole).count(), 1);
}
