mod common;

use common::raster_iou;
use proptest::prelude::*;
use unic_core::geometry::{clamp_to_world, derive_view, derive_view_in_frame, disp, giou, iou};
use unic_core::{BBox, Orientation};

fn any_box() -> impl Strategy<Value = BBox> {
    (-1.0..2.0f64, -1.0..2.0f64, 1e-3..1.5f64, 1e-3..1.5f64).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h).unwrap())
}

fn any_orientation() -> impl Strategy<Value = Orientation> {
    prop_oneof![Just(Orientation::Landscape), Just(Orientation::Portrait)]
}

/// Boxes with corners on the 1/1000 lattice of the unit square.
fn lattice_box() -> impl Strategy<Value = BBox> {
    let side = || (0u32..=1000, 0u32..=1000).prop_filter("empty side", |(a, b)| a != b);
    (side(), side()).prop_map(|((a, b), (c, d))| {
        let s = 1000.0;
        BBox::from_corners(a.min(b) as f64 / s, c.min(d) as f64 / s, a.max(b) as f64 / s, c.max(d) as f64 / s).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn derive_view_is_minimal_containing_ratio_box(c in any_box(), o in any_orientation()) {
        let v = derive_view(&c, o).unwrap();
        let ratio_err = match o {
            Orientation::Landscape => (v.w * 3.0 - v.h * 4.0).abs(),
            Orientation::Portrait => (v.w * 4.0 - v.h * 3.0).abs(),
        };
        prop_assert!(ratio_err < 1e-9, "ratio error {ratio_err}");
        prop_assert!(v.contains(&c, 1e-12));
        prop_assert_eq!((v.x, v.y), (c.x, c.y));
        let narrower = BBox { w: v.w - 1e-6, ..v };
        let shorter = BBox { h: v.h - 1e-6, ..v };
        prop_assert!(!narrower.contains(&c, 0.0) || !shorter.contains(&c, 0.0));
        // Shrinking while keeping the ratio always loses containment.
        let scaled = BBox { w: v.w * (1.0 - 1e-6), h: v.h * (1.0 - 1e-6), ..v };
        prop_assert!(!scaled.contains(&c, 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn iou_matches_raster_oracle(a in lattice_box(), b in lattice_box()) {
        let expected = raster_iou(&a, &b, 1000);
        let got = iou(&a, &b).unwrap();
        prop_assert!((got - expected).abs() < 1e-3, "{got} vs {expected}");
    }

    #[test]
    fn iou_and_giou_are_symmetric_and_bounded(a in any_box(), b in any_box()) {
        let i = iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&i));
        prop_assert_eq!(i, iou(&b, &a).unwrap());
        let g = giou(&a, &b).unwrap();
        prop_assert!((-1.0 - 1e-12..=i + 1e-12).contains(&g));
        prop_assert!((g - giou(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disp_is_a_symmetric_distance(a in any_box(), b in any_box(), c in any_box()) {
        let ab = disp(&a, &b).unwrap();
        prop_assert_eq!(ab, disp(&b, &a).unwrap());
        prop_assert_eq!(disp(&a, &a).unwrap(), 0.0);
        prop_assert!(ab <= disp(&a, &c).unwrap() + disp(&c, &b).unwrap() + 1e-12);
    }

    #[test]
    fn frame_round_trip(b in any_box(), f in any_box()) {
        let back = b.to_frame(&f).unwrap().from_frame(&f).unwrap();
        for (x, y) in back.to_array().iter().zip(b.to_array()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{back:?} vs {b:?}");
        }
    }

    #[test]
    fn corner_form_round_trip(b in any_box()) {
        let c = b.corners();
        let back = BBox::from_corners(c.x1, c.y1, c.x2, c.y2).unwrap();
        for (x, y) in back.to_array().iter().zip(b.to_array()) {
            prop_assert!((x - y).abs() <= 1e-15 * (1.0 + y.abs()) * 4.0, "{back:?} vs {b:?}");
        }
    }

    #[test]
    fn clamped_views_stay_in_world_and_keep_ratio(v in any_box()) {
        let c = clamp_to_world(&v);
        prop_assert!(c.inside_unit(1e-12));
        prop_assert!((c.w / c.h - v.w / v.h).abs() < 1e-9 * (v.w / v.h));
        if v.w <= 1.0 && v.h <= 1.0 {
            prop_assert_eq!((c.w, c.h), (v.w, v.h));
        }
        if v.inside_unit(0.0) {
            prop_assert_eq!(c, v);
        }
    }

    #[test]
    fn identity_view_in_its_own_frame(aspect in 0.3..3.0f64) {
        let o = Orientation::of_extent(aspect, 1.0);
        let ratio = o.ratio();
        // A frame with pixel aspect equal to the sensor ratio maps onto itself.
        let v = derive_view_in_frame(&BBox::UNIT, o, ratio).unwrap();
        prop_assert!((v.w - 1.0).abs() < 1e-12 && (v.h - 1.0).abs() < 1e-12);
    }
}

#[test]
fn clamp_examples() {
    let c = clamp_to_world(&BBox::new(0.5, 0.5, 1.6, 1.2).unwrap());
    assert!((c.w - 1.0).abs() < 1e-12 && (c.h - 0.75).abs() < 1e-12);
    assert_eq!((c.x, c.y), (0.5, 0.5));
    let c = clamp_to_world(&BBox::new(1.1, 0.5, 0.4, 0.3).unwrap());
    assert!((c.x - 0.8).abs() < 1e-12);
}
