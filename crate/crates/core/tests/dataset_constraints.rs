mod common;

use common::violation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unic_core::dataset::forge::{convert_sample, sample_init_view};
use unic_core::dataset::{make_synthetic_scene, CropAnnotation, SourceKind};
use unic_core::{BBox, Error, Orientation};

#[test]
fn ten_thousand_init_views_respect_every_constraint() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut accepted, mut kept) = (0usize, 0usize);
    let mut seed = 0u64;
    while accepted < 10_000 {
        seed += 1;
        let (ww, wh) = (rng.gen_range(300..1600u32), rng.gen_range(300..1600u32));
        let gh = rng.gen_range(0.5..1.0);
        let gw = rng.gen_range(0.5..1.0);
        let gt = BBox::new(rng.gen_range(gw / 2.0..=1.0 - gw / 2.0), rng.gen_range(gh / 2.0..=1.0 - gh / 2.0), gw, gh).unwrap();
        match sample_init_view(ww, wh, &gt, seed) {
            Ok(v) => {
                accepted += 1;
                kept += (v.orientation == Orientation::of_extent(ww as f64, wh as f64)) as usize;
                if let Some(why) = violation(&v.view, v.orientation, ww as f64, wh as f64, &gt) {
                    panic!("seed {seed}: {why}");
                }
            }
            Err(Error::Infeasible { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }
    // The orientation is kept four times out of five, before rejection.
    let kept = kept as f64 / accepted as f64;
    assert!(kept > 0.75, "kept orientation {kept}");
}

#[test]
fn infeasible_requests_name_the_constraint() {
    let tiny = BBox::new(0.1, 0.1, 0.05, 0.05).unwrap();
    match sample_init_view(800, 600, &tiny, 1) {
        Err(Error::Infeasible { constraint, draws }) => {
            assert_eq!(constraint, "iou with best ground truth");
            assert_eq!(draws, 10_000);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn converted_crops_escape_the_initial_view() {
    let mut total = 0usize;
    let mut outside = 0usize;
    for seed in 0..100 {
        let s = make_synthetic_scene(5_000 + seed).unwrap();
        for c in &s.scene.crops {
            total += 1;
            outside += !c.bbox.inside_unit(0.0) as usize;
        }
        s.scene.validate().unwrap();
    }
    let frac = outside as f64 / total as f64;
    assert!(frac >= 0.10, "only {frac:.3} of crops leave the initial view");
}

#[test]
fn conversion_keeps_crops_in_place() {
    let crops = vec![
        CropAnnotation { bbox: BBox::new(0.5, 0.5, 0.8, 0.8).unwrap(), score: 4.5 },
        CropAnnotation { bbox: BBox::new(0.4, 0.6, 0.6, 0.5).unwrap(), score: 4.2 },
        CropAnnotation { bbox: BBox::new(0.5, 0.5, 0.9, 0.9).unwrap(), score: 1.0 },
    ];
    let (scene, init) = convert_sample("a.png", 640, 480, &crops, SourceKind::Gaicd, 5).unwrap();
    assert_eq!(scene.crops.len(), 2, "below-threshold crop kept");
    for (c, orig) in scene.world_crops().unwrap().iter().zip(&crops) {
        for (a, b) in c.bbox.to_array().iter().zip(orig.bbox.to_array()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    assert_eq!(scene.init_view, init.view);
}
