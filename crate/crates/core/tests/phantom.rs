use xdt_core::boxgeom::iou2;
use xdt_core::detect::{blob_detect, perturb_detect_gt, tophat, PerturbSpec};
use xdt_core::metrics::{average_precision, ApInterpolation};
use xdt_core::phantom::{generate_phantom, make_ground_truth_boxes, mask_box3, PhantomSpec};
use xdt_core::projector::{dissect_project, forward_project, ProjectorConfig};
use xdt_core::ViewSet;

fn small_spec() -> PhantomSpec {
    // the default anatomy on a coarser 4 mm grid
    PhantomSpec { dims: [64, 64, 64], spacing: [4.0, 4.0, 4.0], ..PhantomSpec::default() }
}

fn views(spec: &PhantomSpec, angles: Vec<f64>) -> ViewSet {
    let g = spec.geometry().unwrap();
    ViewSet::new(angles, [128, 128], [2.5, 2.5]).unwrap().centered_on(&g)
}

#[test]
fn dissected_projection_ignores_ribs_and_body() {
    let base = small_spec();
    let mut heavy = base.clone();
    heavy.ribs.attenuation *= 5.0;
    heavy.body.attenuation *= 3.0;
    let (v1, gt1) = generate_phantom(&base).unwrap();
    let (v2, gt2) = generate_phantom(&heavy).unwrap();
    assert_eq!(gt1.lung_mask, gt2.lung_mask);
    let vs = views(&base, vec![-35.0, 0.0, 35.0]);
    let cfg = ProjectorConfig::default();
    let d1 = dissect_project(&v1, &gt1.lung_mask, &vs, &cfg).unwrap();
    let d2 = dissect_project(&v2, &gt2.lung_mask, &vs, &cfg).unwrap();
    assert_eq!(d1, d2);
    let p1 = forward_project(&v1, &vs, &cfg).unwrap();
    let p2 = forward_project(&v2, &vs, &cfg).unwrap();
    assert_ne!(p1, p2);
}

#[test]
fn nodule_boxes_bound_their_masks() {
    let (_, gt) = generate_phantom(&small_spec()).unwrap();
    assert_eq!(gt.boxes3.len(), 4);
    for (b, m) in gt.boxes3.iter().zip(&gt.nodule_masks) {
        assert_eq!(mask_box3(m).unwrap().coords(), b.coords());
        // a 20 mm sphere on a 4 mm grid spans 5 voxels per axis
        for s in b.size() {
            assert!((s - 20.0).abs() <= 4.0 + 1e-9, "{s}");
        }
    }
}

#[test]
fn projected_mask_boxes_lie_inside_projected_3d_boxes() {
    let spec = small_spec();
    let (_, gt) = generate_phantom(&spec).unwrap();
    let angles: Vec<f64> = (0..18).map(|i| -90.0 + 10.0 * i as f64).collect();
    let vs = views(&spec, angles);
    let gt = make_ground_truth_boxes(&gt, &vs).unwrap();
    let px = vs.detector_spacing[0];
    for (k, list) in gt.boxes2.as_ref().unwrap().iter().enumerate() {
        for (i, b) in list.iter().enumerate() {
            let outer = xdt_core::boxgeom::project_box3(&gt.boxes3[i], vs.angles[k], (0.0, 0.0));
            assert!(outer.contains(b, px), "view {k} nodule {i}: {b:?} outside {outer:?}");
            assert_eq!(b.label, gt.boxes3[i].label);
        }
    }
}

#[test]
fn blob_detector_finds_every_nodule_in_dissected_views() {
    let spec = small_spec();
    let (volume, gt) = generate_phantom(&spec).unwrap();
    let vs = views(&spec, vec![-35.0, 0.0, 35.0]);
    let gt = make_ground_truth_boxes(&gt, &vs).unwrap();
    let dissected = dissect_project(&volume, &gt.lung_mask, &vs, &ProjectorConfig::default()).unwrap();
    for (k, img) in dissected.iter().enumerate() {
        let filtered = tophat(img, 10).unwrap();
        let dets = blob_detect(&filtered, 0.08, 4).unwrap();
        let truth = &gt.boxes2.as_ref().unwrap()[k];
        let ap = average_precision(&dets, truth, 0.1, ApInterpolation::AllPoint).unwrap();
        assert_eq!(ap.ap, 1.0, "view {k}: {} detections", dets.len());
        for t in truth {
            assert!(dets.iter().any(|d| iou2(d, t) > 0.3), "view {k}: {t:?} not found");
        }
    }
}

#[test]
fn perturbation_detector_is_seeded() {
    let spec = small_spec();
    let (_, gt) = generate_phantom(&spec).unwrap();
    let vs = views(&spec, vec![-35.0, 0.0, 35.0]);
    let gt = make_ground_truth_boxes(&gt, &vs).unwrap();
    let p = PerturbSpec {
        miss_prob: vec![0.5, 0.0, 0.5],
        false_pos_rate: vec![1.5],
        jitter_sigma: 1.0,
        score_noise_sigma: 0.1,
        seed: 11,
        ..PerturbSpec::default()
    };
    let a = perturb_detect_gt(&gt, &vs, &p).unwrap();
    let b = perturb_detect_gt(&gt, &vs, &p).unwrap();
    assert_eq!(a, b);
    let c = perturb_detect_gt(&gt, &vs, &PerturbSpec { seed: 12, ..p.clone() }).unwrap();
    assert_ne!(a, c);
    // the middle view never misses
    let truth = &gt.boxes2.as_ref().unwrap()[1];
    let kept = a.boxes2[1].iter().filter(|d| d.label.as_deref() != Some("fp")).count();
    assert_eq!(kept, truth.len());

    let all_miss = PerturbSpec { miss_prob: vec![1.0], miss_prob_3d: 1.0, ..PerturbSpec::default() };
    let none = perturb_detect_gt(&gt, &vs, &all_miss).unwrap();
    assert!(none.boxes2.iter().all(Vec::is_empty) && none.boxes3.is_empty());
}
