use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xdt_core::projector::{
    apply_mask, back_project, dissect_project, forward_project, Interpolation, Normalization, ProjectorConfig,
};
use xdt_core::selfcheck::{adjoint_mismatch, all_modes, random_images, random_volume};
use xdt_core::{Error, Image2, ViewSet, Volume3, VolumeGeometry};

fn views_for(g: &VolumeGeometry, angles: Vec<f64>, dims: [usize; 2], spacing: [f64; 2]) -> ViewSet {
    ViewSet::new(angles, dims, spacing).unwrap().centered_on(g)
}

fn close(a: &[f32], b: &[f32], rel: f32) -> bool {
    let scale = a.iter().chain(b).fold(0f32, |m, v| m.max(v.abs())).max(1e-12);
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= rel * scale)
}

#[test]
fn adjoint_holds_for_every_mode_on_anisotropic_grids() {
    for cfg in all_modes() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let dims = [rng.gen_range(5..14), rng.gen_range(5..14), rng.gen_range(2..6)];
            let spacing = [rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..3.0)];
            let g = VolumeGeometry::centered(dims, spacing).unwrap();
            let n = rng.gen_range(1..5);
            let angles = (0..n).map(|_| rng.gen_range(-180.0..180.0)).collect();
            let views = views_for(&g, angles, [rng.gen_range(4..20), rng.gen_range(2..8)], [0.8, 1.1]);
            let cfg = cfg.with_step(rng.gen_range(0.2..1.5));
            let x = random_volume(&mut rng, g, 1);
            let y = random_images(&mut rng, &views, 1);
            let m = adjoint_mismatch(
                &x,
                &y,
                |v| forward_project(v, &views, &cfg),
                |i| back_project(i, &views, &g, &cfg),
            )
            .unwrap();
            assert!(m <= 1e-4, "{cfg:?} seed {seed}: mismatch {m}");
        }
    }
}

#[test]
fn forward_projection_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = VolumeGeometry::centered([10, 10, 4], [1.0, 1.0, 1.0]).unwrap();
    let views = views_for(&g, vec![-35.0, 0.0, 35.0], [16, 4], [1.0, 1.0]);
    let a = random_volume(&mut rng, g, 1);
    let b = random_volume(&mut rng, g, 1);
    let (alpha, beta) = (1.7f32, -0.6f32);
    let combo = Volume3::new(
        g,
        1,
        a.data().iter().zip(b.data()).map(|(x, y)| alpha * x + beta * y).collect(),
    )
    .unwrap();
    for cfg in all_modes() {
        let pa = forward_project(&a, &views, &cfg).unwrap();
        let pb = forward_project(&b, &views, &cfg).unwrap();
        let pc = forward_project(&combo, &views, &cfg).unwrap();
        for k in 0..3 {
            let expect: Vec<f32> =
                pa[k].data().iter().zip(pb[k].data()).map(|(x, y)| alpha * x + beta * y).collect();
            assert!(close(pc[k].data(), &expect, 1e-5), "{cfg:?} view {k}");
        }
    }
}

#[test]
fn result_is_independent_of_worker_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = VolumeGeometry::centered([24, 20, 12], [1.0, 1.2, 2.0]).unwrap();
    let views = views_for(&g, vec![-35.0, 0.0, 35.0, 71.0], [32, 14], [1.0, 1.5]);
    let x = random_volume(&mut rng, g, 2);
    let y = random_images(&mut rng, &views, 2);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let cfg = ProjectorConfig::default();
            (forward_project(&x, &views, &cfg).unwrap(), back_project(&y, &views, &g, &cfg).unwrap())
        })
    };
    let (f1, b1) = run(1);
    for threads in [2, 3, 8] {
        let (f, b) = run(threads);
        assert_eq!(f, f1, "forward differs with {threads} workers");
        assert_eq!(b, b1, "back differs with {threads} workers");
    }
}

#[test]
fn quarter_turn_matches_transposed_volume() {
    // projecting f at 90° equals projecting g(x, y) = f(-y, x) at 0°
    // odd sizes and an incommensurate step keep every sample off voxel
    // boundaries, where nearest-neighbor rounding is not mirror symmetric
    let g = VolumeGeometry::centered([13, 13, 3], [1.0, 1.0, 1.0]).unwrap();
    let f = |x: f64, y: f64, z: f64| (0.3 * x + 0.05 * y * y + 0.1 * z + 2.0 * (x * y).sin()) as f32;
    let vf = Volume3::from_fn(g, f).unwrap();
    let vg = Volume3::from_fn(g, |x, y, z| f(-y, x, z)).unwrap();
    for interp in [Interpolation::Nearest, Interpolation::Bilinear] {
        let cfg = ProjectorConfig::new(interp, Normalization::RaySum).with_step(0.37);
        let at90 = forward_project(&vf, &views_for(&g, vec![90.0], [18, 3], [0.9, 1.0]), &cfg).unwrap();
        let at0 = forward_project(&vg, &views_for(&g, vec![0.0], [18, 3], [0.9, 1.0]), &cfg).unwrap();
        assert!(close(at90[0].data(), at0[0].data(), 1e-5), "{interp:?}");
    }
}

#[test]
fn full_turn_and_opposite_views_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = VolumeGeometry::centered([14, 14, 3], [1.0, 1.0, 1.0]).unwrap();
    let x = random_volume(&mut rng, g, 1);
    let cfg = ProjectorConfig::default();
    let p = forward_project(&x, &views_for(&g, vec![25.0, 385.0, -335.0], [20, 3], [1.0, 1.0]), &cfg).unwrap();
    assert!(close(p[0].data(), p[1].data(), 1e-5));
    assert!(close(p[0].data(), p[2].data(), 1e-5));
}

#[test]
fn single_view_back_projection_is_constant_along_rays() {
    let g = VolumeGeometry::centered([8, 10, 4], [1.0, 1.0, 1.0]).unwrap();
    let views = views_for(&g, vec![0.0], [8, 4], [1.0, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = random_images(&mut rng, &views, 1);
    let cfg = ProjectorConfig::new(Interpolation::Nearest, Normalization::RaySum).with_step(0.25);
    let b = back_project(&y, &views, &g, &cfg).unwrap();
    for iz in 0..4 {
        for ix in 0..8 {
            let first = b.get(0, ix, 0, iz);
            for iy in 1..10 {
                let v = b.get(0, ix, iy, iz);
                assert!((v - first).abs() <= 1e-5 * first.abs().max(1.0), "({ix},{iy},{iz})");
            }
            // each voxel is hit by four samples of the aligned column
            let expect = 4.0 * 0.25 * y[0].get(0, ix, iz);
            assert!((first - expect).abs() < 1e-5, "{first} vs {expect}");
        }
    }
}

#[test]
fn uniform_slab_gives_path_length_and_unit_mean() {
    let g = VolumeGeometry::centered([16, 16, 4], [2.0, 2.0, 2.0]).unwrap();
    let ones = Volume3::from_fn(g, |_, _, _| 1.0).unwrap();
    let views = views_for(&g, vec![0.0, 90.0], [16, 4], [2.0, 2.0]);
    let sum = forward_project(&ones, &views, &ProjectorConfig::new(Interpolation::Nearest, Normalization::RaySum))
        .unwrap();
    let mean =
        forward_project(&ones, &views, &ProjectorConfig::new(Interpolation::Nearest, Normalization::Mean)).unwrap();
    for k in 0..2 {
        for &v in sum[k].data() {
            assert!((v - 32.0).abs() < 1e-4, "{v}");
        }
        for &v in mean[k].data() {
            assert!((v - 1.0).abs() < 1e-6, "{v}");
        }
    }
}

#[test]
fn rays_missing_the_volume_read_zero() {
    let g = VolumeGeometry::centered([4, 4, 2], [1.0, 1.0, 1.0]).unwrap();
    let ones = Volume3::from_fn(g, |_, _, _| 1.0).unwrap();
    // detector twice as wide as the volume
    let views = views_for(&g, vec![0.0], [16, 2], [1.0, 1.0]);
    for cfg in all_modes() {
        let p = forward_project(&ones, &views, &cfg).unwrap();
        for iu in (0..5).chain(11..16) {
            assert_eq!(p[0].get(0, iu, 0), 0.0, "{cfg:?} column {iu}");
        }
        assert!(p[0].get(0, 8, 0) > 0.0);
    }
}

#[test]
fn rows_outside_the_slab_read_zero() {
    let g = VolumeGeometry::centered([4, 4, 2], [1.0, 1.0, 1.0]).unwrap();
    let ones = Volume3::from_fn(g, |_, _, _| 1.0).unwrap();
    let views = views_for(&g, vec![30.0], [4, 8], [1.0, 1.0]);
    let p = forward_project(&ones, &views, &ProjectorConfig::default()).unwrap();
    for iu in 0..4 {
        assert_eq!(p[0].get(0, iu, 0), 0.0);
        assert_eq!(p[0].get(0, iu, 7), 0.0);
        assert!(p[0].get(0, iu, 3) > 0.0);
    }
}

#[test]
fn channels_project_independently() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let g = VolumeGeometry::centered([9, 9, 3], [1.0, 1.0, 1.0]).unwrap();
    let two = random_volume(&mut rng, g, 2);
    let views = views_for(&g, vec![-35.0, 35.0], [12, 3], [1.0, 1.0]);
    let cfg = ProjectorConfig::default();
    let both = forward_project(&two, &views, &cfg).unwrap();
    for c in 0..2 {
        let single = Volume3::new(g, 1, two.channel(c).to_vec()).unwrap();
        let p = forward_project(&single, &views, &cfg).unwrap();
        for k in 0..2 {
            assert_eq!(both[k].channel(c), p[k].data());
        }
    }
}

#[test]
fn dissection_equals_projection_of_masked_volume() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = VolumeGeometry::centered([10, 10, 4], [1.0, 1.0, 1.0]).unwrap();
    let v = random_volume(&mut rng, g, 1);
    let mask = Volume3::from_fn(g, |x, y, _| if x * x + y * y < 12.0 { 1.0 } else { 0.0 }).unwrap();
    let views = views_for(&g, vec![-35.0, 0.0, 35.0], [14, 4], [1.0, 1.0]);
    let cfg = ProjectorConfig::default();
    let d = dissect_project(&v, &mask, &views, &cfg).unwrap();
    let m = forward_project(&apply_mask(&v, &mask).unwrap(), &views, &cfg).unwrap();
    assert_eq!(d, m);

    let fuzzy = mask.map(|x| 0.5 * x).unwrap();
    assert!(matches!(dissect_project(&v, &fuzzy, &views, &cfg), Err(Error::Validation(_))));
    let other = Volume3::zeros(VolumeGeometry::centered([10, 10, 5], [1.0; 3]).unwrap(), 1).unwrap();
    assert!(matches!(dissect_project(&v, &other, &views, &cfg), Err(Error::Shape(_))));
}

#[test]
fn mismatched_inputs_are_rejected() {
    let g = VolumeGeometry::centered([6, 6, 2], [1.0; 3]).unwrap();
    let views = views_for(&g, vec![0.0, 10.0], [8, 2], [1.0, 1.0]);
    let img = Image2::zeros([8, 2], [1.0, 1.0], views.detector_origin(), 1).unwrap();
    let cfg = ProjectorConfig::default();
    assert!(matches!(back_project(std::slice::from_ref(&img), &views, &g, &cfg), Err(Error::Geometry(_))));
    let wrong = Image2::zeros([7, 2], [1.0, 1.0], views.detector_origin(), 1).unwrap();
    assert!(matches!(back_project(&[img.clone(), wrong], &views, &g, &cfg), Err(Error::Geometry(_))));
    let bad_step = cfg.with_step(0.0);
    let v = Volume3::zeros(g, 1).unwrap();
    assert!(matches!(forward_project(&v, &views, &bad_step), Err(Error::Config(_))));
}
