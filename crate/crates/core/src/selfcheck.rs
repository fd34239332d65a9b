//! Built-in property checks run by `xdt selfcheck`: projector adjointness,
//! serialization round trips and agreement of the matcher with an
//! exhaustive reference.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::boxgeom::{iou2, project_box3};
use crate::error::Result;
use crate::io::{self, AnyBox, BoxRecord};
use crate::matching::{collaborate, MatchConfig, MatchOutcome, ViewBox};
use crate::projector::{back_project, forward_project, Interpolation, Normalization, ProjectorConfig};
use crate::types::{Box2, Box3, Image2, ViewSet, Volume3, VolumeGeometry};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub const ADJOINT_TOL: f64 = 1e-4;

pub fn random_volume(rng: &mut ChaCha8Rng, geometry: VolumeGeometry, channels: usize) -> Volume3 {
    let data = (0..channels * geometry.voxels()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Volume3::new(geometry, channels, data).expect("finite random data")
}

pub fn random_images(rng: &mut ChaCha8Rng, views: &ViewSet, channels: usize) -> Vec<Image2> {
    (0..views.len())
        .map(|_| {
            let n = channels * views.detector_dims[0] * views.detector_dims[1];
            let data = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            Image2::new(views.detector_dims, views.detector_spacing, views.detector_origin(), channels, data)
                .expect("finite random data")
        })
        .collect()
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// Relative mismatch `|<Px, y> - <x, P^T y>| / max(|<Px, y>|, |<x, P^T y>|)`.
pub fn adjoint_mismatch<F, B>(x: &Volume3, y: &[Image2], forward: F, backward: B) -> Result<f64>
where
    F: Fn(&Volume3) -> Result<Vec<Image2>>,
    B: Fn(&[Image2]) -> Result<Volume3>,
{
    let px = forward(x)?;
    let pty = backward(y)?;
    let lhs: f64 = px.iter().zip(y).map(|(a, b)| dot(a.data(), b.data())).sum();
    let rhs = dot(x.data(), pty.data());
    let scale = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
    Ok((lhs - rhs).abs() / scale)
}

pub fn all_modes() -> [ProjectorConfig; 4] {
    [
        ProjectorConfig::new(Interpolation::Nearest, Normalization::RaySum),
        ProjectorConfig::new(Interpolation::Nearest, Normalization::Mean),
        ProjectorConfig::new(Interpolation::Bilinear, Normalization::RaySum),
        ProjectorConfig::new(Interpolation::Bilinear, Normalization::Mean),
    ]
}

/// Dot-product test of the given operator pair on `instances` seeded random problems.
pub fn check_adjoint_with<F, B>(name: &str, instances: usize, forward: F, backward: B) -> CheckResult
where
    F: Fn(&Volume3, &ViewSet) -> Result<Vec<Image2>>,
    B: Fn(&[Image2], &ViewSet, &VolumeGeometry) -> Result<Volume3>,
{
    let mut worst = 0f64;
    for seed in 0..instances as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = VolumeGeometry::centered([12, 10, 6], [1.0, 1.2, 1.5]).expect("valid geometry");
        let angles = (0..3).map(|_| rng.gen_range(-90.0..90.0)).collect();
        let views = ViewSet::new(angles, [18, 8], [0.9, 1.3]).expect("valid views").centered_on(&g);
        let x = random_volume(&mut rng, g, 2);
        let y = random_images(&mut rng, &views, 2);
        match adjoint_mismatch(&x, &y, |v| forward(v, &views), |i| backward(i, &views, &g)) {
            Ok(m) => worst = worst.max(m),
            Err(e) => {
                return CheckResult { name: name.into(), passed: false, detail: e.to_string() };
            }
        }
    }
    CheckResult {
        name: name.into(),
        passed: worst <= ADJOINT_TOL,
        detail: format!("worst relative mismatch {worst:.3e} over {instances} instances"),
    }
}

pub fn check_adjoint(instances: usize) -> Vec<CheckResult> {
    all_modes()
        .into_iter()
        .map(|cfg| {
            check_adjoint_with(
                &format!("adjoint {:?}/{:?}", cfg.interpolation, cfg.normalization),
                instances,
                |v, views| forward_project(v, views, &cfg),
                |imgs, views, g| back_project(imgs, views, g, &cfg),
            )
        })
        .collect()
}

pub fn check_round_trips() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let g = VolumeGeometry::centered([16, 16, 16], [1.0, 1.0, 2.0]).expect("valid geometry");
    let v = random_volume(&mut rng, g, 1);
    let dir = std::env::temp_dir().join(format!("xdt-selfcheck-{}", std::process::id()));
    let volume = std::fs::create_dir_all(&dir)
        .map_err(|e| crate::Error::io(&dir, e))
        .and_then(|_| {
            let base = dir.join("volume");
            io::write_volume(&v, &base)?;
            io::read_volume(&base)
        });
    let _ = std::fs::remove_dir_all(&dir);
    out.push(match volume {
        Ok(back) => CheckResult {
            name: "volume round trip".into(),
            passed: back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
            detail: "16x16x16 random payload".into(),
        },
        Err(e) => CheckResult { name: "volume round trip".into(), passed: false, detail: e.to_string() },
    });

    let records: Vec<BoxRecord> = (0..200)
        .map(|i| {
            let lo: [f64; 3] = [0; 3].map(|_| rng.gen_range(-100.0..100.0));
            let s: [f64; 3] = [0; 3].map(|_| rng.gen_range(0.0..30.0));
            let score = rng.gen::<f64>();
            if i % 2 == 0 {
                BoxRecord {
                    view: Some(i % 3),
                    bbox: AnyBox::Two(Box2::new(lo[0], lo[1], lo[0] + s[0], lo[1] + s[1]).unwrap().with_score(score)),
                }
            } else {
                BoxRecord {
                    view: None,
                    bbox: AnyBox::Three(
                        Box3::new(lo[0], lo[1], lo[2], lo[0] + s[0], lo[1] + s[1], lo[2] + s[2])
                            .unwrap()
                            .with_score(score)
                            .with_label(format!("b{i}")),
                    ),
                }
            }
        })
        .collect();
    let boxes = io::boxes_to_jsonl(&records).and_then(|t| io::boxes_from_jsonl(&t));
    out.push(CheckResult {
        name: "box round trip".into(),
        passed: matches!(&boxes, Ok(b) if *b == records),
        detail: format!("{} records", records.len()),
    });
    out
}

/// Random matching instance with clustered boxes so that overlaps and conflicts are common.
pub fn random_match_instance(rng: &mut ChaCha8Rng) -> (Vec<Box3>, Vec<Vec<Box2>>, ViewSet) {
    let views = ViewSet::new(vec![-35.0, 0.0, 35.0], [128, 128], [1.0, 1.0]).expect("valid views");
    let n = rng.gen_range(0..=6);
    let boxes3 = (0..n)
        .map(|_| {
            let c: [f64; 3] = [0; 3].map(|_| rng.gen_range(-20.0..20.0));
            let h: [f64; 3] = [0; 3].map(|_| rng.gen_range(2.0..10.0));
            Box3::new(c[0] - h[0], c[1] - h[1], c[2] - h[2], c[0] + h[0], c[1] + h[1], c[2] + h[2])
                .unwrap()
                .with_score(rng.gen())
        })
        .collect();
    let boxes2 = (0..views.len())
        .map(|_| {
            let m = rng.gen_range(0..=6);
            (0..m)
                .map(|_| {
                    let c: [f64; 2] = [0; 2].map(|_| rng.gen_range(-25.0..25.0));
                    let h: [f64; 2] = [0; 2].map(|_| rng.gen_range(2.0..10.0));
                    Box2::new(c[0] - h[0], c[1] - h[1], c[0] + h[0], c[1] + h[1]).unwrap().with_score(rng.gen())
                })
                .collect()
        })
        .collect();
    (boxes3, boxes2, views)
}

/// Straightforward matcher: per-pair IoU table, then the unique stable kept set
/// found by enumerating every subset of 3D boxes.
pub fn exhaustive_collaborate(boxes3: &[Box3], boxes2: &[Vec<Box2>], views: &ViewSet, threshold: f64) -> MatchOutcome {
    let n = boxes3.len();
    let kv = views.len();
    let center = (views.rotation_center[0], views.rotation_center[1]);
    let mut u = vec![vec![0.0; kv]; n];
    let mut q = vec![vec![-1i64; kv]; n];
    for i in 0..n {
        for k in 0..kv {
            let p = project_box3(&boxes3[i], views.angles[k], center);
            let ious: Vec<f64> = boxes2[k].iter().map(|b| iou2(&p, b)).collect();
            if let Some(best) = ious.iter().cloned().reduce(f64::max) {
                u[i][k] = best;
                if best > threshold {
                    q[i][k] = ious.iter().position(|&v| v == best).unwrap() as i64;
                }
            }
        }
    }
    let mean: Vec<f64> = u.iter().map(|r| r.iter().sum::<f64>() / kv as f64).collect();
    let beats = |a: usize, b: usize| mean[a] > mean[b] || (mean[a] == mean[b] && a < b);
    let conflict = |a: usize, b: usize| (0..kv).any(|k| q[a][k] >= 0 && q[a][k] == q[b][k]);
    let matched: Vec<bool> = q.iter().map(|r| r.iter().any(|&x| x >= 0)).collect();

    let mut kept_set = None;
    for bits in 0u32..(1 << n) {
        let inside = |i: usize| bits & (1 << i) != 0;
        let ok = (0..n).all(|i| {
            if inside(i) {
                matched[i] && (0..n).all(|j| j == i || !inside(j) || !conflict(i, j))
            } else {
                !matched[i] || (0..n).any(|j| inside(j) && beats(j, i) && conflict(i, j))
            }
        });
        if ok {
            kept_set = Some(bits);
            break;
        }
    }
    let bits = kept_set.expect("a stable kept set always exists");
    let mut kept: Vec<usize> = (0..n).filter(|i| bits & (1 << i) != 0).collect();
    kept.sort_by(|&a, &b| if beats(a, b) { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater });

    let mut used = vec![HashSet::new(); kv];
    let groups = kept
        .iter()
        .map(|&i| {
            let mut scores: Vec<f64> = boxes3[i].score.into_iter().collect();
            let per_view = (0..kv)
                .map(|k| {
                    if q[i][k] >= 0 {
                        let j = q[i][k] as usize;
                        used[k].insert(j);
                        scores.extend(boxes2[k][j].score);
                        ViewBox::Detected { index: j, bbox: boxes2[k][j].clone() }
                    } else {
                        ViewBox::Recovered { bbox: project_box3(&boxes3[i], views.angles[k], center) }
                    }
                })
                .collect();
            crate::matching::MatchGroup {
                index3: i,
                box3: boxes3[i].clone(),
                views: per_view,
                q_row: q[i].clone(),
                mean_iou: mean[i],
                score: (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64),
            }
        })
        .collect();
    let leftovers = (0..kv)
        .map(|k| {
            (0..boxes2[k].len())
                .filter(|j| !used[k].contains(j))
                .map(|j| crate::matching::Leftover { index: j, bbox: boxes2[k][j].clone() })
                .collect()
        })
        .collect();
    MatchOutcome { groups, leftovers }
}

pub fn check_matching(instances: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..instances {
        let (b3, b2, views) = random_match_instance(&mut rng);
        let fast = collaborate(&b3, &b2, &views, &MatchConfig::default());
        let slow = exhaustive_collaborate(&b3, &b2, &views, 0.0);
        match fast {
            Ok(f) if f == slow => {}
            Ok(_) => {
                return CheckResult {
                    name: "matching vs exhaustive reference".into(),
                    passed: false,
                    detail: format!("instance {case} differs"),
                }
            }
            Err(e) => {
                return CheckResult {
                    name: "matching vs exhaustive reference".into(),
                    passed: false,
                    detail: e.to_string(),
                }
            }
        }
    }
    CheckResult {
        name: "matching vs exhaustive reference".into(),
        passed: true,
        detail: format!("{instances} random instances"),
    }
}

pub fn run_all() -> Vec<CheckResult> {
    let mut out = check_adjoint(20);
    out.extend(check_round_trips());
    out.push(check_matching(500));
    out
}
