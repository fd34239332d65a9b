//! Reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xdt_core::boxgeom::{iou2, project_box3};
use xdt_core::matching::{Leftover, MatchGroup, MatchOutcome, ViewBox};
use xdt_core::{Box2, Box3, ViewSet};

/// Random instance with N <= 6 3D boxes, K = 3 views and at most 6 2D boxes
/// per view, packed into a small region so overlaps and conflicts are frequent.
pub fn random_instance(seed: u64) -> (Vec<Box3>, Vec<Vec<Box2>>, ViewSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let views = ViewSet::new(vec![-35.0, 0.0, 35.0], [96, 96], [1.0, 1.0]).unwrap();
    let n3 = rng.gen_range(0..=6);
    let boxes3: Vec<Box3> = (0..n3)
        .map(|_| {
            let c = [rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0)];
            let h = [rng.gen_range(1.0..8.0), rng.gen_range(1.0..8.0), rng.gen_range(1.0..8.0)];
            Box3::new(c[0] - h[0], c[1] - h[1], c[2] - h[2], c[0] + h[0], c[1] + h[1], c[2] + h[2])
                .unwrap()
                .with_score(rng.gen())
        })
        .collect();
    let boxes2 = (0..3)
        .map(|k| {
            let n2 = rng.gen_range(0..=6);
            (0..n2)
                .map(|_| {
                    // half the 2D boxes are noisy copies of projected 3D boxes
                    if !boxes3.is_empty() && rng.gen_bool(0.5) {
                        let src = &boxes3[rng.gen_range(0..boxes3.len())];
                        let p = project_box3(src, views.angles[k], (0.0, 0.0));
                        let mut j = || rng.gen_range(-2.0..2.0);
                        let (a, b, c, d) = (p.x1 + j(), p.z1 + j(), p.x2 + j(), p.z2 + j());
                        Box2::new(a.min(c), b.min(d), a.max(c), b.max(d)).unwrap().with_score(rng.gen())
                    } else {
                        let c = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)];
                        let h = [rng.gen_range(1.0..8.0), rng.gen_range(1.0..8.0)];
                        Box2::new(c[0] - h[0], c[1] - h[1], c[0] + h[0], c[1] + h[1]).unwrap().with_score(rng.gen())
                    }
                })
                .collect()
        })
        .collect();
    (boxes3, boxes2, views)
}

/// Plain sequential greedy fusion, written for clarity rather than speed.
/// Geometry comes from the box primitives, which are tested separately.
#[allow(clippy::needless_range_loop)]
pub fn naive_collaborate(boxes3: &[Box3], boxes2: &[Vec<Box2>], views: &ViewSet, threshold: f64) -> MatchOutcome {
    let center = (views.rotation_center[0], views.rotation_center[1]);
    let k_views = views.len();
    let mut rows = Vec::new();
    for (i, b3) in boxes3.iter().enumerate() {
        let mut u_row = Vec::new();
        let mut q_row = Vec::new();
        for k in 0..k_views {
            let p = project_box3(b3, views.angles[k], center);
            let mut best = 0.0;
            let mut best_j: i64 = -1;
            for (j, b2) in boxes2[k].iter().enumerate() {
                let v = iou2(&p, b2);
                if best_j < 0 || v > best {
                    best = v;
                    best_j = j as i64;
                }
            }
            if best_j >= 0 && best <= threshold {
                best_j = -1;
            }
            u_row.push(best);
            q_row.push(best_j);
        }
        let mean = u_row.iter().sum::<f64>() / k_views as f64;
        rows.push((i, mean, q_row));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| rows[b].1.partial_cmp(&rows[a].1).unwrap().then(a.cmp(&b)));

    let mut claimed: Vec<Vec<bool>> = boxes2.iter().map(|l| vec![false; l.len()]).collect();
    let mut groups = Vec::new();
    for &i in &order {
        let q = &rows[i].2;
        if q.iter().all(|&x| x < 0) {
            continue;
        }
        let clash = (0..k_views).any(|k| q[k] >= 0 && claimed[k][q[k] as usize]);
        if clash {
            continue;
        }
        let mut scores = Vec::new();
        if let Some(s) = boxes3[i].score {
            scores.push(s);
        }
        let mut per_view = Vec::new();
        for k in 0..k_views {
            if q[k] >= 0 {
                let j = q[k] as usize;
                claimed[k][j] = true;
                if let Some(s) = boxes2[k][j].score {
                    scores.push(s);
                }
                per_view.push(ViewBox::Detected { index: j, bbox: boxes2[k][j].clone() });
            } else {
                per_view.push(ViewBox::Recovered { bbox: project_box3(&boxes3[i], views.angles[k], center) });
            }
        }
        let score = if scores.is_empty() { None } else { Some(scores.iter().sum::<f64>() / scores.len() as f64) };
        groups.push(MatchGroup {
            index3: i,
            box3: boxes3[i].clone(),
            views: per_view,
            q_row: q.clone(),
            mean_iou: rows[i].1,
            score,
        });
    }
    let leftovers = boxes2
        .iter()
        .enumerate()
        .map(|(k, list)| {
            list.iter()
                .enumerate()
                .filter(|(j, _)| !claimed[k][*j])
                .map(|(j, b)| Leftover { index: j, bbox: b.clone() })
                .collect()
        })
        .collect();
    MatchOutcome { groups, leftovers }
}

/// Every kept group has one box per view, and no detected 2D box is used twice.
pub fn check_invariants(out: &MatchOutcome, boxes2: &[Vec<Box2>], k_views: usize) -> Result<(), String> {
    let mut used: Vec<Vec<bool>> = boxes2.iter().map(|l| vec![false; l.len()]).collect();
    for g in &out.groups {
        if g.views.len() != k_views {
            return Err(format!("group {} has {} views", g.index3, g.views.len()));
        }
        for (k, v) in g.views.iter().enumerate() {
            if let ViewBox::Detected { index, .. } = v {
                if used[k][*index] {
                    return Err(format!("view {k} box {index} used twice"));
                }
                used[k][*index] = true;
            }
        }
    }
    for (k, list) in out.leftovers.iter().enumerate() {
        for l in list {
            if used[k][l.index] {
                return Err(format!("view {k} box {} is both matched and left over", l.index));
            }
            used[k][l.index] = true;
        }
    }
    if used.iter().flatten().any(|u| !u) {
        return Err("some 2D box is neither matched nor left over".into());
    }
    Ok(())
}
