//! Collaborative 2D-3D matching.
//!
//! Every 3D candidate is projected into each view and paired with its best
//! overlapping 2D detection there. When several 3D candidates claim the same
//! 2D detection, only the one with the highest mean IoU over all views is
//! kept. Survivors fill the views where they matched nothing with their own
//! projection, and 2D detections claimed by no survivor are passed through.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::boxgeom::{iou2, project_box3};
use crate::error::{Error, Result};
use crate::types::{Box2, Box3, ViewSet};

/// A pairing is accepted only when its IoU is strictly above this value.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchConfig {
    pub threshold: f64,
}

/// Best IoU (`u`) and best 2D index (`q`, `-1` for none) of every 3D box in every view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouMatrix {
    pub rows: usize,
    pub views: usize,
    /// Row-major `rows x views`.
    pub u: Vec<f64>,
    pub q: Vec<i64>,
}

impl IouMatrix {
    pub fn u(&self, i: usize, k: usize) -> f64 {
        self.u[i * self.views + k]
    }

    pub fn q(&self, i: usize, k: usize) -> i64 {
        self.q[i * self.views + k]
    }

    pub fn q_row(&self, i: usize) -> &[i64] {
        &self.q[i * self.views..(i + 1) * self.views]
    }

    pub fn mean_iou(&self, i: usize) -> f64 {
        let row = &self.u[i * self.views..(i + 1) * self.views];
        row.iter().sum::<f64>() / self.views as f64
    }
}

fn center(views: &ViewSet) -> (f64, f64) {
    (views.rotation_center[0], views.rotation_center[1])
}

pub fn build_iou_matrix(
    boxes3: &[Box3],
    boxes2: &[Vec<Box2>],
    views: &ViewSet,
    cfg: &MatchConfig,
) -> Result<IouMatrix> {
    if boxes2.len() != views.len() {
        return Err(Error::Geometry(format!(
            "2D detections for {} views, view set has {}",
            boxes2.len(),
            views.len()
        )));
    }
    let k_views = views.len();
    let mut u = vec![0.0; boxes3.len() * k_views];
    let mut q = vec![-1i64; boxes3.len() * k_views];
    for (i, b3) in boxes3.iter().enumerate() {
        for (k, &theta) in views.angles.iter().enumerate() {
            let projected = project_box3(b3, theta, center(views));
            let mut best = 0.0;
            let mut best_j = -1i64;
            for (j, b2) in boxes2[k].iter().enumerate() {
                let v = iou2(&projected, b2);
                if best_j < 0 || v > best {
                    best = v;
                    best_j = j as i64;
                }
            }
            u[i * k_views + k] = best;
            q[i * k_views + k] = if best > cfg.threshold { best_j } else { -1 };
        }
    }
    Ok(IouMatrix { rows: boxes3.len(), views: k_views, u, q })
}

/// Order in which 3D boxes claim 2D detections: mean IoU descending, then index.
pub fn priority_order(m: &IouMatrix) -> Vec<usize> {
    let means: Vec<f64> = (0..m.rows).map(|i| m.mean_iou(i)).collect();
    let mut order: Vec<usize> = (0..m.rows).collect();
    order.sort_by(|&a, &b| {
        means[b]
            .partial_cmp(&means[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Indices of the 3D boxes that survive conflict resolution, highest priority first.
/// Rows of `m.q` at these indices form the matched index matrix.
pub fn resolve_matches(m: &IouMatrix) -> Vec<usize> {
    let mut claimed: Vec<HashSet<i64>> = vec![HashSet::new(); m.views];
    let mut kept = Vec::new();
    for i in priority_order(m) {
        let row = m.q_row(i);
        if row.iter().all(|&q| q < 0) {
            continue;
        }
        let conflict = row
            .iter()
            .enumerate()
            .any(|(k, &q)| q >= 0 && claimed[k].contains(&q));
        if conflict {
            continue;
        }
        for (k, &q) in row.iter().enumerate() {
            if q >= 0 {
                claimed[k].insert(q);
            }
        }
        kept.push(i);
    }
    kept
}

/// Where a per-view output box came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum ViewBox {
    /// The 2D detection with this index in its view.
    Detected { index: usize, bbox: Box2 },
    /// Projection of the group's 3D box; the view had no matching detection.
    Recovered { bbox: Box2 },
}

impl ViewBox {
    pub fn bbox(&self) -> &Box2 {
        match self {
            ViewBox::Detected { bbox, .. } | ViewBox::Recovered { bbox } => bbox,
        }
    }

    pub fn is_recovered(&self) -> bool {
        matches!(self, ViewBox::Recovered { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchGroup {
    /// Index of the 3D box in the input list.
    pub index3: usize,
    pub box3: Box3,
    pub views: Vec<ViewBox>,
    pub q_row: Vec<i64>,
    pub mean_iou: f64,
    /// Mean of the 3D score and the scores of the matched detections.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leftover {
    pub index: usize,
    pub bbox: Box2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    /// Sorted by descending mean IoU.
    pub groups: Vec<MatchGroup>,
    /// Per view, the detections referenced by no group.
    pub leftovers: Vec<Vec<Leftover>>,
}

impl MatchOutcome {
    /// Final per-view 2D results: each group's box (scored with the group score
    /// when it has one) followed by the leftovers with their own scores.
    pub fn fused_boxes2(&self) -> Vec<Vec<Box2>> {
        let mut out: Vec<Vec<Box2>> = vec![Vec::new(); self.leftovers.len()];
        for g in &self.groups {
            for (k, vb) in g.views.iter().enumerate() {
                let mut b = vb.bbox().clone();
                if g.score.is_some() {
                    b.score = g.score;
                }
                out[k].push(b);
            }
        }
        for (k, left) in self.leftovers.iter().enumerate() {
            out[k].extend(left.iter().map(|l| l.bbox.clone()));
        }
        out
    }

    pub fn boxes3(&self) -> Vec<Box3> {
        self.groups
            .iter()
            .map(|g| {
                let mut b = g.box3.clone();
                if g.score.is_some() {
                    b.score = g.score;
                }
                b
            })
            .collect()
    }
}

pub fn collaborate(
    boxes3: &[Box3],
    boxes2: &[Vec<Box2>],
    views: &ViewSet,
    cfg: &MatchConfig,
) -> Result<MatchOutcome> {
    let m = build_iou_matrix(boxes3, boxes2, views, cfg)?;
    let kept = resolve_matches(&m);

    let mut used: Vec<HashSet<usize>> = vec![HashSet::new(); views.len()];
    let mut groups = Vec::with_capacity(kept.len());
    for &i in &kept {
        let b3 = &boxes3[i];
        let mut scores: Vec<f64> = b3.score.into_iter().collect();
        let per_view = (0..views.len())
            .map(|k| match m.q(i, k) {
                q if q >= 0 => {
                    let j = q as usize;
                    used[k].insert(j);
                    let bbox = boxes2[k][j].clone();
                    scores.extend(bbox.score);
                    ViewBox::Detected { index: j, bbox }
                }
                _ => ViewBox::Recovered { bbox: project_box3(b3, views.angles[k], center(views)) },
            })
            .collect();
        let score = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
        groups.push(MatchGroup {
            index3: i,
            box3: b3.clone(),
            views: per_view,
            q_row: m.q_row(i).to_vec(),
            mean_iou: m.mean_iou(i),
            score,
        });
    }

    let leftovers = boxes2
        .iter()
        .enumerate()
        .map(|(k, list)| {
            list.iter()
                .enumerate()
                .filter(|(j, _)| !used[k].contains(j))
                .map(|(j, b)| Leftover { index: j, bbox: b.clone() })
                .collect()
        })
        .collect();

    Ok(MatchOutcome { groups, leftovers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn views3() -> ViewSet {
        ViewSet::new(vec![-35.0, 0.0, 35.0], [64, 64], [1.0, 1.0]).unwrap()
    }

    fn cube(c: [f64; 3], h: f64) -> Box3 {
        Box3::new(c[0] - h, c[1] - h, c[2] - h, c[0] + h, c[1] + h, c[2] + h).unwrap()
    }

    fn matrix(u: Vec<f64>, q: Vec<i64>, views: usize) -> IouMatrix {
        IouMatrix { rows: u.len() / views, views, u, q }
    }

    #[test]
    fn empty_view_column_is_unmatched() {
        let vs = views3();
        let b = cube([0.0; 3], 5.0);
        let boxes2 = vec![vec![project_box3(&b, -35.0, (0.0, 0.0))], vec![], vec![]];
        let m = build_iou_matrix(&[b], &boxes2, &vs, &MatchConfig::default()).unwrap();
        assert_eq!(m.q_row(0), &[0, -1, -1]);
    }

    #[test]
    fn exact_projections_match_everywhere() {
        let vs = views3();
        let b = cube([3.0, -2.0, 1.0], 4.0);
        let boxes2: Vec<Vec<Box2>> =
            vs.angles.iter().map(|&t| vec![project_box3(&b, t, (0.0, 0.0))]).collect();
        let m = build_iou_matrix(&[b], &boxes2, &vs, &MatchConfig::default()).unwrap();
        assert_eq!(m.u, vec![1.0; 3]);
        assert_eq!(m.q, vec![0; 3]);
    }

    #[test]
    fn view_count_mismatch() {
        let err = build_iou_matrix(&[], &[vec![]], &views3(), &MatchConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn stronger_box_wins_shared_detection() {
        let m = matrix(vec![0.8, 0.8, 0.8, 0.3, 0.3, 0.3], vec![0, -1, -1, 0, -1, -1], 3);
        assert_eq!(resolve_matches(&m), vec![0]);
        let m = matrix(vec![0.3, 0.3, 0.3, 0.8, 0.8, 0.8], vec![0, -1, -1, 0, -1, -1], 3);
        assert_eq!(resolve_matches(&m), vec![1]);
    }

    #[test]
    fn disjoint_signatures_all_survive() {
        let m = matrix(vec![0.5, 0.2, 0.9, 0.1], vec![0, 1, 1, 0], 2);
        assert_eq!(resolve_matches(&m), vec![1, 0]);
    }

    #[test]
    fn unmatched_rows_are_dropped() {
        let m = matrix(vec![0.0; 6], vec![-1; 6], 3);
        assert!(resolve_matches(&m).is_empty());
    }

    #[test]
    fn missing_view_is_recovered() {
        let vs = views3();
        let b = cube([5.0, 0.0, -3.0], 6.0).with_score(0.9);
        let mut boxes2: Vec<Vec<Box2>> = vs
            .angles
            .iter()
            .map(|&t| vec![project_box3(&b, t, (0.0, 0.0)).with_score(0.7)])
            .collect();
        boxes2[2].clear();
        let out = collaborate(std::slice::from_ref(&b), &boxes2, &vs, &MatchConfig::default()).unwrap();
        assert_eq!(out.groups.len(), 1);
        let g = &out.groups[0];
        assert!(!g.views[0].is_recovered() && !g.views[1].is_recovered());
        assert_eq!(g.views[2], ViewBox::Recovered { bbox: project_box3(&b, 35.0, (0.0, 0.0)) });
        assert!((g.score.unwrap() - (0.9 + 0.7 + 0.7) / 3.0).abs() < 1e-12);
        assert!(out.leftovers.iter().all(Vec::is_empty));
    }

    #[test]
    fn no_3d_boxes_leaves_everything_over() {
        let vs = views3();
        let b = Box2::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let boxes2 = vec![vec![b.clone()], vec![b.clone(), b.clone()], vec![]];
        let out = collaborate(&[], &boxes2, &vs, &MatchConfig::default()).unwrap();
        assert!(out.groups.is_empty());
        assert_eq!(out.leftovers.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 2, 0]);
        assert_eq!(out.fused_boxes2(), boxes2);
    }

    #[test]
    fn threshold_rejects_weak_overlap() {
        let vs = ViewSet::new(vec![0.0], [64, 64], [1.0, 1.0]).unwrap();
        let b = cube([0.0; 3], 2.0);
        let shifted = Box2::new(1.0, -2.0, 5.0, 2.0).unwrap();
        let loose = build_iou_matrix(std::slice::from_ref(&b), &[vec![shifted.clone()]], &vs, &MatchConfig::default()).unwrap();
        assert_eq!(loose.q, vec![0]);
        let strict = build_iou_matrix(&[b], &[vec![shifted]], &vs, &MatchConfig { threshold: 0.5 }).unwrap();
        assert_eq!(strict.q, vec![-1]);
    }
}
