//! Detector stand-ins: a seeded perturbation of the ground truth and a naive
//! threshold-and-label blob detector.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::boxgeom::project_box3;
use crate::error::{Error, Result};
use crate::phantom::{mask_box3, GroundTruth};
use crate::types::{Box2, Box3, Image2, ViewSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbSpec {
    /// Per-view probability of dropping a true 2D box. A single value applies to every view.
    pub miss_prob: Vec<f64>,
    /// Per-view expected number of 2D false positives. A single value applies to every view.
    pub false_pos_rate: Vec<f64>,
    pub miss_prob_3d: f64,
    pub false_pos_rate_3d: f64,
    /// Standard deviation of the corner jitter, mm.
    pub jitter_sigma: f64,
    pub score_noise_sigma: f64,
    /// False positives are scored uniformly in `[0, fp_score_max]`.
    pub fp_score_max: f64,
    pub seed: u64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            miss_prob: vec![0.0],
            false_pos_rate: vec![0.0],
            miss_prob_3d: 0.0,
            false_pos_rate_3d: 0.0,
            jitter_sigma: 0.0,
            score_noise_sigma: 0.0,
            fp_score_max: 0.5,
            seed: 0,
        }
    }
}

impl PerturbSpec {
    fn per_view(values: &[f64], k: usize, what: &str) -> Result<f64> {
        match values.len() {
            0 => Ok(0.0),
            1 => Ok(values[0]),
            _ => values
                .get(k)
                .copied()
                .ok_or_else(|| Error::Config(format!("{what} has {} entries, view {k} missing", values.len()))),
        }
    }

    pub fn validate(&self, views: usize) -> Result<()> {
        if self.miss_prob.len() > 1 && self.miss_prob.len() != views {
            return Err(Error::Config(format!("miss_prob needs 1 or {views} entries")));
        }
        if self.false_pos_rate.len() > 1 && self.false_pos_rate.len() != views {
            return Err(Error::Config(format!("false_pos_rate needs 1 or {views} entries")));
        }
        let probs = self.miss_prob.iter().chain([&self.miss_prob_3d]);
        if probs.into_iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("miss probabilities must lie in [0, 1]".into()));
        }
        let rates = self.false_pos_rate.iter().chain([&self.false_pos_rate_3d]);
        if rates.into_iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("false positive rates must be non-negative".into()));
        }
        let sigmas = [self.jitter_sigma, self.score_noise_sigma];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("sigmas must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.fp_score_max) {
            return Err(Error::Config("fp_score_max must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Ground truth as seen by the perturbation detector.
#[derive(Debug, Clone)]
pub struct PerturbInput<'a> {
    pub boxes3: &'a [Box3],
    pub boxes2: &'a [Vec<Box2>],
    /// Region where 3D false positives are placed; its projection bounds the 2D ones.
    pub region: Box3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detections {
    pub boxes2: Vec<Vec<Box2>>,
    pub boxes3: Vec<Box3>,
}

/// `floor(rate)` plus one more with probability `fract(rate)`.
fn draw_count(rng: &mut ChaCha8Rng, rate: f64) -> usize {
    let base = rate.floor();
    base as usize + usize::from(rng.gen::<f64>() < rate - base)
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn jitter_interval(rng: &mut ChaCha8Rng, a: f64, b: f64, sigma: f64) -> (f64, f64) {
    let (p, q) = (a + gauss(rng, sigma), b + gauss(rng, sigma));
    (p.min(q), p.max(q))
}

fn true_score(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    (1.0 - gauss(rng, sigma).abs()).clamp(0.0, 1.0)
}

pub fn perturb_detect(input: &PerturbInput<'_>, views: &ViewSet, spec: &PerturbSpec) -> Result<Detections> {
    views.validate()?;
    spec.validate(views.len())?;
    if input.boxes2.len() != views.len() {
        return Err(Error::Geometry(format!(
            "ground truth has {} views, view set has {}",
            input.boxes2.len(),
            views.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let center = (views.rotation_center[0], views.rotation_center[1]);

    let mean_size = |dims: &dyn Fn(&Box3) -> f64| {
        if input.boxes3.is_empty() {
            20.0
        } else {
            input.boxes3.iter().map(dims).sum::<f64>() / input.boxes3.len() as f64
        }
    };
    let typical = [
        mean_size(&|b| b.size()[0]),
        mean_size(&|b| b.size()[1]),
        mean_size(&|b| b.size()[2]),
    ];

    let mut boxes2 = Vec::with_capacity(views.len());
    for (k, gts) in input.boxes2.iter().enumerate() {
        let miss = PerturbSpec::per_view(&spec.miss_prob, k, "miss_prob")?;
        let rate = PerturbSpec::per_view(&spec.false_pos_rate, k, "false_pos_rate")?;
        let mut out = Vec::new();
        for gt in gts {
            if rng.gen::<f64>() < miss {
                continue;
            }
            let (x1, x2) = jitter_interval(&mut rng, gt.x1, gt.x2, spec.jitter_sigma);
            let (z1, z2) = jitter_interval(&mut rng, gt.z1, gt.z2, spec.jitter_sigma);
            let score = true_score(&mut rng, spec.score_noise_sigma);
            out.push(Box2 { x1, z1, x2, z2, score: Some(score), label: gt.label.clone() });
        }
        let footprint = project_box3(&input.region, views.angles[k], center);
        for _ in 0..draw_count(&mut rng, rate) {
            let w = typical[0].max(typical[1]) * uniform(&mut rng, 0.5, 1.5);
            let h = typical[2] * uniform(&mut rng, 0.5, 1.5);
            let cx = uniform(&mut rng, footprint.x1, footprint.x2);
            let cz = uniform(&mut rng, footprint.z1, footprint.z2);
            let score = uniform(&mut rng, 0.0, spec.fp_score_max);
            out.push(Box2 {
                x1: cx - 0.5 * w,
                z1: cz - 0.5 * h,
                x2: cx + 0.5 * w,
                z2: cz + 0.5 * h,
                score: Some(score),
                label: Some("fp".into()),
            });
        }
        boxes2.push(out);
    }

    let mut boxes3 = Vec::new();
    for gt in input.boxes3 {
        if rng.gen::<f64>() < spec.miss_prob_3d {
            continue;
        }
        let (x1, x2) = jitter_interval(&mut rng, gt.x1, gt.x2, spec.jitter_sigma);
        let (y1, y2) = jitter_interval(&mut rng, gt.y1, gt.y2, spec.jitter_sigma);
        let (z1, z2) = jitter_interval(&mut rng, gt.z1, gt.z2, spec.jitter_sigma);
        let score = true_score(&mut rng, spec.score_noise_sigma);
        boxes3.push(Box3 { x1, y1, z1, x2, y2, z2, score: Some(score), label: gt.label.clone() });
    }
    let r = &input.region;
    for _ in 0..draw_count(&mut rng, spec.false_pos_rate_3d) {
        let c = [
            uniform(&mut rng, r.x1, r.x2),
            uniform(&mut rng, r.y1, r.y2),
            uniform(&mut rng, r.z1, r.z2),
        ];
        let s = typical.map(|t| t * uniform(&mut rng, 0.5, 1.5));
        let score = uniform(&mut rng, 0.0, spec.fp_score_max);
        boxes3.push(Box3 {
            x1: c[0] - 0.5 * s[0],
            y1: c[1] - 0.5 * s[1],
            z1: c[2] - 0.5 * s[2],
            x2: c[0] + 0.5 * s[0],
            y2: c[1] + 0.5 * s[1],
            z2: c[2] + 0.5 * s[2],
            score: Some(score),
            label: Some("fp".into()),
        });
    }

    Ok(Detections { boxes2, boxes3 })
}

/// [`perturb_detect`] driven directly by a phantom's ground truth; false
/// positives are placed inside the bounding box of the lung mask.
pub fn perturb_detect_gt(gt: &GroundTruth, views: &ViewSet, spec: &PerturbSpec) -> Result<Detections> {
    let boxes2 = gt
        .boxes2
        .as_ref()
        .ok_or_else(|| Error::Config("ground truth has no 2D boxes for these views".into()))?;
    let region = mask_box3(&gt.lung_mask)
        .ok_or_else(|| Error::Validation("lung mask is empty".into()))?;
    perturb_detect(&PerturbInput { boxes3: &gt.boxes3, boxes2, region }, views, spec)
}

/// Thresholds a single-channel image, labels 4-connected components and
/// returns the tight box of each component with at least `min_area` pixels,
/// in scan order of the components' first pixels.
///
/// The score is the mean excess over `threshold` divided by the largest
/// excess in the image, clamped to `[0, 1]`.
pub fn blob_detect(image: &Image2, threshold: f32, min_area: usize) -> Result<Vec<Box2>> {
    if image.channels() != 1 {
        return Err(Error::Shape(format!(
            "blob detection needs a single-channel image, got {}",
            image.channels()
        )));
    }
    let [nu, nv] = image.dims();
    let [su, sv] = image.spacing();
    let px = image.channel(0);
    let peak = px.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) - threshold;
    let mut label = vec![false; px.len()];
    let mut queue = VecDeque::new();
    let mut out = Vec::new();

    for start in 0..px.len() {
        if label[start] || px[start] <= threshold {
            continue;
        }
        label[start] = true;
        queue.push_back(start);
        let (mut lo, mut hi) = ([usize::MAX; 2], [0usize; 2]);
        let (mut area, mut excess) = (0usize, 0f64);
        while let Some(p) = queue.pop_front() {
            let (iu, iv) = (p % nu, p / nu);
            area += 1;
            excess += (px[p] - threshold) as f64;
            lo = [lo[0].min(iu), lo[1].min(iv)];
            hi = [hi[0].max(iu), hi[1].max(iv)];
            let mut visit = |q: usize| {
                if !label[q] && px[q] > threshold {
                    label[q] = true;
                    queue.push_back(q);
                }
            };
            if iu > 0 {
                visit(p - 1);
            }
            if iu + 1 < nu {
                visit(p + 1);
            }
            if iv > 0 {
                visit(p - nu);
            }
            if iv + 1 < nv {
                visit(p + nu);
            }
        }
        if area < min_area {
            continue;
        }
        let (x1, z1) = image.pixel_center(lo[0], lo[1]);
        let (x2, z2) = image.pixel_center(hi[0], hi[1]);
        let score = if peak > 0.0 {
            (excess / area as f64 / peak as f64).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(Box2 {
            x1: x1 - 0.5 * su,
            z1: z1 - 0.5 * sv,
            x2: x2 + 0.5 * su,
            z2: z2 + 0.5 * sv,
            score: Some(score),
            label: None,
        });
    }
    Ok(out)
}

/// Subtracts the mean over a `(2r+1)²` window (clipped at the borders) from
/// every pixel, removing slowly varying background before blob detection.
pub fn tophat(image: &Image2, radius: usize) -> Result<Image2> {
    let [nu, nv] = image.dims();
    let mut data = Vec::with_capacity(image.data().len());
    for c in 0..image.channels() {
        let px = image.channel(c);
        // summed-area table with a zero border
        let w = nu + 1;
        let mut sat = vec![0f64; w * (nv + 1)];
        for iv in 0..nv {
            let mut row = 0f64;
            for iu in 0..nu {
                row += px[iv * nu + iu] as f64;
                sat[(iv + 1) * w + iu + 1] = sat[iv * w + iu + 1] + row;
            }
        }
        for iv in 0..nv {
            let (v0, v1) = (iv.saturating_sub(radius), (iv + radius + 1).min(nv));
            for iu in 0..nu {
                let (u0, u1) = (iu.saturating_sub(radius), (iu + radius + 1).min(nu));
                let sum = sat[v1 * w + u1] - sat[v0 * w + u1] - sat[v1 * w + u0] + sat[v0 * w + u0];
                let mean = sum / ((v1 - v0) * (u1 - u0)) as f64;
                data.push((px[iv * nu + iu] as f64 - mean) as f32);
            }
        }
    }
    Image2::new(image.dims(), image.spacing(), image.origin(), image.channels(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(nu: usize, nv: usize, data: Vec<f32>) -> Image2 {
        Image2::new([nu, nv], [1.0, 1.0], [0.0, 0.0], 1, data).unwrap()
    }

    fn sample_input() -> (Vec<Box3>, Vec<Vec<Box2>>, ViewSet, Box3) {
        let views = ViewSet::new(vec![-35.0, 0.0, 35.0], [64, 64], [1.0, 1.0]).unwrap();
        let b3 = vec![
            Box3::new(-10.0, -5.0, -5.0, 0.0, 5.0, 5.0).unwrap().with_label("n0"),
            Box3::new(5.0, 0.0, 0.0, 12.0, 7.0, 9.0).unwrap().with_label("n1"),
        ];
        let b2 = views
            .angles
            .iter()
            .map(|&t| b3.iter().map(|b| project_box3(b, t, (0.0, 0.0))).collect())
            .collect();
        let region = Box3::new(-30.0, -20.0, -20.0, 30.0, 20.0, 20.0).unwrap();
        (b3, b2, views, region)
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let (b3, b2, views, region) = sample_input();
        let input = PerturbInput { boxes3: &b3, boxes2: &b2, region };
        let det = perturb_detect(&input, &views, &PerturbSpec::default()).unwrap();
        for (got, want) in det.boxes2.iter().zip(&b2) {
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(want) {
                assert_eq!(g.coords(), w.coords());
                assert_eq!(g.score, Some(1.0));
            }
        }
        assert_eq!(det.boxes3.iter().map(Box3::coords).collect::<Vec<_>>(), b3.iter().map(Box3::coords).collect::<Vec<_>>());
    }

    #[test]
    fn certain_miss_empties_views() {
        let (b3, b2, views, region) = sample_input();
        let spec = PerturbSpec { miss_prob: vec![1.0], ..Default::default() };
        let det = perturb_detect(&PerturbInput { boxes3: &b3, boxes2: &b2, region }, &views, &spec).unwrap();
        assert!(det.boxes2.iter().all(Vec::is_empty));
        assert_eq!(det.boxes3.len(), 2);
    }

    #[test]
    fn seeded_determinism() {
        let (b3, b2, views, region) = sample_input();
        let input = PerturbInput { boxes3: &b3, boxes2: &b2, region };
        let spec = PerturbSpec {
            miss_prob: vec![0.3, 0.0, 0.3],
            false_pos_rate: vec![1.5],
            false_pos_rate_3d: 2.0,
            jitter_sigma: 1.0,
            score_noise_sigma: 0.1,
            seed: 7,
            ..Default::default()
        };
        let a = perturb_detect(&input, &views, &spec).unwrap();
        assert_eq!(a, perturb_detect(&input, &views, &spec).unwrap());
        let b = perturb_detect(&input, &views, &PerturbSpec { seed: 8, ..spec.clone() }).unwrap();
        assert_ne!(a, b);
        for list in &a.boxes2 {
            for bx in list {
                bx.validate().unwrap();
            }
        }
    }

    #[test]
    fn bad_specs_rejected() {
        let (b3, b2, views, region) = sample_input();
        let input = PerturbInput { boxes3: &b3, boxes2: &b2, region };
        for spec in [
            PerturbSpec { miss_prob: vec![1.5], ..Default::default() },
            PerturbSpec { miss_prob: vec![0.1, 0.2], ..Default::default() },
            PerturbSpec { jitter_sigma: -1.0, ..Default::default() },
            PerturbSpec { false_pos_rate: vec![-0.1], ..Default::default() },
        ] {
            assert!(matches!(perturb_detect(&input, &views, &spec), Err(Error::Config(_))));
        }
    }

    #[test]
    fn fp_count_is_floor_plus_bernoulli() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let counts: Vec<usize> = (0..2000).map(|_| draw_count(&mut rng, 2.25)).collect();
        assert!(counts.iter().all(|&c| c == 2 || c == 3));
        let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        assert!((mean - 2.25).abs() < 0.05, "{mean}");
    }

    #[test]
    fn blank_image_has_no_blobs() {
        assert!(blob_detect(&image(8, 8, vec![0.0; 64]), 0.5, 1).unwrap().is_empty());
    }

    #[test]
    fn components_are_four_connected() {
        #[rustfmt::skip]
        let px = vec![
            1.0, 1.0, 0.0, 0.0, 0.0,
            1.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 2.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 3.0,
        ];
        let boxes = blob_detect(&image(5, 4, px.clone()), 0.5, 1).unwrap();
        assert_eq!(boxes.len(), 3);
        assert_eq!(boxes[0].coords(), [-0.5, -0.5, 1.5, 1.5]);
        assert_eq!(boxes[1].coords(), [1.5, 1.5, 2.5, 2.5]);
        assert_eq!(boxes[2].score, Some(1.0));
        assert!(boxes.iter().all(|b| b.x1 >= -0.5 && b.x2 <= 4.5 && b.z1 >= -0.5 && b.z2 <= 3.5));
        let big = blob_detect(&image(5, 4, px), 0.5, 2).unwrap();
        assert_eq!(big.len(), 1);
    }

    #[test]
    fn multichannel_rejected() {
        let img = Image2::zeros([4, 4], [1.0, 1.0], [0.0, 0.0], 2).unwrap();
        assert!(matches!(blob_detect(&img, 0.0, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn tophat_flattens_constant_background() {
        let mut px = vec![5.0f32; 100];
        px[55] = 9.0;
        let th = tophat(&image(10, 10, px), 2).unwrap();
        assert!(th.get(0, 0, 0).abs() < 1e-6);
        assert!((th.get(0, 5, 5) - (4.0 - 4.0 / 25.0)).abs() < 1e-5);
    }
}
