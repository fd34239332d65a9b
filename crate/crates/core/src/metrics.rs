//! Losses and evaluation metrics: mean absolute error, binary cross entropy,
//! smooth L1, PSNR, SSIM and average precision.

use serde::{Deserialize, Serialize};

use crate::boxgeom::{iou2, iou3};
use crate::error::{Error, Result};
use crate::types::{Box2, Box3, Image2};

/// Probability clamp used by [`bce`].
pub const BCE_EPS: f64 = 1e-7;

/// PSNR reported for identical images.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

fn check_pair(a: &Image2, b: &Image2) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "{:?}x{} vs {:?}x{}",
            a.dims(),
            a.channels(),
            b.dims(),
            b.channels()
        )));
    }
    Ok(())
}

/// Mean absolute difference over every pixel of every image pair.
pub fn mae_loss(pred: &[Image2], target: &[Image2]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    let mut sum = 0f64;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(target) {
        check_pair(p, t)?;
        sum += p.data().iter().zip(t.data()).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum::<f64>();
        count += p.data().len();
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Binary cross entropy of probability `p` against label `target`.
pub fn bce(p: f64, target: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Smooth L1 summed over the components of `t - t_star`.
pub fn smooth_l1_offsets(t: &[f64], t_star: &[f64]) -> Result<f64> {
    if t.len() != t_star.len() {
        return Err(Error::Shape(format!("{} offsets vs {}", t.len(), t_star.len())));
    }
    Ok(t.iter().zip(t_star).map(|(a, b)| smooth_l1(a - b)).sum())
}

fn default_peak(reference: &Image2) -> f64 {
    let max = reference.data().iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    if max > 0.0 {
        return max;
    }
    let abs = reference.data().iter().fold(0f32, |m, &v| m.max(v.abs())) as f64;
    if abs > 0.0 {
        abs
    } else {
        1.0
    }
}

/// `10 log10(peak² / MSE)`. `peak` defaults to the maximum of `reference`.
/// Identical images give [`PSNR_IDENTICAL`].
pub fn psnr(pred: &Image2, reference: &Image2, peak: Option<f64>) -> Result<f64> {
    check_pair(pred, reference)?;
    let n = pred.data().len() as f64;
    let mse = pred
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL);
    }
    let peak = peak.unwrap_or_else(|| default_peak(reference));
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    /// Side length of the Gaussian window, odd.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Defaults to the PSNR peak convention.
    pub dynamic_range: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: None }
    }
}

impl SsimParams {
    /// Normalized 1D Gaussian taps.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let taps: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / s).collect()
    }
}

/// Valid-mode separable filtering of a `nu x nv` plane.
fn filter_valid(px: &[f64], nu: usize, nv: usize, taps: &[f64]) -> Vec<f64> {
    let w = taps.len();
    let (ou, ov) = (nu - w + 1, nv - w + 1);
    let mut rows = vec![0f64; ou * nv];
    for iv in 0..nv {
        for iu in 0..ou {
            rows[iv * ou + iu] = taps.iter().enumerate().map(|(t, k)| k * px[iv * nu + iu + t]).sum();
        }
    }
    let mut out = vec![0f64; ou * ov];
    for iv in 0..ov {
        for iu in 0..ou {
            out[iv * ou + iu] = taps.iter().enumerate().map(|(t, k)| k * rows[(iv + t) * ou + iu]).sum();
        }
    }
    out
}

/// Mean structural similarity over every fully covered window position,
/// averaged across channels.
pub fn ssim(pred: &Image2, reference: &Image2, params: &SsimParams) -> Result<f64> {
    check_pair(pred, reference)?;
    let [nu, nv] = pred.dims();
    if params.window == 0 || params.window.is_multiple_of(2) {
        return Err(Error::Config(format!("SSIM window must be odd, got {}", params.window)));
    }
    if nu < params.window || nv < params.window {
        return Err(Error::Shape(format!(
            "image {nu}x{nv} is smaller than the {}x{} SSIM window",
            params.window, params.window
        )));
    }
    let range = params.dynamic_range.unwrap_or_else(|| default_peak(reference));
    let c1 = (params.k1 * range).powi(2);
    let c2 = (params.k2 * range).powi(2);
    let taps = params.kernel();

    let mut total = 0f64;
    for c in 0..pred.channels() {
        let x: Vec<f64> = pred.channel(c).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = reference.channel(c).iter().map(|&v| v as f64).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, nu, nv, &taps));
        let mut sum = 0f64;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / pred.channels() as f64)
}

/// Boxes that can be scored and matched by overlap.
pub trait Detection: Clone {
    fn score_or_zero(&self) -> f64;
    fn overlap(&self, other: &Self) -> f64;
}

impl Detection for Box2 {
    fn score_or_zero(&self) -> f64 {
        self.score.unwrap_or(0.0)
    }

    fn overlap(&self, other: &Self) -> f64 {
        iou2(self, other)
    }
}

impl Detection for Box3 {
    fn score_or_zero(&self) -> f64 {
        self.score.unwrap_or(0.0)
    }

    fn overlap(&self, other: &Self) -> f64 {
        iou3(self, other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApInterpolation {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 0, 0.1, ..., 1.
    ElevenPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per detection, in descending score order.
    pub points: Vec<PrPoint>,
    pub ap: f64,
    pub n_gt: usize,
    pub n_det: usize,
    pub true_positives: usize,
}

/// Average precision of `dets` against `gts`.
pub fn average_precision<B: Detection>(
    dets: &[B],
    gts: &[B],
    iou_thresh: f64,
    interp: ApInterpolation,
) -> Result<PrCurve> {
    average_precision_grouped(&[dets.to_vec()], &[gts.to_vec()], iou_thresh, interp)
}

/// Average precision pooled over groups (views or images): detections are
/// ranked together but can only match ground truth of their own group.
pub fn average_precision_grouped<B: Detection>(
    dets: &[Vec<B>],
    gts: &[Vec<B>],
    iou_thresh: f64,
    interp: ApInterpolation,
) -> Result<PrCurve> {
    if !(iou_thresh > 0.0 && iou_thresh <= 1.0) {
        return Err(Error::Config(format!("IoU threshold must be in (0, 1], got {iou_thresh}")));
    }
    if dets.len() != gts.len() {
        return Err(Error::Shape(format!("{} detection groups vs {} ground-truth groups", dets.len(), gts.len())));
    }
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    let mut ranked: Vec<(usize, &B)> = dets
        .iter()
        .enumerate()
        .flat_map(|(g, list)| list.iter().map(move |d| (g, d)))
        .collect();
    // stable: equal scores keep input order
    ranked.sort_by(|a, b| b.1.score_or_zero().total_cmp(&a.1.score_or_zero()));
    let n_det = ranked.len();

    if n_gt == 0 {
        let ap = if n_det == 0 { 1.0 } else { 0.0 };
        let points = ranked
            .iter()
            .map(|(_, d)| PrPoint { score: d.score_or_zero(), precision: 0.0, recall: 0.0 })
            .collect();
        return Ok(PrCurve { points, ap, n_gt, n_det, true_positives: 0 });
    }

    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(n_det);
    for (rank, (g, det)) in ranked.iter().enumerate() {
        let mut best = None;
        let mut best_iou = f64::NEG_INFINITY;
        for (j, gt) in gts[*g].iter().enumerate() {
            if taken[*g][j] {
                continue;
            }
            let v = det.overlap(gt);
            if v > best_iou {
                best_iou = v;
                best = Some(j);
            }
        }
        if let Some(j) = best.filter(|_| best_iou >= iou_thresh) {
            taken[*g][j] = true;
            tp += 1;
        }
        points.push(PrPoint {
            score: det.score_or_zero(),
            precision: tp as f64 / (rank + 1) as f64,
            recall: tp as f64 / n_gt as f64,
        });
    }

    let ap = match interp {
        ApInterpolation::AllPoint => all_point_ap(&points),
        ApInterpolation::ElevenPoint => eleven_point_ap(&points),
    };
    Ok(PrCurve { points, ap, n_gt, n_det, true_positives: tp })
}

fn envelope(points: &[PrPoint]) -> Vec<f64> {
    let mut env: Vec<f64> = points.iter().map(|p| p.precision).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    env
}

fn all_point_ap(points: &[PrPoint]) -> f64 {
    let env = envelope(points);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (p, e) in points.iter().zip(&env) {
        if p.recall > prev_recall {
            ap += (p.recall - prev_recall) * e;
            prev_recall = p.recall;
        }
    }
    ap.clamp(0.0, 1.0)
}

fn eleven_point_ap(points: &[PrPoint]) -> f64 {
    let env = envelope(points);
    (0..=10)
        .map(|i| {
            let r = i as f64 / 10.0;
            points
                .iter()
                .zip(&env)
                .find(|(p, _)| p.recall >= r - 1e-12)
                .map_or(0.0, |(_, e)| *e)
        })
        .sum::<f64>()
        / 11.0
}
