//! The `xdt` command line: every pipeline stage reads its inputs from and
//! writes its outputs to the output directory, so stages can be rerun or
//! replaced independently.
//!
//! Output directory layout:
//!
//! | stage    | files |
//! |----------|-------|
//! | phantom  | `phantom.json`, `volume`, `lung_mask`, `lungs`, `nodule_masks`, `gt3d.jsonl`, `lung3d.jsonl` |
//! | project  | `views.json`, `original_v{k}`, `lungmask_v{k}`, `nodules_v{k}`, `gt2d.jsonl` |
//! | dissect  | `dissected_v{k}` |
//! | detect   | `det2d.jsonl`, `det3d.jsonl` |
//! | match    | `match.json`, `collab2d.jsonl`, `collab3d.jsonl` |
//! | eval-ap  | `eval_ap.json` |
//! | eval-image | `eval_image.json` |
//! | sweep    | `sweep.json`, `sweep.tsv` |
//!
//! Grids (`volume`, `original_v0`, ...) are stored as a `.json` header plus a
//! `.raw` little-endian f32 payload.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::detect::{blob_detect, perturb_detect, tophat, PerturbInput, PerturbSpec};
use crate::io::{self, BoxRecord};
use crate::matching::{collaborate, MatchConfig};
use crate::metrics::{self, ApInterpolation, PrPoint, SsimParams};
use crate::phantom::{self, generate_phantom, make_ground_truth_boxes, GroundTruth, PhantomSpec};
use crate::projector::{apply_mask, dissect_project, forward_project, ProjectorConfig};
use crate::selfcheck;
use crate::types::{Box2, Image2, ViewSet, Volume3, VolumeGeometry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DetectMode {
    #[default]
    Perturb,
    Blob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobConfig {
    /// Image prefix the blob detector runs on, `dissected` or `original`.
    pub source: String,
    /// Top-hat window radius in pixels; 0 disables background removal.
    pub tophat_radius: usize,
    pub threshold: f32,
    pub min_area: usize,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self { source: "dissected".into(), tophat_radius: 12, threshold: 0.08, min_area: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub mode: DetectMode,
    pub perturb: PerturbSpec,
    pub blob: BlobConfig,
}

impl Default for DetectorConfig {
    /// The perturbation detector misses half the nodules in the oblique views,
    /// adds one low-scored false positive per view and one 3D false positive
    /// on average, and jitters box corners by 1 mm.
    fn default() -> Self {
        Self {
            mode: DetectMode::default(),
            perturb: PerturbSpec {
                miss_prob: vec![0.5, 0.0, 0.5],
                false_pos_rate: vec![1.0],
                false_pos_rate_3d: 1.0,
                jitter_sigma: 1.0,
                score_noise_sigma: 0.1,
                ..PerturbSpec::default()
            },
            blob: BlobConfig::default(),
        }
    }
}

/// Everything a pipeline run depends on. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Inline phantom; ignored when `phantom_path` is set.
    pub phantom: PhantomSpec,
    /// Phantom JSON file, relative paths resolved against the config file.
    pub phantom_path: Option<PathBuf>,
    pub angles: Vec<f64>,
    pub detector_dims: [usize; 2],
    /// Detector pixel size in mm; by default 1.25 times the in-plane field
    /// of view divided by the number of columns, on both axes.
    pub detector_spacing: Option<[f64; 2]>,
    pub projector: ProjectorConfig,
    pub detector: DetectorConfig,
    pub match_threshold: f64,
    pub ap_threshold: f64,
    pub ap_interpolation: ApInterpolation,
    pub sweep_angles: Vec<f64>,
    pub ssim: SsimParams,
    pub psnr_peak: Option<f64>,
    /// Overrides the phantom and perturbation seeds when set.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            phantom_path: None,
            angles: vec![-35.0, 0.0, 35.0],
            detector_dims: [256, 256],
            detector_spacing: None,
            projector: ProjectorConfig::default(),
            detector: DetectorConfig::default(),
            match_threshold: 0.0,
            ap_threshold: 0.1,
            ap_interpolation: ApInterpolation::AllPoint,
            sweep_angles: angle_range(-90.0, 10.0, 80.0).expect("valid range"),
            ssim: SsimParams::default(),
            psnr_peak: None,
            seed: None,
            out: None,
        }
    }
}

impl RunConfig {
    /// Reads a config file and resolves `phantom_path`.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(p) = &cfg.phantom_path {
            let p = if p.is_relative() { path.parent().unwrap_or(Path::new(".")).join(p) } else { p.clone() };
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading phantom {}", p.display()))?;
            cfg.phantom = serde_json::from_str(&text).with_context(|| format!("parsing phantom {}", p.display()))?;
            cfg.phantom_path = Some(p);
        }
        Ok(cfg)
    }

    /// Pushes the run seed down into the phantom and perturbation specs.
    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.phantom.seed = s;
            self.detector.perturb.seed = s;
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.angles.is_empty() {
            bail!("angles must not be empty");
        }
        if self.sweep_angles.is_empty() {
            bail!("sweep_angles must not be empty");
        }
        if !(self.ap_threshold > 0.0 && self.ap_threshold <= 1.0) {
            bail!("ap_threshold must be in (0, 1], got {}", self.ap_threshold);
        }
        if !(self.match_threshold.is_finite() && (0.0..1.0).contains(&self.match_threshold)) {
            bail!("match_threshold must be in [0, 1), got {}", self.match_threshold);
        }
        Ok(())
    }

    pub fn detector_spacing_for(&self, geometry: &VolumeGeometry) -> [f64; 2] {
        self.detector_spacing.unwrap_or_else(|| {
            let fov = (0..2)
                .map(|a| {
                    let (lo, hi) = geometry.extent(a);
                    hi - lo
                })
                .fold(0.0, f64::max);
            let s = 1.25 * fov / self.detector_dims[0] as f64;
            [s, s]
        })
    }

    pub fn views(&self, angles: &[f64], geometry: &VolumeGeometry) -> crate::Result<ViewSet> {
        Ok(ViewSet::new(angles.to_vec(), self.detector_dims, self.detector_spacing_for(geometry))?.centered_on(geometry))
    }
}

/// Angles from `start` to `end` in steps of `step`, both ends included
/// when `end` is hit to within a millionth of a step.
pub fn angle_range(start: f64, step: f64, end: f64) -> Result<Vec<f64>, String> {
    if !(start.is_finite() && step.is_finite() && end.is_finite()) {
        return Err("angles must be finite".into());
    }
    if step == 0.0 {
        return Err("angle step must be nonzero".into());
    }
    let n = ((end - start) / step + 1e-6).floor();
    if n < 0.0 {
        return Err(format!("step {step} never reaches {end} from {start}"));
    }
    if n > 100_000.0 {
        return Err("too many angles".into());
    }
    Ok((0..=n as usize).map(|i| start + i as f64 * step).collect())
}

/// A parsed `--angles` value.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleList(pub Vec<f64>);

fn parse_angle_arg(s: &str) -> Result<AngleList, String> {
    parse_angles(s).map(AngleList)
}

/// Parses `start:step:end` (end inclusive) or a comma-separated list.
pub fn parse_angles(s: &str) -> Result<Vec<f64>, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad angle {t:?}: {e}"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        3 => angle_range(num(parts[0])?, num(parts[1])?, num(parts[2])?),
        1 => {
            let v = s.split(',').map(num).collect::<Result<Vec<_>, _>>()?;
            if v.iter().any(|a| !a.is_finite()) {
                return Err("angles must be finite".into());
            }
            Ok(v)
        }
        _ => Err(format!("expected start:step:end or a comma list, got {s:?}")),
    }
}

/// Parses `NUxNV`, for example `512x736`.
pub fn parse_detector(s: &str) -> Result<[usize; 2], String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected NUxNV, got {s:?}"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("bad detector width: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("bad detector height: {e}"))?;
    if a == 0 || b == 0 {
        return Err("detector dims must be positive".into());
    }
    Ok([a, b])
}

fn parse_interp(s: &str) -> Result<ApInterpolation, String> {
    match s {
        "all-point" | "all" => Ok(ApInterpolation::AllPoint),
        "eleven-point" | "11-point" | "11" => Ok(ApInterpolation::ElevenPoint),
        _ => Err(format!("expected all-point or eleven-point, got {s:?}")),
    }
}

#[derive(Debug, Parser)]
#[command(name = "xdt", version, about = "Simulated multi-view X-ray dissectography pipeline")]
pub struct Cli {
    /// Run configuration JSON.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,
    /// Seed for the phantom and the perturbation detector.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// View angles in degrees: `start:step:end` (end inclusive) or `a,b,c`.
    #[arg(long, global = true, allow_hyphen_values = true, value_parser = parse_angle_arg)]
    pub angles: Option<AngleList>,
    /// Detector size in pixels, `NUxNV`.
    #[arg(long, global = true, value_parser = parse_detector)]
    pub detector: Option<[usize; 2]>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the phantom volume, masks and 3D ground-truth boxes.
    Phantom,
    /// Project the volume and masks and derive 2D ground-truth boxes.
    Project,
    /// Project the lungs-only volume.
    Dissect,
    /// Produce 2D and 3D detections.
    Detect {
        #[arg(long)]
        mode: Option<DetectMode>,
    },
    /// Fuse 2D and 3D detections.
    Match,
    /// Average precision of detection files against the 2D ground truth.
    EvalAp {
        /// Detection file to evaluate; by default det2d.jsonl and collab2d.jsonl.
        #[arg(long)]
        dets: Option<Vec<PathBuf>>,
        /// Ground-truth file [default: gt2d.jsonl].
        #[arg(long)]
        gt: Option<PathBuf>,
        /// IoU threshold for a true positive.
        #[arg(long)]
        iou: Option<f64>,
        #[arg(long, value_parser = parse_interp)]
        interpolation: Option<ApInterpolation>,
    },
    /// PSNR, SSIM and MAE between predicted and reference projections.
    EvalImage {
        /// Predicted image base path; by default each original_v{k}.
        #[arg(long, requires = "reference")]
        pred: Option<PathBuf>,
        /// Reference image base path; by default each dissected_v{k}.
        #[arg(long = "ref", id = "reference", requires = "pred")]
        reference: Option<PathBuf>,
    },
    /// AP against projection angle for a blob detector on original and dissected projections.
    Sweep,
    /// Run the built-in property checks.
    Selfcheck,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

/// A resolved configuration plus the output directory.
pub struct RunContext {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

fn resolve(cli: &Cli) -> anyhow::Result<RunContext> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if let Some(d) = cli.detector {
        cfg.detector_dims = d;
    }
    if let Some(AngleList(a)) = &cli.angles {
        if matches!(cli.command, Command::Sweep) {
            cfg.sweep_angles = a.clone();
        } else {
            cfg.angles = a.clone();
        }
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    cfg.apply_seed();
    cfg.validate()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    Ok(RunContext { cfg, out })
}

pub fn execute(cli: &Cli) -> anyhow::Result<()> {
    if let Command::Selfcheck = cli.command {
        return cmd_selfcheck();
    }
    let ctx = resolve(cli)?;
    std::fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    match &cli.command {
        Command::Phantom => cmd_phantom(&ctx),
        Command::Project => cmd_project(&ctx),
        Command::Dissect => cmd_dissect(&ctx),
        Command::Detect { mode } => cmd_detect(&ctx, mode.unwrap_or(ctx.cfg.detector.mode)),
        Command::Match => cmd_match(&ctx),
        Command::EvalAp { dets, gt, iou, interpolation } => cmd_eval_ap(
            &ctx,
            dets.as_deref(),
            gt.as_deref(),
            iou.unwrap_or(ctx.cfg.ap_threshold),
            interpolation.unwrap_or(ctx.cfg.ap_interpolation),
        ),
        Command::EvalImage { pred, reference } => cmd_eval_image(&ctx, pred.as_deref(), reference.as_deref()),
        Command::Sweep => cmd_sweep(&ctx),
        Command::Selfcheck => unreachable!(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_volume(path: &Path) -> anyhow::Result<Volume3> {
    io::read_volume(path).with_context(|| format!("reading volume {}", path.display()))
}

fn read_image(path: &Path) -> anyhow::Result<Image2> {
    io::read_image(path).with_context(|| format!("reading image {}", path.display()))
}

fn read_boxes(path: &Path) -> anyhow::Result<Vec<BoxRecord>> {
    io::read_boxes(path).with_context(|| format!("reading boxes {}", path.display()))
}

pub fn view_file(prefix: &str, k: usize) -> String {
    format!("{prefix}_v{k}")
}

fn stack_channels(volumes: &[Volume3]) -> crate::Result<Volume3> {
    let data = volumes.iter().flat_map(|v| v.data().iter().copied()).collect();
    Volume3::new(*volumes[0].geometry(), volumes.len(), data)
}

fn split_channels(volume: &Volume3) -> crate::Result<Vec<Volume3>> {
    (0..volume.channels())
        .map(|c| Volume3::new(*volume.geometry(), 1, volume.channel(c).to_vec()))
        .collect()
}

fn cmd_phantom(ctx: &RunContext) -> anyhow::Result<()> {
    let spec = &ctx.cfg.phantom;
    let (volume, gt) = generate_phantom(spec)?;
    let out = &ctx.out;
    write_json(&out.join("phantom.json"), spec)?;
    io::write_volume(&volume, out.join("volume"))?;
    io::write_volume(&gt.lung_mask, out.join("lung_mask"))?;
    io::write_volume(&apply_mask(&volume, &gt.lung_mask)?, out.join("lungs"))?;
    if !gt.nodule_masks.is_empty() {
        io::write_volume(&stack_channels(&gt.nodule_masks)?, out.join("nodule_masks"))?;
    }
    io::write_boxes(out.join("gt3d.jsonl"), &io::records_from_boxes3(&gt.boxes3))?;
    let lung_box = phantom::mask_box3(&gt.lung_mask).context("lung mask is empty")?.with_label("lungs");
    io::write_boxes(out.join("lung3d.jsonl"), &io::records_from_boxes3(&[lung_box]))?;
    println!(
        "phantom: {:?} voxels, {} nodules -> {}",
        volume.dims(),
        gt.nodule_masks.len(),
        out.display()
    );
    Ok(())
}

fn load_ground_truth(out: &Path) -> anyhow::Result<GroundTruth> {
    let lung_mask = read_volume(&out.join("lung_mask"))?;
    let boxes3 = io::boxes3_of(&read_boxes(&out.join("gt3d.jsonl"))?);
    let nodule_masks = if boxes3.is_empty() {
        Vec::new()
    } else {
        split_channels(&read_volume(&out.join("nodule_masks"))?)?
    };
    if nodule_masks.len() != boxes3.len() {
        bail!("{} nodule masks but {} ground-truth boxes", nodule_masks.len(), boxes3.len());
    }
    Ok(GroundTruth { lung_mask, nodule_masks, boxes3, boxes2: None })
}

fn load_views(out: &Path) -> anyhow::Result<ViewSet> {
    let views: ViewSet = read_json(&out.join("views.json"))?;
    views.validate()?;
    Ok(views)
}

fn cmd_project(ctx: &RunContext) -> anyhow::Result<()> {
    let out = &ctx.out;
    let volume = read_volume(&out.join("volume"))?;
    let gt = load_ground_truth(out)?;
    let views = ctx.cfg.views(&ctx.cfg.angles, volume.geometry())?;
    let originals = forward_project(&volume, &views, &ctx.cfg.projector)?;
    let lung = forward_project(&gt.lung_mask, &views, &ctx.cfg.projector)?;
    let nodules = if gt.nodule_masks.is_empty() {
        None
    } else {
        Some(forward_project(&stack_channels(&gt.nodule_masks)?, &views, &ctx.cfg.projector)?)
    };
    let gt = make_ground_truth_boxes(&gt, &views)?;
    write_json(&out.join("views.json"), &views)?;
    for k in 0..views.len() {
        io::write_image(&originals[k], out.join(view_file("original", k)))?;
        io::write_image(&lung[k], out.join(view_file("lungmask", k)))?;
        if let Some(n) = &nodules {
            io::write_image(&n[k], out.join(view_file("nodules", k)))?;
        }
    }
    let boxes2 = gt.boxes2.unwrap_or_default();
    io::write_boxes(out.join("gt2d.jsonl"), &io::records_from_views(&boxes2))?;
    println!(
        "project: {} views of {}x{} -> {}",
        views.len(),
        views.detector_dims[0],
        views.detector_dims[1],
        out.display()
    );
    Ok(())
}

fn cmd_dissect(ctx: &RunContext) -> anyhow::Result<()> {
    let out = &ctx.out;
    let volume = read_volume(&out.join("volume"))?;
    let mask = read_volume(&out.join("lung_mask"))?;
    let views = load_views(out)?;
    let images = dissect_project(&volume, &mask, &views, &ctx.cfg.projector)?;
    for (k, img) in images.iter().enumerate() {
        io::write_image(img, out.join(view_file("dissected", k)))?;
    }
    println!("dissect: {} views -> {}", views.len(), out.display());
    Ok(())
}

/// Blob detections on one projection, after optional top-hat filtering.
pub fn blob_boxes(image: &Image2, cfg: &BlobConfig) -> crate::Result<Vec<Box2>> {
    let filtered = if cfg.tophat_radius > 0 { tophat(image, cfg.tophat_radius)? } else { image.clone() };
    blob_detect(&filtered, cfg.threshold, cfg.min_area)
}

fn cmd_detect(ctx: &RunContext, mode: DetectMode) -> anyhow::Result<()> {
    let out = &ctx.out;
    let views = load_views(out)?;
    let (boxes2, boxes3) = match mode {
        DetectMode::Perturb => {
            let gt2 = io::split_views(&read_boxes(&out.join("gt2d.jsonl"))?, views.len())?;
            let gt3 = io::boxes3_of(&read_boxes(&out.join("gt3d.jsonl"))?);
            let region = io::boxes3_of(&read_boxes(&out.join("lung3d.jsonl"))?)
                .into_iter()
                .next()
                .context("lung3d.jsonl holds no 3D box")?;
            let input = PerturbInput { boxes3: &gt3, boxes2: &gt2, region };
            let d = perturb_detect(&input, &views, &ctx.cfg.detector.perturb)?;
            (d.boxes2, d.boxes3)
        }
        DetectMode::Blob => {
            let blob = &ctx.cfg.detector.blob;
            let per_view = (0..views.len())
                .map(|k| {
                    let img = read_image(&out.join(view_file(&blob.source, k)))?;
                    Ok(blob_boxes(&img, blob)?)
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            (per_view, Vec::new())
        }
    };
    io::write_boxes(out.join("det2d.jsonl"), &io::records_from_views(&boxes2))?;
    io::write_boxes(out.join("det3d.jsonl"), &io::records_from_boxes3(&boxes3))?;
    let n2: usize = boxes2.iter().map(Vec::len).sum();
    println!("detect ({mode:?}): {n2} 2D boxes, {} 3D boxes -> {}", boxes3.len(), out.display());
    Ok(())
}

fn cmd_match(ctx: &RunContext) -> anyhow::Result<()> {
    let out = &ctx.out;
    let views = load_views(out)?;
    let boxes2 = io::split_views(&read_boxes(&out.join("det2d.jsonl"))?, views.len())?;
    let boxes3 = io::boxes3_of(&read_boxes(&out.join("det3d.jsonl"))?);
    let outcome = collaborate(&boxes3, &boxes2, &views, &MatchConfig { threshold: ctx.cfg.match_threshold })?;
    write_json(&out.join("match.json"), &outcome)?;
    io::write_boxes(out.join("collab2d.jsonl"), &io::records_from_views(&outcome.fused_boxes2()))?;
    io::write_boxes(out.join("collab3d.jsonl"), &io::records_from_boxes3(&outcome.boxes3()))?;
    let left: usize = outcome.leftovers.iter().map(Vec::len).sum();
    println!("match: {} groups, {left} leftovers -> {}", outcome.groups.len(), out.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewAp {
    /// View index, or `"ALL"` for the pooled row.
    pub view: String,
    pub angle: Option<f64>,
    pub ap: f64,
    pub n_gt: usize,
    pub n_det: usize,
    pub true_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApRow {
    pub name: String,
    pub source: String,
    /// Pooled AP over every view.
    pub ap: f64,
    pub pr_points: Vec<PrPoint>,
    /// Per-view AP followed by the pooled `ALL` entry.
    pub per_view: Vec<ViewAp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub iou_thresh: f64,
    pub interpolation: ApInterpolation,
    pub rows: Vec<ApRow>,
}

/// Per-view and pooled AP of `dets` against `gts`.
pub fn ap_row(
    name: &str,
    source: &str,
    dets: &[Vec<Box2>],
    gts: &[Vec<Box2>],
    angles: &[f64],
    iou: f64,
    interp: ApInterpolation,
) -> crate::Result<ApRow> {
    let mut per_view = Vec::with_capacity(gts.len() + 1);
    for k in 0..gts.len() {
        let c = metrics::average_precision(&dets[k], &gts[k], iou, interp)?;
        per_view.push(ViewAp {
            view: k.to_string(),
            angle: angles.get(k).copied(),
            ap: c.ap,
            n_gt: c.n_gt,
            n_det: c.n_det,
            true_positives: c.true_positives,
        });
    }
    let all = metrics::average_precision_grouped(dets, gts, iou, interp)?;
    per_view.push(ViewAp {
        view: "ALL".into(),
        angle: None,
        ap: all.ap,
        n_gt: all.n_gt,
        n_det: all.n_det,
        true_positives: all.true_positives,
    });
    Ok(ApRow { name: name.into(), source: source.into(), ap: all.ap, pr_points: all.points, per_view })
}

fn cmd_eval_ap(
    ctx: &RunContext,
    dets: Option<&[PathBuf]>,
    gt: Option<&Path>,
    iou: f64,
    interp: ApInterpolation,
) -> anyhow::Result<()> {
    let out = &ctx.out;
    let views = load_views(out)?;
    let gt_path = gt.map(Path::to_path_buf).unwrap_or_else(|| out.join("gt2d.jsonl"));
    let gts = io::split_views(&read_boxes(&gt_path)?, views.len())?;
    let sources: Vec<(String, PathBuf)> = match dets {
        Some(list) => list
            .iter()
            .map(|p| {
                let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (name, p.clone())
            })
            .collect(),
        None => {
            let mut v = vec![("separate".to_string(), out.join("det2d.jsonl"))];
            let collab = out.join("collab2d.jsonl");
            if collab.exists() {
                v.push(("collaborative".to_string(), collab));
            }
            v
        }
    };
    let mut rows = Vec::new();
    for (name, path) in &sources {
        let d = io::split_views(&read_boxes(path)?, views.len())?;
        rows.push(ap_row(name, &display_in(out, path), &d, &gts, &views.angles, iou, interp)?);
    }
    let report = ApReport { iou_thresh: iou, interpolation: interp, rows };
    write_json(&out.join("eval_ap.json"), &report)?;
    for r in &report.rows {
        let cols: Vec<String> = r.per_view.iter().map(|v| format!("{}={:.4}", v.view, v.ap)).collect();
        println!("AP@{iou} {:<14} {}", r.name, cols.join(" "));
    }
    Ok(())
}

/// `path` relative to `out` when it lies inside it, so reports do not depend on where the run lives.
fn display_in(out: &Path, path: &Path) -> String {
    path.strip_prefix(out).unwrap_or(path).display().to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub name: String,
    /// `None` when the images are identical.
    pub psnr: Option<f64>,
    pub psnr_identical: bool,
    pub ssim: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    /// Mean PSNR over the finite entries.
    pub psnr: Option<f64>,
    pub ssim: f64,
    pub mae: f64,
    pub images: Vec<ImageScores>,
}

pub fn image_scores(
    name: &str,
    pred: &Image2,
    reference: &Image2,
    peak: Option<f64>,
    ssim: &SsimParams,
) -> crate::Result<ImageScores> {
    let p = metrics::psnr(pred, reference, peak)?;
    Ok(ImageScores {
        name: name.into(),
        psnr: p.is_finite().then_some(p),
        psnr_identical: p == metrics::PSNR_IDENTICAL,
        ssim: metrics::ssim(pred, reference, ssim)?,
        mae: metrics::mae_loss(std::slice::from_ref(pred), std::slice::from_ref(reference))?,
    })
}

fn cmd_eval_image(ctx: &RunContext, pred: Option<&Path>, reference: Option<&Path>) -> anyhow::Result<()> {
    let out = &ctx.out;
    let pairs: Vec<(String, PathBuf, PathBuf)> = match (pred, reference) {
        (Some(p), Some(r)) => vec![(p.display().to_string(), p.to_path_buf(), r.to_path_buf())],
        _ => {
            let views = load_views(out)?;
            (0..views.len())
                .map(|k| (k.to_string(), out.join(view_file("original", k)), out.join(view_file("dissected", k))))
                .collect()
        }
    };
    let mut images = Vec::new();
    for (name, p, r) in &pairs {
        let (p, r) = (read_image(p)?, read_image(r)?);
        images.push(image_scores(name, &p, &r, ctx.cfg.psnr_peak, &ctx.cfg.ssim)?);
    }
    let finite: Vec<f64> = images.iter().filter_map(|s| s.psnr).collect();
    let n = images.len() as f64;
    let report = ImageReport {
        psnr: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
        ssim: images.iter().map(|s| s.ssim).sum::<f64>() / n,
        mae: images.iter().map(|s| s.mae).sum::<f64>() / n,
        images,
    };
    write_json(&out.join("eval_image.json"), &report)?;
    match report.psnr {
        Some(p) => println!("eval-image: psnr {p:.3} dB, ssim {:.4}, mae {:.4e}", report.ssim, report.mae),
        None => println!("eval-image: identical, ssim {:.4}, mae {:.4e}", report.ssim, report.mae),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub angle: f64,
    pub n_gt: usize,
    pub ap_original: f64,
    pub ap_dissected: f64,
    pub n_det_original: usize,
    pub n_det_dissected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub iou_thresh: f64,
    pub interpolation: ApInterpolation,
    pub detector: BlobConfig,
    pub rows: Vec<SweepRow>,
}

/// Blob-detector AP on original and dissected projections at every angle.
pub fn run_sweep(cfg: &RunConfig) -> crate::Result<SweepReport> {
    let (volume, gt) = generate_phantom(&cfg.phantom)?;
    let views = cfg.views(&cfg.sweep_angles, volume.geometry())?;
    let gt = make_ground_truth_boxes(&gt, &views)?;
    let gts = gt.boxes2.clone().unwrap_or_default();
    let originals = forward_project(&volume, &views, &cfg.projector)?;
    let dissected = dissect_project(&volume, &gt.lung_mask, &views, &cfg.projector)?;
    let blob = &cfg.detector.blob;
    let mut rows = Vec::with_capacity(views.len());
    for k in 0..views.len() {
        let d_orig = blob_boxes(&originals[k], blob)?;
        let d_diss = blob_boxes(&dissected[k], blob)?;
        let ap = |d: &[Box2]| metrics::average_precision(d, &gts[k], cfg.ap_threshold, cfg.ap_interpolation);
        rows.push(SweepRow {
            angle: views.angles[k],
            n_gt: gts[k].len(),
            ap_original: ap(&d_orig)?.ap,
            ap_dissected: ap(&d_diss)?.ap,
            n_det_original: d_orig.len(),
            n_det_dissected: d_diss.len(),
        });
    }
    Ok(SweepReport {
        iou_thresh: cfg.ap_threshold,
        interpolation: cfg.ap_interpolation,
        detector: blob.clone(),
        rows,
    })
}

pub const SWEEP_TSV_HEADER: &str = "angle\tn_gt\tap_original\tap_dissected\tn_det_original\tn_det_dissected";

pub fn sweep_tsv(report: &SweepReport) -> String {
    let mut s = String::from(SWEEP_TSV_HEADER);
    s.push('\n');
    for r in &report.rows {
        s.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{}\t{}\n",
            r.angle, r.n_gt, r.ap_original, r.ap_dissected, r.n_det_original, r.n_det_dissected
        ));
    }
    s
}

fn cmd_sweep(ctx: &RunContext) -> anyhow::Result<()> {
    let report = run_sweep(&ctx.cfg)?;
    write_json(&ctx.out.join("sweep.json"), &report)?;
    let tsv = sweep_tsv(&report);
    let path = ctx.out.join("sweep.tsv");
    std::fs::write(&path, &tsv).with_context(|| format!("writing {}", path.display()))?;
    print!("{tsv}");
    Ok(())
}

fn cmd_selfcheck() -> anyhow::Result<()> {
    let results = selfcheck::run_all();
    let mut failed = 0;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", results.len());
    }
    Ok(())
}
