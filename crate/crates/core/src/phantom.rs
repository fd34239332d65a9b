//! Procedural chest phantom: elliptic body with rib bands, two ellipsoidal
//! lungs and spherical nodules, together with exact masks and boxes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projector::{forward_project, Interpolation, Normalization, ProjectorConfig};
use crate::types::{Box2, Box3, ViewSet, Volume3, VolumeGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub half_axes: [f64; 3],
}

impl Ellipsoid {
    /// Squared normalized radius; `<= 1` inside.
    pub fn level(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.half_axes[a]).powi(2))
            .sum()
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        self.level(p) <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodySpec {
    /// Half-axes `(a, b)` of the elliptic cross-section, mm. The body spans the full z range.
    pub half_axes: [f64; 2],
    pub attenuation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LungSpec {
    pub ellipsoids: Vec<Ellipsoid>,
    pub attenuation: f64,
}

/// Rib arcs: bands of an elliptic shell just inside the body wall.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RibSpec {
    pub count: usize,
    /// Radial and axial thickness of each arc, mm.
    pub thickness: f64,
    /// Axial distance between neighboring arcs, mm.
    pub pitch: f64,
    /// Outer normalized radius of the shell relative to the body ellipse.
    pub radius_fraction: f64,
    pub attenuation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoduleSpec {
    pub center: [f64; 3],
    pub diameter: f64,
    /// Added on top of the lung attenuation.
    pub attenuation: f64,
}

/// Seeded placement of additional nodules inside the lungs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomNodules {
    pub count: usize,
    pub diameter_range: [f64; 2],
    pub attenuation: f64,
}

/// Missing fields take their values from [`PhantomSpec::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub body: BodySpec,
    pub lungs: LungSpec,
    pub ribs: RibSpec,
    pub nodules: Vec<NoduleSpec>,
    pub random_nodules: Option<RandomNodules>,
    pub seed: u64,
}

impl Default for PhantomSpec {
    /// 128³ voxels at 2 mm with four 20 mm nodules.
    fn default() -> Self {
        let nodule = |center| NoduleSpec { center, diameter: 20.0, attenuation: 0.016 };
        PhantomSpec {
            dims: [128, 128, 128],
            spacing: [2.0, 2.0, 2.0],
            body: BodySpec { half_axes: [115.0, 85.0], attenuation: 0.02 },
            lungs: LungSpec {
                ellipsoids: vec![
                    Ellipsoid { center: [-48.0, -5.0, 0.0], half_axes: [35.0, 50.0, 95.0] },
                    Ellipsoid { center: [48.0, -5.0, 0.0], half_axes: [35.0, 50.0, 95.0] },
                ],
                attenuation: 0.004,
            },
            ribs: RibSpec {
                count: 9,
                thickness: 6.0,
                pitch: 24.0,
                radius_fraction: 0.92,
                attenuation: 0.04,
            },
            nodules: vec![
                nodule([-50.0, 10.0, 30.0]),
                nodule([45.0, -15.0, -20.0]),
                nodule([-40.0, -20.0, -50.0]),
                nodule([52.0, 20.0, 50.0]),
            ],
            random_nodules: None,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn geometry(&self) -> Result<VolumeGeometry> {
        VolumeGeometry::centered(self.dims, self.spacing)
    }

    fn validate(&self) -> Result<()> {
        let atts = [
            self.body.attenuation,
            self.lungs.attenuation,
            self.ribs.attenuation,
        ];
        if atts.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::Validation(format!("attenuations must be non-negative, got {atts:?}")));
        }
        if self.body.half_axes.iter().any(|&h| h <= 0.0) {
            return Err(Error::Validation("body half-axes must be positive".into()));
        }
        if self.lungs.ellipsoids.iter().any(|e| e.half_axes.iter().any(|&h| h <= 0.0)) {
            return Err(Error::Validation("lung half-axes must be positive".into()));
        }
        if self.ribs.count > 0 && !(self.ribs.thickness > 0.0 && self.ribs.radius_fraction > 0.0) {
            return Err(Error::Validation("rib thickness and radius must be positive".into()));
        }
        if let Some(r) = &self.random_nodules {
            let [lo, hi] = r.diameter_range;
            if !(lo > 0.0 && lo <= hi) || r.attenuation.is_nan() || r.attenuation < 0.0 {
                return Err(Error::Validation(format!("bad random nodule settings {r:?}")));
            }
        }
        for (i, n) in self.nodules.iter().enumerate() {
            self.check_nodule(i, n)?;
        }
        Ok(())
    }

    fn check_nodule(&self, i: usize, n: &NoduleSpec) -> Result<()> {
        if !(n.diameter > 0.0 && n.diameter.is_finite()) {
            return Err(Error::Validation(format!("nodule {i}: diameter must be positive")));
        }
        if !(n.attenuation >= 0.0 && n.attenuation.is_finite()) {
            return Err(Error::Validation(format!("nodule {i}: attenuation must be non-negative")));
        }
        if !self.lungs.ellipsoids.iter().any(|e| e.contains(n.center)) {
            return Err(Error::Validation(format!(
                "nodule {i} at {:?} is outside both lungs",
                n.center
            )));
        }
        Ok(())
    }

    /// Explicit nodules followed by the seeded random ones.
    pub fn resolved_nodules(&self) -> Result<Vec<NoduleSpec>> {
        let mut nodules = self.nodules.clone();
        let Some(r) = self.random_nodules else {
            return Ok(nodules);
        };
        if self.lungs.ellipsoids.is_empty() && r.count > 0 {
            return Err(Error::Validation("random nodules need at least one lung".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for placed in 0..r.count {
            let mut found = None;
            for _ in 0..10_000 {
                let lung = &self.lungs.ellipsoids[rng.gen_range(0..self.lungs.ellipsoids.len())];
                let diameter = if r.diameter_range[0] == r.diameter_range[1] {
                    r.diameter_range[0]
                } else {
                    rng.gen_range(r.diameter_range[0]..r.diameter_range[1])
                };
                // keep the sphere well inside the lung: sample in a shrunken ellipsoid
                let shrink = lung.half_axes.map(|h| (h - 0.5 * diameter).max(0.0));
                let offs: [f64; 3] = [0, 1, 2].map(|a| rng.gen_range(-1.0..=1.0) * shrink[a]);
                let center = [0, 1, 2].map(|a| lung.center[a] + offs[a]);
                let level: f64 = (0..3)
                    .filter(|&a| shrink[a] > 0.0)
                    .map(|a| (offs[a] / shrink[a]).powi(2))
                    .sum();
                if level > 1.0 {
                    continue;
                }
                let clear = nodules.iter().all(|n| {
                    let d2: f64 = (0..3).map(|a| (n.center[a] - center[a]).powi(2)).sum();
                    d2.sqrt() > 0.5 * (n.diameter + diameter) + 2.0 * self.spacing[0]
                });
                if clear {
                    found = Some(NoduleSpec { center, diameter, attenuation: r.attenuation });
                    break;
                }
            }
            match found {
                Some(n) => nodules.push(n),
                None => {
                    return Err(Error::Validation(format!(
                        "could not place random nodule {placed} without overlap"
                    )))
                }
            }
        }
        Ok(nodules)
    }
}

/// Masks and boxes that accompany a phantom volume.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Both lungs merged with every nodule.
    pub lung_mask: Volume3,
    pub nodule_masks: Vec<Volume3>,
    pub boxes3: Vec<Box3>,
    /// Per-view boxes, filled by [`make_ground_truth_boxes`].
    pub boxes2: Option<Vec<Vec<Box2>>>,
}

/// Voxel-index bounding box of the non-zero samples of channel 0, inclusive.
pub fn mask_index_bounds(mask: &Volume3) -> Option<([usize; 3], [usize; 3])> {
    let [nx, ny, nz] = mask.dims();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                if mask.get(0, ix, iy, iz) != 0.0 {
                    any = true;
                    for (a, i) in [ix, iy, iz].into_iter().enumerate() {
                        lo[a] = lo[a].min(i);
                        hi[a] = hi[a].max(i);
                    }
                }
            }
        }
    }
    any.then_some((lo, hi))
}

/// Tight world-space box around the voxels of a mask (full voxel extents).
pub fn mask_box3(mask: &Volume3) -> Option<Box3> {
    let (lo, hi) = mask_index_bounds(mask)?;
    let g = mask.geometry();
    let lo_w = [0, 1, 2].map(|a| g.coord(a, lo[a]) - 0.5 * g.spacing[a]);
    let hi_w = [0, 1, 2].map(|a| g.coord(a, hi[a]) + 0.5 * g.spacing[a]);
    Some(Box3 {
        x1: lo_w[0],
        y1: lo_w[1],
        z1: lo_w[2],
        x2: hi_w[0],
        y2: hi_w[1],
        z2: hi_w[2],
        score: None,
        label: None,
    })
}

/// Sub-volume covering voxel indices `lo..=hi` (clamped to the grid).
pub fn crop(volume: &Volume3, lo: [usize; 3], hi: [usize; 3]) -> Result<Volume3> {
    let g = volume.geometry();
    let hi = [0, 1, 2].map(|a| hi[a].min(g.dims[a] - 1));
    if (0..3).any(|a| lo[a] > hi[a]) {
        return Err(Error::Validation(format!("empty crop {lo:?}..={hi:?}")));
    }
    let dims = [0, 1, 2].map(|a| hi[a] - lo[a] + 1);
    let origin = [0, 1, 2].map(|a| g.coord(a, lo[a]));
    let sub = VolumeGeometry::new(dims, g.spacing, origin)?;
    let mut data = Vec::with_capacity(volume.channels() * sub.voxels());
    for c in 0..volume.channels() {
        for iz in lo[2]..=hi[2] {
            for iy in lo[1]..=hi[1] {
                let start = volume.index(c, lo[0], iy, iz);
                data.extend_from_slice(&volume.data()[start..start + dims[0]]);
            }
        }
    }
    Volume3::new(sub, volume.channels(), data)
}

/// Rasterizes the phantom. A voxel belongs to a shape when its center lies inside it.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Volume3, GroundTruth)> {
    spec.validate()?;
    let geometry = spec.geometry()?;
    let nodules = spec.resolved_nodules()?;
    for (i, n) in nodules.iter().enumerate() {
        spec.check_nodule(i, n)?;
    }

    let [a, b] = spec.body.half_axes;
    let ribs = &spec.ribs;
    let rib_inner = ribs.radius_fraction - ribs.thickness / a.min(b);
    let rib_centers: Vec<f64> = (0..ribs.count)
        .map(|j| (j as f64 - (ribs.count as f64 - 1.0) * 0.5) * ribs.pitch)
        .collect();

    let mut overlap = false;
    let mut lung = Vec::with_capacity(geometry.voxels());
    let volume = Volume3::from_fn(geometry, |x, y, z| {
        let p = [x, y, z];
        let rho = ((x / a).powi(2) + (y / b).powi(2)).sqrt();
        let mut value = 0.0;
        let mut in_lung = false;
        if rho <= 1.0 {
            value = spec.body.attenuation;
            let in_rib = rho >= rib_inner
                && rho <= ribs.radius_fraction
                && rib_centers.iter().any(|zc| (z - zc).abs() <= 0.5 * ribs.thickness);
            in_lung = spec.lungs.ellipsoids.iter().any(|e| e.contains(p));
            if in_rib {
                overlap |= in_lung;
                value = ribs.attenuation;
            }
            if in_lung {
                value = spec.lungs.attenuation;
            }
        }
        for n in &nodules {
            if sphere_contains(n, p) {
                value += n.attenuation;
                in_lung = true;
            }
        }
        lung.push(if in_lung { 1.0 } else { 0.0 });
        value as f32
    })?;
    if overlap {
        return Err(Error::Validation("lungs intersect the rib shell".into()));
    }
    let lung_mask = Volume3::new(geometry, 1, lung)?;

    let mut nodule_masks = Vec::with_capacity(nodules.len());
    let mut boxes3 = Vec::with_capacity(nodules.len());
    for (i, n) in nodules.iter().enumerate() {
        let mask = Volume3::from_fn(geometry, |x, y, z| {
            if sphere_contains(n, [x, y, z]) {
                1.0
            } else {
                0.0
            }
        })?;
        let bbox = mask_box3(&mask)
            .ok_or_else(|| Error::Validation(format!("nodule {i} covers no voxel center")))?;
        boxes3.push(bbox.with_label(format!("n{i}")));
        nodule_masks.push(mask);
    }

    Ok((
        volume,
        GroundTruth { lung_mask, nodule_masks, boxes3, boxes2: None },
    ))
}

fn sphere_contains(n: &NoduleSpec, p: [f64; 3]) -> bool {
    let r = 0.5 * n.diameter;
    (0..3).map(|a| (p[a] - n.center[a]).powi(2)).sum::<f64>() <= r * r
}

/// Tight box, in world `(u, z)`, around the non-zero pixels of a projection
/// (full pixel extents). `floor` ignores tiny values from grazing rays.
pub fn image_box2(image: &crate::types::Image2, floor: f32) -> Option<Box2> {
    let [nu, nv] = image.dims();
    let mut lo = [usize::MAX; 2];
    let mut hi = [0usize; 2];
    let mut any = false;
    for iv in 0..nv {
        for iu in 0..nu {
            if image.get(0, iu, iv) > floor {
                any = true;
                lo = [lo[0].min(iu), lo[1].min(iv)];
                hi = [hi[0].max(iu), hi[1].max(iv)];
            }
        }
    }
    if !any {
        return None;
    }
    let [su, sv] = image.spacing();
    let (x1, z1) = image.pixel_center(lo[0], lo[1]);
    let (x2, z2) = image.pixel_center(hi[0], hi[1]);
    Some(Box2 {
        x1: x1 - 0.5 * su,
        z1: z1 - 0.5 * sv,
        x2: x2 + 0.5 * su,
        z2: z2 + 0.5 * sv,
        score: None,
        label: None,
    })
}

/// Projects every nodule mask and records the tight 2D bound of each projection.
///
/// Nodules whose projection misses the detector get the detector-clipped
/// projected 3D box instead, so every view keeps one box per nodule.
pub fn make_ground_truth_boxes(gt: &GroundTruth, views: &ViewSet) -> Result<GroundTruth> {
    views.validate()?;
    let mut per_view = vec![Vec::with_capacity(gt.nodule_masks.len()); views.len()];
    for (i, mask) in gt.nodule_masks.iter().enumerate() {
        let (lo, hi) = mask_index_bounds(mask)
            .ok_or_else(|| Error::Validation(format!("nodule mask {i} is empty")))?;
        let lo = lo.map(|v| v.saturating_sub(1));
        let hi = hi.map(|v| v + 1);
        let sub = crop(mask, lo, hi)?;
        let g = sub.geometry();
        let cfg = ProjectorConfig::new(Interpolation::Nearest, Normalization::RaySum)
            .with_step(0.25 * g.spacing[0].min(g.spacing[1]));
        let projections = forward_project(&sub, views, &cfg)?;
        for (k, img) in projections.iter().enumerate() {
            let label = gt.boxes3[i].label.clone();
            let b = match image_box2(img, 0.0) {
                Some(b) => b,
                None => crate::boxgeom::project_box3(
                    &gt.boxes3[i],
                    views.angles[k],
                    (views.rotation_center[0], views.rotation_center[1]),
                ),
            };
            per_view[k].push(Box2 { label, ..b });
        }
    }
    Ok(GroundTruth { boxes2: Some(per_view), ..gt.clone() })
}

/// How to resample along the axial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxialResample {
    Linear,
    /// Nearest neighbor followed by re-binarization at 0.5, for masks.
    Mask,
}

/// Resamples along z to `target_spacing` (must not exceed the current z spacing).
/// In-plane samples are untouched, so trilinear interpolation reduces to linear in z.
pub fn upsample_axial(volume: &Volume3, target_spacing: f64, mode: AxialResample) -> Result<Volume3> {
    let g = volume.geometry();
    let sz = g.spacing[2];
    if !(target_spacing > 0.0 && target_spacing <= sz) {
        return Err(Error::Validation(format!(
            "target axial spacing {target_spacing} must be in (0, {sz}]"
        )));
    }
    let [nx, ny, nz] = g.dims;
    let span = (nz - 1) as f64 * sz;
    let new_nz = (span / target_spacing + 1e-9).floor() as usize + 1;
    let new_g = VolumeGeometry::new([nx, ny, new_nz], [g.spacing[0], g.spacing[1], target_spacing], g.origin)?;
    let plane = nx * ny;
    let mut data = Vec::with_capacity(volume.channels() * new_nz * plane);
    for c in 0..volume.channels() {
        let ch = volume.channel(c);
        for k in 0..new_nz {
            let f = k as f64 * target_spacing / sz;
            let i0 = (f.floor() as usize).min(nz - 1);
            let w = f - i0 as f64;
            let s0 = &ch[i0 * plane..(i0 + 1) * plane];
            match mode {
                AxialResample::Linear if w == 0.0 || i0 + 1 >= nz => data.extend_from_slice(s0),
                AxialResample::Linear => {
                    let s1 = &ch[(i0 + 1) * plane..(i0 + 2) * plane];
                    data.extend(
                        s0.iter()
                            .zip(s1)
                            .map(|(&a, &b)| ((1.0 - w) * a as f64 + w * b as f64) as f32),
                    );
                }
                AxialResample::Mask => {
                    let near = if w >= 0.5 && i0 + 1 < nz { i0 + 1 } else { i0 };
                    let s = &ch[near * plane..(near + 1) * plane];
                    data.extend(s.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }));
                }
            }
        }
    }
    Volume3::new(new_g, volume.channels(), data)
}
