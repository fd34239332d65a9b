//! Parallel-beam forward projection and its exact adjoint.
//!
//! For a view at angle `θ`, detector pixel `(u, v)` integrates the volume along
//! the line `{ (x, y, z) : R_θ(x, y).x = u, z = v }` where `R_θ` is the rotation
//! used by [`crate::boxgeom::rotate2`]. Rays are sampled at `t = m * ray_step`
//! (integer `m`, measured from the rotation center) and every sample is spread
//! onto voxels by a fixed in-plane stencil. Each detector row reads the
//! nearest axial slice.
//!
//! The back-projector replays the same stencils in transposed form, so the
//! pair is an exact adjoint up to floating point rounding. Both directions
//! parallelize over independent outputs only (rows for projection, slices for
//! back-projection) and accumulate sequentially inside each output, which
//! keeps results bit-identical for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boxgeom::sin_cos_deg;
use crate::error::{Error, Result};
use crate::types::{Image2, ViewSet, Volume3, VolumeGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    Nearest,
    #[default]
    #[serde(alias = "bilinear-in-plane")]
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Line integral: sample sum times `ray_step`.
    #[default]
    RaySum,
    /// Sample mean over the samples that fall inside the volume.
    #[serde(alias = "mean-along-ray")]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectorConfig {
    /// Sampling step along rays in mm; `None` uses the smallest in-plane voxel spacing.
    pub ray_step: Option<f64>,
    pub interpolation: Interpolation,
    pub normalization: Normalization,
}

impl ProjectorConfig {
    pub fn new(interpolation: Interpolation, normalization: Normalization) -> Self {
        Self { ray_step: None, interpolation, normalization }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.ray_step = Some(step);
        self
    }

    pub fn step_for(&self, geometry: &VolumeGeometry) -> Result<f64> {
        match self.ray_step {
            Some(s) if s > 0.0 && s.is_finite() => Ok(s),
            Some(s) => Err(Error::Config(format!("ray_step must be positive, got {s}"))),
            None => Ok(geometry.spacing[0].min(geometry.spacing[1])),
        }
    }
}

/// Flattened in-plane stencils for every detector column of one view.
struct ViewStencil {
    /// `entries[offsets[u]..offsets[u + 1]]` belongs to column `u`.
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
    /// Axial slice read by each detector row, if any.
    row_slice: Vec<Option<usize>>,
}

impl ViewStencil {
    fn column(&self, u: usize) -> &[(u32, f64)] {
        &self.entries[self.offsets[u]..self.offsets[u + 1]]
    }
}

/// Parameter interval where `a + b t` lies in `[lo, hi]`, intersected with `range`.
fn clip(a: f64, b: f64, lo: f64, hi: f64, range: (f64, f64)) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = range;
    if b == 0.0 {
        if a < lo || a > hi {
            return None;
        }
    } else {
        let (p, q) = ((lo - a) / b, (hi - a) / b);
        t0 = t0.max(p.min(q));
        t1 = t1.min(p.max(q));
    }
    (t0 <= t1).then_some((t0, t1))
}

fn build_stencil(
    geometry: &VolumeGeometry,
    views: &ViewSet,
    theta: f64,
    step: f64,
    cfg: &ProjectorConfig,
) -> ViewStencil {
    let [nx, ny, nz] = geometry.dims;
    let [sx, sy, sz] = geometry.spacing;
    let [x0, y0, z0] = geometry.origin;
    let [nu, nv] = views.detector_dims;
    let [u0, v0] = views.detector_origin();
    let [su, sv] = views.detector_spacing;
    let [xc, yc] = views.rotation_center;
    let (sn, cs) = sin_cos_deg(theta);

    let (ex0, ex1) = geometry.extent(0);
    let (ey0, ey1) = geometry.extent(1);
    // bilinear support reaches one full voxel past the outer centers
    let pad = match cfg.interpolation {
        Interpolation::Nearest => 0.0,
        Interpolation::Bilinear => 0.5,
    };
    let (px0, px1) = (ex0 - pad * sx, ex1 + pad * sx);
    let (py0, py1) = (ey0 - pad * sy, ey1 + pad * sy);

    let mut offsets = Vec::with_capacity(nu + 1);
    let mut entries = Vec::new();
    offsets.push(0);
    let mut column = Vec::new();
    for iu in 0..nu {
        column.clear();
        let d = u0 + iu as f64 * su - xc;
        let (ax, ay) = (xc + cs * d, yc + sn * d);
        let (bx, by) = (-sn, cs);
        let span = clip(ax, bx, px0, px1, (f64::NEG_INFINITY, f64::INFINITY))
            .and_then(|r| clip(ay, by, py0, py1, r));
        let mut inside = 0usize;
        if let Some((t0, t1)) = span {
            let m0 = (t0 / step).ceil() as i64;
            let m1 = (t1 / step).floor() as i64;
            for m in m0..=m1 {
                let t = m as f64 * step;
                let (x, y) = (ax + bx * t, ay + by * t);
                if (ex0..ex1).contains(&x) && (ey0..ey1).contains(&y) {
                    inside += 1;
                }
                let fx = (x - x0) / sx;
                let fy = (y - y0) / sy;
                match cfg.interpolation {
                    Interpolation::Nearest => {
                        let ix = (fx + 0.5).floor();
                        let iy = (fy + 0.5).floor();
                        if ix >= 0.0 && iy >= 0.0 && (ix as usize) < nx && (iy as usize) < ny {
                            column.push(((iy as usize * nx + ix as usize) as u32, 1.0));
                        }
                    }
                    Interpolation::Bilinear => {
                        let ixf = fx.floor();
                        let iyf = fy.floor();
                        let (wx, wy) = (fx - ixf, fy - iyf);
                        let (ix, iy) = (ixf as i64, iyf as i64);
                        for (dy, wyy) in [(0, 1.0 - wy), (1, wy)] {
                            let jy = iy + dy;
                            if wyy == 0.0 || jy < 0 || jy >= ny as i64 {
                                continue;
                            }
                            for (dx, wxx) in [(0, 1.0 - wx), (1, wx)] {
                                let jx = ix + dx;
                                if wxx == 0.0 || jx < 0 || jx >= nx as i64 {
                                    continue;
                                }
                                column.push(((jy as usize * nx + jx as usize) as u32, wxx * wyy));
                            }
                        }
                    }
                }
            }
        }
        let scale = match cfg.normalization {
            Normalization::RaySum => step,
            Normalization::Mean if inside > 0 => 1.0 / inside as f64,
            Normalization::Mean => 0.0,
        };
        if scale != 0.0 {
            entries.extend(column.iter().map(|&(i, w)| (i, w * scale)));
        }
        offsets.push(entries.len());
    }

    let row_slice = (0..nv)
        .map(|iv| {
            let z = v0 + iv as f64 * sv;
            let iz = ((z - z0) / sz + 0.5).floor();
            (iz >= 0.0 && (iz as usize) < nz).then_some(iz as usize)
        })
        .collect();

    ViewStencil { offsets, entries, row_slice }
}

fn build_stencils(geometry: &VolumeGeometry, views: &ViewSet, cfg: &ProjectorConfig) -> Result<Vec<ViewStencil>> {
    views.validate()?;
    let step = cfg.step_for(geometry)?;
    Ok(views
        .angles
        .par_iter()
        .map(|&theta| build_stencil(geometry, views, theta, step, cfg))
        .collect())
}

/// Projects every channel of `volume` onto each view of `views`.
pub fn forward_project(volume: &Volume3, views: &ViewSet, cfg: &ProjectorConfig) -> Result<Vec<Image2>> {
    let geometry = volume.geometry();
    let stencils = build_stencils(geometry, views, cfg)?;
    let [nx, ny, _] = geometry.dims;
    let plane = nx * ny;
    let [nu, nv] = views.detector_dims;
    let channels = volume.channels();

    stencils
        .iter()
        .map(|st| {
            let mut data = vec![0f32; channels * nu * nv];
            data.par_chunks_mut(nu).enumerate().for_each(|(row, out)| {
                let (c, iv) = (row / nv, row % nv);
                let Some(iz) = st.row_slice[iv] else { return };
                let base = volume.index(c, 0, 0, iz);
                let slice = &volume.data()[base..base + plane];
                for (iu, px) in out.iter_mut().enumerate() {
                    let mut acc = 0f64;
                    for &(i, w) in st.column(iu) {
                        acc += w * slice[i as usize] as f64;
                    }
                    *px = acc as f32;
                }
            });
            Image2::new(views.detector_dims, views.detector_spacing, views.detector_origin(), channels, data)
        })
        .collect()
}

/// Transpose of [`forward_project`]: smears every image back along its rays
/// into a grid shaped like `template`, summing over views.
pub fn back_project(
    images: &[Image2],
    views: &ViewSet,
    template: &VolumeGeometry,
    cfg: &ProjectorConfig,
) -> Result<Volume3> {
    if images.len() != views.len() {
        return Err(Error::Geometry(format!(
            "{} images for {} views",
            images.len(),
            views.len()
        )));
    }
    let channels = images.first().map(Image2::channels).unwrap_or(1);
    for (k, img) in images.iter().enumerate() {
        if img.dims() != views.detector_dims {
            return Err(Error::Geometry(format!(
                "image {k} has dims {:?}, detector is {:?}",
                img.dims(),
                views.detector_dims
            )));
        }
        if img.channels() != channels {
            return Err(Error::Geometry(format!(
                "image {k} has {} channels, expected {channels}",
                img.channels()
            )));
        }
    }
    let stencils = build_stencils(template, views, cfg)?;
    let [nx, ny, nz] = template.dims;
    let plane = nx * ny;
    let [nu, nv] = views.detector_dims;

    // rows of each view grouped by the slice they read
    let rows_by_slice: Vec<Vec<Vec<usize>>> = stencils
        .iter()
        .map(|st| {
            let mut rows = vec![Vec::new(); nz];
            for (iv, s) in st.row_slice.iter().enumerate() {
                if let Some(iz) = s {
                    rows[*iz].push(iv);
                }
            }
            rows
        })
        .collect();

    let mut data = vec![0f32; channels * nz * plane];
    data.par_chunks_mut(plane).enumerate().for_each(|(chunk, out)| {
        let (c, iz) = (chunk / nz, chunk % nz);
        let mut acc = vec![0f64; plane];
        for (k, st) in stencils.iter().enumerate() {
            let img = images[k].channel(c);
            for &iv in &rows_by_slice[k][iz] {
                let row = &img[iv * nu..(iv + 1) * nu];
                for (iu, &val) in row.iter().enumerate() {
                    if val == 0.0 {
                        continue;
                    }
                    let val = val as f64;
                    for &(i, w) in st.column(iu) {
                        acc[i as usize] += w * val;
                    }
                }
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    debug_assert_eq!(nv, stencils.first().map_or(nv, |s| s.row_slice.len()));
    Volume3::new(*template, channels, data)
}

/// Projects `volume ⊙ mask`: only the structures inside the binary mask contribute.
pub fn dissect_project(
    volume: &Volume3,
    mask: &Volume3,
    views: &ViewSet,
    cfg: &ProjectorConfig,
) -> Result<Vec<Image2>> {
    if mask.geometry() != volume.geometry() || mask.channels() != 1 {
        return Err(Error::Shape(format!(
            "mask {:?} x{} does not match volume {:?}",
            mask.dims(),
            mask.channels(),
            volume.dims()
        )));
    }
    if !mask.is_binary() {
        return Err(Error::Validation("dissection mask must be binary".into()));
    }
    forward_project(&apply_mask(volume, mask)?, views, cfg)
}

/// `volume ⊙ mask` for every channel.
pub fn apply_mask(volume: &Volume3, mask: &Volume3) -> Result<Volume3> {
    let m = mask.channel(0);
    let n = m.len();
    let data = volume
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * m[i % n])
        .collect();
    Volume3::new(*volume.geometry(), volume.channels(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube(n: usize) -> VolumeGeometry {
        VolumeGeometry::centered([n, n, n], [1.0; 3]).unwrap()
    }

    fn views(angles: &[f64], n: usize) -> ViewSet {
        ViewSet::new(angles.to_vec(), [n, n], [1.0, 1.0]).unwrap()
    }

    #[test]
    fn zero_in_zero_out() {
        let v = Volume3::zeros(cube(8), 2).unwrap();
        let imgs = forward_project(&v, &views(&[-35.0, 0.0, 35.0], 12), &ProjectorConfig::default()).unwrap();
        assert_eq!(imgs.len(), 3);
        assert!(imgs.iter().all(|i| i.channels() == 2 && i.data().iter().all(|&x| x == 0.0)));
        let back = back_project(&imgs, &views(&[-35.0, 0.0, 35.0], 12), &cube(8), &ProjectorConfig::default())
            .unwrap();
        assert!(back.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn non_positive_step_is_config_error() {
        let v = Volume3::zeros(cube(4), 1).unwrap();
        let cfg = ProjectorConfig::default().with_step(0.0);
        assert!(matches!(forward_project(&v, &views(&[0.0], 4), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn view_count_mismatch() {
        let vs = views(&[0.0, 10.0], 4);
        let img = vs.blank_image(1).unwrap();
        assert!(matches!(
            back_project(&[img], &vs, &cube(4), &ProjectorConfig::default()),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn uniform_column_sums_at_zero_degrees() {
        for interp in [Interpolation::Nearest, Interpolation::Bilinear] {
            let g = cube(16);
            let v = Volume3::from_fn(g, |_, _, _| 1.0).unwrap();
            let cfg = ProjectorConfig::new(interp, Normalization::RaySum);
            let img = &forward_project(&v, &views(&[0.0], 16), &cfg).unwrap()[0];
            for iv in 0..16 {
                for iu in 0..16 {
                    assert!((img.get(0, iu, iv) - 16.0).abs() < 1e-4, "{interp:?} {iu} {iv}");
                }
            }
            let mean = ProjectorConfig::new(interp, Normalization::Mean);
            let img = &forward_project(&v, &views(&[0.0], 16), &mean).unwrap()[0];
            assert!((img.get(0, 8, 8) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mask_checks() {
        let g = cube(4);
        let v = Volume3::from_fn(g, |x, _, _| x as f32 + 3.0).unwrap();
        let half = Volume3::from_fn(g, |_, _, _| 0.5).unwrap();
        let vs = views(&[0.0], 6);
        let cfg = ProjectorConfig::default();
        assert!(matches!(dissect_project(&v, &half, &vs, &cfg), Err(Error::Validation(_))));
        let ones = Volume3::from_fn(g, |_, _, _| 1.0).unwrap();
        assert_eq!(dissect_project(&v, &ones, &vs, &cfg).unwrap(), forward_project(&v, &vs, &cfg).unwrap());
        let zeros = Volume3::zeros(g, 1).unwrap();
        let out = dissect_project(&v, &zeros, &vs, &cfg).unwrap();
        assert!(out[0].data().iter().all(|&x| x == 0.0));
        let small = Volume3::zeros(cube(3), 1).unwrap();
        assert!(matches!(dissect_project(&v, &small, &vs, &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn detector_rows_outside_volume_are_zero() {
        let g = cube(4);
        let v = Volume3::from_fn(g, |_, _, _| 1.0).unwrap();
        let img = &forward_project(&v, &views(&[0.0], 8), &ProjectorConfig::default()).unwrap()[0];
        assert_eq!(img.get(0, 4, 0), 0.0);
        assert!(img.get(0, 4, 4) > 0.0);
    }
}
