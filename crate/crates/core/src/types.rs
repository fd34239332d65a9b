//! Grid, detector and box types shared by every stage of the pipeline.
//!
//! World coordinates are millimeters. A voxel `(ix, iy, iz)` has its center at
//! `origin + index * spacing`; rotation for projection happens about the
//! axial (`z`) axis. Detector `u` runs along the rotated `x` axis and
//! detector `v` is rigidly aligned with `z`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_finite(data: &[f32], what: &str) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "{what}: non-finite value {} at index {pos}",
            data[pos]
        )));
    }
    Ok(())
}

fn check_spacing(spacing: &[f64], what: &str) -> Result<()> {
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Validation(format!(
            "{what}: spacing must be positive and finite, got {spacing:?}"
        )));
    }
    Ok(())
}

/// Shape and placement of a 3D grid, without data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeGeometry {
    /// `(nx, ny, nz)`
    pub dims: [usize; 3],
    /// Millimeters per voxel along x, y, z.
    pub spacing: [f64; 3],
    /// World position of the center of voxel `(0, 0, 0)`.
    pub origin: [f64; 3],
}

impl VolumeGeometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Validation(format!("volume dims must be positive, got {dims:?}")));
        }
        check_spacing(&spacing, "volume")?;
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Validation(format!("volume origin must be finite, got {origin:?}")));
        }
        Ok(Self { dims, spacing, origin })
    }

    /// Grid whose center sits at the world origin.
    pub fn centered(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let origin = [0, 1, 2].map(|a| -(dims[a] as f64 - 1.0) * 0.5 * spacing[a]);
        Self::new(dims, spacing, origin)
    }

    pub fn voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// World coordinate of the voxel center at `index` along `axis`.
    pub fn coord(&self, axis: usize, index: usize) -> f64 {
        self.origin[axis] + index as f64 * self.spacing[axis]
    }

    /// Center of the grid in world coordinates.
    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.origin[a] + (self.dims[a] as f64 - 1.0) * 0.5 * self.spacing[a])
    }

    /// Outer extent `[lo, hi]` along `axis`, covering full voxels.
    pub fn extent(&self, axis: usize) -> (f64, f64) {
        let half = 0.5 * self.spacing[axis];
        (
            self.origin[axis] - half,
            self.coord(axis, self.dims[axis] - 1) + half,
        )
    }
}

/// Multi-channel 3D scalar grid. Data is channel-major, then z, y, x with x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    geometry: VolumeGeometry,
    channels: usize,
    data: Vec<f32>,
}

impl Volume3 {
    pub fn new(geometry: VolumeGeometry, channels: usize, data: Vec<f32>) -> Result<Self> {
        let geometry = VolumeGeometry::new(geometry.dims, geometry.spacing, geometry.origin)?;
        if channels == 0 {
            return Err(Error::Validation("volume needs at least one channel".into()));
        }
        let expected = channels * geometry.voxels();
        if data.len() != expected {
            return Err(Error::Validation(format!(
                "volume data length {} != channels {channels} * voxels {}",
                data.len(),
                geometry.voxels()
            )));
        }
        check_finite(&data, "volume")?;
        Ok(Self { geometry, channels, data })
    }

    pub fn zeros(geometry: VolumeGeometry, channels: usize) -> Result<Self> {
        let n = channels * geometry.voxels();
        Self::new(geometry, channels, vec![0.0; n])
    }

    /// Builds a single-channel volume by evaluating `f(x, y, z)` at every voxel center.
    pub fn from_fn(geometry: VolumeGeometry, mut f: impl FnMut(f64, f64, f64) -> f32) -> Result<Self> {
        let [nx, ny, nz] = geometry.dims;
        let mut data = Vec::with_capacity(geometry.voxels());
        for iz in 0..nz {
            let z = geometry.coord(2, iz);
            for iy in 0..ny {
                let y = geometry.coord(1, iy);
                for ix in 0..nx {
                    data.push(f(geometry.coord(0, ix), y, z));
                }
            }
        }
        Self::new(geometry, 1, data)
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.geometry.origin
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Samples of one channel.
    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.geometry.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn index(&self, c: usize, ix: usize, iy: usize, iz: usize) -> usize {
        let [nx, ny, nz] = self.geometry.dims;
        ((c * nz + iz) * ny + iy) * nx + ix
    }

    pub fn get(&self, c: usize, ix: usize, iy: usize, iz: usize) -> f32 {
        self.data[self.index(c, ix, iy, iz)]
    }

    /// Elementwise map. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.geometry, self.channels, self.data.iter().map(|&v| f(v)).collect())
    }

    /// True if every sample is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

/// Multi-channel detector image. Data is channel-major, then v, u with u fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2 {
    dims: [usize; 2],
    spacing: [f64; 2],
    origin: [f64; 2],
    channels: usize,
    data: Vec<f32>,
}

impl Image2 {
    /// `origin` is the world position `(u, z)` of the center of pixel `(0, 0)`.
    pub fn new(
        dims: [usize; 2],
        spacing: [f64; 2],
        origin: [f64; 2],
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Validation(format!("image dims must be positive, got {dims:?}")));
        }
        check_spacing(&spacing, "image")?;
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Validation(format!("image origin must be finite, got {origin:?}")));
        }
        if channels == 0 {
            return Err(Error::Validation("image needs at least one channel".into()));
        }
        if data.len() != channels * dims[0] * dims[1] {
            return Err(Error::Validation(format!(
                "image data length {} != channels {channels} * {} * {}",
                data.len(),
                dims[0],
                dims[1]
            )));
        }
        check_finite(&data, "image")?;
        Ok(Self { dims, spacing, origin, channels, data })
    }

    pub fn zeros(dims: [usize; 2], spacing: [f64; 2], origin: [f64; 2], channels: usize) -> Result<Self> {
        Self::new(dims, spacing, origin, channels, vec![0.0; channels * dims[0] * dims[1]])
    }

    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 2] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixels(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, iu: usize, iv: usize) -> f32 {
        self.data[(c * self.dims[1] + iv) * self.dims[0] + iu]
    }

    /// World `(u, z)` of a pixel center.
    pub fn pixel_center(&self, iu: usize, iv: usize) -> (f64, f64) {
        (
            self.origin[0] + iu as f64 * self.spacing[0],
            self.origin[1] + iv as f64 * self.spacing[1],
        )
    }

    pub fn same_shape(&self, other: &Image2) -> bool {
        self.dims == other.dims && self.channels == other.channels
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(
            self.dims,
            self.spacing,
            self.origin,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// Projection angles plus the detector they are recorded on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSet {
    /// Gantry angles in degrees.
    pub angles: Vec<f64>,
    /// `(nu, nv)` detector bins.
    pub detector_dims: [usize; 2],
    /// `(su, sv)` millimeters per bin.
    pub detector_spacing: [f64; 2],
    /// In-plane rotation center `(x, y)`; detector `u` is centered on it.
    #[serde(default)]
    pub rotation_center: [f64; 2],
    /// World `z` at the detector's `v` center.
    #[serde(default)]
    pub axial_center: f64,
}

impl ViewSet {
    pub fn new(angles: Vec<f64>, detector_dims: [usize; 2], detector_spacing: [f64; 2]) -> Result<Self> {
        let views = Self {
            angles,
            detector_dims,
            detector_spacing,
            rotation_center: [0.0, 0.0],
            axial_center: 0.0,
        };
        views.validate()?;
        Ok(views)
    }

    /// Places the rotation center and detector `v` center on the center of `geometry`.
    pub fn centered_on(mut self, geometry: &VolumeGeometry) -> Self {
        let c = geometry.center();
        self.rotation_center = [c[0], c[1]];
        self.axial_center = c[2];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles.is_empty() {
            return Err(Error::Validation("view set needs at least one angle".into()));
        }
        if self.angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::Validation(format!("angles must be finite, got {:?}", self.angles)));
        }
        if self.detector_dims.contains(&0) {
            return Err(Error::Validation(format!(
                "detector dims must be positive, got {:?}",
                self.detector_dims
            )));
        }
        check_spacing(&self.detector_spacing, "detector")?;
        if self.rotation_center.iter().any(|c| !c.is_finite()) || !self.axial_center.is_finite() {
            return Err(Error::Validation("detector center must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// World `(u, z)` of the center of detector pixel `(0, 0)`.
    pub fn detector_origin(&self) -> [f64; 2] {
        let [nu, nv] = self.detector_dims;
        let [su, sv] = self.detector_spacing;
        [
            self.rotation_center[0] - (nu as f64 - 1.0) * 0.5 * su,
            self.axial_center - (nv as f64 - 1.0) * 0.5 * sv,
        ]
    }

    /// An empty image on this detector.
    pub fn blank_image(&self, channels: usize) -> Result<Image2> {
        Image2::zeros(self.detector_dims, self.detector_spacing, self.detector_origin(), channels)
    }
}

/// Axis-aligned box in a projection, in world millimeters: `u` (rotated x) and `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box2 {
    pub x1: f64,
    pub z1: f64,
    pub x2: f64,
    pub z2: f64,
    pub score: Option<f64>,
    pub label: Option<String>,
}

impl Box2 {
    pub fn new(x1: f64, z1: f64, x2: f64, z2: f64) -> Result<Self> {
        let b = Self { x1, z1, x2, z2, score: None, label: None };
        b.validate()?;
        Ok(b)
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.coords();
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("2D box has non-finite coordinates {c:?}")));
        }
        if self.x1 > self.x2 || self.z1 > self.z2 {
            return Err(Error::Validation(format!("2D box corners out of order {c:?}")));
        }
        check_score(self.score)
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.z1, self.x2, self.z2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.z2 - self.z1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.x1 + self.x2), 0.5 * (self.z1 + self.z2)]
    }

    pub fn contains(&self, other: &Box2, tol: f64) -> bool {
        self.x1 <= other.x1 + tol
            && self.z1 <= other.z1 + tol
            && self.x2 >= other.x2 - tol
            && self.z2 >= other.z2 - tol
    }

    pub fn same_coords(&self, other: &Box2) -> bool {
        self.coords() == other.coords()
    }
}

/// Axis-aligned box in the volume, in world millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub x1: f64,
    pub y1: f64,
    pub z1: f64,
    pub x2: f64,
    pub y2: f64,
    pub z2: f64,
    pub score: Option<f64>,
    pub label: Option<String>,
}

impl Box3 {
    pub fn new(x1: f64, y1: f64, z1: f64, x2: f64, y2: f64, z2: f64) -> Result<Self> {
        let b = Self { x1, y1, z1, x2, y2, z2, score: None, label: None };
        b.validate()?;
        Ok(b)
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.coords();
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("3D box has non-finite coordinates {c:?}")));
        }
        if self.x1 > self.x2 || self.y1 > self.y2 || self.z1 > self.z2 {
            return Err(Error::Validation(format!("3D box corners out of order {c:?}")));
        }
        check_score(self.score)
    }

    pub fn coords(&self) -> [f64; 6] {
        [self.x1, self.y1, self.z1, self.x2, self.y2, self.z2]
    }

    pub fn size(&self) -> [f64; 3] {
        [self.x2 - self.x1, self.y2 - self.y1, self.z2 - self.z1]
    }

    pub fn volume(&self) -> f64 {
        let [w, h, d] = self.size();
        w * h * d
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.x1 + self.x2),
            0.5 * (self.y1 + self.y2),
            0.5 * (self.z1 + self.z2),
        ]
    }

    pub fn same_coords(&self, other: &Box3) -> bool {
        self.coords() == other.coords()
    }
}

fn check_score(score: Option<f64>) -> Result<()> {
    match score {
        Some(s) if !(0.0..=1.0).contains(&s) => {
            Err(Error::Validation(format!("score {s} outside [0, 1]")))
        }
        _ => Ok(()),
    }
}

/// Reference box for offset parameterization of 2D boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor2 {
    pub center: [f64; 2],
    pub size: [f64; 2],
}

/// Reference box for offset parameterization of 3D boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor3 {
    pub center: [f64; 3],
    pub size: [f64; 3],
}

impl Anchor2 {
    pub fn new(center: [f64; 2], size: [f64; 2]) -> Result<Self> {
        if center.iter().chain(&size).any(|v| !v.is_finite()) || size.iter().any(|&s| s <= 0.0) {
            return Err(Error::Validation(format!("invalid anchor {center:?} {size:?}")));
        }
        Ok(Self { center, size })
    }
}

impl Anchor3 {
    pub fn new(center: [f64; 3], size: [f64; 3]) -> Result<Self> {
        if center.iter().chain(&size).any(|v| !v.is_finite()) || size.iter().any(|&s| s <= 0.0) {
            return Err(Error::Validation(format!("invalid anchor {center:?} {size:?}")));
        }
        Ok(Self { center, size })
    }
}
