//! C ABI over `xdt-core`.
//!
//! Every fallible function returns an [`XdtStatus`]. On failure the message is
//! kept per thread and can be read with [`xdt_last_error_message`]. Objects
//! created by the library are opaque handles released with the matching
//! `*_free` function; strings returned by the library are released with
//! [`xdt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use xdt_core::boxgeom;
use xdt_core::io;
use xdt_core::matching::{collaborate, MatchConfig};
use xdt_core::metrics::{self, ApInterpolation};
use xdt_core::projector::{self, Interpolation, Normalization, ProjectorConfig};
use xdt_core::{Anchor2, Anchor3, Box2, Box3, Error, Image2, ViewSet, Volume3, VolumeGeometry};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XdtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Format = 4,
    Parse = 5,
    Config = 6,
    Geometry = 7,
    Shape = 8,
    Encode = 9,
    Io = 10,
    Json = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

impl From<&Error> for XdtStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Validation(_) => XdtStatus::Validation,
            Error::Format(_) => XdtStatus::Format,
            Error::Parse { .. } => XdtStatus::Parse,
            Error::Config(_) => XdtStatus::Config,
            Error::Geometry(_) => XdtStatus::Geometry,
            Error::Shape(_) => XdtStatus::Shape,
            Error::Encode(_) => XdtStatus::Encode,
            Error::Io { .. } => XdtStatus::Io,
            Error::Json(_) => XdtStatus::Json,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(XdtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(XdtStatus::from(&e), e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

fn fail<T>(status: XdtStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> FfiResult) -> XdtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            XdtStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            XdtStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| Failure(XdtStatus::NullPointer, format!("{what} is null")))
}

unsafe fn as_out<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| Failure(XdtStatus::NullPointer, format!("{what} is null")))
}

unsafe fn as_slice<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(XdtStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(XdtStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(XdtStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(XdtStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn xdt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn xdt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------- handles

/// A multi-channel voxel grid.
pub struct XdtVolume(Volume3);

/// Projection angles and detector geometry.
pub struct XdtViews(ViewSet);

/// One projection image per view.
pub struct XdtImageSet(Vec<Image2>);

fn boxed<T>(out: &mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Creates a volume from `channels * nx * ny * nz` samples ordered channel, z, y, x.
///
/// # Safety
/// `dims`, `spacing` and `origin` point to 3 values; `data` to `len` values.
#[no_mangle]
pub unsafe extern "C" fn xdt_volume_new(
    dims: *const usize,
    spacing: *const f64,
    origin: *const f64,
    channels: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut XdtVolume,
) -> XdtStatus {
    guard(|| {
        let out = as_out(out, "out")?;
        let d = as_slice(dims, 3, "dims")?;
        let s = as_slice(spacing, 3, "spacing")?;
        let o = as_slice(origin, 3, "origin")?;
        let g = VolumeGeometry::new([d[0], d[1], d[2]], [s[0], s[1], s[2]], [o[0], o[1], o[2]])?;
        let data = as_slice(data, len, "data")?.to_vec();
        boxed(out, XdtVolume(Volume3::new(g, channels, data)?));
        Ok(())
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn xdt_volume_read(path: *const c_char, out: *mut *mut XdtVolume) -> XdtStatus {
    guard(|| {
        let out = as_out(out, "out")?;
        boxed(out, XdtVolume(io::read_volume(as_str(path, "path")?)?));
        Ok(())
    })
}

/// # Safety
/// `volume` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn xdt_volume_write(volume: *const XdtVolume, path: *const c_char) -> XdtStatus {
    guard(|| {
        let v = as_ref(volume, "volume")?;
        io::write_volume(&v.0, as_str(path, "path")?)?;
        Ok(())
    })
}

/// Writes the grid size to `dims[3]` and the channel count to `channels`.
///
/// # Safety
/// `volume` is a live handle; `dims` has room for 3 values.
#[no_mangle]
pub unsafe extern "C" fn xdt_volume_shape(
    volume: *const XdtVolume,
    dims: *mut usize,
    channels: *mut usize,
) -> XdtStatus {
    guard(|| {
        let v = as_ref(volume, "volume")?;
        if dims.is_null() {
            return fail(XdtStatus::NullPointer, "dims is null");
        }
        ptr::copy_nonoverlapping(v.0.dims().as_ptr(), dims, 3);
        *as_out(channels, "channels")? = v.0.channels();
        Ok(())
    })
}

/// Borrows the sample buffer; valid while the handle lives.
///
/// # Safety
/// `volume` is a live handle; `data` and `len` are writable.
#[no_mangle]
pub unsafe extern "C" fn xdt_volume_data(
    volume: *const XdtVolume,
    data: *mut *const f32,
    len: *mut usize,
) -> XdtStatus {
    guard(|| {
        let v = as_ref(volume, "volume")?;
        *as_out(data, "data")? = v.0.data().as_ptr();
        *as_out(len, "len")? = v.0.data().len();
        Ok(())
    })
}

/// # Safety
/// `volume` is null or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn xdt_volume_free(volume: *mut XdtVolume) {
    if !volume.is_null() {
        drop(Box::from_raw(volume));
    }
}

/// Creates a view set rotating about `center = (x, y, z)`, or about the
/// origin when `center` is null.
///
/// # Safety
/// `angles` points to `n` values, `detector_dims` and `detector_spacing` to 2,
/// `center` to 3 or is null.
#[no_mangle]
pub unsafe extern "C" fn xdt_views_new(
    angles: *const f64,
    n: usize,
    detector_dims: *const usize,
    detector_spacing: *const f64,
    center: *const f64,
    out: *mut *mut XdtViews,
) -> XdtStatus {
    guard(|| {
        let out = as_out(out, "out")?;
        let a = as_slice(angles, n, "angles")?.to_vec();
        let d = as_slice(detector_dims, 2, "detector_dims")?;
        let s = as_slice(detector_spacing, 2, "detector_spacing")?;
        let mut views = ViewSet::new(a, [d[0], d[1]], [s[0], s[1]])?;
        if !center.is_null() {
            let c = as_slice(center, 3, "center")?;
            views.rotation_center = [c[0], c[1]];
            views.axial_center = c[2];
            views.validate()?;
        }
        boxed(out, XdtViews(views));
        Ok(())
    })
}

/// # Safety
/// `views` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn xdt_views_len(views: *const XdtViews) -> usize {
    views.as_ref().map_or(0, |v| v.0.len())
}

/// # Safety
/// `views` is null or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn xdt_views_free(views: *mut XdtViews) {
    if !views.is_null() {
        drop(Box::from_raw(views));
    }
}

/// Creates one image per view from `channels * nu * nv` samples per view,
/// concatenated in view order, each ordered channel, v, u.
///
/// # Safety
/// `views` is a live handle; `data` points to `len` values.
#[no_mangle]
pub unsafe extern "C" fn xdt_image_set_new(
    views: *const XdtViews,
    channels: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut XdtImageSet,
) -> XdtStatus {
    guard(|| {
        let out = as_out(out, "out")?;
        let views = &as_ref(views, "views")?.0;
        let per = channels * views.detector_dims[0] * views.detector_dims[1];
        if per == 0 || len != per * views.len() {
            return fail(
                XdtStatus::InvalidArgument,
                format!("expected {} samples, got {len}", per * views.len()),
            );
        }
        let data = as_slice(data, len, "data")?;
        let images = data
            .chunks(per)
            .map(|c| {
                Image2::new(views.detector_dims, views.detector_spacing, views.detector_origin(), channels, c.to_vec())
            })
            .collect::<Result<Vec<_>, _>>()?;
        boxed(out, XdtImageSet(images));
        Ok(())
    })
}

/// # Safety
/// `set` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn xdt_image_set_len(set: *const XdtImageSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

unsafe fn image_at<'a>(set: *const XdtImageSet, index: usize) -> FfiResult<&'a Image2> {
    let s = as_ref(set, "set")?;
    match s.0.get(index) {
        Some(img) => Ok(img),
        None => fail(XdtStatus::InvalidArgument, format!("image {index} of {}", s.0.len())),
    }
}

/// Writes `(nu, nv)` to `dims[2]` and the channel count to `channels`.
///
/// # Safety
/// `set` is a live handle; `dims` has room for 2 values.
#[no_mangle]
pub unsafe extern "C" fn xdt_image_set_shape(
    set: *const XdtImageSet,
    index: usize,
    dims: *mut usize,
    channels: *mut usize,
) -> XdtStatus {
    guard(|| {
        let img = image_at(set, index)?;
        if dims.is_null() {
            return fail(XdtStatus::NullPointer, "dims is null");
        }
        ptr::copy_nonoverlapping(img.dims().as_ptr(), dims, 2);
        *as_out(channels, "channels")? = img.channels();
        Ok(())
    })
}

/// Borrows the samples of image `index`; valid while the handle lives.
///
/// # Safety
/// `set` is a live handle; `data` and `len` are writable.
#[no_mangle]
pub unsafe extern "C" fn xdt_image_set_data(
    set: *const XdtImageSet,
    index: usize,
    data: *mut *const f32,
    len: *mut usize,
) -> XdtStatus {
    guard(|| {
        let img = image_at(set, index)?;
        *as_out(data, "data")? = img.data().as_ptr();
        *as_out(len, "len")? = img.data().len();
        Ok(())
    })
}

/// # Safety
/// `set` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn xdt_image_set_write(set: *const XdtImageSet, index: usize, path: *const c_char) -> XdtStatus {
    guard(|| {
        let img = image_at(set, index)?;
        io::write_image(img, as_str(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `set` is null or a handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn xdt_image_set_free(set: *mut XdtImageSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

// ---------------------------------------------------------------- projector

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XdtInterpolation {
    Nearest = 0,
    Bilinear = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XdtNormalization {
    RaySum = 0,
    Mean = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XdtProjectorConfig {
    pub interpolation: XdtInterpolation,
    pub normalization: XdtNormalization,
    /// Sampling step in mm; zero selects the smallest in-plane voxel spacing.
    pub ray_step: f64,
}

/// Bilinear ray sums at the default step.
#[no_mangle]
pub extern "C" fn xdt_projector_config_default() -> XdtProjectorConfig {
    XdtProjectorConfig {
        interpolation: XdtInterpolation::Bilinear,
        normalization: XdtNormalization::RaySum,
        ray_step: 0.0,
    }
}

unsafe fn projector_config(cfg: *const XdtProjectorConfig) -> FfiResult<ProjectorConfig> {
    let c = match cfg.as_ref() {
        Some(c) => *c,
        None => xdt_projector_config_default(),
    };
    let interp = match c.interpolation {
        XdtInterpolation::Nearest => Interpolation::Nearest,
        XdtInterpolation::Bilinear => Interpolation::Bilinear,
    };
    let norm = match c.normalization {
        XdtNormalization::RaySum => Normalization::RaySum,
        XdtNormalization::Mean => Normalization::Mean,
    };
    let base = ProjectorConfig::new(interp, norm);
    Ok(if c.ray_step == 0.0 { base } else { base.with_step(c.ray_step) })
}

/// Forward projection of every channel of `volume`. A null `cfg` uses the defaults.
///
/// # Safety
/// Handles are live; `cfg` is null or valid; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn xdt_forward_project(
    volume: *const XdtVolume,
    views: *const XdtViews,
    cfg: *const XdtProjectorConfig,
    out: *mut *mut XdtImageSet,
) -> XdtStatus {
    guard(|| {
        let out = as_out(out, "out")?;
        let v = as_ref(volume, "volume")?;
        let views = as_ref(views, "views")?;
        let images = projector::forward_project(&v.0, &views.0, &projector_config(cfg)?)?;
        boxed(out, XdtImageSet(images));
        Ok(())
    })
}

/// Transpose of [`xdt_forward_project`] onto the grid of `like`.
///
/// # Safety
/// Handles are live; `cfg` is null or valid; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn xdt_back_project(
    images: *const XdtImageSet,
    views: *const XdtViews,
    like: *const XdtVolume,
    cfg: *const XdtProjectorConfig,
    out: *mut *mut XdtVolume,
) -> XdtStatus {
    guard(|| {
        let out = as_out(out, "out")?;
        let images = as_ref(images, "images")?;
        let views = as_ref(views, "views")?;
        let like = as_ref(like, "like")?;
        let v = projector::back_project(&images.0, &views.0, like.0.geometry(), &projector_config(cfg)?)?;
        boxed(out, XdtVolume(v));
        Ok(())
    })
}

/// Projection of `volume` restricted to the binary `mask`.
///
/// # Safety
/// Handles are live; `cfg` is null or valid; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn xdt_dissect_project(
    volume: *const XdtVolume,
    mask: *const XdtVolume,
    views: *const XdtViews,
    cfg: *const XdtProjectorConfig,
    out: *mut *mut XdtImageSet,
) -> XdtStatus {
    guard(|| {
        let out = as_out(out, "out")?;
        let v = as_ref(volume, "volume")?;
        let m = as_ref(mask, "mask")?;
        let views = as_ref(views, "views")?;
        let images = projector::dissect_project(&v.0, &m.0, &views.0, &projector_config(cfg)?)?;
        boxed(out, XdtImageSet(images));
        Ok(())
    })
}

// ---------------------------------------------------------------- boxes

/// A projection box in detector (x, z) coordinates. A NaN score means unscored.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XdtBox2 {
    pub x1: f64,
    pub z1: f64,
    pub x2: f64,
    pub z2: f64,
    pub score: f64,
}

/// A volume box in world coordinates. A NaN score means unscored.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XdtBox3 {
    pub x1: f64,
    pub y1: f64,
    pub z1: f64,
    pub x2: f64,
    pub y2: f64,
    pub z2: f64,
    pub score: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XdtAnchor2 {
    pub center: [f64; 2],
    pub size: [f64; 2],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XdtAnchor3 {
    pub center: [f64; 3],
    pub size: [f64; 3],
}

fn score_in(s: f64) -> Option<f64> {
    (!s.is_nan()).then_some(s)
}

fn score_out(s: Option<f64>) -> f64 {
    s.unwrap_or(f64::NAN)
}

impl XdtBox2 {
    fn to_core(self) -> FfiResult<Box2> {
        let b = Box2 { x1: self.x1, z1: self.z1, x2: self.x2, z2: self.z2, score: score_in(self.score), label: None };
        b.validate()?;
        Ok(b)
    }

    fn from_core(b: &Box2) -> Self {
        XdtBox2 { x1: b.x1, z1: b.z1, x2: b.x2, z2: b.z2, score: score_out(b.score) }
    }
}

impl XdtBox3 {
    fn to_core(self) -> FfiResult<Box3> {
        let b = Box3 {
            x1: self.x1,
            y1: self.y1,
            z1: self.z1,
            x2: self.x2,
            y2: self.y2,
            z2: self.z2,
            score: score_in(self.score),
            label: None,
        };
        b.validate()?;
        Ok(b)
    }

    fn from_core(b: &Box3) -> Self {
        XdtBox3 { x1: b.x1, y1: b.y1, z1: b.z1, x2: b.x2, y2: b.y2, z2: b.z2, score: score_out(b.score) }
    }
}

/// # Safety
/// All pointers are valid.
#[no_mangle]
pub unsafe extern "C" fn xdt_iou2(a: *const XdtBox2, b: *const XdtBox2, out: *mut f64) -> XdtStatus {
    guard(|| {
        let (a, b) = (as_ref(a, "a")?.to_core()?, as_ref(b, "b")?.to_core()?);
        *as_out(out, "out")? = boxgeom::iou2(&a, &b);
        Ok(())
    })
}

/// # Safety
/// All pointers are valid.
#[no_mangle]
pub unsafe extern "C" fn xdt_iou3(a: *const XdtBox3, b: *const XdtBox3, out: *mut f64) -> XdtStatus {
    guard(|| {
        let (a, b) = (as_ref(a, "a")?.to_core()?, as_ref(b, "b")?.to_core()?);
        *as_out(out, "out")? = boxgeom::iou3(&a, &b);
        Ok(())
    })
}

/// Bounds of the projection of `b` at `theta` degrees about `(cx, cy)`.
///
/// # Safety
/// All pointers are valid.
#[no_mangle]
pub unsafe extern "C" fn xdt_project_box3(
    b: *const XdtBox3,
    theta: f64,
    cx: f64,
    cy: f64,
    out: *mut XdtBox2,
) -> XdtStatus {
    guard(|| {
        let b = as_ref(b, "b")?.to_core()?;
        if !(theta.is_finite() && cx.is_finite() && cy.is_finite()) {
            return fail(XdtStatus::InvalidArgument, "angle and center must be finite");
        }
        *as_out(out, "out")? = XdtBox2::from_core(&boxgeom::project_box3(&b, theta, (cx, cy)));
        Ok(())
    })
}

/// Writes the 4 regression offsets of `b` relative to `anchor` to `t`.
///
/// # Safety
/// All pointers are valid; `t` has room for 4 values.
#[no_mangle]
pub unsafe extern "C" fn xdt_encode_box2(b: *const XdtBox2, anchor: *const XdtAnchor2, t: *mut f64) -> XdtStatus {
    guard(|| {
        let b = as_ref(b, "b")?.to_core()?;
        let a = as_ref(anchor, "anchor")?;
        let a = Anchor2::new(a.center, a.size)?;
        let v = boxgeom::encode_box2(&b, &a)?;
        if t.is_null() {
            return fail(XdtStatus::NullPointer, "t is null");
        }
        ptr::copy_nonoverlapping(v.as_ptr(), t, 4);
        Ok(())
    })
}

/// # Safety
/// All pointers are valid; `t` points to 4 values.
#[no_mangle]
pub unsafe extern "C" fn xdt_decode_box2(t: *const f64, anchor: *const XdtAnchor2, out: *mut XdtBox2) -> XdtStatus {
    guard(|| {
        let t = as_slice(t, 4, "t")?;
        let a = as_ref(anchor, "anchor")?;
        let a = Anchor2::new(a.center, a.size)?;
        *as_out(out, "out")? = XdtBox2::from_core(&boxgeom::decode_box2(&[t[0], t[1], t[2], t[3]], &a));
        Ok(())
    })
}

/// Writes the 6 regression offsets of `b` relative to `anchor` to `t`.
///
/// # Safety
/// All pointers are valid; `t` has room for 6 values.
#[no_mangle]
pub unsafe extern "C" fn xdt_encode_box3(b: *const XdtBox3, anchor: *const XdtAnchor3, t: *mut f64) -> XdtStatus {
    guard(|| {
        let b = as_ref(b, "b")?.to_core()?;
        let a = as_ref(anchor, "anchor")?;
        let a = Anchor3::new(a.center, a.size)?;
        let v = boxgeom::encode_box3(&b, &a)?;
        if t.is_null() {
            return fail(XdtStatus::NullPointer, "t is null");
        }
        ptr::copy_nonoverlapping(v.as_ptr(), t, 6);
        Ok(())
    })
}

/// # Safety
/// All pointers are valid; `t` points to 6 values.
#[no_mangle]
pub unsafe extern "C" fn xdt_decode_box3(t: *const f64, anchor: *const XdtAnchor3, out: *mut XdtBox3) -> XdtStatus {
    guard(|| {
        let t = as_slice(t, 6, "t")?;
        let a = as_ref(anchor, "anchor")?;
        let a = Anchor3::new(a.center, a.size)?;
        let mut v = [0.0; 6];
        v.copy_from_slice(t);
        *as_out(out, "out")? = XdtBox3::from_core(&boxgeom::decode_box3(&v, &a));
        Ok(())
    })
}

// ---------------------------------------------------------------- matching

/// Fuses 2D and 3D detections. Inputs use the JSON-lines box format; the
/// result is the match outcome as a JSON document, released with
/// [`xdt_string_free`].
///
/// # Safety
/// String arguments are NUL-terminated; `views` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn xdt_collaborate_json(
    boxes3_jsonl: *const c_char,
    boxes2_jsonl: *const c_char,
    views: *const XdtViews,
    threshold: f64,
    out: *mut *mut c_char,
) -> XdtStatus {
    guard(|| {
        let out = as_out(out, "out")?;
        let views = &as_ref(views, "views")?.0;
        let b3 = io::boxes3_of(&io::boxes_from_jsonl(as_str(boxes3_jsonl, "boxes3_jsonl")?)?);
        let b2 = io::split_views(&io::boxes_from_jsonl(as_str(boxes2_jsonl, "boxes2_jsonl")?)?, views.len())?;
        let outcome = collaborate(&b3, &b2, views, &MatchConfig { threshold })?;
        let text = serde_json::to_string(&outcome).map_err(Error::from)?;
        *out = CString::new(text)
            .map_err(|_| Failure(XdtStatus::Json, "output contains NUL".into()))?
            .into_raw();
        Ok(())
    })
}

/// Fuses 2D and 3D detections without strings.
///
/// `views_of[j]` is the view index of `boxes2[j]`. On success:
/// - `kept[i]` is 1 when 3D box `i` heads a group and 0 otherwise (`n3` entries);
/// - `q[i * K + k]` is the index, among the view-`k` boxes in input order, of
///   the 2D box matched to 3D box `i`, or -1 (`n3 * K` entries);
/// - `fused` and `fused_views` receive the fused 2D boxes and their views:
///   group boxes in group order, then unmatched 2D boxes. Their capacity is
///   `capacity`; the number written goes to `fused_len`. When the capacity is
///   too small the call fails with `BufferTooSmall` and `fused_len` holds the
///   required count. `n3 * K + n2` is always enough.
///
/// # Safety
/// Array pointers are valid for the stated lengths; `views` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn xdt_collaborate(
    boxes3: *const XdtBox3,
    n3: usize,
    boxes2: *const XdtBox2,
    views_of: *const usize,
    n2: usize,
    views: *const XdtViews,
    threshold: f64,
    kept: *mut u8,
    q: *mut i64,
    fused: *mut XdtBox2,
    fused_views: *mut usize,
    capacity: usize,
    fused_len: *mut usize,
) -> XdtStatus {
    guard(|| {
        let views = &as_ref(views, "views")?.0;
        let kv = views.len();
        let b3 = as_slice(boxes3, n3, "boxes3")?
            .iter()
            .map(|b| b.to_core())
            .collect::<FfiResult<Vec<_>>>()?;
        let mut b2 = vec![Vec::new(); kv];
        let which = as_slice(views_of, n2, "views_of")?;
        for (b, &k) in as_slice(boxes2, n2, "boxes2")?.iter().zip(which) {
            if k >= kv {
                return fail(XdtStatus::InvalidArgument, format!("view index {k} but {kv} views"));
            }
            b2[k].push(b.to_core()?);
        }
        let outcome = collaborate(&b3, &b2, views, &MatchConfig { threshold })?;
        let fused2 = outcome.fused_boxes2();
        let total: usize = fused2.iter().map(Vec::len).sum();
        let fused_len = as_out(fused_len, "fused_len")?;
        *fused_len = total;
        if total > capacity {
            return fail(XdtStatus::BufferTooSmall, format!("{total} fused boxes, capacity {capacity}"));
        }
        let kept = out_slice(kept, n3, "kept")?;
        kept.fill(0);
        for g in &outcome.groups {
            kept[g.index3] = 1;
        }
        // the raw matrix row is reported for every 3D box, kept or not
        let m = xdt_core::matching::build_iou_matrix(&b3, &b2, views, &MatchConfig { threshold })?;
        let q = out_slice(q, n3 * kv, "q")?;
        for i in 0..n3 {
            q[i * kv..(i + 1) * kv].copy_from_slice(m.q_row(i));
        }
        if total > 0 {
            let fused = out_slice(fused, total, "fused")?;
            let fv = out_slice(fused_views, total, "fused_views")?;
            let mut n = 0;
            for (k, list) in fused2.iter().enumerate() {
                for b in list {
                    fused[n] = XdtBox2::from_core(b);
                    fv[n] = k;
                    n += 1;
                }
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- metrics

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XdtApInterpolation {
    AllPoint = 0,
    ElevenPoint = 1,
}

fn ap_interp(i: XdtApInterpolation) -> ApInterpolation {
    match i {
        XdtApInterpolation::AllPoint => ApInterpolation::AllPoint,
        XdtApInterpolation::ElevenPoint => ApInterpolation::ElevenPoint,
    }
}

/// Average precision of scored 2D detections against ground-truth boxes.
///
/// # Safety
/// Array pointers are valid for the stated lengths; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn xdt_average_precision2(
    dets: *const XdtBox2,
    n_det: usize,
    gts: *const XdtBox2,
    n_gt: usize,
    iou_thresh: f64,
    interpolation: XdtApInterpolation,
    out: *mut f64,
) -> XdtStatus {
    guard(|| {
        let d = as_slice(dets, n_det, "dets")?.iter().map(|b| b.to_core()).collect::<FfiResult<Vec<_>>>()?;
        let g = as_slice(gts, n_gt, "gts")?.iter().map(|b| b.to_core()).collect::<FfiResult<Vec<_>>>()?;
        *as_out(out, "out")? = metrics::average_precision(&d, &g, iou_thresh, ap_interp(interpolation))?.ap;
        Ok(())
    })
}

/// Average precision of scored 3D detections against ground-truth boxes.
///
/// # Safety
/// Array pointers are valid for the stated lengths; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn xdt_average_precision3(
    dets: *const XdtBox3,
    n_det: usize,
    gts: *const XdtBox3,
    n_gt: usize,
    iou_thresh: f64,
    interpolation: XdtApInterpolation,
    out: *mut f64,
) -> XdtStatus {
    guard(|| {
        let d = as_slice(dets, n_det, "dets")?.iter().map(|b| b.to_core()).collect::<FfiResult<Vec<_>>>()?;
        let g = as_slice(gts, n_gt, "gts")?.iter().map(|b| b.to_core()).collect::<FfiResult<Vec<_>>>()?;
        *as_out(out, "out")? = metrics::average_precision(&d, &g, iou_thresh, ap_interp(interpolation))?.ap;
        Ok(())
    })
}
