//! Core geometric types and the LiDAR→image projection chains, plus the
//! oriented-box math used by collision tests.
//!
//! All types are immutable values after construction and every operation is a
//! pure function, so everything here is safe to call from any number of
//! threads.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Camera-frame depths at or below this are treated as behind the camera.
pub const DEPTH_EPS: f64 = 1e-6;

/// Tolerance for the rotation-block orthonormality check at construction.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("camera-frame depth {0} is not positive")]
    DepthNonPositive(f64),
    #[error("non-finite coordinate in input")]
    NonFinite,
    #[error("intensity {0} outside [0, 1]")]
    IntensityOutOfRange(f64),
    #[error("box size must be positive, got ({0}, {1}, {2})")]
    NonPositiveSize(f64, f64, f64),
    #[error("degenerate 2D box ({0}, {1}, {2}, {3})")]
    DegenerateBox2D(f64, f64, f64, f64),
    #[error("rotation block is not orthonormal (max residual {0})")]
    NotOrthonormal(f64),
    #[error("homogeneous bottom row is not (0, 0, 0, 1)")]
    BadBottomRow,
    #[error("mask has no set pixels")]
    EmptyMask,
    #[error("mask bitmap is empty")]
    EmptyBitmap,
}

/// One LiDAR return: position in meters plus a reflectance in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && z.is_finite() && intensity.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !(0.0..=1.0).contains(&intensity) {
            return Err(GeometryError::IntensityOutOfRange(intensity));
        }
        Ok(Self { x, y, z, intensity })
    }

    pub fn xyz(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn with_xyz(&self, p: Vector3<f64>) -> Self {
        Self {
            x: p.x,
            y: p.y,
            z: p.z,
            intensity: self.intensity,
        }
    }
}

/// A point cloud: finite coordinates, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<LidarPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>) -> Self {
        Self { points }
    }

    pub fn from_xyzi(raw: &[[f64; 4]]) -> Result<Self, GeometryError> {
        let points = raw
            .iter()
            .map(|p| LidarPoint::new(p[0], p[1], p[2], p[3]))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { points })
    }

    pub fn points(&self) -> &[LidarPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// 7-DoF oriented box: center, size (w, l, h) and yaw about the vertical axis.
///
/// `l` extends along the local heading (x) axis, `w` across it, `h` upward.
/// Yaw is normalized to `(-π, π]` at construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

/// Normalize an angle to `(-π, π]`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * std::f64::consts::PI);
    if r > std::f64::consts::PI {
        r -= 2.0 * std::f64::consts::PI;
    }
    r
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64) -> Result<Self, GeometryError> {
        let [w, l, h] = size;
        if !(w > 0.0 && l > 0.0 && h > 0.0) {
            return Err(GeometryError::NonPositiveSize(w, l, h));
        }
        if !center.iter().all(|c| c.is_finite()) || !yaw.is_finite() {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self {
            center,
            size,
            yaw: normalize_angle(yaw),
        })
    }

    pub fn width(&self) -> f64 {
        self.size[0]
    }

    pub fn length(&self) -> f64 {
        self.size[1]
    }

    pub fn height(&self) -> f64 {
        self.size[2]
    }

    /// The four BEV footprint corners of the yaw-rotated `w×l` rectangle,
    /// counter-clockwise starting from local `(+l/2, +w/2)`.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (hw, hl) = (self.width() / 2.0, self.length() / 2.0);
        let (s, c) = self.yaw.sin_cos();
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| {
            [
                self.center[0] + c * lx - s * ly,
                self.center[1] + s * lx + c * ly,
            ]
        })
    }
}

/// Axis-aligned pixel-space 2D box with continuous coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(GeometryError::DegenerateBox2D(x_min, y_min, x_max, y_max));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn intersection_area(&self, other: &Box2D) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }
}

/// Binary pixel mask anchored at an image-space offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask2D {
    pub origin: (u32, u32),
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
}

impl Mask2D {
    pub fn new(
        origin: (u32, u32),
        width: u32,
        height: u32,
        bits: Vec<bool>,
    ) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 || bits.len() != (width as usize) * (height as usize) {
            return Err(GeometryError::EmptyBitmap);
        }
        if !bits.iter().any(|&b| b) {
            return Err(GeometryError::EmptyMask);
        }
        Ok(Self {
            origin,
            width,
            height,
            bits,
        })
    }

    /// Local-coordinates lookup; out-of-bitmap queries are unset.
    pub fn get(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        self.bits[(y as usize) * (self.width as usize) + x as usize]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Image-space bounding box of the set pixels, `(x_min, y_min, x_max, y_max)`
    /// inclusive of the last set pixel.
    pub fn set_pixel_bounds(&self) -> (u32, u32, u32, u32) {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (self.origin.0 + x0, self.origin.1 + y0, self.origin.0 + x1, self.origin.1 + y1)
    }
}

/// Projected pixel coordinate with the camera-frame depth that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

fn max_abs_residual(r: &Matrix3<f64>) -> f64 {
    let res = r * r.transpose() - Matrix3::identity();
    res.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn check_rotation_block(m: &Matrix4<f64>) -> Result<(), GeometryError> {
    let r = m.fixed_view::<3, 3>(0, 0).into_owned();
    let res = max_abs_residual(&r);
    if res > ROTATION_TOL {
        return Err(GeometryError::NotOrthonormal(res));
    }
    Ok(())
}

fn check_bottom_row(m: &Matrix4<f64>) -> Result<(), GeometryError> {
    let row = m.row(3);
    if row[0] != 0.0 || row[1] != 0.0 || row[2] != 0.0 || row[3] != 1.0 {
        return Err(GeometryError::BadBottomRow);
    }
    Ok(())
}

/// Ordered matrix chain mapping LiDAR coordinates to pixel coordinates.
///
/// Rotation blocks are checked for orthonormality and homogeneous bottom rows
/// for `(0, 0, 0, 1)` at construction; a chain that validates once never needs
/// re-checking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CalibrationChain {
    Kitti {
        /// 3×4 camera projection matrix (rectified).
        p_rect: Matrix3x4<f64>,
        /// Rectifying rotation, embedded in a 4×4 with bottom-right 1.
        r_rect: Matrix4<f64>,
        t_cam_from_lidar: Matrix4<f64>,
    },
    NuScenes {
        t_ego_from_lidar: Matrix4<f64>,
        t_ego_cam_from_ego_lidar: Matrix4<f64>,
        t_cam_from_ego: Matrix4<f64>,
        intrinsics: Matrix3<f64>,
    },
}

impl CalibrationChain {
    pub fn kitti(
        p_rect: Matrix3x4<f64>,
        r_rect: Matrix4<f64>,
        t_cam_from_lidar: Matrix4<f64>,
    ) -> Result<Self, GeometryError> {
        check_rotation_block(&r_rect)?;
        check_rotation_block(&t_cam_from_lidar)?;
        check_bottom_row(&r_rect)?;
        check_bottom_row(&t_cam_from_lidar)?;
        Ok(Self::Kitti {
            p_rect,
            r_rect,
            t_cam_from_lidar,
        })
    }

    pub fn nuscenes(
        t_ego_from_lidar: Matrix4<f64>,
        t_ego_cam_from_ego_lidar: Matrix4<f64>,
        t_cam_from_ego: Matrix4<f64>,
        intrinsics: Matrix3<f64>,
    ) -> Result<Self, GeometryError> {
        for m in [&t_ego_from_lidar, &t_ego_cam_from_ego_lidar, &t_cam_from_ego] {
            check_rotation_block(m)?;
            check_bottom_row(m)?;
        }
        Ok(Self::NuScenes {
            t_ego_from_lidar,
            t_ego_cam_from_ego_lidar,
            t_cam_from_ego,
            intrinsics,
        })
    }

    /// Identity KITTI chain: `P_rect = [I | 0]`, everything else identity.
    pub fn identity_kitti() -> Self {
        Self::Kitti {
            p_rect: Matrix3x4::identity(),
            r_rect: Matrix4::identity(),
            t_cam_from_lidar: Matrix4::identity(),
        }
    }

    /// Project a LiDAR-frame point through this chain.
    pub fn project(&self, point: Vector3<f64>) -> Result<PixelCoord, GeometryError> {
        match self {
            Self::Kitti { .. } => project_kitti(point, self),
            Self::NuScenes { .. } => project_nuscenes(point, self),
        }
    }
}

fn perspective_divide(h: Vector3<f64>) -> Result<PixelCoord, GeometryError> {
    let depth = h.z;
    if depth <= DEPTH_EPS {
        return Err(GeometryError::DepthNonPositive(depth));
    }
    Ok(PixelCoord {
        u: h.x / depth,
        v: h.y / depth,
        depth,
    })
}

/// KITTI projection: `P_rect · R_rect · T_cam←lidar · [x, y, z, 1]ᵀ` followed by
/// the perspective divide; the pre-divide third component is the depth.
pub fn project_kitti(
    point: Vector3<f64>,
    calib: &CalibrationChain,
) -> Result<PixelCoord, GeometryError> {
    let CalibrationChain::Kitti {
        p_rect,
        r_rect,
        t_cam_from_lidar,
    } = calib
    else {
        panic!("project_kitti requires a KITTI calibration chain");
    };
    if !point.iter().all(|c| c.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let hom = Vector4::new(point.x, point.y, point.z, 1.0);
    perspective_divide(p_rect * (r_rect * (t_cam_from_lidar * hom)))
}

/// nuScenes projection via the ego poses at the LiDAR and camera timestamps:
/// `K · [T_cam←ego · T_egoC←egoL · T_ego←lidar · p]` with the perspective divide.
pub fn project_nuscenes(
    point: Vector3<f64>,
    calib: &CalibrationChain,
) -> Result<PixelCoord, GeometryError> {
    let CalibrationChain::NuScenes {
        t_ego_from_lidar,
        t_ego_cam_from_ego_lidar,
        t_cam_from_ego,
        intrinsics,
    } = calib
    else {
        panic!("project_nuscenes requires a nuScenes calibration chain");
    };
    if !point.iter().all(|c| c.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let hom = Vector4::new(point.x, point.y, point.z, 1.0);
    let cam = t_cam_from_ego * (t_ego_cam_from_ego_lidar * (t_ego_from_lidar * hom));
    perspective_divide(intrinsics * cam.xyz())
}

/// The 8 corners of the yaw-rotated cuboid, bottom face first; within each
/// face the order matches [`Box3D::bev_corners`].
pub fn box3d_corners(b: &Box3D) -> [[f64; 3]; 8] {
    let bev = b.bev_corners();
    let hh = b.height() / 2.0;
    let mut out = [[0.0; 3]; 8];
    for (i, c) in bev.iter().enumerate() {
        out[i] = [c[0], c[1], b.center[2] - hh];
        out[i + 4] = [c[0], c[1], b.center[2] + hh];
    }
    out
}

fn project_interval(corners: &[[f64; 2]; 4], axis: [f64; 2]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in corners {
        let d = c[0] * axis[0] + c[1] * axis[1];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    (lo, hi)
}

/// Whether the BEV footprints intersect with positive area, decided by a
/// separating-axis test over the 4 edge normals. Touching edges count as
/// non-overlap.
pub fn bev_overlap(a: &Box3D, b: &Box3D) -> bool {
    let ca = a.bev_corners();
    let cb = b.bev_corners();
    let mut axes = [[0.0; 2]; 4];
    for (i, (yaw, _)) in [(a.yaw, ()), (b.yaw, ())].iter().enumerate() {
        let (s, c) = yaw.sin_cos();
        axes[2 * i] = [c, s];
        axes[2 * i + 1] = [-s, c];
    }
    for axis in axes {
        let (a_lo, a_hi) = project_interval(&ca, axis);
        let (b_lo, b_hi) = project_interval(&cb, axis);
        if a_hi <= b_lo || b_hi <= a_lo {
            return false;
        }
    }
    true
}

/// Indices of points strictly inside the oriented cuboid. Boundary points are
/// excluded (`<` after inverse-rotating into the box frame).
pub fn points_in_box3d(cloud: &PointCloud, b: &Box3D) -> Vec<usize> {
    let (s, c) = b.yaw.sin_cos();
    let (hw, hl, hh) = (b.width() / 2.0, b.length() / 2.0, b.height() / 2.0);
    cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            let dx = p.x - b.center[0];
            let dy = p.y - b.center[1];
            let dz = p.z - b.center[2];
            // inverse rotation by -yaw
            let lx = c * dx + s * dy;
            let ly = -s * dx + c * dy;
            lx.abs() < hl && ly.abs() < hw && dz.abs() < hh
        })
        .map(|(i, _)| i)
        .collect()
}
