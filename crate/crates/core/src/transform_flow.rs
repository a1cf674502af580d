//! Transformation flow: every global augmentation is recorded as an
//! invertible transform, and a point in the augmented cloud finds its pixel in
//! the augmented image by reversing the point transforms, projecting through
//! the calibration chain, and replaying the image transforms in order.
//!
//! All operations are pure functions over immutable values.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{CalibrationChain, GeometryError, PixelCoord, PointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipAxis {
    X,
    Y,
}

/// One invertible point-cloud augmentation. Each kind has an exact inverse of
/// the same kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum PointTransform {
    Flip { axis: FlipAxis },
    RotateZ { angle: f64 },
    Scale { factor: f64 },
    Translate { dx: f64, dy: f64, dz: f64 },
}

impl PointTransform {
    pub fn apply(&self, p: Vector3<f64>) -> Vector3<f64> {
        match *self {
            Self::Flip { axis: FlipAxis::X } => Vector3::new(-p.x, p.y, p.z),
            Self::Flip { axis: FlipAxis::Y } => Vector3::new(p.x, -p.y, p.z),
            Self::RotateZ { angle } => {
                let (s, c) = angle.sin_cos();
                Vector3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z)
            }
            Self::Scale { factor } => p * factor,
            Self::Translate { dx, dy, dz } => Vector3::new(p.x + dx, p.y + dy, p.z + dz),
        }
    }

    pub fn inverse(&self) -> Self {
        match *self {
            Self::Flip { axis } => Self::Flip { axis },
            Self::RotateZ { angle } => Self::RotateZ { angle: -angle },
            Self::Scale { factor } => Self::Scale { factor: 1.0 / factor },
            Self::Translate { dx, dy, dz } => Self::Translate {
                dx: -dx,
                dy: -dy,
                dz: -dz,
            },
        }
    }
}

/// One invertible (for replay purposes, forward-only) image augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ImageTransform {
    /// Horizontal mirror; `width` is the image width at this flow stage.
    HFlip { width: f64 },
    /// Isotropic resize by `scale > 0`.
    Resize { scale: f64 },
    /// Pad on the left/top by whole pixels.
    Pad { left: f64, top: f64 },
}

impl ImageTransform {
    /// Forward pixel mapping; depth is untouched.
    pub fn replay(&self, pix: PixelCoord) -> PixelCoord {
        match *self {
            Self::HFlip { width } => PixelCoord {
                u: width - 1.0 - pix.u,
                ..pix
            },
            Self::Resize { scale } => PixelCoord {
                u: pix.u * scale,
                v: pix.v * scale,
                ..pix
            },
            Self::Pad { left, top } => PixelCoord {
                u: pix.u + left,
                v: pix.v + top,
                ..pix
            },
        }
    }
}

/// The per-scene consistency ledger: ordered transforms for each modality,
/// index 0 applied first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransformFlow {
    pub point_flow: Vec<PointTransform>,
    pub image_flow: Vec<ImageTransform>,
}

/// Apply the point flow in order to a single point.
pub fn apply_point(p: Vector3<f64>, flow: &[PointTransform]) -> Vector3<f64> {
    flow.iter().fold(p, |acc, t| t.apply(acc))
}

/// Undo the point flow: inverse transforms in reversed order.
pub fn reverse_point(p: Vector3<f64>, flow: &[PointTransform]) -> Vector3<f64> {
    flow.iter().rev().fold(p, |acc, t| t.inverse().apply(acc))
}

/// Apply the point flow to a whole cloud; intensities are untouched.
pub fn apply_point_flow(cloud: &PointCloud, flow: &[PointTransform]) -> PointCloud {
    PointCloud::new(
        cloud
            .points()
            .iter()
            .map(|p| p.with_xyz(apply_point(p.xyz(), flow)))
            .collect(),
    )
}

/// Exact inverse of [`apply_point_flow`].
pub fn reverse_point_flow(cloud: &PointCloud, flow: &[PointTransform]) -> PointCloud {
    PointCloud::new(
        cloud
            .points()
            .iter()
            .map(|p| p.with_xyz(reverse_point(p.xyz(), flow)))
            .collect(),
    )
}

/// Replay the image flow in order on a projected pixel.
pub fn replay_image_flow(pix: PixelCoord, flow: &[ImageTransform]) -> PixelCoord {
    flow.iter().fold(pix, |acc, t| t.replay(acc))
}

/// Map a point in augmented LiDAR coordinates to its pixel in the augmented
/// image: reverse the point flow, project through the calibration chain,
/// replay the image flow.
pub fn correspond(
    point_aug: Vector3<f64>,
    flow: &TransformFlow,
    calib: &CalibrationChain,
) -> Result<PixelCoord, GeometryError> {
    let original = reverse_point(point_aug, &flow.point_flow);
    let projected = calib.project(original)?;
    Ok(replay_image_flow(projected, &flow.image_flow))
}
