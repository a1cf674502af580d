//! The multi-modality cut-and-paste procedure: BEV collision discard, 2D
//! occlusion filtering by intersection-over-foreground with mixed thresholds,
//! and depth-ordered compositing with boundary blending.
//!
//! Planning and pasting are pure given an explicit seeded generator, so
//! different scenes can be processed in parallel with independent generators.

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{bev_overlap, points_in_box3d, Box2D, Box3D, CalibrationChain, Mask2D, PointCloud};
use crate::gt_database::GtObject;
use crate::transform_flow::TransformFlow;

/// The mixed-threshold set: one value is drawn uniformly per iteration.
pub const DEFAULT_THRESHOLDS: [f64; 4] = [0.0, 0.3, 0.5, 0.7];

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("patch at ({0}, {1}) size {2}x{3} exceeds image bounds {4}x{5}")]
    PatchOutOfBounds(u32, u32, u32, u32, u32, u32),
    #[error("patch and mask dimensions differ")]
    PatchMaskMismatch,
}

/// Why a sampled candidate was not pasted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    /// BEV footprint intersects an original or an already-kept candidate.
    BevCollision,
    /// The candidate's own IoF against existing boxes exceeds the threshold.
    IofSelf,
    /// The candidate would push an existing box's IoF over the threshold.
    IofOriginal,
}

/// Whether a scene object was there originally or pasted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Pasted,
}

/// One annotated object of a scene (no mask; masks live in the database).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class_label: String,
    pub box3d: Box3D,
    pub box2d: Box2D,
    pub provenance: Provenance,
}

/// A training frame: both modalities, the calibration chain, the annotated
/// objects, and the (initially empty) transform flow.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub image: RgbImage,
    pub calib: CalibrationChain,
    pub originals: Vec<SceneObject>,
    pub flow: TransformFlow,
}

/// The audited outcome of the occlusion filter for one scene.
#[derive(Debug, Clone)]
pub struct PastePlan {
    pub threshold: f64,
    /// Survivors, sorted by depth descending (farthest first, ties by id).
    pub kept: Vec<GtObject>,
    pub rejected: Vec<(u64, RejectReason)>,
    pub rng_seed: u64,
}

/// Intersection-over-foreground of `a`: `area(a ∩ b) / area(a)`. Asymmetric.
pub fn iof(a: &Box2D, b: &Box2D) -> f64 {
    a.intersection_area(b) / a.area()
}

/// `max { iof(p, q) | q ∈ others }`, 0 for an empty set.
pub fn max_iof<'a>(p: &Box2D, others: impl IntoIterator<Item = &'a Box2D>) -> f64 {
    others
        .into_iter()
        .map(|q| iof(p, q))
        .fold(0.0, f64::max)
}

/// Uniform draw from the threshold set.
pub fn sample_threshold<R: Rng>(set: &[f64], rng: &mut R) -> f64 {
    assert!(!set.is_empty(), "threshold set must be non-empty");
    set[rng.gen_range(0..set.len())]
}

/// Greedy occlusion filter, in candidate order:
///
/// 1. reject on BEV footprint overlap with any original or already-kept
///    candidate,
/// 2. reject if the candidate's own IoF against existing 2D boxes exceeds the
///    threshold,
/// 3. reject if the candidate pushes any existing box's IoF over the
///    threshold.
///
/// Originals are never rejected. Survivors come out farthest-first.
pub fn plan_paste(
    scene: &Scene,
    candidates: Vec<GtObject>,
    threshold: f64,
    rng_seed: u64,
) -> PastePlan {
    let mut kept: Vec<GtObject> = Vec::new();
    let mut rejected = Vec::new();
    for cand in candidates {
        let bev_hit = scene
            .originals
            .iter()
            .map(|o| &o.box3d)
            .chain(kept.iter().map(|k| &k.box3d))
            .any(|b| bev_overlap(b, &cand.box3d));
        if bev_hit {
            rejected.push((cand.id, RejectReason::BevCollision));
            continue;
        }
        let self_iof = max_iof(
            &cand.box2d,
            scene
                .originals
                .iter()
                .map(|o| &o.box2d)
                .chain(kept.iter().map(|k| &k.box2d)),
        );
        if self_iof > threshold {
            rejected.push((cand.id, RejectReason::IofSelf));
            continue;
        }
        // the candidate must not push an original's (or an earlier survivor's)
        // occlusion degree over the threshold either
        let occludes = scene
            .originals
            .iter()
            .map(|o| &o.box2d)
            .chain(kept.iter().map(|k| &k.box2d))
            .any(|b| iof(b, &cand.box2d) > threshold);
        if occludes {
            rejected.push((cand.id, RejectReason::IofOriginal));
            continue;
        }
        kept.push(cand);
    }
    kept.sort_by(|a, b| {
        b.depth
            .partial_cmp(&a.depth)
            .unwrap()
            .then(a.id.cmp(&b.id))
    });
    PastePlan {
        threshold,
        kept,
        rejected,
        rng_seed,
    }
}

/// Patch compositing mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlendMode {
    /// Hard masked copy.
    None,
    /// Alpha ramp of the given radius at the mask boundary.
    Feather(u32),
}

/// How the per-object blend mode is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlendSpec {
    Fixed(BlendMode),
    /// Uniform draw over { none, feather 1, feather 2, feather 3 } per object.
    Random,
}

impl BlendSpec {
    pub fn resolve<R: Rng>(&self, rng: &mut R) -> BlendMode {
        match self {
            Self::Fixed(mode) => *mode,
            Self::Random => match rng.gen_range(0..4u32) {
                0 => BlendMode::None,
                r => BlendMode::Feather(r),
            },
        }
    }
}

/// 4-connected distance from each set pixel to the nearest unset pixel
/// (anything outside the bitmap counts as unset). Unset pixels get 0.
fn mask_interior_distance(mask: &Mask2D) -> Vec<u32> {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut dist = vec![u32::MAX; w * h];
    let mut queue = std::collections::VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let set = mask.get(x as u32, y as u32);
            let on_border = x == 0 || y == 0 || x == w - 1 || y == h - 1;
            if !set {
                dist[y * w + x] = 0;
                queue.push_back((x, y));
            } else if on_border {
                // neighbor outside the bitmap is unset at distance 0
                dist[y * w + x] = 1;
                queue.push_back((x, y));
            }
        }
    }
    while let Some((x, y)) = queue.pop_front() {
        let d = dist[y * w + x];
        let mut visit = |nx: usize, ny: usize| {
            let idx = ny * w + nx;
            if dist[idx] > d + 1 {
                dist[idx] = d + 1;
                queue.push_back((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < w {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < h {
            visit(x, y + 1);
        }
    }
    dist
}

/// Composite `patch` onto `image` under `mask`. Feathering ramps alpha
/// linearly from 0 at the boundary to 1 in the interior eroded by the radius:
/// a set pixel at distance `d` from the mask complement gets
/// `alpha = min(1, d / (radius + 1))`.
pub fn blend_patch(
    image: &mut RgbImage,
    patch: &RgbImage,
    mask: &Mask2D,
    mode: BlendMode,
) -> Result<(), EngineError> {
    if patch.width() != mask.width || patch.height() != mask.height {
        return Err(EngineError::PatchMaskMismatch);
    }
    let (ox, oy) = mask.origin;
    if ox + mask.width > image.width() || oy + mask.height > image.height() {
        return Err(EngineError::PatchOutOfBounds(
            ox,
            oy,
            mask.width,
            mask.height,
            image.width(),
            image.height(),
        ));
    }
    let dist = match mode {
        BlendMode::None => None,
        BlendMode::Feather(_) => Some(mask_interior_distance(mask)),
    };
    for y in 0..mask.height {
        for x in 0..mask.width {
            if !mask.get(x, y) {
                continue;
            }
            let src = patch.get_pixel(x, y);
            let dst = image.get_pixel_mut(ox + x, oy + y);
            match mode {
                BlendMode::None => *dst = *src,
                BlendMode::Feather(radius) => {
                    let d = dist.as_ref().unwrap()[(y * mask.width + x) as usize];
                    let alpha = (d as f64 / (radius as f64 + 1.0)).min(1.0);
                    for c in 0..3 {
                        let v = alpha * src.0[c] as f64 + (1.0 - alpha) * dst.0[c] as f64;
                        dst.0[c] = v.round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Execute a plan: remove original points inside kept boxes, append the kept
/// objects' points, composite patches farthest-first so nearer objects
/// overwrite, and extend the annotation list. Boxes are placed verbatim.
pub fn paste<R: Rng>(
    scene: &Scene,
    plan: &PastePlan,
    blend: BlendSpec,
    rng: &mut R,
) -> Result<Scene, EngineError> {
    let mut out = scene.clone();
    if plan.kept.is_empty() {
        return Ok(out);
    }

    // points: drop background returns inside any pasted box, then append
    let mut inside = vec![false; scene.cloud.len()];
    for obj in &plan.kept {
        for i in points_in_box3d(&scene.cloud, &obj.box3d) {
            inside[i] = true;
        }
    }
    let mut points: Vec<_> = scene
        .cloud
        .points()
        .iter()
        .zip(&inside)
        .filter(|(_, &r)| !r)
        .map(|(p, _)| *p)
        .collect();
    for obj in &plan.kept {
        points.extend_from_slice(obj.points.points());
    }
    out.cloud = PointCloud::new(points);

    // image: plan order is farthest first, so nearer patches overwrite
    for obj in &plan.kept {
        let mode = blend.resolve(rng);
        blend_patch(&mut out.image, &obj.patch, &obj.mask, mode)?;
    }

    for obj in &plan.kept {
        out.originals.push(SceneObject {
            class_label: obj.class_label.clone(),
            box3d: obj.box3d,
            box2d: obj.box2d,
            provenance: Provenance::Pasted,
        });
    }
    Ok(out)
}
