//! The augmentation run: per scene, draw a threshold, sample objects, plan and
//! execute the paste, then draw and apply the global point/image flows and
//! write the audited scene directory. Scene-level parallelism with per-scene
//! generators derived from `(seed, scene_id)` so worker count cannot change
//! outputs.

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synth::{list_scene_ids, load_bundle};
use super::{
    write_scene_dir, CliError, CorrespondenceFixture, RunConfig, SceneAnnotations, SceneBundle,
};
use crate::geometry::{normalize_angle, Box2D, Box3D};
use crate::gt_database::{sample_objects, GtDatabase};
use crate::moca_engine::{paste, plan_paste, sample_threshold, RejectReason, Scene};
use crate::transform_flow::{
    apply_point, apply_point_flow, correspond, replay_image_flow, FlipAxis, ImageTransform,
    PointTransform, TransformFlow,
};

/// FNV-1a over the scene id folded into the run seed; collisions only cost
/// shared randomness between two scenes, never nondeterminism.
pub fn scene_rng_seed(seed: u64, scene_id: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in scene_id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.wrapping_mul(0x9e3779b97f4a7c15)
}

/// Draw the global point flow in the conventional sequence: flip, scale,
/// rotate, translate.
pub fn draw_point_flow<R: Rng>(config: &RunConfig, rng: &mut R) -> Vec<PointTransform> {
    let mut flow = Vec::new();
    if rng.gen_bool(config.flip_probability) {
        flow.push(PointTransform::Flip { axis: FlipAxis::Y });
    }
    let (lo, hi) = config.scale_range;
    let factor = if lo < hi { rng.gen_range(lo..hi) } else { lo };
    flow.push(PointTransform::Scale { factor });
    let angle = if config.rotation_range > 0.0 {
        rng.gen_range(-config.rotation_range..config.rotation_range)
    } else {
        0.0
    };
    flow.push(PointTransform::RotateZ { angle });
    // Box-Muller pairs for the Gaussian translation
    let gauss = |rng: &mut R| {
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    flow.push(PointTransform::Translate {
        dx: config.translation_std * gauss(rng),
        dy: config.translation_std * gauss(rng),
        dz: config.translation_std * gauss(rng),
    });
    flow
}

pub fn draw_image_flow<R: Rng>(
    config: &RunConfig,
    image_width: u32,
    rng: &mut R,
) -> Vec<ImageTransform> {
    let mut flow = Vec::new();
    if rng.gen_bool(config.image_hflip_probability) {
        flow.push(ImageTransform::HFlip {
            width: image_width as f64,
        });
    }
    flow
}

/// Carry a 3D box through one point transform.
pub fn transform_box3d(b: &Box3D, t: &PointTransform) -> Box3D {
    let c = t.apply(nalgebra::Vector3::new(b.center[0], b.center[1], b.center[2]));
    let (size, yaw) = match *t {
        PointTransform::Flip { axis: FlipAxis::X } => {
            (b.size, normalize_angle(std::f64::consts::PI - b.yaw))
        }
        PointTransform::Flip { axis: FlipAxis::Y } => (b.size, normalize_angle(-b.yaw)),
        PointTransform::RotateZ { angle } => (b.size, normalize_angle(b.yaw + angle)),
        PointTransform::Scale { factor } => (b.size.map(|s| s * factor), b.yaw),
        PointTransform::Translate { .. } => (b.size, b.yaw),
    };
    Box3D::new([c.x, c.y, c.z], size, yaw).expect("transforms preserve box validity")
}

pub fn transform_box3d_flow(b: &Box3D, flow: &[PointTransform]) -> Box3D {
    flow.iter().fold(*b, |acc, t| transform_box3d(&acc, t))
}

/// Carry a 2D box through one image transform.
pub fn transform_box2d(b: &Box2D, t: &ImageTransform) -> Box2D {
    let (x_min, y_min, x_max, y_max) = match *t {
        ImageTransform::HFlip { width } => {
            (width - 1.0 - b.x_max, b.y_min, width - 1.0 - b.x_min, b.y_max)
        }
        ImageTransform::Resize { scale } => {
            (b.x_min * scale, b.y_min * scale, b.x_max * scale, b.y_max * scale)
        }
        ImageTransform::Pad { left, top } => {
            (b.x_min + left, b.y_min + top, b.x_max + left, b.y_max + top)
        }
    };
    Box2D::new(x_min, y_min, x_max, y_max).expect("transforms preserve box validity")
}

pub fn transform_box2d_flow(b: &Box2D, flow: &[ImageTransform]) -> Box2D {
    flow.iter().fold(*b, |acc, t| transform_box2d(&acc, t))
}

/// Apply the image flow to pixel data. Resize uses bilinear filtering; the
/// coordinate contract is what replay defines, the resample is deterministic.
pub fn apply_image_flow_to_image(image: &RgbImage, flow: &[ImageTransform]) -> RgbImage {
    let mut img = image.clone();
    for t in flow {
        img = match *t {
            ImageTransform::HFlip { .. } => image::imageops::flip_horizontal(&img),
            ImageTransform::Resize { scale } => {
                let w = ((img.width() as f64 * scale).round() as u32).max(1);
                let h = ((img.height() as f64 * scale).round() as u32).max(1);
                image::imageops::resize(&img, w, h, image::imageops::FilterType::Triangle)
            }
            ImageTransform::Pad { left, top } => {
                let (l, t) = (left as u32, top as u32);
                let mut canvas = RgbImage::new(img.width() + l, img.height() + t);
                image::imageops::overlay(&mut canvas, &img, l as i64, t as i64);
                canvas
            }
        };
    }
    img
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct ThresholdStats {
    pub scenes: usize,
    pub kept: usize,
    pub rejected: usize,
}

/// Machine-readable aggregate of one run.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct RunStats {
    pub scenes_ok: usize,
    pub scenes_failed: usize,
    pub kept: usize,
    pub rejected_bev: usize,
    pub rejected_iof_self: usize,
    pub rejected_iof_original: usize,
    pub per_threshold: BTreeMap<String, ThresholdStats>,
}

fn threshold_key(t: f64) -> String {
    format!("{t}")
}

/// What run_augment aggregates from one scene.
pub struct SceneOutcome {
    pub kept: usize,
    pub rejections: Vec<RejectReason>,
    pub threshold: f64,
}

/// Augment one loaded scene and write its output directory.
pub fn augment_scene(
    bundle: &SceneBundle,
    db: &GtDatabase,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<SceneOutcome, CliError> {
    let seed = scene_rng_seed(config.seed, &bundle.id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let threshold = sample_threshold(&config.thresholds, &mut rng);
    let candidates = sample_objects(db, &config.quota, &mut rng);
    let plan = plan_paste(&bundle.scene, candidates, threshold, seed);
    let pasted = paste(&bundle.scene, &plan, config.blend, &mut rng)?;

    let point_flow = draw_point_flow(config, &mut rng);
    let image_flow = draw_image_flow(config, pasted.image.width(), &mut rng);
    let flow = TransformFlow {
        point_flow: point_flow.clone(),
        image_flow: image_flow.clone(),
    };

    // correspondence fixture: ground truth from the pre-flow cloud, points
    // stored in augmented coordinates
    let mut fixtures = Vec::new();
    let stride = (pasted.cloud.len() / 50).max(1);
    for p in pasted.cloud.points().iter().step_by(stride) {
        let Ok(pix) = pasted.calib.project(p.xyz()) else {
            continue;
        };
        let gt = replay_image_flow(pix, &image_flow);
        let aug = apply_point(p.xyz(), &point_flow);
        fixtures.push(CorrespondenceFixture {
            point: [aug.x, aug.y, aug.z],
            u: gt.u,
            v: gt.v,
        });
        if fixtures.len() >= 50 {
            break;
        }
    }

    let objects = pasted
        .originals
        .iter()
        .map(|o| {
            let mut o = o.clone();
            o.box3d = transform_box3d_flow(&o.box3d, &point_flow);
            o.box2d = transform_box2d_flow(&o.box2d, &image_flow);
            o
        })
        .collect();
    let out_scene = Scene {
        cloud: apply_point_flow(&pasted.cloud, &point_flow),
        image: apply_image_flow_to_image(&pasted.image, &image_flow),
        calib: pasted.calib.clone(),
        originals: pasted.originals.clone(),
        flow,
    };
    let annotations = SceneAnnotations {
        objects,
        threshold,
        rejections: plan.rejected.clone(),
    };
    write_scene_dir(&out_dir.join(&bundle.id), &out_scene, &annotations, Some(&fixtures))?;
    Ok(SceneOutcome {
        kept: plan.kept.len(),
        rejections: plan.rejected.iter().map(|(_, r)| *r).collect(),
        threshold,
    })
}

/// Run the full pipeline over a corpus. Per-scene errors are logged and
/// skipped; the stats record the failure count.
pub fn run_augment(
    config: &RunConfig,
    scenes_root: &Path,
    db: &GtDatabase,
    out_dir: &Path,
) -> Result<RunStats, CliError> {
    config.validate()?;
    let ids = list_scene_ids(scenes_root)?;
    std::fs::create_dir_all(out_dir).map_err(|e| super::io_err(out_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;

    let results: Vec<(String, Result<SceneOutcome, CliError>)> = pool.install(|| {
        ids.par_iter()
            .map(|id| {
                let out = load_bundle(scenes_root, id, false)
                    .and_then(|bundle| augment_scene(&bundle, db, config, out_dir));
                (id.clone(), out)
            })
            .collect()
    });

    // single-threaded reduction in id order so stats are reproducible
    let mut stats = RunStats::default();
    for (id, result) in results {
        match result {
            Ok(outcome) => {
                stats.scenes_ok += 1;
                stats.kept += outcome.kept;
                for r in &outcome.rejections {
                    match r {
                        RejectReason::BevCollision => stats.rejected_bev += 1,
                        RejectReason::IofSelf => stats.rejected_iof_self += 1,
                        RejectReason::IofOriginal => stats.rejected_iof_original += 1,
                    }
                }
                let entry = stats
                    .per_threshold
                    .entry(threshold_key(outcome.threshold))
                    .or_default();
                entry.scenes += 1;
                entry.kept += outcome.kept;
                entry.rejected += outcome.rejections.len();
            }
            Err(e) => {
                eprintln!("scene {id} failed: {e}");
                stats.scenes_failed += 1;
            }
        }
    }
    super::write_json(&out_dir.join("stats.json"), &stats)?;
    Ok(stats)
}

/// One fixture point that exceeded the tolerance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub point: [f64; 3],
    pub du: f64,
    pub dv: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub fixtures: usize,
    pub max_du: f64,
    pub max_dv: f64,
    pub violations: Vec<Violation>,
}

/// Check every fixture point of a written scene against `correspond`.
pub fn verify_consistency(scene_dir: &Path, tolerance: f64) -> Result<ConsistencyReport, CliError> {
    let (scene, _) = super::read_scene_dir(scene_dir)?;
    let fixtures: Vec<CorrespondenceFixture> =
        super::read_json(&scene_dir.join("correspondences.json"))?;
    let mut report = ConsistencyReport {
        fixtures: fixtures.len(),
        max_du: 0.0,
        max_dv: 0.0,
        violations: Vec::new(),
    };
    for f in &fixtures {
        let p = nalgebra::Vector3::new(f.point[0], f.point[1], f.point[2]);
        let pix = correspond(p, &scene.flow, &scene.calib)?;
        let (du, dv) = ((pix.u - f.u).abs(), (pix.v - f.v).abs());
        report.max_du = report.max_du.max(du);
        report.max_dv = report.max_dv.max(dv);
        if du > tolerance || dv > tolerance {
            report.violations.push(Violation {
                point: f.point,
                du,
                dv,
            });
        }
    }
    Ok(report)
}
