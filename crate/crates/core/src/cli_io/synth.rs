//! Synthetic scene generation: ground-plane point scatter plus cuboid object
//! clusters, rendered into the image as flat-colored hull regions that are
//! exactly consistent with the calibration chain. Gives the projection and
//! consistency tests exact ground truth without shipping a dataset.

use std::collections::BTreeMap;
use std::path::Path;

use image::RgbImage;
use nalgebra::{Matrix3x4, Matrix4, Vector3};
use rand::Rng;

use super::kitti;
use super::{CliError, SceneBundle};
use crate::geometry::{
    bev_overlap, box3d_corners, Box2D, Box3D, CalibrationChain, Mask2D, PointCloud,
};
use crate::gt_database::Annotation;
use crate::moca_engine::{Provenance, Scene, SceneObject};
use crate::transform_flow::TransformFlow;

/// Sensor height above ground, meters.
const SENSOR_HEIGHT: f64 = 1.7;

/// Narrow to f32 and back so the value survives the f32 file containers
/// bit-exactly.
fn q32(v: f64) -> f64 {
    v as f32 as f64
}

/// The fixed forward-camera chain used by generated scenes: camera x = -lidar
/// y, camera y = -lidar z, camera z = lidar x.
pub fn synthetic_calib(focal: f64, width: u32, height: u32) -> CalibrationChain {
    let p = Matrix3x4::new(
        focal, 0.0, width as f64 / 2.0, 0.0, //
        0.0, focal, height as f64 / 2.0, 0.0, //
        0.0, 0.0, 1.0, 0.0,
    );
    let t = Matrix4::new(
        0.0, -1.0, 0.0, 0.0, //
        0.0, 0.0, -1.0, 0.0, //
        1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 1.0,
    );
    CalibrationChain::kitti(p, Matrix4::identity(), t).unwrap()
}

fn class_size(class: &str) -> [f64; 3] {
    match class {
        "car" => [1.8, 4.2, 1.6],
        "pedestrian" => [0.6, 0.6, 1.75],
        "cyclist" => [0.7, 1.8, 1.7],
        _ => [1.0, 1.0, 1.0],
    }
}

fn class_color(class: &str, variant: u8) -> image::Rgb<u8> {
    let base = match class {
        "car" => [200u8, 60, 60],
        "pedestrian" => [60, 180, 60],
        "cyclist" => [60, 60, 200],
        _ => [180, 180, 60],
    };
    image::Rgb(base.map(|c| c.saturating_add(variant % 40)))
}

/// Monotone-chain convex hull; input need not be sorted.
fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn point_in_convex(hull: &[(f64, f64)], p: (f64, f64)) -> bool {
    if hull.len() < 3 {
        return false;
    }
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        if cross < 0.0 {
            return false;
        }
    }
    true
}

struct RenderedObject {
    mask: Mask2D,
    box2d: Box2D,
}

/// Rasterize the convex hull of the projected corners; pixels whose centers
/// fall inside the hull are set.
fn render_object(
    image: &mut RgbImage,
    calib: &CalibrationChain,
    b: &Box3D,
    color: image::Rgb<u8>,
) -> Result<Option<RenderedObject>, CliError> {
    let mut proj = Vec::with_capacity(8);
    for c in box3d_corners(b) {
        let pix = calib.project(Vector3::new(c[0], c[1], c[2]))?;
        proj.push((pix.u, pix.v));
    }
    let hull = convex_hull(&proj);
    let (w, h) = (image.width(), image.height());
    let x0 = proj.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x1 = proj.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y0 = proj.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y1 = proj.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if x0 < 0.0 || y0 < 0.0 || x1 >= w as f64 || y1 >= h as f64 {
        return Ok(None);
    }
    let (px0, py0) = (x0.floor() as u32, y0.floor() as u32);
    let (px1, py1) = (x1.ceil() as u32, y1.ceil() as u32);
    let (mw, mh) = (px1 - px0 + 1, py1 - py0 + 1);
    let mut bits = vec![false; (mw * mh) as usize];
    let (mut sx0, mut sy0, mut sx1, mut sy1) = (u32::MAX, u32::MAX, 0u32, 0u32);
    for y in 0..mh {
        for x in 0..mw {
            let p = ((px0 + x) as f64 + 0.5, (py0 + y) as f64 + 0.5);
            if point_in_convex(&hull, p) {
                bits[(y * mw + x) as usize] = true;
                image.put_pixel(px0 + x, py0 + y, color);
                sx0 = sx0.min(px0 + x);
                sy0 = sy0.min(py0 + y);
                sx1 = sx1.max(px0 + x);
                sy1 = sy1.max(py0 + y);
            }
        }
    }
    if sx0 == u32::MAX {
        return Ok(None); // degenerate sliver, nothing rasterized
    }
    let mask = Mask2D::new((px0, py0), mw, mh, bits).map_err(CliError::Geometry)?;
    // the 2D box is the rasterized extent so mask and box agree exactly
    let box2d = Box2D::new(
        sx0 as f64,
        sy0 as f64,
        (sx1 + 1) as f64,
        (sy1 + 1) as f64,
    )
    .map_err(CliError::Geometry)?;
    Ok(Some(RenderedObject { mask, box2d }))
}

/// Generate one scene: ground scatter, per-class cuboid clusters placed
/// without BEV overlap and fully inside the image, rendered far-to-near.
pub fn generate_synthetic_scene<R: Rng>(
    spec: &BTreeMap<String, usize>,
    image_size: (u32, u32),
    rng: &mut R,
) -> SceneBundle {
    let (width, height) = image_size;
    let focal = 0.75 * width as f64;
    let calib = synthetic_calib(focal, width, height);

    // background image: mild vertical gradient
    let mut image = RgbImage::from_fn(width, height, |_, y| {
        let v = 30 + (y * 60 / height.max(1)) as u8;
        image::Rgb([v, v, v + 10])
    });

    // ground scatter
    let mut raw: Vec<[f64; 4]> = Vec::new();
    for _ in 0..1500 {
        let x = rng.gen_range(3.0..60.0);
        let max_y = 0.8 * x * (width as f64 / 2.0) / focal;
        let y = rng.gen_range(-max_y..max_y);
        let z = -SENSOR_HEIGHT + rng.gen_range(-0.05..0.05);
        raw.push([q32(x), q32(y), q32(z), q32(rng.gen_range(0.0..1.0))]);
    }

    // place objects, far first so nearer renders overwrite
    let mut placed: Vec<(String, Box3D)> = Vec::new();
    for (class, &count) in spec {
        let base = class_size(class);
        for _ in 0..count {
            for _attempt in 0..200 {
                let size = base.map(|s| q32(s * rng.gen_range(0.9..1.1)));
                let x = rng.gen_range(8.0..40.0);
                let max_y = (0.6 * x * (width as f64 / 2.0) / focal - size[1]).max(0.2);
                let y = rng.gen_range(-max_y..max_y);
                let z = -SENSOR_HEIGHT + size[2] / 2.0;
                let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
                let Ok(b) = Box3D::new([q32(x), q32(y), q32(z)], size, q32(yaw)) else {
                    continue;
                };
                if placed.iter().any(|(_, other)| bev_overlap(other, &b)) {
                    continue;
                }
                // all corners must project inside the image with margin
                let ok = box3d_corners(&b).iter().all(|c| {
                    calib
                        .project(Vector3::new(c[0], c[1], c[2]))
                        .map(|p| {
                            p.u >= 2.0
                                && p.v >= 2.0
                                && p.u < width as f64 - 2.0
                                && p.v < height as f64 - 2.0
                        })
                        .unwrap_or(false)
                });
                if !ok {
                    continue;
                }
                placed.push((class.clone(), b));
                break;
            }
        }
    }
    // far to near for correct visibility ordering
    placed.sort_by(|a, b| {
        b.1.center[0]
            .partial_cmp(&a.1.center[0])
            .unwrap()
            .then(a.0.cmp(&b.0))
    });

    let mut originals = Vec::new();
    let mut annotations = Vec::new();
    for (i, (class, b)) in placed.iter().enumerate() {
        // points uniform inside the slightly shrunken box
        let n = rng.gen_range(80..150);
        let (s, c) = b.yaw.sin_cos();
        for _ in 0..n {
            let lx = rng.gen_range(-0.45..0.45) * b.length();
            let ly = rng.gen_range(-0.45..0.45) * b.width();
            let lz = rng.gen_range(-0.45..0.45) * b.height();
            raw.push([
                q32(b.center[0] + c * lx - s * ly),
                q32(b.center[1] + s * lx + c * ly),
                q32(b.center[2] + lz),
                q32(rng.gen_range(0.0..1.0)),
            ]);
        }
        let rendered = render_object(&mut image, &calib, b, class_color(class, i as u8))
            .expect("placed objects project inside the image")
            .expect("placed objects rasterize to at least one pixel");
        originals.push(SceneObject {
            class_label: class.clone(),
            box3d: *b,
            box2d: rendered.box2d,
            provenance: Provenance::Original,
        });
        annotations.push(Annotation {
            class_label: class.clone(),
            box3d: *b,
            box2d: rendered.box2d,
            mask: rendered.mask,
        });
    }

    let cloud = PointCloud::from_xyzi(&raw).expect("generated coordinates are finite");
    SceneBundle {
        id: String::new(),
        scene: Scene {
            cloud,
            image,
            calib,
            originals,
            flow: TransformFlow::default(),
        },
        annotations,
    }
}

/// Write a bundle in the KITTI-style corpus layout:
/// `<root>/scenes/<id>/{velodyne.bin, image.png, calib.txt, label.txt}` and
/// `<root>/masks/<id>/{N.png, meta.json}`.
pub fn write_bundle(root: &Path, bundle: &SceneBundle) -> Result<(), CliError> {
    let scene_dir = root.join("scenes").join(&bundle.id);
    std::fs::create_dir_all(&scene_dir).map_err(|e| super::io_err(&scene_dir, e))?;
    kitti::write_velodyne(&scene_dir.join("velodyne.bin"), &bundle.scene.cloud)?;
    super::write_png(&scene_dir.join("image.png"), &bundle.scene.image)?;
    kitti::write_calib_file(&scene_dir.join("calib.txt"), &bundle.scene.calib)?;
    let labels = bundle
        .annotations
        .iter()
        .map(|a| kitti::box3d_to_label(&a.box3d, a.box2d, &a.class_label, &bundle.scene.calib))
        .collect::<Result<Vec<_>, _>>()?;
    kitti::write_label_file(&scene_dir.join("label.txt"), &labels)?;
    let masks: Vec<Mask2D> = bundle.annotations.iter().map(|a| a.mask.clone()).collect();
    kitti::write_masks(&root.join("masks").join(&bundle.id), &masks)?;
    Ok(())
}

/// Load a bundle written by [`write_bundle`]; masks are optional.
pub fn load_bundle(root: &Path, id: &str, with_masks: bool) -> Result<SceneBundle, CliError> {
    let scene_dir = root.join("scenes").join(id);
    let mask_dir = root.join("masks").join(id);
    let mut bundle = kitti::load_kitti_scene(
        &scene_dir.join("velodyne.bin"),
        &scene_dir.join("image.png"),
        &scene_dir.join("calib.txt"),
        &scene_dir.join("label.txt"),
        if with_masks { Some(mask_dir.as_path()) } else { None },
        kitti::DEFAULT_CAMERA,
    )?;
    bundle.id = id.to_string();
    Ok(bundle)
}

/// List the scene ids of a corpus root, sorted.
pub fn list_scene_ids(root: &Path) -> Result<Vec<String>, CliError> {
    let scenes = root.join("scenes");
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(&scenes).map_err(|e| super::io_err(&scenes, e))? {
        let entry = entry.map_err(|e| super::io_err(&scenes, e))?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

/// Generate and write `count` scenes with ids `000000..`.
pub fn generate_corpus(
    root: &Path,
    count: usize,
    spec: &BTreeMap<String, usize>,
    image_size: (u32, u32),
    seed: u64,
) -> Result<(), CliError> {
    use rand::SeedableRng;
    for i in 0..count {
        let id = format!("{i:06}");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
            super::augment::scene_rng_seed(seed, &id),
        );
        let mut bundle = generate_synthetic_scene(spec, image_size, &mut rng);
        bundle.id = id;
        write_bundle(root, &bundle)?;
    }
    Ok(())
}
