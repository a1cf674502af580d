//! Offline ground-truth object bank: per-object cropped points, image patch,
//! mask and boxes, built once from training scenes and sampled at augment
//! time.
//!
//! Container layout (directory): `manifest.json` with classes, counts and the
//! record table, plus per-object files — points as little-endian f32 N×4
//! binary, patch as 8-bit RGB PNG, mask as 8-bit single-channel 0/255 PNG.
//! The write is byte-deterministic so rebuilds from the same scenes are
//! byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    points_in_box3d, Box2D, Box3D, CalibrationChain, GeometryError, LidarPoint, Mask2D, PointCloud,
};

/// Objects whose box contains fewer interior points than this are not stored;
/// near-empty point crops are useless paste sources.
pub const DEFAULT_MIN_POINTS: usize = 5;

#[derive(Debug, Error)]
pub enum DbError {
    #[error("mask bounds ({0}, {1})..({2}, {3}) exceed image {4}x{5}")]
    MaskOutsideImage(u32, u32, u32, u32, u32, u32),
    #[error("mask and 2D box disagree by more than 1 px (mask bounds {0:?}, box {1:?})")]
    AnnotationMismatch((u32, u32, u32, u32), Box2D),
    #[error("manifest counts do not match stored records")]
    ManifestMismatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: String,
        source: image::ImageError,
    },
    #[error("manifest parse error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("points file {path} length {len} not divisible by 16")]
    TruncatedPoints { path: String, len: usize },
}

fn io_err(path: &Path, source: std::io::Error) -> DbError {
    DbError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One annotated object in a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub class_label: String,
    pub box3d: Box3D,
    pub box2d: Box2D,
    pub mask: Mask2D,
}

/// Everything [`build_database`] needs from one training scene.
pub struct SceneRef<'a> {
    pub cloud: &'a PointCloud,
    pub image: &'a RgbImage,
    pub calib: &'a CalibrationChain,
    pub annotations: &'a [Annotation],
}

/// A paste source: cropped points in original LiDAR coordinates, the image
/// patch under the 2D box, and the boxes that place it back.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub id: u64,
    pub class_label: String,
    pub box3d: Box3D,
    pub box2d: Box2D,
    pub mask: Mask2D,
    pub points: PointCloud,
    pub patch: RgbImage,
    /// Camera-frame z of the 3D box center; drives depth-ordered pasting.
    pub depth: f64,
}

/// The object bank, grouped by class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GtDatabase {
    objects: Vec<GtObject>,
    by_class: BTreeMap<String, Vec<usize>>,
}

impl GtDatabase {
    pub fn objects(&self) -> &[GtObject] {
        &self.objects
    }

    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        self.by_class
            .iter()
            .map(|(k, v)| (k.clone(), v.len()))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    fn push(&mut self, mut obj: GtObject) {
        obj.id = self.objects.len() as u64;
        self.by_class
            .entry(obj.class_label.clone())
            .or_default()
            .push(self.objects.len());
        self.objects.push(obj);
    }
}

fn crop_patch(image: &RgbImage, mask: &Mask2D) -> Result<RgbImage, DbError> {
    let (ox, oy) = mask.origin;
    if ox + mask.width > image.width() || oy + mask.height > image.height() {
        return Err(DbError::MaskOutsideImage(
            ox,
            oy,
            ox + mask.width,
            oy + mask.height,
            image.width(),
            image.height(),
        ));
    }
    let mut patch = RgbImage::new(mask.width, mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            patch.put_pixel(x, y, *image.get_pixel(ox + x, oy + y));
        }
    }
    Ok(patch)
}

fn check_mask_box_agreement(mask: &Mask2D, box2d: &Box2D) -> Result<(), DbError> {
    let bounds = mask.set_pixel_bounds();
    let (x0, y0, x1, y1) = bounds;
    let within = |a: f64, b: f64| (a - b).abs() <= 1.0 + 1e-9;
    // the set-pixel bounding box must sit inside the 2D box within 1 px
    let inside = x0 as f64 >= box2d.x_min - 1.0 - 1e-9
        && y0 as f64 >= box2d.y_min - 1.0 - 1e-9
        && (x1 + 1) as f64 <= box2d.x_max + 1.0 + 1e-9
        && (y1 + 1) as f64 <= box2d.y_max + 1.0 + 1e-9;
    // and span the box within 1 px on each side
    let spans = within(x0 as f64, box2d.x_min)
        && within(y0 as f64, box2d.y_min)
        && within((x1 + 1) as f64, box2d.x_max)
        && within((y1 + 1) as f64, box2d.y_max);
    if inside && spans {
        Ok(())
    } else {
        Err(DbError::AnnotationMismatch(bounds, *box2d))
    }
}

/// Build the bank from training-split scenes: one object per annotation with
/// at least `min_points` interior points.
pub fn build_database(scenes: &[SceneRef<'_>], min_points: usize) -> Result<GtDatabase, DbError> {
    let mut db = GtDatabase::default();
    for scene in scenes {
        for ann in scene.annotations {
            check_mask_box_agreement(&ann.mask, &ann.box2d)?;
            let patch = crop_patch(scene.image, &ann.mask)?;
            let idx = points_in_box3d(scene.cloud, &ann.box3d);
            if idx.len() < min_points {
                continue;
            }
            let center = nalgebra::Vector3::new(
                ann.box3d.center[0],
                ann.box3d.center[1],
                ann.box3d.center[2],
            );
            let depth = match scene.calib.project(center) {
                Ok(pix) => pix.depth,
                // an object center behind the camera cannot be pasted into the image
                Err(GeometryError::DepthNonPositive(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            let points = PointCloud::new(
                idx.iter().map(|&i| scene.cloud.points()[i]).collect(),
            );
            db.push(GtObject {
                id: 0,
                class_label: ann.class_label.clone(),
                box3d: ann.box3d,
                box2d: ann.box2d,
                mask: ann.mask.clone(),
                points,
                patch,
                depth,
            });
        }
    }
    Ok(db)
}

/// Uniform per-class sampling without replacement, clamped to availability.
/// Classes are drawn in lexicographic order so a given seed always yields the
/// same batch.
pub fn sample_objects<R: Rng>(
    db: &GtDatabase,
    quota: &BTreeMap<String, usize>,
    rng: &mut R,
) -> Vec<GtObject> {
    let mut out = Vec::new();
    for (class, &want) in quota {
        let Some(indices) = db.by_class.get(class) else {
            continue;
        };
        let k = want.min(indices.len());
        if k == 0 {
            continue;
        }
        let picks = rand::seq::index::sample(rng, indices.len(), k);
        for p in picks.iter() {
            out.push(db.objects[indices[p]].clone());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// container serialization
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RecordMeta {
    id: u64,
    class_label: String,
    box3d: Box3D,
    box2d: Box2D,
    depth: f64,
    num_points: usize,
    mask_origin: (u32, u32),
    points_file: String,
    patch_file: String,
    mask_file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    classes: BTreeMap<String, usize>,
    records: Vec<RecordMeta>,
}

/// Little-endian f32 N×4 stream.
pub fn encode_points_f32(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in cloud.points() {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_points_f32(bytes: &[u8], path: &str) -> Result<PointCloud, DbError> {
    if bytes.len() % 16 != 0 {
        return Err(DbError::TruncatedPoints {
            path: path.to_string(),
            len: bytes.len(),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[i..i + 4].try_into().unwrap()) as f64;
        points.push(
            LidarPoint::new(f(0), f(4), f(8), f(12).clamp(0.0, 1.0))
                .map_err(DbError::Geometry)?,
        );
    }
    Ok(PointCloud::new(points))
}

fn mask_to_gray(mask: &Mask2D) -> GrayImage {
    let mut img = GrayImage::new(mask.width, mask.height);
    for y in 0..mask.height {
        for x in 0..mask.width {
            img.put_pixel(x, y, image::Luma([if mask.get(x, y) { 255 } else { 0 }]));
        }
    }
    img
}

fn gray_to_mask(img: &GrayImage, origin: (u32, u32)) -> Result<Mask2D, DbError> {
    let bits = img.pixels().map(|p| p.0[0] >= 128).collect();
    Ok(Mask2D::new(origin, img.width(), img.height(), bits)?)
}

fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("in-memory png encode cannot fail");
    buf.into_inner()
}

fn encode_png_gray(img: &GrayImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("in-memory png encode cannot fail");
    buf.into_inner()
}

pub fn save_database(db: &GtDatabase, dir: &Path) -> Result<(), DbError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut records = Vec::with_capacity(db.objects.len());
    for obj in &db.objects {
        let stem = format!("{:06}", obj.id);
        let points_file = format!("{stem}.bin");
        let patch_file = format!("{stem}_patch.png");
        let mask_file = format!("{stem}_mask.png");
        let write = |name: &str, bytes: &[u8]| {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| io_err(&path, e))
        };
        write(&points_file, &encode_points_f32(&obj.points))?;
        write(&patch_file, &encode_png(&obj.patch))?;
        write(&mask_file, &encode_png_gray(&mask_to_gray(&obj.mask)))?;
        records.push(RecordMeta {
            id: obj.id,
            class_label: obj.class_label.clone(),
            box3d: obj.box3d,
            box2d: obj.box2d,
            depth: obj.depth,
            num_points: obj.points.len(),
            mask_origin: obj.mask.origin,
            points_file,
            patch_file,
            mask_file,
        });
    }
    let manifest = Manifest {
        classes: db.class_counts(),
        records,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| io_err(&path, e))?;
    Ok(())
}

pub fn load_database(dir: &Path) -> Result<GtDatabase, DbError> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_slice(
        &fs::read(&manifest_path).map_err(|e| io_err(&manifest_path, e))?,
    )?;
    let mut db = GtDatabase::default();
    for rec in &manifest.records {
        let points_path = dir.join(&rec.points_file);
        let bytes = fs::read(&points_path).map_err(|e| io_err(&points_path, e))?;
        let points = decode_points_f32(&bytes, &points_path.display().to_string())?;
        if points.len() != rec.num_points {
            return Err(DbError::ManifestMismatch);
        }
        let load_img = |name: &str| -> Result<image::DynamicImage, DbError> {
            let path = dir.join(name);
            image::open(&path).map_err(|e| DbError::Image {
                path: path.display().to_string(),
                source: e,
            })
        };
        let patch = load_img(&rec.patch_file)?.to_rgb8();
        let mask = gray_to_mask(&load_img(&rec.mask_file)?.to_luma8(), rec.mask_origin)?;
        db.push(GtObject {
            id: rec.id,
            class_label: rec.class_label.clone(),
            box3d: rec.box3d,
            box2d: rec.box2d,
            mask,
            points,
            patch,
            depth: rec.depth,
        });
    }
    let counts = db.class_counts();
    if counts != manifest.classes {
        return Err(DbError::ManifestMismatch);
    }
    Ok(db)
}
