//! Command-line surface, file-format readers/writers, synthetic scene
//! generation for desk-scale verification, rendering, and benchmarks.

pub mod augment;
pub mod bench;
pub mod kitti;
pub mod render;
pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryError;
use crate::gt_database::{Annotation, DbError};
use crate::moca_engine::{BlendSpec, EngineError, RejectReason, Scene, SceneObject};
use crate::transform_flow::TransformFlow;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{file}:{line}: parse error: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("{file}: binary length {len} not divisible by 16")]
    TruncatedBinary { file: String, len: usize },
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
    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("bad config: {0}")]
    Config(String),
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub(crate) fn json_err(path: &Path, source: serde_json::Error) -> CliError {
    CliError::Json {
        path: path.display().to_string(),
        source,
    }
}

pub(crate) fn image_err(path: &Path, source: image::ImageError) -> CliError {
    CliError::Image {
        path: path.display().to_string(),
        source,
    }
}

/// A loaded scene plus its mask-bearing annotations (the latter only when a
/// mask source was provided; augmentation needs boxes only).
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub id: String,
    pub scene: Scene,
    pub annotations: Vec<Annotation>,
}

fn default_thresholds() -> Vec<f64> {
    crate::moca_engine::DEFAULT_THRESHOLDS.to_vec()
}

fn default_quota() -> BTreeMap<String, usize> {
    [("car", 12usize), ("pedestrian", 6), ("cyclist", 6)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

fn default_blend() -> BlendSpec {
    BlendSpec::Random
}

fn default_flip_probability() -> f64 {
    0.5
}

fn default_rotation_range() -> f64 {
    std::f64::consts::FRAC_PI_4
}

fn default_scale_range() -> (f64, f64) {
    (0.95, 1.05)
}

fn default_translation_std() -> f64 {
    0.2
}

fn default_workers() -> usize {
    1
}

/// All knobs of an augmentation run. The global-flow parameter ranges follow
/// common single-modality practice; the consistency machinery is
/// range-agnostic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    #[serde(default = "default_quota")]
    pub quota: BTreeMap<String, usize>,
    #[serde(default = "default_blend")]
    pub blend: BlendSpec,
    #[serde(default = "default_flip_probability")]
    pub flip_probability: f64,
    /// Global rotation drawn uniformly from `[-rotation_range, rotation_range]`.
    #[serde(default = "default_rotation_range")]
    pub rotation_range: f64,
    #[serde(default = "default_scale_range")]
    pub scale_range: (f64, f64),
    /// Per-axis Gaussian translation, meters.
    #[serde(default = "default_translation_std")]
    pub translation_std: f64,
    #[serde(default = "default_flip_probability")]
    pub image_hflip_probability: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            thresholds: default_thresholds(),
            quota: default_quota(),
            blend: default_blend(),
            flip_probability: default_flip_probability(),
            rotation_range: default_rotation_range(),
            scale_range: default_scale_range(),
            translation_std: default_translation_std(),
            image_hflip_probability: default_flip_probability(),
            workers: default_workers(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.thresholds.is_empty() {
            return Err(CliError::Config("thresholds must be non-empty".into()));
        }
        if !self
            .thresholds
            .iter()
            .all(|t| (0.0..=1.0).contains(t))
        {
            return Err(CliError::Config("thresholds must be in [0, 1]".into()));
        }
        for p in [self.flip_probability, self.image_hflip_probability] {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Config("probabilities must be in [0, 1]".into()));
            }
        }
        if !(self.scale_range.0 > 0.0 && self.scale_range.0 <= self.scale_range.1) {
            return Err(CliError::Config("scale range must be well-ordered and positive".into()));
        }
        if self.rotation_range < 0.0 || self.translation_std < 0.0 {
            return Err(CliError::Config("ranges must be non-negative".into()));
        }
        if self.workers == 0 {
            return Err(CliError::Config("workers must be >= 1".into()));
        }
        Ok(())
    }
}

/// `annotations.json` of an augmented scene: boxes, labels, provenance, the
/// drawn threshold, and the full rejection log so every filter decision is
/// auditable.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneAnnotations {
    pub objects: Vec<SceneObject>,
    pub threshold: f64,
    pub rejections: Vec<(u64, RejectReason)>,
}

/// One entry of the correspondence fixture: a point in augmented LiDAR
/// coordinates and its ground-truth pixel in the augmented image.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrespondenceFixture {
    pub point: [f64; 3],
    pub u: f64,
    pub v: f64,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| json_err(path, e))?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| json_err(path, e))
}

/// Load and validate a JSON `RunConfig`.
pub fn read_run_config(path: &Path) -> Result<RunConfig, CliError> {
    let config: RunConfig = read_json(path)?;
    config.validate()?;
    Ok(config)
}

pub(crate) fn write_png(path: &Path, image: &RgbImage) -> Result<(), CliError> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| image_err(path, e))?;
    fs::write(path, buf.into_inner()).map_err(|e| io_err(path, e))
}

pub(crate) fn read_png(path: &Path) -> Result<RgbImage, CliError> {
    Ok(image::open(path).map_err(|e| image_err(path, e))?.to_rgb8())
}

/// Write an augmented (or synthetic) scene directory: `cloud.bin`,
/// `image.png`, `annotations.json`, `flow.json`, `calib.txt`, and optionally
/// the correspondence fixture.
pub fn write_scene_dir(
    dir: &Path,
    scene: &Scene,
    annotations: &SceneAnnotations,
    fixtures: Option<&[CorrespondenceFixture]>,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let cloud_path = dir.join("cloud.bin");
    fs::write(
        &cloud_path,
        crate::gt_database::encode_points_f32(&scene.cloud),
    )
    .map_err(|e| io_err(&cloud_path, e))?;
    write_png(&dir.join("image.png"), &scene.image)?;
    write_json(&dir.join("annotations.json"), annotations)?;
    write_json(&dir.join("flow.json"), &scene.flow)?;
    kitti::write_calib_file(&dir.join("calib.txt"), &scene.calib)?;
    if let Some(fixtures) = fixtures {
        write_json(&dir.join("correspondences.json"), &fixtures)?;
    }
    Ok(())
}

/// Read back a scene directory written by [`write_scene_dir`].
pub fn read_scene_dir(dir: &Path) -> Result<(Scene, SceneAnnotations), CliError> {
    let cloud_path = dir.join("cloud.bin");
    let bytes = fs::read(&cloud_path).map_err(|e| io_err(&cloud_path, e))?;
    let cloud =
        crate::gt_database::decode_points_f32(&bytes, &cloud_path.display().to_string())?;
    let image = read_png(&dir.join("image.png"))?;
    let annotations: SceneAnnotations = read_json(&dir.join("annotations.json"))?;
    let flow: TransformFlow = read_json(&dir.join("flow.json"))?;
    let calib = kitti::parse_calib_file(&dir.join("calib.txt"), kitti::DEFAULT_CAMERA)?;
    Ok((
        Scene {
            cloud,
            image,
            calib,
            originals: annotations.objects.clone(),
            flow,
        },
        annotations,
    ))
}
