//! KITTI-convention file formats: calibration text, velodyne binaries, label
//! files, and the per-scene mask sidecar used to build the object database.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3x4, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::{image_err, io_err, read_json, CliError, SceneBundle};
use crate::geometry::{normalize_angle, Box2D, Box3D, CalibrationChain, Mask2D, PointCloud};
use crate::gt_database::Annotation;
use crate::moca_engine::{Provenance, Scene, SceneObject};
use crate::transform_flow::TransformFlow;

/// The conventional left color camera (P2); selectable for the other three.
pub const DEFAULT_CAMERA: usize = 2;

/// The four projection matrices plus rectification and extrinsics of one
/// KITTI calibration file.
#[derive(Debug, Clone)]
pub struct KittiCalib {
    pub p: [Matrix3x4<f64>; 4],
    pub r0_rect: Matrix4<f64>,
    pub tr_velo_to_cam: Matrix4<f64>,
}

impl KittiCalib {
    pub fn chain(&self, camera: usize) -> Result<CalibrationChain, CliError> {
        if camera > 3 {
            return Err(CliError::Config(format!("camera index {camera} out of 0..=3")));
        }
        Ok(CalibrationChain::kitti(
            self.p[camera],
            self.r0_rect,
            self.tr_velo_to_cam,
        )?)
    }
}

fn parse_floats(file: &str, line_no: usize, key: &str, rest: &str, n: usize) -> Result<Vec<f64>, CliError> {
    let vals: Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse::<f64>).collect();
    let vals = vals.map_err(|e| CliError::Parse {
        file: file.to_string(),
        line: line_no,
        msg: format!("key {key}: {e}"),
    })?;
    if vals.len() != n {
        return Err(CliError::Parse {
            file: file.to_string(),
            line: line_no,
            msg: format!("key {key}: expected {n} floats, got {}", vals.len()),
        });
    }
    Ok(vals)
}

/// Parse the calibration text format: lines `P0:`..`P3:` (12 floats each),
/// `R0_rect:` (9 floats), `Tr_velo_to_cam:` (12 floats).
pub fn parse_calib_text(text: &str, file: &str) -> Result<KittiCalib, CliError> {
    let mut p: [Option<Matrix3x4<f64>>; 4] = [None, None, None, None];
    let mut r0: Option<Matrix4<f64>> = None;
    let mut tr: Option<Matrix4<f64>> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, rest)) = line.split_once(':') else {
            return Err(CliError::Parse {
                file: file.to_string(),
                line: line_no,
                msg: "missing ':' separator".to_string(),
            });
        };
        let key = key.trim();
        match key {
            "P0" | "P1" | "P2" | "P3" => {
                let idx = key[1..].parse::<usize>().unwrap();
                let v = parse_floats(file, line_no, key, rest, 12)?;
                p[idx] = Some(Matrix3x4::from_row_slice(&v));
            }
            "R0_rect" => {
                let v = parse_floats(file, line_no, key, rest, 9)?;
                let mut m = Matrix4::identity();
                for r in 0..3 {
                    for c in 0..3 {
                        m[(r, c)] = v[r * 3 + c];
                    }
                }
                r0 = Some(m);
            }
            "Tr_velo_to_cam" => {
                let v = parse_floats(file, line_no, key, rest, 12)?;
                let mut m = Matrix4::identity();
                for r in 0..3 {
                    for c in 0..4 {
                        m[(r, c)] = v[r * 4 + c];
                    }
                }
                tr = Some(m);
            }
            _ => {
                // unknown keys are tolerated (KITTI files carry Tr_imu_to_velo etc.)
            }
        }
    }
    let missing = |k: &str| CliError::Parse {
        file: file.to_string(),
        line: 0,
        msg: format!("missing key {k}"),
    };
    Ok(KittiCalib {
        p: [
            p[0].ok_or_else(|| missing("P0"))?,
            p[1].ok_or_else(|| missing("P1"))?,
            p[2].ok_or_else(|| missing("P2"))?,
            p[3].ok_or_else(|| missing("P3"))?,
        ],
        r0_rect: r0.ok_or_else(|| missing("R0_rect"))?,
        tr_velo_to_cam: tr.ok_or_else(|| missing("Tr_velo_to_cam"))?,
    })
}

pub fn parse_calib_file(path: &Path, camera: usize) -> Result<CalibrationChain, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_calib_text(&text, &path.display().to_string())?.chain(camera)
}

fn fmt_floats(vals: impl IntoIterator<Item = f64>) -> String {
    vals.into_iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Write a calibration file that parses back to the same chain. All four P
/// matrices get the chain's projection so the camera choice is immaterial.
pub fn write_calib_file(path: &Path, calib: &CalibrationChain) -> Result<(), CliError> {
    let CalibrationChain::Kitti {
        p_rect,
        r_rect,
        t_cam_from_lidar,
    } = calib
    else {
        return Err(CliError::Config(
            "only KITTI chains serialize to calib.txt".into(),
        ));
    };
    let mut out = String::new();
    let p_row = fmt_floats((0..3).flat_map(|r| (0..4).map(move |c| (r, c))).map(|(r, c)| p_rect[(r, c)]));
    for k in 0..4 {
        out.push_str(&format!("P{k}: {p_row}\n"));
    }
    out.push_str(&format!(
        "R0_rect: {}\n",
        fmt_floats((0..3).flat_map(|r| (0..3).map(move |c| (r, c))).map(|(r, c)| r_rect[(r, c)]))
    ));
    out.push_str(&format!(
        "Tr_velo_to_cam: {}\n",
        fmt_floats(
            (0..3)
                .flat_map(|r| (0..4).map(move |c| (r, c)))
                .map(|(r, c)| t_cam_from_lidar[(r, c)])
        )
    ));
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Read a little-endian f32 x,y,z,intensity stream.
pub fn read_velodyne(path: &Path) -> Result<PointCloud, CliError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(CliError::TruncatedBinary {
            file: path.display().to_string(),
            len: bytes.len(),
        });
    }
    Ok(crate::gt_database::decode_points_f32(
        &bytes,
        &path.display().to_string(),
    )?)
}

pub fn write_velodyne(path: &Path, cloud: &PointCloud) -> Result<(), CliError> {
    fs::write(path, crate::gt_database::encode_points_f32(cloud)).map_err(|e| io_err(path, e))
}

/// One KITTI label line (the fields this pipeline uses).
#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub class_label: String,
    pub truncated: f64,
    pub occluded: i64,
    pub box2d: Box2D,
    /// (h, w, l) meters, KITTI order.
    pub dimensions: [f64; 3],
    /// Bottom-center of the box in rectified camera coordinates.
    pub location: [f64; 3],
    pub rotation_y: f64,
}

pub fn parse_label_text(text: &str, file: &str) -> Result<Vec<KittiLabel>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 15 {
            return Err(CliError::Parse {
                file: file.to_string(),
                line: line_no,
                msg: format!("expected 15 fields, got {}", fields.len()),
            });
        }
        let f = |k: usize| -> Result<f64, CliError> {
            fields[k].parse::<f64>().map_err(|e| CliError::Parse {
                file: file.to_string(),
                line: line_no,
                msg: format!("field {k}: {e}"),
            })
        };
        let box2d = Box2D::new(f(4)?, f(5)?, f(6)?, f(7)?).map_err(|e| CliError::Parse {
            file: file.to_string(),
            line: line_no,
            msg: e.to_string(),
        })?;
        out.push(KittiLabel {
            class_label: fields[0].to_string(),
            truncated: f(1)?,
            occluded: f(2)? as i64,
            box2d,
            dimensions: [f(8)?, f(9)?, f(10)?],
            location: [f(11)?, f(12)?, f(13)?],
            rotation_y: f(14)?,
        });
    }
    Ok(out)
}

pub fn parse_label_file(path: &Path) -> Result<Vec<KittiLabel>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_label_text(&text, &path.display().to_string())
}

/// Convert a camera-frame label to a LiDAR-frame [`Box3D`] via the inverse
/// rigid part of the chain.
pub fn label_to_box3d(label: &KittiLabel, calib: &CalibrationChain) -> Result<Box3D, CliError> {
    let CalibrationChain::Kitti {
        r_rect,
        t_cam_from_lidar,
        ..
    } = calib
    else {
        return Err(CliError::Config("label conversion requires a KITTI chain".into()));
    };
    let [h, w, l] = label.dimensions;
    // bottom-center -> geometric center (camera y points down)
    let center_cam = Vector4::new(
        label.location[0],
        label.location[1] - h / 2.0,
        label.location[2],
        1.0,
    );
    let inv = (r_rect * t_cam_from_lidar)
        .try_inverse()
        .ok_or_else(|| CliError::Config("rigid chain not invertible".into()))?;
    let c = inv * center_cam;
    let yaw = normalize_angle(-label.rotation_y - std::f64::consts::FRAC_PI_2);
    Ok(Box3D::new([c.x, c.y, c.z], [w, l, h], yaw)?)
}

/// Inverse of [`label_to_box3d`].
pub fn box3d_to_label(
    b: &Box3D,
    box2d: Box2D,
    class_label: &str,
    calib: &CalibrationChain,
) -> Result<KittiLabel, CliError> {
    let CalibrationChain::Kitti {
        r_rect,
        t_cam_from_lidar,
        ..
    } = calib
    else {
        return Err(CliError::Config("label conversion requires a KITTI chain".into()));
    };
    let c = (r_rect * t_cam_from_lidar)
        * Vector4::new(b.center[0], b.center[1], b.center[2], 1.0);
    let h = b.height();
    Ok(KittiLabel {
        class_label: class_label.to_string(),
        truncated: 0.0,
        occluded: 0,
        box2d,
        dimensions: [h, b.width(), b.length()],
        location: [c.x, c.y + h / 2.0, c.z],
        rotation_y: normalize_angle(-b.yaw - std::f64::consts::FRAC_PI_2),
    })
}

pub fn write_label_file(path: &Path, labels: &[KittiLabel]) -> Result<(), CliError> {
    let mut out = String::new();
    for l in labels {
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}\n",
            l.class_label,
            l.truncated,
            l.occluded,
            // alpha (observation angle) is not used by this pipeline
            0.0,
            l.box2d.x_min,
            l.box2d.y_min,
            l.box2d.x_max,
            l.box2d.y_max,
            l.dimensions[0],
            l.dimensions[1],
            l.dimensions[2],
            l.location[0],
            l.location[1],
            l.location[2],
            l.rotation_y,
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Mask sidecar: per scene a `meta.json` listing PNG files and their pixel
/// origins, index-aligned with the label lines.
#[derive(Debug, Serialize, Deserialize)]
pub struct MaskMeta {
    pub entries: Vec<MaskEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MaskEntry {
    pub file: String,
    pub origin: (u32, u32),
}

pub fn read_masks(scene_mask_dir: &Path) -> Result<Vec<Mask2D>, CliError> {
    let meta: MaskMeta = read_json(&scene_mask_dir.join("meta.json"))?;
    let mut out = Vec::with_capacity(meta.entries.len());
    for e in &meta.entries {
        let path = scene_mask_dir.join(&e.file);
        let img = image::open(&path)
            .map_err(|err| image_err(&path, err))?
            .to_luma8();
        let bits = img.pixels().map(|p| p.0[0] >= 128).collect();
        out.push(Mask2D::new(e.origin, img.width(), img.height(), bits)?);
    }
    Ok(out)
}

pub fn write_masks(scene_mask_dir: &Path, masks: &[Mask2D]) -> Result<(), CliError> {
    fs::create_dir_all(scene_mask_dir).map_err(|e| io_err(scene_mask_dir, e))?;
    let mut entries = Vec::new();
    for (i, m) in masks.iter().enumerate() {
        let name = format!("{i}.png");
        let mut img = image::GrayImage::new(m.width, m.height);
        for y in 0..m.height {
            for x in 0..m.width {
                img.put_pixel(x, y, image::Luma([if m.get(x, y) { 255 } else { 0 }]));
            }
        }
        let path = scene_mask_dir.join(&name);
        img.save(&path).map_err(|e| image_err(&path, e))?;
        entries.push(MaskEntry {
            file: name,
            origin: m.origin,
        });
    }
    super::write_json(&scene_mask_dir.join("meta.json"), &MaskMeta { entries })
}

/// Load one KITTI-layout scene. `mask_source` is the per-scene mask sidecar
/// directory; without it the bundle carries boxes but no mask annotations.
pub fn load_kitti_scene(
    velodyne_path: &Path,
    image_path: &Path,
    calib_path: &Path,
    label_path: &Path,
    mask_source: Option<&Path>,
    camera: usize,
) -> Result<SceneBundle, CliError> {
    let cloud = read_velodyne(velodyne_path)?;
    let image = super::read_png(image_path)?;
    let calib = parse_calib_file(calib_path, camera)?;
    let labels = parse_label_file(label_path)?;
    let masks = match mask_source {
        Some(dir) => Some(read_masks(dir)?),
        None => None,
    };
    if let Some(masks) = &masks {
        if masks.len() != labels.len() {
            return Err(CliError::Config(format!(
                "{} masks for {} labels",
                masks.len(),
                labels.len()
            )));
        }
    }

    let mut originals = Vec::new();
    let mut annotations = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        let box3d = label_to_box3d(label, &calib)?;
        originals.push(SceneObject {
            class_label: label.class_label.clone(),
            box3d,
            box2d: label.box2d,
            provenance: Provenance::Original,
        });
        if let Some(masks) = &masks {
            annotations.push(Annotation {
                class_label: label.class_label.clone(),
                box3d,
                box2d: label.box2d,
                mask: masks[i].clone(),
            });
        }
    }
    let id = velodyne_path
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(SceneBundle {
        id,
        scene: Scene {
            cloud,
            image,
            calib,
            originals,
            flow: TransformFlow::default(),
        },
        annotations,
    })
}
