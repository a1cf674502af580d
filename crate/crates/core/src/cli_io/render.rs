//! Quick-look renders of a written scene directory: the camera image with
//! projected 2D boxes, or a top-down BEV plot of the point cloud with box
//! footprints. Original objects draw gray, pasted objects red.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::{read_scene_dir, CliError};
use crate::geometry::{Box2D, PointCloud};
use crate::moca_engine::{Provenance, SceneObject};

const ORIGINAL_COLOR: Rgb<u8> = Rgb([180, 180, 180]);
const PASTED_COLOR: Rgb<u8> = Rgb([230, 40, 40]);

fn object_color(o: &SceneObject) -> Rgb<u8> {
    match o.provenance {
        Provenance::Original => ORIGINAL_COLOR,
        Provenance::Pasted => PASTED_COLOR,
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_rect(img: &mut RgbImage, b: &Box2D, color: Rgb<u8>) {
    let (x0, y0) = (b.x_min.round() as i64, b.y_min.round() as i64);
    let (x1, y1) = (b.x_max.round() as i64, b.y_max.round() as i64);
    for x in x0..=x1 {
        put(img, x, y0, color);
        put(img, x, y1, color);
    }
    for y in y0..=y1 {
        put(img, x0, y, color);
        put(img, x1, y, color);
    }
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = (a.0 - b.0).abs().max((a.1 - b.1).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = a.0 + t * (b.0 - a.0);
        let y = a.1 + t * (b.1 - a.1);
        put(img, x.round() as i64, y.round() as i64, color);
    }
}

/// Camera image with 2D box outlines.
pub fn render_image_overlay(scene_dir: &Path) -> Result<RgbImage, CliError> {
    let (scene, annotations) = read_scene_dir(scene_dir)?;
    let mut img = scene.image.clone();
    for obj in &annotations.objects {
        draw_rect(&mut img, &obj.box2d, object_color(obj));
    }
    Ok(img)
}

/// BEV extent in lidar meters; forward (+x) points up in the image.
const BEV_RANGE: f64 = 70.0;
const BEV_SIZE: u32 = 700;

fn bev_pixel(x: f64, y: f64) -> (f64, f64) {
    let scale = BEV_SIZE as f64 / (2.0 * BEV_RANGE);
    ((BEV_RANGE - y) * scale, (BEV_RANGE - x) * scale)
}

fn draw_bev_points(img: &mut RgbImage, cloud: &PointCloud) {
    for p in cloud.points() {
        let (u, v) = bev_pixel(p.x, p.y);
        // shade by height, clamped to a visible band
        let shade = (((p.z + 2.5) / 5.0).clamp(0.0, 1.0) * 155.0) as u8 + 100;
        put(img, u.round() as i64, v.round() as i64, Rgb([shade, shade, shade]));
    }
}

/// Top-down plot of the cloud with BEV box footprints.
pub fn render_bev(scene_dir: &Path) -> Result<RgbImage, CliError> {
    let (scene, annotations) = read_scene_dir(scene_dir)?;
    let mut img = RgbImage::from_pixel(BEV_SIZE, BEV_SIZE, Rgb([15, 15, 25]));
    draw_bev_points(&mut img, &scene.cloud);
    for obj in &annotations.objects {
        let corners = obj.box3d.bev_corners();
        let color = object_color(obj);
        for i in 0..4 {
            let a = bev_pixel(corners[i][0], corners[i][1]);
            let b = bev_pixel(corners[(i + 1) % 4][0], corners[(i + 1) % 4][1]);
            draw_line(&mut img, a, b, color);
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli_io::augment::run_augment;
    use crate::cli_io::synth::generate_corpus;
    use crate::cli_io::RunConfig;
    use std::collections::BTreeMap;

    #[test]
    fn renders_cover_both_views() {
        let root = tempfile::tempdir().unwrap();
        let spec: BTreeMap<String, usize> = [("car".to_string(), 2usize)].into();
        generate_corpus(root.path(), 1, &spec, (480, 270), 21).unwrap();

        let out = tempfile::tempdir().unwrap();
        let config = RunConfig {
            seed: 5,
            quota: BTreeMap::new(),
            ..Default::default()
        };
        run_augment(&config, root.path(), &crate::gt_database::GtDatabase::default(), out.path())
            .unwrap();
        let scene_dir = out.path().join("000000");

        let overlay = render_image_overlay(&scene_dir).unwrap();
        assert_eq!(overlay.dimensions(), image_dims(&scene_dir));
        let bev = render_bev(&scene_dir).unwrap();
        assert_eq!(bev.dimensions(), (BEV_SIZE, BEV_SIZE));
        // the bev must not be a blank canvas
        assert!(bev.pixels().any(|p| *p != Rgb([15, 15, 25])));
    }

    fn image_dims(scene_dir: &std::path::Path) -> (u32, u32) {
        let (scene, _) = read_scene_dir(scene_dir).unwrap();
        scene.image.dimensions()
    }
}
