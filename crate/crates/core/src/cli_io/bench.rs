//! Throughput benchmarks: scenes/second through the full augmentation
//! pipeline at each configured worker count, plus projection-replay
//! throughput in points/second.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::run_augment;
use super::synth::{generate_corpus, generate_synthetic_scene};
use super::{CliError, RunConfig};
use crate::gt_database::{build_database, SceneRef};
use crate::transform_flow::{correspond, FlipAxis, ImageTransform, PointTransform, TransformFlow};

fn default_scenes() -> usize {
    50
}
fn default_workers() -> Vec<usize> {
    vec![1, 4]
}
fn default_points() -> usize {
    100_000
}
fn default_spec() -> BTreeMap<String, usize> {
    [("car".to_string(), 3usize), ("pedestrian".to_string(), 2), ("cyclist".to_string(), 1)]
        .into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    #[serde(default)]
    pub seed: u64,
    /// Synthetic corpus size for the pipeline benchmark.
    #[serde(default = "default_scenes")]
    pub scenes: usize,
    /// Worker counts to sweep.
    #[serde(default = "default_workers")]
    pub workers: Vec<usize>,
    /// Point count for the correspondence throughput benchmark.
    #[serde(default = "default_points")]
    pub correspond_points: usize,
    /// Objects per synthetic scene, by class.
    #[serde(default = "default_spec")]
    pub scene_spec: BTreeMap<String, usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: default_scenes(),
            workers: default_workers(),
            correspond_points: default_points(),
            scene_spec: default_spec(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineResult {
    pub workers: usize,
    pub scenes: usize,
    pub seconds: f64,
    pub scenes_per_second: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub pipeline: Vec<PipelineResult>,
    pub correspond_points: usize,
    pub correspond_seconds: f64,
    pub correspond_points_per_second: f64,
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchReport, CliError> {
    let corpus = tempfile::tempdir().map_err(|e| CliError::Config(format!("tempdir: {e}")))?;
    generate_corpus(corpus.path(), config.scenes, &config.scene_spec, (480, 270), config.seed)?;

    // object bank from a few extra synthetic scenes
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xb0b);
    let bundles: Vec<_> = (0..5)
        .map(|_| generate_synthetic_scene(&config.scene_spec, (480, 270), &mut rng))
        .collect();
    let refs: Vec<SceneRef> = bundles
        .iter()
        .map(|b| SceneRef {
            cloud: &b.scene.cloud,
            image: &b.scene.image,
            calib: &b.scene.calib,
            annotations: &b.annotations,
        })
        .collect();
    let db = build_database(&refs, 5)?;

    let mut pipeline = Vec::new();
    for &workers in &config.workers {
        let out = tempfile::tempdir().map_err(|e| CliError::Config(format!("tempdir: {e}")))?;
        let run = RunConfig { seed: config.seed, workers, ..Default::default() };
        let start = Instant::now();
        let stats = run_augment(&run, corpus.path(), &db, out.path())?;
        let seconds = start.elapsed().as_secs_f64();
        if stats.scenes_failed > 0 {
            return Err(CliError::Config(format!("{} scenes failed", stats.scenes_failed)));
        }
        pipeline.push(PipelineResult {
            workers,
            scenes: stats.scenes_ok,
            seconds,
            scenes_per_second: stats.scenes_ok as f64 / seconds,
        });
    }

    let (seconds, pps) = bench_correspond(config.correspond_points, config.seed);
    Ok(BenchReport {
        pipeline,
        correspond_points: config.correspond_points,
        correspond_seconds: seconds,
        correspond_points_per_second: pps,
    })
}

fn bench_correspond(n: usize, seed: u64) -> (f64, f64) {
    let calib = crate::geometry::CalibrationChain::identity_kitti();
    let flow = TransformFlow {
        point_flow: vec![
            PointTransform::Flip { axis: FlipAxis::Y },
            PointTransform::RotateZ { angle: 0.3 },
            PointTransform::Scale { factor: 1.02 },
            PointTransform::Translate { dx: 0.1, dy: -0.2, dz: 0.05 },
        ],
        image_flow: vec![ImageTransform::HFlip { width: 1242.0 }],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<nalgebra::Vector3<f64>> = (0..n)
        .map(|_| {
            nalgebra::Vector3::new(
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(2.0..60.0),
            )
        })
        .collect();
    let start = Instant::now();
    let mut acc = 0.0f64;
    for p in &points {
        if let Ok(pix) = correspond(*p, &flow, &calib) {
            acc += pix.u;
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    std::hint::black_box(acc);
    (seconds, n as f64 / seconds)
}

pub fn load_bench_config(path: Option<&Path>) -> Result<BenchConfig, CliError> {
    match path {
        Some(p) => super::read_json(p),
        None => Ok(BenchConfig::default()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_bench_runs() {
        let config = BenchConfig {
            scenes: 2,
            workers: vec![1],
            correspond_points: 1000,
            ..Default::default()
        };
        let report = run_bench(&config).unwrap();
        assert_eq!(report.pipeline.len(), 1);
        assert!(report.pipeline[0].scenes_per_second > 0.0);
        assert!(report.correspond_points_per_second > 0.0);
    }
}
