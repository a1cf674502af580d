use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use moca::cli_io::{augment, bench, kitti, render, synth, CliError, RunConfig};
use moca::gt_database::{build_database, load_database, save_database, SceneRef};

#[derive(Parser)]
#[command(name = "moca", version, about = "Multi-modality cut-and-paste augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a ground-truth object database from annotated scenes.
    BuildDb {
        /// Directory of scene subdirectories (velodyne.bin, image.png, calib.txt, label.txt).
        #[arg(long)]
        scenes: PathBuf,
        /// Directory of per-scene mask subdirectories.
        #[arg(long)]
        masks: PathBuf,
        /// Output database directory.
        #[arg(long)]
        out: PathBuf,
        /// Skip objects with fewer interior points.
        #[arg(long, default_value_t = moca::gt_database::DEFAULT_MIN_POINTS)]
        min_points: usize,
    },
    /// Augment a corpus: paste sampled objects, apply global flows, write scene dirs.
    Augment {
        /// Corpus root (contains scenes/), or the scenes directory itself.
        #[arg(long)]
        scenes: PathBuf,
        /// Ground-truth database directory from build-db.
        #[arg(long)]
        db: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated occlusion threshold set, e.g. 0,0.3,0.5,0.7.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
        /// Per-class paste quota, e.g. car=12,pedestrian=6,cyclist=6.
        #[arg(long, value_delimiter = ',')]
        quota: Option<Vec<String>>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Optional JSON RunConfig; flags above override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Generate a synthetic annotated corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Objects per scene, e.g. car=3,pedestrian=2.
        #[arg(long, value_delimiter = ',')]
        spec: Option<Vec<String>>,
        #[arg(long, default_value_t = 480)]
        width: u32,
        #[arg(long, default_value_t = 270)]
        height: u32,
    },
    /// Re-check the correspondence fixtures of an augmented scene.
    Verify {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Render an augmented scene for inspection.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_parser = ["bev", "image_overlay"])]
        view: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run throughput benchmarks and print a JSON report.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_class_counts(entries: &[String]) -> Result<BTreeMap<String, usize>, CliError> {
    let mut out = BTreeMap::new();
    for e in entries {
        let (class, count) = e
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected class=count, got '{e}'")))?;
        let count: usize = count
            .parse()
            .map_err(|_| CliError::Config(format!("bad count in '{e}'")))?;
        out.insert(class.to_string(), count);
    }
    Ok(out)
}

/// Accept either the corpus root or its scenes/ subdirectory.
fn corpus_root(scenes: &Path) -> PathBuf {
    if scenes.join("scenes").is_dir() {
        scenes.to_path_buf()
    } else if scenes.file_name().is_some_and(|n| n == "scenes") {
        scenes.parent().unwrap_or(scenes).to_path_buf()
    } else {
        scenes.to_path_buf()
    }
}

fn list_subdirs(dir: &Path) -> Result<Vec<String>, CliError> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?
    {
        let entry = entry.map_err(|e| CliError::Config(format!("{}: {e}", dir.display())))?;
        if entry.path().is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::BuildDb { scenes, masks, out, min_points } => {
            let ids = list_subdirs(&scenes)?;
            let mut bundles = Vec::new();
            for id in &ids {
                let dir = scenes.join(id);
                let mut bundle = kitti::load_kitti_scene(
                    &dir.join("velodyne.bin"),
                    &dir.join("image.png"),
                    &dir.join("calib.txt"),
                    &dir.join("label.txt"),
                    Some(masks.join(id).as_path()),
                    kitti::DEFAULT_CAMERA,
                )?;
                bundle.id = id.clone();
                bundles.push(bundle);
            }
            let refs: Vec<SceneRef> = bundles
                .iter()
                .map(|b| SceneRef {
                    cloud: &b.scene.cloud,
                    image: &b.scene.image,
                    calib: &b.scene.calib,
                    annotations: &b.annotations,
                })
                .collect();
            let db = build_database(&refs, min_points)?;
            save_database(&db, &out)?;
            println!(
                "built database: {} objects across {} classes at {}",
                db.len(),
                db.class_counts().len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Augment { scenes, db, out, seed, thresholds, quota, workers, config } => {
            let mut run_config: RunConfig = match &config {
                Some(path) => moca::cli_io::read_run_config(path)?,
                None => RunConfig::default(),
            };
            run_config.seed = seed;
            run_config.workers = workers;
            if let Some(t) = thresholds {
                run_config.thresholds = t;
            }
            if let Some(q) = quota {
                run_config.quota = parse_class_counts(&q)?;
            }
            let database = load_database(&db)?;
            let stats = augment::run_augment(&run_config, &corpus_root(&scenes), &database, &out)?;
            println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
            if stats.scenes_failed > 0 {
                eprintln!("{} scene(s) failed", stats.scenes_failed);
                return Ok(ExitCode::FAILURE);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { out, scenes, seed, spec, width, height } => {
            let spec = match spec {
                Some(s) => parse_class_counts(&s)?,
                None => [
                    ("car".to_string(), 3usize),
                    ("pedestrian".to_string(), 2),
                    ("cyclist".to_string(), 1),
                ]
                .into(),
            };
            synth::generate_corpus(&out, scenes, &spec, (width, height), seed)?;
            println!("wrote {scenes} synthetic scene(s) to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { scene, tolerance } => {
            let report = augment::verify_consistency(&scene, tolerance)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serialize"));
            if report.violations.is_empty() {
                println!(
                    "ok: {} fixtures, max error ({:.3e}, {:.3e}) px",
                    report.fixtures, report.max_du, report.max_dv
                );
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("{} fixture(s) exceeded {tolerance}", report.violations.len());
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Render { scene, view, out } => {
            let img = match view.as_str() {
                "bev" => render::render_bev(&scene)?,
                _ => render::render_image_overlay(&scene)?,
            };
            img.save(&out)
                .map_err(|e| CliError::Config(format!("{}: {e}", out.display())))?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { config } => {
            let config = bench::load_bench_config(config.as_deref())?;
            let report = bench::run_bench(&config)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serialize"));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
