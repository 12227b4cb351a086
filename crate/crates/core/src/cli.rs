//! Batch front end: `build`, `refine`, `evaluate`, `synth` and `export-ply`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::fusion::{FusionParams, SemanticVoxelMap};
use crate::geometry::{transform_cloud, voxelize, KeySet};
use crate::io;
use crate::label::{Label, NUM_LABELS};
use crate::pipeline::MapBuilder;
use crate::refine::{refine, ClusterStatus, RefineParams, RefineReport};
use crate::synth::{evaluation_truth, read_scenario, simulate_frame};

#[derive(Debug, Parser)]
#[command(name = "semmap", version, about = "Semantic voxel mapping from lidar scans, poses and per-pixel class scores")]
pub struct Cli {
    /// Worker threads for per-frame fusion and rendering; 0 uses every core. Results do not
    /// depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register every frame and fuse its labels into an unrefined map.
    Build(BuildArgs),
    /// Correct building/vegetation columns and remove moving-vehicle traces.
    Refine(RefineArgs),
    /// Per-class accuracy and IoU of a map against ground truth.
    Evaluate(EvaluateArgs),
    /// Render a scene file into frames plus its ground-truth map.
    Synth(SynthArgs),
    /// Write a map as a colored ASCII PLY point cloud.
    ExportPly(ExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FusionArgs {
    /// Voxel edge length in meters. Default: the published grid size.
    #[arg(long, default_value_t = 0.2)]
    pub voxel_size: f64,
    /// Lower bound for every fused class probability. Default: chosen here, not published.
    #[arg(long, default_value_t = 1e-3)]
    pub prob_floor: f64,
    /// Only fuse the nearest voxel per pixel (within 0.3 m). Off by default, matching the
    /// published method, which has no visibility test.
    #[arg(long)]
    pub depth_buffer: bool,
}

impl FusionArgs {
    fn params(&self) -> FusionParams<f64> {
        FusionParams {
            prob_floor: self.prob_floor,
            depth_buffer: self.depth_buffer,
            ..FusionParams::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RefineOptions {
    /// Vehicle clusters with at least this many voxels are moving. Default: published value.
    #[arg(long, default_value_t = 1500)]
    pub eta_d: usize,
    /// Vehicle clusters at least this long (meters) are moving. Default: published value.
    #[arg(long, default_value_t = 6.0)]
    pub eta_l: f64,
    /// DBSCAN neighborhood radius in meters. Default: chosen here, not published.
    #[arg(long, default_value_t = 0.6)]
    pub dbscan_eps: f64,
    /// DBSCAN core-point count, self included. Default: chosen here, not published.
    #[arg(long, default_value_t = 10)]
    pub dbscan_min_pts: usize,
    /// Grow the road footprint by this many cells before the road-support test. Default 0 is
    /// the strict published rule.
    #[arg(long, default_value_t = 0)]
    pub footprint_dilation: u32,
}

impl RefineOptions {
    fn params(&self) -> RefineParams<f64> {
        RefineParams {
            eta_d: self.eta_d,
            eta_l: self.eta_l,
            dbscan_eps: self.dbscan_eps,
            dbscan_min_pts: self.dbscan_min_pts,
            footprint_dilation: self.footprint_dilation,
            ..RefineParams::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BuildArgs {
    /// KITTI-style pose file, one 3x4 sensor-to-world row per frame.
    #[arg(long)]
    pub poses: PathBuf,
    /// Directory of `NNNNNN.bin` velodyne scans.
    #[arg(long)]
    pub velodyne: PathBuf,
    /// Directory of `NNNNNN.sscr` score maps.
    #[arg(long)]
    pub scores: PathBuf,
    /// Calibration with `P_L2C` (or `P2`, `R0_rect`, `Tr_velo_to_cam`) and `image_size`.
    #[arg(long)]
    pub calib: PathBuf,
    /// Unrefined map output.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Refined map output. Defaults to the output path with a `.refined.map` suffix.
    #[arg(long)]
    pub refined_output: Option<PathBuf>,
    /// Skip refinement and write only the unrefined map.
    #[arg(long)]
    pub no_refine: bool,
    /// Also write `.ply` files next to every map written.
    #[arg(long)]
    pub emit_ply: bool,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[command(flatten)]
    pub refine: RefineOptions,
}

#[derive(Debug, Clone, Args)]
pub struct RefineArgs {
    /// Map to refine.
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub output: PathBuf,
    /// Also write a `.ply` next to the output.
    #[arg(long)]
    pub emit_ply: bool,
    #[command(flatten)]
    pub refine: RefineOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Kv,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Predicted map.
    #[arg(long, short)]
    pub prediction: PathBuf,
    /// Ground-truth map. Cells labeled `unknown` are known to be empty.
    #[arg(long, short)]
    pub truth: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
    /// Also write the report to this file.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Scene description file.
    #[arg(long, short)]
    pub scene: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Overrides the scene's seed. Every random draw derives from this value.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    /// Map file to export
    #[arg(long, short)]
    pub input: PathBuf,
    /// PLY file to write
    #[arg(long, short)]
    pub output: PathBuf,
}

/// Parses arguments and runs the command on a pool of the requested size.
pub fn run(cli: &Cli) -> Result<String> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Build(a) => cmd_build(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a),
        Command::ExportPly(a) => cmd_export_ply(a),
    })
}

/// Entry point for the binary: prints the summary, or one `error[category]: message` line.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if code == 0 {
                let _ = e.print();
            } else {
                let msg = e.to_string();
                let body: Vec<&str> = msg
                    .lines()
                    .map(str::trim)
                    .take_while(|l| !l.starts_with("Usage:"))
                    .filter(|l| !l.is_empty())
                    .collect();
                eprintln!("error[usage]: {}", body.join(" ").trim_start_matches("error: "));
            }
            return code;
        }
    };
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            1
        }
    }
}

fn ply_path(map_path: &Path) -> PathBuf {
    map_path.with_extension("ply")
}

fn indexed_files(dir: &Path, ext: &str) -> Result<Vec<(usize, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let index = stem
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{}: file name is not a frame index", path.display())))?;
        out.push((index, path));
    }
    out.sort();
    Ok(out)
}

fn label_deltas(before: &SemanticVoxelMap<f64>, after: &SemanticVoxelMap<f64>) -> String {
    let (b, a) = (before.label_counts(), after.label_counts());
    let mut out = String::new();
    for (i, l) in Label::ALL.iter().enumerate() {
        let _ = writeln!(
            out,
            "label={} before={} after={} delta={}",
            l.name(),
            b[i],
            a[i],
            a[i] as i64 - b[i] as i64
        );
    }
    out
}

fn refine_summary(report: &RefineReport<f64>) -> String {
    let r = &report.removal;
    let moving = r.clusters.iter().filter(|c| c.status == ClusterStatus::Moving).count();
    format!(
        "relabeled={} off_road={} noise={} clusters={} moving_clusters={} moving_voxels={}\n",
        report.relabeled,
        r.off_road,
        r.noise,
        r.clusters.len(),
        moving,
        r.moving
    )
}

fn write_map(map: &SemanticVoxelMap<f64>, path: &Path, ply: bool) -> Result<()> {
    io::serialize_map(map, path)?;
    if ply {
        io::write_ply(map, &ply_path(path))?;
    }
    Ok(())
}

pub fn cmd_build(args: &BuildArgs) -> Result<String> {
    let poses = io::read_pose_file::<f64>(&args.poses)?;
    let clouds = indexed_files(&args.velodyne, "bin")?;
    let scores = indexed_files(&args.scores, "sscr")?;
    if poses.len() != clouds.len() || poses.len() != scores.len() {
        return Err(Error::Config(format!(
            "frame count mismatch: {} poses, {} scans, {} score maps",
            poses.len(),
            clouds.len(),
            scores.len()
        )));
    }
    if poses.is_empty() {
        return Err(Error::Config("no frames to build from".into()));
    }
    let camera = io::read_calibration(&args.calib)?.camera::<f64>()?;
    let fusion = args.fusion.params();
    let refine_params = args.refine.params();
    refine_params.validate()?;
    let mut builder = MapBuilder::new(args.fusion.voxel_size, camera, fusion)?;
    let mut points = 0;
    let mut rejected = 0;
    for ((pose, (ci, cpath)), (si, spath)) in poses.iter().zip(&clouds).zip(&scores) {
        let f = pose.frame_index();
        if *ci != f || *si != f {
            return Err(Error::Config(format!(
                "frame {f}: expected scan and score map {f:06}, found {} and {}",
                cpath.display(),
                spath.display()
            )));
        }
        let scan = io::read_velodyne_bin::<f64>(cpath, f)?;
        let seg = io::read_score_map::<f64>(spath, f)?;
        rejected += scan.rejected;
        points += builder.add_frame(pose, &scan.cloud, &seg)?.points;
    }
    let frames = builder.frames();
    let map = builder.finish();
    write_map(&map, &args.output, args.emit_ply)?;
    let mut out = format!(
        "frames={frames} points={points} rejected_points={rejected} voxels={} output={}\n",
        map.len(),
        args.output.display()
    );
    if !args.no_refine {
        let path = args
            .refined_output
            .clone()
            .unwrap_or_else(|| args.output.with_extension("refined.map"));
        let mut refined = map.clone();
        let report = refine(&mut refined, &refine_params)?;
        write_map(&refined, &path, args.emit_ply)?;
        out.push_str(&refine_summary(&report));
        let _ = writeln!(out, "refined_voxels={} refined_output={}", refined.len(), path.display());
    }
    Ok(out)
}

pub fn cmd_refine(args: &RefineArgs) -> Result<String> {
    let before = io::deserialize_map::<f64>(&args.input)?;
    let mut after = before.clone();
    let report = refine(&mut after, &args.refine.params())?;
    write_map(&after, &args.output, args.emit_ply)?;
    let mut out = refine_summary(&report);
    out.push_str(&label_deltas(&before, &after));
    Ok(out)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<String> {
    let pred = io::deserialize_map::<f64>(&args.prediction)?;
    let truth = io::deserialize_map::<f64>(&args.truth)?;
    let report = evaluate(&pred, &truth)?;
    let text = match args.format {
        ReportFormat::Table => report.to_table(),
        ReportFormat::Kv => report.to_key_values(),
    };
    if let Some(path) = &args.output {
        std::fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    }
    Ok(text)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<String> {
    let mut scenario = read_scenario(&args.scene)?;
    if let Some(seed) = args.seed {
        scenario.scene.seed = seed;
    }
    let velodyne = args.output.join("velodyne");
    let scores = args.output.join("scores");
    for dir in [&args.output, &velodyne, &scores] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut observed = KeySet::new();
    let mut points = 0;
    for f in 0..scenario.scene.frames() {
        let frame = simulate_frame(&scenario, f)?;
        observed.extend(voxelize(&transform_cloud(&frame.pose, &frame.cloud)?, scenario.voxel_size)?);
        points += frame.cloud.len();
        io::write_velodyne_bin(&frame.cloud, &velodyne.join(format!("{f:06}.bin")))?;
        io::write_score_map(&frame.segmentation, &scores.join(format!("{f:06}.sscr")))?;
    }
    io::write_pose_file(&scenario.scene.trajectory, &args.output.join("poses.txt"))?;
    io::write_calibration(&scenario.sensor.calibration()?, &args.output.join("calib.txt"))?;
    let mut keys: Vec<_> = observed.into_iter().collect();
    keys.sort_unstable();
    let truth = evaluation_truth(&scenario.scene, scenario.voxel_size, &keys)?;
    io::serialize_map(&truth, &args.output.join("ground_truth.map"))?;
    let counts = truth.label_counts();
    let mut out = format!(
        "frames={} points={points} truth_voxels={} output={}\n",
        scenario.scene.frames(),
        truth.len(),
        args.output.display()
    );
    for (i, l) in Label::ALL.iter().enumerate().take(NUM_LABELS + 1) {
        let _ = writeln!(out, "truth label={} voxels={}", l.name(), counts[i]);
    }
    Ok(out)
}

pub fn cmd_export_ply(args: &ExportArgs) -> Result<String> {
    let map = io::deserialize_map::<f64>(&args.input)?;
    io::write_ply(&map, &args.output)?;
    Ok(format!("vertices={} output={}\n", map.len(), args.output.display()))
}
